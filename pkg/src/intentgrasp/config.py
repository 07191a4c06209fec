"""Pipeline configuration: one YAML tree holding every stage's settings.

Unknown keys are rejected so that typos fail loudly instead of silently
falling back to defaults.  One top-level ``seed`` drives every stage.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from .demogen import AugmentRanges
from .estimator import EstimatorTrainConfig
from .rl import BCConfig, PPOConfig, RewardConfig, SceneMix
from .sim import SceneRanges, World
from .sim.render import resolve_resolution
from .trajseg import SegConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Paths:
    demo_dir: str = "runs/demos"
    checkpoint_dir: str = "runs/checkpoints"
    metrics_dir: str = "runs/metrics"


@dataclass(frozen=True)
class DemoConfig:
    per_type: int = 1000
    augment: AugmentRanges = AugmentRanges()

    def __post_init__(self):
        if self.per_type < 1:
            raise ConfigError("demos.per_type must be at least 1")


@dataclass(frozen=True)
class EvalConfig:
    """Evaluation episodes per scene kind, and the object ranges used as the shifted (out-of-demo) test."""

    episodes: int = 200
    kinds: tuple[str, ...] = ("card", "block")
    seed_offset: int = 100_000
    shifted: SceneRanges = SceneRanges(upright_x=((0.05, 0.15), (0.35, 0.45)))

    def __post_init__(self):
        if self.episodes < 1:
            raise ConfigError("eval.episodes must be at least 1")


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    resolution: str = "fast"
    paths: Paths = Paths()
    world: World = World()
    demos: DemoConfig = DemoConfig()
    segmentation: SegConfig = SegConfig()
    estimator: EstimatorTrainConfig = EstimatorTrainConfig()
    policy: PPOConfig = PPOConfig()
    reward: RewardConfig = RewardConfig()
    scenes: SceneMix = SceneMix()
    bc: BCConfig = BCConfig()
    eval: EvalConfig = EvalConfig()

    def __post_init__(self):
        try:
            resolve_resolution(self.resolution)
        except ValueError as e:
            raise ConfigError(str(e)) from None

    # stage configs carry the pipeline seed
    def estimator_cfg(self) -> EstimatorTrainConfig:
        return replace(self.estimator, seed=self.seed)

    def policy_cfg(self) -> PPOConfig:
        return replace(self.policy, seed=self.seed)

    def bc_cfg(self) -> BCConfig:
        return replace(self.bc, seed=self.seed)

    @property
    def run_id(self) -> str:
        return f"s{self.seed}"

    def with_seed(self, seed: int) -> "PipelineConfig":
        return replace(self, seed=int(seed))

    def to_dict(self) -> dict:
        est = asdict(self.estimator)
        est.pop("seed")
        pol = asdict(self.policy)
        pol.pop("seed")
        bc = asdict(self.bc)
        bc.pop("seed")
        return {
            "seed": self.seed,
            "resolution": self.resolution,
            "paths": asdict(self.paths),
            "world": self.world.to_dict(),
            "demos": {"per_type": self.demos.per_type, "augment": self.demos.augment.to_dict()},
            "segmentation": asdict(self.segmentation),
            "estimator": est,
            "policy": pol,
            "reward": self.reward.to_dict(),
            "scenes": self.scenes.to_dict(),
            "bc": bc,
            "eval": {"episodes": self.eval.episodes, "kinds": list(self.eval.kinds),
                     "seed_offset": self.eval.seed_offset, "shifted": self.eval.shifted.to_dict()},
        }

    @classmethod
    def from_dict(cls, d: dict | None) -> "PipelineConfig":
        d = dict(d or {})
        _check_keys("", d, {f.name for f in fields(cls)})
        try:
            demos = dict(d.get("demos") or {})
            _check_keys("demos", demos, {"per_type", "augment"})
            ev = dict(d.get("eval") or {})
            _check_keys("eval", ev, {"episodes", "kinds", "seed_offset", "shifted"})
            base_ev = EvalConfig()
            return cls(
                seed=int(d.get("seed", 0)),
                resolution=str(d.get("resolution", "fast")),
                paths=_section(Paths, d, "paths"),
                world=World.from_dict(d.get("world") or {}),
                demos=DemoConfig(per_type=int(demos.get("per_type", DemoConfig.per_type)),
                                 augment=AugmentRanges.from_dict(demos.get("augment") or {})),
                segmentation=_section(SegConfig, d, "segmentation"),
                estimator=_section(EstimatorTrainConfig, d, "estimator", exclude={"seed"}),
                policy=_section(PPOConfig, d, "policy", exclude={"seed"}),
                reward=_section(RewardConfig, d, "reward"),
                scenes=_scenes(d.get("scenes") or {}),
                bc=_section(BCConfig, d, "bc", exclude={"seed"}),
                eval=EvalConfig(episodes=int(ev.get("episodes", base_ev.episodes)),
                                kinds=tuple(ev.get("kinds", base_ev.kinds)),
                                seed_offset=int(ev.get("seed_offset", base_ev.seed_offset)),
                                shifted=SceneRanges.from_dict(ev["shifted"]) if "shifted" in ev
                                else base_ev.shifted),
            )
        except ConfigError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from None


def _check_keys(section: str, d: dict, allowed: set[str]):
    unknown = set(d) - allowed
    if unknown:
        where = f" in section {section!r}" if section else ""
        raise ConfigError(f"unknown config keys{where}: {sorted(unknown)}")


def _section(cls, d: dict, name: str, exclude: set[str] = frozenset()):
    sub = dict(d.get(name) or {})
    _check_keys(name, sub, {f.name for f in fields(cls)} - set(exclude))
    return cls(**sub)


def _scenes(d: dict) -> SceneMix:
    _check_keys("scenes", d, {"kinds", "weights", "ranges"})
    return SceneMix.from_dict(d)


def load_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    """Read a YAML config (or start from defaults) and apply dotted-key overrides like ``policy.episodes``."""
    data: dict = {}
    if path is not None:
        with open(Path(path), encoding="utf-8") as fh:
            try:
                data = yaml.safe_load(fh) or {}
            except yaml.YAMLError as e:
                raise ConfigError(f"{path}: {e}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: the top level must be a mapping")
    for key, value in (overrides or {}).items():
        node = data
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value
    return PipelineConfig.from_dict(data)


def dump_config(cfg: PipelineConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
