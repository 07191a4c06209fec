"""Pipeline stages shared by the command line and the acceptance suite.

Every stage reads its inputs from explicit paths, writes its artifacts under
the configured directories with names built from the command and the run id
(derived from the seed), and returns a small report dict.
"""
from __future__ import annotations

import csv
import time
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import nn
from .config import PipelineConfig
from .demofile import read_demos, write_demos
from .demogen import DemoDataset, filter_perfect, generate_dataset
from .estimator import IntentEstimator, train_estimator, write_metrics
from .rl import (
    RewardConfig, SceneMix, TrainResult, bc_train, evaluate, network_actor, policy_net, random_actor,
    scripted_actor, train_policy,
)
from .sim import World
from .sim.render import resolve_resolution
from .trajseg import segment_and_label


class MissingInput(FileNotFoundError):
    """An upstream artifact a stage depends on does not exist."""


def require(path) -> Path:
    path = Path(path)
    if not path.exists():
        raise MissingInput(f"missing input file: {path}")
    return path


def write_csv(path, rows: Sequence[dict], columns: Sequence[str]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(r[k])) if isinstance(r.get(k), (float, np.floating)) else r.get(k, ""))
                        for k in columns})


# ---------------------------------------------------------------------------
# artifact names


def demos_path(cfg: PipelineConfig) -> Path:
    return Path(cfg.paths.demo_dir) / f"demos-{cfg.run_id}.jsonl"


def labeled_path(cfg: PipelineConfig) -> Path:
    return Path(cfg.paths.demo_dir) / f"labeled-{cfg.run_id}.jsonl"


def estimator_path(cfg: PipelineConfig, perfect_only: bool = False) -> Path:
    tag = "estimator-perfect" if perfect_only else "estimator"
    return Path(cfg.paths.checkpoint_dir) / f"{tag}-{cfg.run_id}.npz"


def policy_path(cfg: PipelineConfig, arm: str) -> Path:
    return Path(cfg.paths.checkpoint_dir) / f"policy-{arm}-{cfg.run_id}.npz"


def metrics_path(cfg: PipelineConfig, command: str, suffix: str = "") -> Path:
    return Path(cfg.paths.metrics_dir) / f"{command}-{cfg.run_id}{suffix}.csv"


def _mkdirs(*paths: Path):
    for p in paths:
        p.parent.mkdir(parents=True, exist_ok=True)


# ---------------------------------------------------------------------------
# stages


def gen_demos(cfg: PipelineConfig, out: Path | None = None) -> dict:
    out = Path(out) if out is not None else demos_path(cfg)
    met = metrics_path(cfg, "gen-demos")
    _mkdirs(out, met)
    ds = generate_dataset(cfg.demos.per_type, cfg.seed, cfg.world, cfg.demos.augment, cfg.resolution,
                          cfg.segmentation)
    write_demos(out, ds.trajectories)
    rows = []
    for type_id, count in ds.counts_per_type().items():
        ok = sum(t.success for t in ds if t.meta["grasp_type"] == type_id)
        rows.append({"grasp_type": type_id, "demos": count, "successes": ok,
                     "imperfect_fraction": 1.0 - ok / count})
    rows.append({"grasp_type": "all", "demos": len(ds), "successes": sum(t.success for t in ds),
                 "imperfect_fraction": ds.imperfect_fraction})
    write_csv(met, rows, ["grasp_type", "demos", "successes", "imperfect_fraction"])
    return {"path": str(out), "metrics": str(met), **ds.report()}


def segment_file(cfg: PipelineConfig, src: Path | None = None, dst: Path | None = None) -> dict:
    """Recompute intent labels for every trajectory; ones shorter than ``n`` are skipped and counted."""
    src = require(src if src is not None else demos_path(cfg))
    dst = Path(dst) if dst is not None else labeled_path(cfg)
    _mkdirs(dst)
    trajs = read_demos(src)
    kept, skipped = [], []
    for t in trajs:
        if len(t.poses) < cfg.segmentation.n:
            skipped.append(t.meta.get("demo_id", "?"))
            continue
        kept.append(segment_and_label(replace(t, labels=None), cfg.segmentation))
    write_demos(dst, kept)
    return {"path": str(dst), "read": len(trajs), "labeled": len(kept), "skipped": len(skipped),
            "skipped_ids": skipped}


def load_labeled(path, perfect_only: bool = False) -> list:
    trajs = read_demos(require(path))
    if perfect_only:
        trajs = filter_perfect(DemoDataset(trajs)).trajectories
    return trajs


def train_estimator_stage(cfg: PipelineConfig, demos: Path | None = None, perfect_only: bool = False,
                          log: Callable | None = None) -> dict:
    trajs = load_labeled(demos if demos is not None else labeled_path(cfg), perfect_only)
    out = estimator_path(cfg, perfect_only)
    met = metrics_path(cfg, "train-estimator", "-perfect" if perfect_only else "")
    _mkdirs(out, met)
    res = train_estimator(trajs, cfg.estimator_cfg(), cfg.segmentation.n, cfg.world, log)
    IntentEstimator(res.net, res.params.params, cfg.world).save(
        out, meta={"demos": len(trajs), "perfect_only": perfect_only, "resolution": cfg.resolution})
    write_metrics(met, res.history)
    return {"path": str(out), "metrics": str(met), "demos": len(trajs),
            "val_accuracy": res.final_val_accuracy}


def save_policy(path, net: nn.Network, ps: nn.ParamSet, cfg: PipelineConfig, arm: str):
    nn.save_checkpoint(path, {"policy": net}, {"policy": ps},
                       meta={"world": cfg.world.to_dict(), "resolution": cfg.resolution, "arm": arm})


def load_policy(path) -> tuple[nn.Network, dict, World]:
    nets, params, meta = nn.load_checkpoint(require(path))
    if "policy" not in nets:
        raise ValueError(f"{path}: not a policy checkpoint")
    return nets["policy"], params["policy"].params, World.from_dict(meta.get("world", {}))


CURVE_COLUMNS = ("episodes", "success_card", "success_block", "success")
DIAG_COLUMNS = ("episodes", "policy_loss", "value_loss", "entropy", "approx_kl", "clip_fraction", "batch_success",
                "mean_return")


def train_policy_stage(cfg: PipelineConfig, arm: str = "intent", estimator: Path | None = None,
                       log: Callable | None = None) -> tuple[dict, TrainResult]:
    """Arms: ``intent`` (estimator from all demos), ``intent-perfect`` and ``no-intent``."""
    if arm not in ("intent", "intent-perfect", "no-intent"):
        raise ValueError(f"unknown training arm {arm!r}")
    reward = replace(cfg.reward, intrinsic=arm != "no-intent")
    est = None
    if reward.intrinsic:
        est = IntentEstimator.load(require(estimator if estimator is not None
                                           else estimator_path(cfg, arm == "intent-perfect")))
    out = policy_path(cfg, arm)
    met = metrics_path(cfg, "train-policy", f"-{arm}")
    diag_path = metrics_path(cfg, "train-policy", f"-{arm}-diagnostics")
    _mkdirs(out, met)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = train_policy(cfg.policy_cfg(), reward, cfg.scenes, est, cfg.world, cfg.resolution, log)
    save_policy(out, res.net, res.params, cfg, arm)
    cols = ["episodes"] + [f"success_{k}" for k in cfg.scenes.kinds] + ["success"]
    write_csv(met, res.curve, cols)
    write_csv(diag_path, res.diagnostics, DIAG_COLUMNS)
    report = {"path": str(out), "metrics": str(met), "best_success": res.best_success,
              "warning": res.warning, **res.reward_stats}
    return report, res


def bc_stage(cfg: PipelineConfig, demos: Path | None = None, perfect_only: bool = False,
             log: Callable | None = None) -> dict:
    trajs = load_labeled(demos if demos is not None else labeled_path(cfg), perfect_only)
    arm = "bc-perfect" if perfect_only else "bc-all"
    out = policy_path(cfg, arm)
    met = metrics_path(cfg, "bc", "-perfect" if perfect_only else "-all")
    _mkdirs(out, met)
    net, ps, history = bc_train(trajs, cfg.bc_cfg(), cfg.world, cfg.resolution, log)
    save_policy(out, net, ps, cfg, arm)
    write_csv(met, history, ["epoch", "loss"])
    return {"path": str(out), "metrics": str(met), "demos": len(trajs), "final_loss": history[-1]["loss"]}


def make_actor(policy: str, world: World = World(), resolution="fast") -> Callable:
    """``scripted``, ``random`` or the path of a policy checkpoint (evaluated greedily)."""
    if policy == "scripted":
        return scripted_actor()
    if policy == "random":
        return random_actor()
    net, params, _ = load_policy(policy)
    expected = net.input_shapes[0][1:]
    if tuple(expected) != resolve_resolution(resolution):
        raise ValueError(f"policy {policy} expects images {tuple(expected)}, not {resolution!r}")
    return network_actor(net, params, world, greedy=True)


EVAL_COLUMNS = ("policy", "scene", "ranges", "episodes", "successes", "rate", "ci_low", "ci_high")


def eval_stage(cfg: PipelineConfig, policy: str, kinds: Sequence[str] | None = None, episodes: int | None = None,
               shifted: bool = False, write: bool = True) -> list[dict]:
    episodes = cfg.eval.episodes if episodes is None else int(episodes)
    if episodes < 1:
        raise ValueError("evaluation needs at least one episode")
    actor = make_actor(policy, cfg.world, cfg.resolution)
    ranges = cfg.eval.shifted if shifted else cfg.scenes.ranges
    rows = []
    for kind in kinds or cfg.eval.kinds:
        r = evaluate(actor, kind, episodes, [cfg.seed + cfg.eval.seed_offset, sum(map(ord, kind))], ranges,
                     cfg.world, cfg.resolution)
        rows.append({"policy": Path(policy).stem if policy not in ("scripted", "random") else policy,
                     "ranges": "shifted" if shifted else "training", **r.to_dict()})
    if write:
        write_csv(metrics_path(cfg, "eval", "-shifted" if shifted else ""), rows, EVAL_COLUMNS)
    return rows


# ---------------------------------------------------------------------------
# ablation


ARMS = ("bc-all", "bc-perfect", "no-intent", "intent-perfect", "intent")
ABLATION_COLUMNS = ("arm", "seed", "card", "block", "block_shifted", "overall", "train_seconds")


@dataclass
class AblationResult:
    rows: list[dict]
    reward_stats: list[dict] = field(default_factory=list)
    estimators: dict = field(default_factory=dict)

    def median(self, arm: str, column: str) -> float:
        return float(np.median([r[column] for r in self.rows if r["arm"] == arm]))

    def summary(self) -> list[dict]:
        out = []
        for arm in ARMS:
            if any(r["arm"] == arm for r in self.rows):
                out.append({"arm": arm, "seed": "median",
                            **{c: self.median(arm, c) for c in ABLATION_COLUMNS[2:]}})
        return out


def _score(cfg: PipelineConfig, ckpt: Path) -> dict:
    card, block = (eval_stage(cfg, str(ckpt), [k], write=False)[0]["rate"] for k in ("card", "block"))
    shifted = eval_stage(cfg, str(ckpt), ["block"], shifted=True, write=False)[0]["rate"]
    return {"card": card, "block": block, "block_shifted": shifted, "overall": (card + block) / 2}


def run_ablation(cfg: PipelineConfig, seeds: Sequence[int], demos: Path | None = None,
                 arms: Sequence[str] = ARMS, log: Callable | None = None) -> AblationResult:
    """The five-row comparison: BC and intent-reward PPO on all or perfect-only demos, and PPO without r'.

    Estimators are trained once from the base config's seed; every arm's
    policy is trained and evaluated once per seed in ``seeds``.
    """
    demos = require(demos if demos is not None else labeled_path(cfg))
    say = log or (lambda msg: None)
    result = AblationResult([])
    for perfect in (False, True):
        if ("intent-perfect" if perfect else "intent") in arms:
            rep = train_estimator_stage(cfg, demos, perfect_only=perfect)
            result.estimators["perfect" if perfect else "all"] = rep
            say(f"estimator ({'perfect' if perfect else 'all'} demos): val accuracy {rep['val_accuracy']:.4f}")
    for seed in seeds:
        run = cfg.with_seed(seed)
        for arm in arms:
            start = time.perf_counter()
            if arm.startswith("bc"):
                rep = bc_stage(run, demos, perfect_only=arm == "bc-perfect")
            else:
                est = None if arm == "no-intent" else estimator_path(cfg, arm == "intent-perfect")
                rep, _ = train_policy_stage(run, arm, est)
                result.reward_stats.append({"arm": arm, "seed": seed, **{k: rep[k] for k in (
                    "r_intr_min", "r_intr_max", "r_total_min", "r_total_max", "max_length", "steps")}})
            elapsed = time.perf_counter() - start
            row = {"arm": arm, "seed": seed, **_score(run, Path(rep["path"])), "train_seconds": elapsed}
            result.rows.append(row)
            say(f"seed {seed} {arm}: card {row['card']:.3f} block {row['block']:.3f} "
                f"shifted {row['block_shifted']:.3f}")
    return result
