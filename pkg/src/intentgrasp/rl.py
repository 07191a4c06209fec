"""Policy learning: discretised actions, the policy/value network, rollouts, PPO and behaviour cloning.

Episodes last at most ``n`` steps (one per intent).  The policy sees the
initial depth image ``I_0`` and the current gripper pose at every step.  The
reward for step ``t`` (1-based) is the estimator's probability that the
post-action state belongs to intent ``t``, plus the task reward on the
terminal step.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import nn
from .estimator import IntentEstimator, image_input, pose_features
from .sim import Motion, ObjectSpec, expert_motions, SceneRanges, SimState, World, reset, sample_scene, step
from .sim.render import resolve_resolution
from .trajseg import DemoTrajectory

AXES = ("x", "y", "z", "alpha", "beta", "gamma", "psi")
BINS: dict[str, tuple[float, ...]] = {
    "x": (-0.10, -0.05, -0.02, 0.0, 0.02, 0.05, 0.10),
    "y": (0.0,),
    "z": (-0.10, -0.05, -0.02, 0.0, 0.02, 0.05, 0.10),
    "alpha": (0.0,),
    "beta": (-0.3, 0.0, 0.3),
    "gamma": (0.0,),
    "psi": (0.0, 1.0),
}
GROUPS = tuple(len(BINS[a]) for a in AXES)
OFFSETS = tuple(int(v) for v in np.cumsum((0,) + GROUPS[:-1]))
_ZERO = {a: BINS[a].index(0.0) for a in AXES}


class BinError(ValueError):
    pass


@dataclass(frozen=True)
class ActionCommand:
    """One bin index per axis; ``psi`` index 1 means close."""

    indices: tuple[int, ...]

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if len(idx) != len(AXES):
            raise BinError(f"expected {len(AXES)} indices, got {len(idx)}")
        for a, i in zip(AXES, idx):
            if not 0 <= i < len(BINS[a]):
                raise BinError(f"index {i} out of range for axis {a!r}")
        object.__setattr__(self, "indices", idx)

    def value(self, axis: str) -> float:
        return BINS[axis][self.indices[AXES.index(axis)]]

    @property
    def close(self) -> bool:
        return self.value("psi") == 1.0

    def to_motion(self) -> Motion:
        return Motion(dx=self.value("x"), dz=self.value("z"), dpitch=self.value("beta"), close=self.close)

    @classmethod
    def from_values(cls, dx: float, dz: float, dpitch: float, close: bool, tol: float = 1e-9) -> "ActionCommand":
        """Nearest bin per axis; values beyond the outermost bins are rejected."""
        idx = []
        for a in AXES:
            v = {"x": dx, "z": dz, "beta": dpitch, "psi": float(bool(close))}.get(a, 0.0)
            table = np.asarray(BINS[a])
            if v < table[0] - tol or v > table[-1] + tol:
                raise BinError(f"{a} displacement {v:.4f} outside the bin range [{table[0]}, {table[-1]}]")
            idx.append(int(np.argmin(np.abs(table - v))))
        return cls(tuple(idx))


# ---------------------------------------------------------------------------
# network


def policy_net(image_shape: tuple[int, int] = (32, 32), strides: tuple[int, int, int] | None = None,
               channels: tuple[int, int, int] = (8, 16, 16)) -> nn.Network:
    """Convs 8x8, 4x4, 3x3 on the image; 8 units on the pose; two layers of 64; action and value heads."""
    if strides is None:
        strides = (2, 2, 1) if max(image_shape) <= 64 else (4, 2, 1)
    c1, c2, c3 = channels
    h, w = image_shape
    for k, s in zip((8, 4, 3), strides):
        h, w = nn.conv_out(h, k, s), nn.conv_out(w, k, s)
    flat = c3 * h * w
    return nn.Network(
        branches=(
            (nn.conv2d("conv1", 1, c1, 8, strides[0]), nn.conv2d("conv2", c1, c2, 4, strides[1]),
             nn.conv2d("conv3", c2, c3, 3, strides[2])),
            (nn.dense("pose_fc", 7, 8),),
        ),
        trunk=(nn.concat("join"), nn.dense("fc1", flat + 8, 64), nn.dense("fc2", 64, 64)),
        heads=(nn.softmax_head("action", 64, GROUPS), nn.dense("value", 64, 1, activation="none")),
        input_shapes=((1, *image_shape), (7,)),
    )


def selected_logp(logp: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Joint log-probability of factored actions ``(N, 7)`` under head output ``(N, sum(GROUPS))``."""
    cols = actions + np.asarray(OFFSETS)
    return np.take_along_axis(logp, cols, axis=1).sum(axis=1)


def group_entropy(logp: np.ndarray) -> np.ndarray:
    p = np.exp(logp)
    return -(p * logp).sum(axis=1)


def sample_actions(logp: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw one bin per axis from each row's categorical heads (inverse-CDF on uniforms)."""
    n = logp.shape[0]
    u = rng.random((n, len(GROUPS)))
    out = np.zeros((n, len(GROUPS)), dtype=np.int64)
    for g, (off, size) in enumerate(zip(OFFSETS, GROUPS)):
        if size == 1:
            continue
        cdf = np.cumsum(np.exp(logp[:, off:off + size]), axis=1)
        cdf[:, -1] = np.inf
        out[:, g] = (u[:, g:g + 1] >= cdf).sum(axis=1)
    return out


def greedy_actions(logp: np.ndarray) -> np.ndarray:
    return np.stack([logp[:, off:off + size].argmax(axis=1) for off, size in zip(OFFSETS, GROUPS)], axis=1)


# ---------------------------------------------------------------------------
# rewards


@dataclass(frozen=True)
class RewardConfig:
    success: float = 10.0
    failure: float = 0.0
    intrinsic: bool = True

    def to_dict(self) -> dict:
        return asdict(self)


def intrinsic_reward(probs: np.ndarray, t: int) -> np.ndarray:
    """Probability mass of intent ``t`` (1-based) in ``probs`` of shape ``(n,)`` or ``(N, n)``."""
    probs = np.asarray(probs, dtype=np.float64)
    n = probs.shape[-1]
    if not 1 <= t <= n:
        raise ValueError(f"step index {t} outside 1..{n}")
    return np.clip(probs[..., t - 1], 0.0, 1.0)


def total_reward(r_intr, terminal, success, cfg: RewardConfig = RewardConfig()):
    """``r' `` on every step, plus the task reward on the terminal step."""
    task = np.where(np.asarray(terminal), np.where(np.asarray(success), cfg.success, cfg.failure), 0.0)
    return np.asarray(r_intr, dtype=np.float64) + task


# ---------------------------------------------------------------------------
# scenes


@dataclass(frozen=True)
class SceneMix:
    """Scene kinds drawn with the given weights, object placement from ``ranges``."""

    kinds: tuple[str, ...] = ("card", "block")
    weights: tuple[float, ...] = (0.5, 0.5)
    ranges: SceneRanges = SceneRanges()

    def __post_init__(self):
        if len(self.kinds) != len(self.weights) or not self.kinds:
            raise ValueError("one weight per scene kind is required")
        if min(self.weights) < 0 or sum(self.weights) <= 0:
            raise ValueError("scene weights must be non-negative with a positive sum")

    def sample(self, rng: np.random.Generator, world: World) -> tuple[str, list[ObjectSpec]]:
        w = np.asarray(self.weights, dtype=np.float64)
        k = int(rng.choice(len(self.kinds), p=w / w.sum())) if len(self.kinds) > 1 else 0
        return self.kinds[k], sample_scene(self.kinds[k], rng, self.ranges, world)

    def only(self, kind: str) -> "SceneMix":
        return SceneMix((kind,), (1.0,), self.ranges)

    def to_dict(self) -> dict:
        return {"kinds": list(self.kinds), "weights": list(self.weights), "ranges": self.ranges.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "SceneMix":
        base = cls()
        return cls(tuple(d.get("kinds", base.kinds)), tuple(float(v) for v in d.get("weights", base.weights)),
                   SceneRanges.from_dict(d.get("ranges", {})))


# ---------------------------------------------------------------------------
# rollouts


@dataclass
class RolloutBatch:
    """Steps of a batch of episodes, stored flat; images once per episode."""

    images: np.ndarray           # (E, 1, H, W) network input
    episode: np.ndarray          # (S,) episode index of each step
    t: np.ndarray                # (S,) 1-based step index
    poses: np.ndarray            # (S, 7) pose before the action
    next_poses: np.ndarray       # (S, 7) pose after the action
    actions: np.ndarray          # (S, 7) bin indices
    logp: np.ndarray             # (S,) behaviour log-probability
    values: np.ndarray           # (S,) value estimate
    r_intr: np.ndarray           # (S,)
    r_task: np.ndarray           # (S,)
    done: np.ndarray             # (S,) bool
    success: np.ndarray          # (E,) bool
    kinds: list[str] = field(default_factory=list)

    @property
    def rewards(self) -> np.ndarray:
        return self.r_intr + self.r_task

    @property
    def n_episodes(self) -> int:
        return len(self.success)

    def __len__(self) -> int:
        return len(self.t)

    def lengths(self) -> np.ndarray:
        return np.bincount(self.episode, minlength=self.n_episodes)

    @staticmethod
    def merge(parts: Sequence["RolloutBatch"]) -> "RolloutBatch":
        offset = 0
        eps = []
        for p in parts:
            eps.append(p.episode + offset)
            offset += p.n_episodes
        cat = np.concatenate
        return RolloutBatch(
            cat([p.images for p in parts]), cat(eps), cat([p.t for p in parts]), cat([p.poses for p in parts]),
            cat([p.next_poses for p in parts]), cat([p.actions for p in parts]), cat([p.logp for p in parts]),
            cat([p.values for p in parts]), cat([p.r_intr for p in parts]), cat([p.r_task for p in parts]),
            cat([p.done for p in parts]), cat([p.success for p in parts]), sum((p.kinds for p in parts), []))


def _run_episodes(act: Callable, scenes: Sequence[list[ObjectSpec]], world: World, resolution, rng,
                  estimator: IntentEstimator | None, reward: RewardConfig):
    """Lock-step episodes; ``act(images, poses, states, t, rng, ids) -> (actions, logp, values)``.

    ``actions`` is either an ``(N, 7)`` array of bin indices or a list of
    :class:`Motion` (scripted controllers); motions are recorded by their
    nearest bins, or ``-1`` where they fall outside the tables.
    """
    states, imgs = [], []
    for objs in scenes:
        s, img = reset(objs, world=world, resolution=resolution)
        states.append(s)
        imgs.append(img)
    images = image_input(np.stack(imgs), world)
    rec = {k: [] for k in ("episode", "t", "poses", "next_poses", "actions", "logp", "values", "r_intr",
                           "r_task", "done")}
    active = np.arange(len(states))
    t = 0
    while len(active):
        t += 1
        poses = np.stack([states[i].gripper.as_pose() for i in active])
        actions, logp, values = act(images[active], poses, [states[i] for i in active], t, rng, active)
        if not isinstance(actions, np.ndarray):
            motions = list(actions)
            actions = np.array([_record_motion(m) for m in motions], dtype=np.int64).reshape(-1, len(AXES))
        else:
            motions = [ActionCommand(a).to_motion() for a in actions]
        nxt, done, succ = [], [], []
        for j, i in enumerate(active):
            s, _ = step(states[i], motions[j])
            states[i] = s
            nxt.append(s.gripper.as_pose())
            done.append(s.terminated)
            succ.append(s.success)
        nxt = np.stack(nxt)
        done = np.asarray(done)
        if estimator is not None and reward.intrinsic and t <= estimator.n:
            r_intr = intrinsic_reward(estimator.probs(images[active], nxt), t)
        else:
            r_intr = np.zeros(len(active))
        r_task = total_reward(np.zeros(len(active)), done, np.asarray(succ), reward)
        for k, v in (("episode", active), ("t", np.full(len(active), t)), ("poses", poses), ("next_poses", nxt),
                     ("actions", actions), ("logp", logp), ("values", values), ("r_intr", r_intr),
                     ("r_task", r_task), ("done", done)):
            rec[k].append(v)
        active = active[~done]
    cat = {k: np.concatenate(v) for k, v in rec.items()}
    order = np.lexsort((cat["t"], cat["episode"]))
    cat = {k: v[order] for k, v in cat.items()}
    success = np.array([s.success for s in states])
    return images, cat, success


def _record_motion(m: Motion) -> tuple[int, ...]:
    try:
        return ActionCommand.from_values(m.dx, m.dz, m.dpitch, m.close).indices
    except BinError:
        return (-1,) * len(AXES)


def network_actor(net: nn.Network, params: dict, world: World, greedy: bool = False) -> Callable:
    def act(images, poses, states, t, rng, ids):
        logp, value = nn.forward(net, params, [images, pose_features(poses, world)])
        a = greedy_actions(logp) if greedy else sample_actions(logp, rng)
        return a, selected_logp(logp, a), value[:, 0]
    return act


def collect_rollouts(net: nn.Network, params: dict, scenes: SceneMix, episodes: int, seed,
                     estimator: IntentEstimator | None = None, reward: RewardConfig = RewardConfig(),
                     world: World = World(), resolution="fast") -> RolloutBatch:
    """Run ``episodes`` episodes with actions sampled from the policy snapshot ``params``."""
    if episodes < 1:
        raise ValueError("need at least one episode")
    rng = np.random.default_rng(seed)
    drawn = [scenes.sample(rng, world) for _ in range(episodes)]
    images, rec, success = _run_episodes(network_actor(net, params, world), [d[1] for d in drawn], world,
                                         resolution, rng, estimator, reward)
    return RolloutBatch(images=images, success=success, kinds=[d[0] for d in drawn], **rec)


def _collect_job(args):
    return collect_rollouts(*args)


# ---------------------------------------------------------------------------
# PPO


@dataclass(frozen=True)
class PPOConfig:
    lr: float = 1e-4
    clip: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    epochs: int = 20
    minibatch: int = 64
    workers: int = 8
    refresh_epochs: int = 10
    episodes: int = 50_000
    episodes_per_batch: int = 64
    seed: int = 0
    entropy_coef: float = 0.05
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    eval_every: int = 5_000
    eval_episodes: int = 100
    eval_seed: int = 10_007
    target_success: float = 0.9

    def __post_init__(self):
        if not 0.0 < self.clip < 1.0:
            raise ValueError("clip ratio must be in (0, 1)")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("discount must be in (0, 1]")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("GAE parameter must be in [0, 1]")
        for name in ("epochs", "minibatch", "workers", "refresh_epochs", "episodes", "episodes_per_batch",
                     "eval_every", "eval_episodes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


def gae(rewards: np.ndarray, values: np.ndarray, episode: np.ndarray, done: np.ndarray, gamma: float,
        lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Advantages and returns for steps stored episode by episode in time order.

    Every episode ends in a terminal step, so nothing is bootstrapped past it.
    """
    adv = np.zeros_like(rewards)
    nxt_v, nxt_a = 0.0, 0.0
    for i in range(len(rewards) - 1, -1, -1):
        last = done[i] or i == len(rewards) - 1 or episode[i + 1] != episode[i]
        if last:
            nxt_v, nxt_a = 0.0, 0.0
        delta = rewards[i] + gamma * nxt_v - values[i]
        nxt_a = delta + gamma * lam * nxt_a
        adv[i] = nxt_a
        nxt_v = values[i]
    return adv, adv + values


class PPOError(FloatingPointError):
    def __init__(self, message: str, diagnostics: dict):
        super().__init__(f"{message}: {diagnostics}")
        self.diagnostics = diagnostics


def probability_ratios(net: nn.Network, params: dict, batch: RolloutBatch, world: World = World()) -> np.ndarray:
    logp, _ = nn.forward(net, params, [batch.images[batch.episode], pose_features(batch.poses, world)])
    return np.exp(selected_logp(logp, batch.actions) - batch.logp)


def ppo_update(net: nn.Network, ps: nn.ParamSet, batch: RolloutBatch, cfg: PPOConfig, rng: np.random.Generator,
               world: World = World()) -> tuple[nn.ParamSet, dict]:
    """Clipped-surrogate PPO over ``cfg.epochs`` passes of shuffled minibatches."""
    if len(batch) == 0:
        raise ValueError("empty rollout batch")
    adv, ret = gae(batch.rewards, batch.values, batch.episode, batch.done, cfg.gamma, cfg.gae_lambda)
    std = adv.std()
    adv_n = (adv - adv.mean()) / (std + 1e-8)
    poses = pose_features(batch.poses, world)
    sums = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "approx_kl": 0.0, "clip_fraction": 0.0}
    count = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(len(batch))
        for i in range(0, len(order), cfg.minibatch):
            idx = order[i:i + cfg.minibatch]
            m = len(idx)
            (logp, value), tape = nn.forward(net, ps.params, [batch.images[batch.episode[idx]], poses[idx]],
                                             tape=True)
            new = selected_logp(logp, batch.actions[idx])
            ratio = np.exp(new - batch.logp[idx])
            a = adv_n[idx]
            s1 = ratio * a
            s2 = np.clip(ratio, 1 - cfg.clip, 1 + cfg.clip) * a
            v = value[:, 0]
            diag = {
                "policy_loss": float(-np.minimum(s1, s2).mean()),
                "value_loss": float(0.5 * np.mean((v - ret[idx]) ** 2)),
                "entropy": float(group_entropy(logp).mean()),
                "approx_kl": float(np.mean(batch.logp[idx] - new)),
                "clip_fraction": float(np.mean(np.abs(ratio - 1) > cfg.clip)),
            }
            if not all(np.isfinite(x) for x in diag.values()):
                raise PPOError("non-finite PPO loss", diag)
            g_new = np.where(s1 <= s2, -a * ratio, 0.0) / m
            g_logp = np.zeros_like(logp)
            np.put_along_axis(g_logp, batch.actions[idx] + np.asarray(OFFSETS),
                              np.repeat(g_new[:, None], len(GROUPS), axis=1), axis=1)
            g_logp += cfg.entropy_coef * np.exp(logp) * (logp + 1.0) / m
            g_value = (cfg.value_coef * (v - ret[idx]) / m)[:, None]
            grads = nn.backward(net, ps.params, tape, (g_logp, g_value))
            if cfg.max_grad_norm > 0:
                grads = nn.clip_by_global_norm(grads, cfg.max_grad_norm)
            ps = nn.adam_step(ps, grads, cfg.lr)
            for k in sums:
                sums[k] += diag[k]
            count += 1
    return ps, {k: v / count for k, v in sums.items()}


# ---------------------------------------------------------------------------
# evaluation


def wilson_interval(successes: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    if n < 1:
        raise ValueError("need at least one episode")
    p = successes / n
    den = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    lo = 0.0 if successes == 0 else max(0.0, centre - half)
    hi = 1.0 if successes == n else min(1.0, centre + half)
    return lo, hi


@dataclass
class EvalResult:
    kind: str
    episodes: int
    successes: int

    @property
    def rate(self) -> float:
        return self.successes / self.episodes

    @property
    def ci95(self) -> tuple[float, float]:
        return wilson_interval(self.successes, self.episodes)

    def to_dict(self) -> dict:
        lo, hi = self.ci95
        return {"scene": self.kind, "episodes": self.episodes, "successes": self.successes, "rate": self.rate,
                "ci_low": lo, "ci_high": hi}


def evaluate(act: Callable, kind: str, episodes: int, seed, ranges: SceneRanges = SceneRanges(),
             world: World = World(), resolution="fast", chunk: int = 256) -> EvalResult:
    """Success over ``episodes`` fresh scenes of one kind.  Scenes depend only on ``seed``."""
    if episodes < 1:
        raise ValueError("evaluation needs at least one episode")
    scene_rng = np.random.default_rng([*np.atleast_1d(seed), 1])
    act_rng = np.random.default_rng([*np.atleast_1d(seed), 2])
    scenes = [sample_scene(kind, scene_rng, ranges, world) for _ in range(episodes)]
    wins = 0
    for i in range(0, episodes, chunk):
        _, _, success = _run_episodes(act, scenes[i:i + chunk], world, resolution, act_rng, None, RewardConfig())
        wins += int(success.sum())
    return EvalResult(kind, episodes, wins)


def random_actor() -> Callable:
    """Uniform over every bin."""
    def act(images, poses, states, t, rng, ids):
        logp = np.concatenate([np.full((len(poses), g), -math.log(g)) for g in GROUPS], axis=1)
        a = sample_actions(logp, rng)
        return a, selected_logp(logp, a), np.zeros(len(poses))
    return act


def scripted_actor() -> Callable:
    """The reference controller: plans from the true state at the first step and replays it."""
    plans: dict[int, list[Motion]] = {}

    def act(images, poses, states, t, rng, ids):
        out = []
        for s, i in zip(states, ids):
            if t == 1:
                plans[int(i)] = expert_motions(s)
            plan = plans[int(i)]
            out.append(plan[t - 1] if t <= len(plan) else Motion(close=True))
        return out, np.zeros(len(states)), np.zeros(len(states))
    return act


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    net: nn.Network
    params: nn.ParamSet          # best checkpoint by evaluation success
    final_params: nn.ParamSet
    curve: list[dict]
    diagnostics: list[dict]
    reward_stats: dict
    warning: str | None = None

    @property
    def best_success(self) -> float:
        return max((r["success"] for r in self.curve), default=float("nan"))


def _eval_row(net, params, mix: SceneMix, cfg: PPOConfig, world, resolution, episodes_done) -> dict:
    row = {"episodes": episodes_done}
    hits = 0
    for kind in mix.kinds:
        r = evaluate(network_actor(net, params, world, greedy=True), kind, cfg.eval_episodes,
                     [cfg.eval_seed, sum(map(ord, kind))], mix.ranges, world, resolution)
        row[f"success_{kind}"] = r.rate
        hits += r.successes
    # pooled count rather than a mean of rates, so that 0.9 compares exactly
    row["success"] = hits / (cfg.eval_episodes * len(mix.kinds))
    return row


def refresh_due(epochs_before: int, epochs_after: int, period: int) -> bool:
    """True when the optimiser crossed a multiple of ``period`` passes, i.e. workers reload parameters."""
    return epochs_after // period > epochs_before // period


def train_policy(cfg: PPOConfig, reward: RewardConfig = RewardConfig(), scenes: SceneMix = SceneMix(),
                 estimator: IntentEstimator | None = None, world: World = World(), resolution="fast",
                 log: Callable | None = None) -> TrainResult:
    """PPO training for ``cfg.episodes`` episodes with periodic greedy evaluation.

    Rollouts use a parameter snapshot refreshed whenever the optimiser has
    completed another ``cfg.refresh_epochs`` passes over collected batches.
    If the best evaluation never reaches ``cfg.target_success`` the best
    checkpoint is still returned, with ``warning`` set.
    """
    if reward.intrinsic and estimator is None:
        raise ValueError("intrinsic reward needs an intention estimator")
    shape = resolve_resolution(resolution)
    net = policy_net(shape)
    rng = np.random.default_rng([cfg.seed, 0])
    ps = nn.ParamSet(nn.init_params(net, rng))
    snapshot = ps.snapshot()
    est = estimator if reward.intrinsic else None
    curve, diags = [], []
    stats = {"r_intr_min": math.inf, "r_intr_max": -math.inf, "r_total_min": math.inf, "r_total_max": -math.inf,
             "max_length": 0, "steps": 0, "episodes": 0, "train_successes": 0}
    best = (-1.0, ps)
    done_eps, epochs_done, batch_i = 0, 0, 0
    next_eval = cfg.eval_every
    pool = ProcessPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
    try:
        while done_eps < cfg.episodes:
            n = min(cfg.episodes_per_batch, cfg.episodes - done_eps)
            if pool is None:
                batch = collect_rollouts(net, snapshot, scenes, n, [cfg.seed, 1, batch_i], est, reward, world,
                                         resolution)
            else:
                share = [n // cfg.workers + (w < n % cfg.workers) for w in range(cfg.workers)]
                jobs = [(net, snapshot, scenes, k, [cfg.seed, 1, batch_i, w], est, reward, world, resolution)
                        for w, k in enumerate(share) if k > 0]
                batch = RolloutBatch.merge(list(pool.map(_collect_job, jobs)))
            batch_i += 1
            done_eps += n
            tot = batch.rewards
            stats["r_intr_min"] = min(stats["r_intr_min"], float(batch.r_intr.min()))
            stats["r_intr_max"] = max(stats["r_intr_max"], float(batch.r_intr.max()))
            stats["r_total_min"] = min(stats["r_total_min"], float(tot.min()))
            stats["r_total_max"] = max(stats["r_total_max"], float(tot.max()))
            stats["max_length"] = max(stats["max_length"], int(batch.lengths().max()))
            stats["steps"] += len(batch)
            stats["episodes"] += batch.n_episodes
            stats["train_successes"] += int(batch.success.sum())

            ps, diag = ppo_update(net, ps, batch, cfg, rng, world)
            if refresh_due(epochs_done, epochs_done + cfg.epochs, cfg.refresh_epochs):
                snapshot = ps.snapshot()
            epochs_done += cfg.epochs
            diag.update({"episodes": done_eps, "batch_success": float(batch.success.mean()),
                         "mean_return": float(np.bincount(batch.episode, tot).mean())})
            kinds = np.asarray(batch.kinds)
            for kind in scenes.kinds:
                hit = kinds == kind
                diag[f"batch_success_{kind}"] = float(batch.success[hit].mean()) if hit.any() else float("nan")
            diags.append(diag)

            if done_eps >= next_eval or done_eps >= cfg.episodes:
                next_eval += cfg.eval_every
                row = _eval_row(net, ps.params, scenes, cfg, world, resolution, done_eps)
                curve.append(row)
                if log is not None:
                    log(row)
                if row["success"] > best[0]:
                    best = (row["success"], ps.copy())
    finally:
        if pool is not None:
            pool.shutdown()
    warning = None
    if best[0] < cfg.target_success:
        warning = (f"episode budget exhausted: best evaluation success {best[0]:.3f} "
                   f"is below the target {cfg.target_success:.3f}")
        warnings.warn(warning, RuntimeWarning, stacklevel=2)
    return TrainResult(net, best[1], ps, curve, diags, stats, warning)


# ---------------------------------------------------------------------------
# behaviour cloning


@dataclass(frozen=True)
class BCConfig:
    epochs: int = 30
    lr: float = 1e-3
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.lr < 0:
            raise ValueError("invalid behaviour-cloning settings")

    def to_dict(self) -> dict:
        return asdict(self)


def demo_pairs(trajs: Sequence[DemoTrajectory], world: World = World()):
    """(image index, pose, action) for every simulated step of every demo.

    Steps recorded after the gripper closed are not actions the policy can
    take and are left out.
    """
    images, poses, actions, owner = [], [], [], []
    for t in trajs:
        acts = t.meta.get("actions")
        demo_id = t.meta.get("demo_id", "?")
        if acts is None:
            raise BinError(f"demo {demo_id}: no recorded actions")
        k = len(images)
        images.append(t.images[0])
        for j, a in enumerate(acts):
            try:
                cmd = ActionCommand.from_values(a[0], a[1], a[2], bool(a[3]))
            except BinError as e:
                raise BinError(f"demo {demo_id}, step {j + 1}: {e}") from None
            poses.append(t.poses[j])
            actions.append(cmd.indices)
            owner.append(k)
            if cmd.close:
                break
    if not images:
        raise ValueError("no demonstrations given")
    return (image_input(np.stack(images), world), np.asarray(poses), np.asarray(actions, dtype=np.int64),
            np.asarray(owner))


def bc_train(trajs: Sequence[DemoTrajectory], cfg: BCConfig = BCConfig(), world: World = World(),
             resolution="fast", log: Callable | None = None) -> tuple[nn.Network, nn.ParamSet, list[dict]]:
    """Cross-entropy fit of the action heads to the demonstrated (discretised) actions."""
    images, poses, actions, owner = demo_pairs(trajs, world)
    net = policy_net(resolve_resolution(resolution))
    if tuple(images.shape[2:]) != net.input_shapes[0][1:]:
        raise ValueError(f"demo images {images.shape[2:]} do not match resolution {resolution!r}")
    rng = np.random.default_rng(cfg.seed)
    ps = nn.ParamSet(nn.init_params(net, rng))
    feats = pose_features(poses, world)
    cols = actions + np.asarray(OFFSETS)
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(actions))
        total = 0.0
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            (logp, _), tape = nn.forward(net, ps.params, [images[owner[idx]], feats[idx]], tape=True)
            loss = float(-np.take_along_axis(logp, cols[idx], axis=1).sum(axis=1).mean())
            g = np.zeros_like(logp)
            np.put_along_axis(g, cols[idx], -1.0 / len(idx), axis=1)
            ps = nn.adam_step(ps, nn.backward(net, ps.params, tape, (g, None)), cfg.lr)
            total += loss * len(idx)
        row = {"epoch": epoch + 1, "loss": total / len(order)}
        history.append(row)
        if log is not None:
            log(row)
    return net, ps, history
