"""Intention estimator: classify a (depth image, gripper pose) state into one of ``n`` intents.

Image branch: 1x1 convolution with 16 channels followed by global average
pooling.  Pose branch: one dense layer of 32 units.  Both are concatenated
and passed through dense layers of 256, 256 and 128 units and a softmax over
the intents.
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import nn
from .sim import World
from .sim.render import normalize_depth
from .trajseg import DemoTrajectory

METRIC_COLUMNS = ("epoch", "lr", "train_loss", "val_accuracy")


def pose_features(poses, world: World = World()) -> np.ndarray:
    """Scale ``(N, 7)`` poses to roughly unit range: metres by workspace size, radians by pi."""
    p = np.asarray(poses, dtype=np.float64).reshape(-1, 7)
    scale = np.array([world.x_max, world.x_max, world.z_max, np.pi, np.pi, np.pi, 1.0])
    return p / scale


def image_input(images, world: World = World()) -> np.ndarray:
    """``(N, H, W)`` raw depth -> ``(N, 1, H, W)`` normalised network input."""
    img = np.asarray(images, dtype=np.float64)
    if img.ndim == 2:
        img = img[None]
    return normalize_depth(img, world)[:, None]


def intent_net(n: int = 3, image_shape: tuple[int, int] = (32, 32)) -> nn.Network:
    if n < 1:
        raise ValueError("need at least one intent")
    return nn.Network(
        branches=(
            (nn.conv2d("img_conv", 1, 16, 1), nn.gap("img_gap")),
            (nn.dense("pose_fc", 7, 32),),
        ),
        trunk=(
            nn.concat("join"),
            nn.dense("fc1", 48, 256),
            nn.dense("fc2", 256, 256),
            nn.dense("fc3", 256, 128),
        ),
        heads=(nn.softmax_head("intent", 128, (n,)),),
        input_shapes=((1, *image_shape), (7,)),
    )


@dataclass(frozen=True)
class EstimatorTrainConfig:
    epochs: int = 100
    batch_size: int = 64
    lr: float = 1e-3
    halve_every: int = 10
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.halve_every < 1:
            raise ValueError("epochs, batch size and schedule period must be positive")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("validation fraction must be in [0, 1)")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 0-based ``epoch``: halved every ``halve_every`` epochs."""
        return self.lr * 0.5 ** (epoch // self.halve_every)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class StateTable:
    """All labelled states of a set of demos, images stored once per demo."""

    images: np.ndarray      # (D, 1, H, W) network input
    poses: np.ndarray       # (S, 7) scaled
    image_of: np.ndarray    # (S,) demo index per state
    labels: np.ndarray      # (S,) 0-based intent

    def __len__(self) -> int:
        return len(self.labels)

    def batch(self, idx) -> tuple[np.ndarray, np.ndarray]:
        return self.images[self.image_of[idx]], self.poses[idx]


def state_table(trajs: Sequence[DemoTrajectory], world: World = World()) -> StateTable:
    images, poses, owner, labels = [], [], [], []
    for t in trajs:
        if t.labels is None:
            raise ValueError(f"demo {t.meta.get('demo_id', '?')} has no intent labels")
        base = len(images)
        images.extend(t.images)
        poses.append(t.poses)
        owner.append(base + np.asarray(t.image_index))
        labels.append(np.asarray(t.labels) - 1)
    if not images:
        raise ValueError("no demonstrations given")
    return StateTable(image_input(np.stack(images), world), pose_features(np.concatenate(poses), world),
                      np.concatenate(owner), np.concatenate(labels).astype(np.int64))


def split_demos(count: int, val_fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Held-out split by demo, so no state of a validation demo is seen in training."""
    order = rng.permutation(count)
    n_val = int(round(count * val_fraction))
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def predict(net: nn.Network, params: dict, images: np.ndarray, poses: np.ndarray,
            chunk: int = 1024) -> np.ndarray:
    """Intent probabilities ``(N, n)`` for network-ready inputs."""
    out = []
    for i in range(0, len(poses), chunk):
        out.append(np.exp(nn.forward(net, params, [images[i:i + chunk], poses[i:i + chunk]])))
    return np.concatenate(out) if out else np.zeros((0, net.heads[0].out_features))


def confusion_matrix(labels: np.ndarray, predicted: np.ndarray, n: int) -> np.ndarray:
    m = np.zeros((n, n), dtype=np.int64)
    np.add.at(m, (labels, predicted), 1)
    return m


@dataclass
class EstimatorResult:
    net: nn.Network
    params: nn.ParamSet
    history: list[dict]
    val_demos: np.ndarray

    @property
    def final_val_accuracy(self) -> float:
        return self.history[-1]["val_accuracy"] if self.history else float("nan")


def evaluate(net: nn.Network, params: dict, table: StateTable) -> tuple[float, np.ndarray]:
    if len(table) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    probs = predict(net, params, table.images[table.image_of], table.poses)
    pred = probs.argmax(axis=1)
    n = probs.shape[1]
    return float(np.mean(pred == table.labels)), confusion_matrix(table.labels, pred, n)


def _subset(table: StateTable, demos: np.ndarray) -> StateTable:
    keep = np.isin(table.image_of, demos)
    remap = np.full(len(table.images), -1)
    remap[demos] = np.arange(len(demos))
    return StateTable(table.images[demos], table.poses[keep], remap[table.image_of[keep]], table.labels[keep])


def train_estimator(trajs: Sequence[DemoTrajectory], cfg: EstimatorTrainConfig = EstimatorTrainConfig(),
                    n: int = 3, world: World = World(), log=None) -> EstimatorResult:
    """Fit the estimator with Adam on mini-batches of labelled states.

    Demos whose images share one shape are required.  ``log``, if given, is
    called with each epoch's metrics row.
    """
    table = state_table(trajs, world)
    if table.labels.max() >= n:
        raise ValueError(f"labels exceed the configured {n} intents")
    rng = np.random.default_rng(cfg.seed)
    net = intent_net(n, table.images.shape[2:])
    ps = nn.ParamSet(nn.init_params(net, rng))
    train_demos, val_demos = split_demos(len(table.images), cfg.val_fraction, rng)
    train, val = _subset(table, train_demos), _subset(table, val_demos)
    if len(train) == 0:
        raise ValueError("no training states after the validation split")
    history = []
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        order = rng.permutation(len(train))
        total, seen = 0.0, 0
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            img, pose = train.batch(idx)
            logp, tape = nn.forward(net, ps.params, [img, pose], tape=True)
            loss, g = nn.nll_from_logprobs(logp, train.labels[idx])
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite estimator loss at epoch {epoch + 1}")
            ps = nn.adam_step(ps, nn.backward(net, ps.params, tape, g), lr)
            total += loss * len(idx)
            seen += len(idx)
        acc = evaluate(net, ps.params, val)[0] if len(val) else float("nan")
        row = {"epoch": epoch + 1, "lr": lr, "train_loss": total / seen, "val_accuracy": acc}
        history.append(row)
        if log is not None:
            log(row)
    return EstimatorResult(net, ps, history, val_demos)


def write_metrics(path, rows: Sequence[dict], columns: Sequence[str] = METRIC_COLUMNS):
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(r[k])) if isinstance(r[k], float) else r[k]) for k in columns})


class IntentEstimator:
    """A trained estimator bound to its world constants, for reward queries."""

    def __init__(self, net: nn.Network, params: dict, world: World = World()):
        self.net = net
        self.params = params
        self.world = world

    @property
    def n(self) -> int:
        return self.net.heads[0].out_features

    def probs(self, images: np.ndarray, poses: np.ndarray) -> np.ndarray:
        """``images`` already network-ready ``(N, 1, H, W)``; raw ``(N, 7)`` poses."""
        expected = self.net.input_shapes[0][1:]
        if tuple(images.shape[2:]) != tuple(expected):
            raise ValueError(f"image resolution {tuple(images.shape[2:])} does not match the "
                             f"estimator's {tuple(expected)}")
        return predict(self.net, self.params, images, pose_features(poses, self.world))

    def save(self, path, meta: dict | None = None):
        nn.save_checkpoint(path, {"estimator": self.net}, {"estimator": nn.ParamSet(dict(self.params))},
                           meta={"world": self.world.to_dict(), **(meta or {})})

    @classmethod
    def load(cls, path) -> "IntentEstimator":
        nets, params, meta = nn.load_checkpoint(path)
        if "estimator" not in nets:
            raise ValueError(f"{path}: not an estimator checkpoint")
        return cls(nets["estimator"], params["estimator"].params, World.from_dict(meta.get("world", {})))
