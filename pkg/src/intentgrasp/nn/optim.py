"""Parameter container and the Adam update."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ParamSet:
    params: dict[str, np.ndarray]
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def __post_init__(self):
        for name, p in self.params.items():
            self.m.setdefault(name, np.zeros_like(p))
            self.v.setdefault(name, np.zeros_like(p))
        if self.step < 0:
            raise ValueError("step counter must be non-negative")

    def copy(self) -> "ParamSet":
        return ParamSet(
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.m.items()},
            {k: v.copy() for k, v in self.v.items()},
            self.step,
        )

    def snapshot(self) -> dict[str, np.ndarray]:
        """Read-only copy of the parameter values (no optimiser state)."""
        out = {}
        for k, v in self.params.items():
            a = v.copy()
            a.flags.writeable = False
            out[k] = a
        return out

    def num_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))


def adam_step(ps: ParamSet, grads: dict[str, np.ndarray], lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> ParamSet:
    if set(grads) != set(ps.params):
        missing = set(ps.params) ^ set(grads)
        raise ValueError(f"gradient names do not match parameters: {sorted(missing)}")
    t = ps.step + 1
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    params, m, v = {}, {}, {}
    for name, p in ps.params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        m_new = beta1 * ps.m[name] + (1.0 - beta1) * g
        v_new = beta2 * ps.v[name] + (1.0 - beta2) * g * g
        params[name] = p - lr * (m_new / c1) / (np.sqrt(v_new / c2) + eps)
        m[name] = m_new
        v[name] = v_new
    return ParamSet(params, m, v, t)


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    norm = global_norm(grads)
    if norm <= max_norm or norm == 0.0:
        return grads
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}
