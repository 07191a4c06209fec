"""Layer specifications, network layout and the forward/backward passes.

Every activation is a float64 numpy array with a leading batch axis.  Images
are ``(N, C, H, W)``; everything else is ``(N, features)``.  A network is a
set of input branches (one or two), an optional concat junction, a trunk of
dense layers and one or more heads evaluated on the trunk output.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

KINDS = ("dense", "conv2d", "gap", "concat", "softmax_head")
ACTIVATIONS = ("relu", "none")


class ShapeError(ValueError):
    """Raised when an input does not match the layer that consumes it."""


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    name: str
    in_features: int = 0
    out_features: int = 0
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 0
    stride: int = 1
    activation: str = "none"
    groups: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.kind == "dense" and (self.in_features <= 0 or self.out_features <= 0):
            raise ValueError(f"{self.name}: dense dims must be positive")
        if self.kind == "conv2d" and min(self.in_channels, self.out_channels, self.kernel, self.stride) <= 0:
            raise ValueError(f"{self.name}: conv dims must be positive")
        if self.kind == "softmax_head":
            if self.in_features <= 0 or not self.groups or min(self.groups) <= 0:
                raise ValueError(f"{self.name}: softmax head needs positive groups")
            object.__setattr__(self, "groups", tuple(int(g) for g in self.groups))
            object.__setattr__(self, "out_features", int(sum(self.groups)))

    @property
    def has_params(self) -> bool:
        return self.kind in ("dense", "conv2d", "softmax_head")

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        if self.kind == "conv2d":
            return {
                f"{self.name}.W": (self.out_channels, self.in_channels, self.kernel, self.kernel),
                f"{self.name}.b": (self.out_channels,),
            }
        if self.kind in ("dense", "softmax_head"):
            return {
                f"{self.name}.W": (self.in_features, self.out_features),
                f"{self.name}.b": (self.out_features,),
            }
        return {}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["groups"] = list(self.groups)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        d = dict(d)
        d["groups"] = tuple(d.get("groups", ()))
        return cls(**d)


def dense(name, n_in, n_out, activation="relu") -> LayerSpec:
    return LayerSpec("dense", name, in_features=n_in, out_features=n_out, activation=activation)


def conv2d(name, c_in, c_out, kernel, stride=1, activation="relu") -> LayerSpec:
    return LayerSpec("conv2d", name, in_channels=c_in, out_channels=c_out,
                     kernel=kernel, stride=stride, activation=activation)


def gap(name="gap") -> LayerSpec:
    return LayerSpec("gap", name)


def concat(name="concat") -> LayerSpec:
    return LayerSpec("concat", name)


def softmax_head(name, n_in, groups: Sequence[int]) -> LayerSpec:
    return LayerSpec("softmax_head", name, in_features=n_in, groups=tuple(groups))


@dataclass(frozen=True)
class Network:
    """Branches -> (concat) -> trunk -> heads.

    ``input_shapes`` holds the per-sample shape expected by each branch, so
    shape errors can be reported before any arithmetic happens.
    """

    branches: tuple[tuple[LayerSpec, ...], ...]
    trunk: tuple[LayerSpec, ...] = ()
    heads: tuple[LayerSpec, ...] = ()
    input_shapes: tuple[tuple[int, ...], ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "branches", tuple(tuple(b) for b in self.branches))
        object.__setattr__(self, "trunk", tuple(self.trunk))
        object.__setattr__(self, "heads", tuple(self.heads))
        object.__setattr__(self, "input_shapes", tuple(tuple(s) for s in self.input_shapes))
        if len(self.branches) not in (1, 2):
            raise ValueError("a network takes one or two inputs")
        has_concat = bool(self.trunk) and self.trunk[0].kind == "concat"
        if len(self.branches) == 2 and not has_concat:
            raise ValueError("two input branches need a concat junction at the head of the trunk")
        if len(self.branches) == 1 and has_concat:
            raise ValueError("concat junction requires two input branches")
        if len(self.input_shapes) != len(self.branches):
            raise ValueError("one input shape per branch is required")
        names = [l.name for l in self.layers()]
        if len(set(names)) != len(names):
            raise ValueError("layer names must be unique")
        self._check_shapes()

    def layers(self):
        for b in self.branches:
            yield from b
        yield from self.trunk
        yield from self.heads

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        out = {}
        for layer in self.layers():
            out.update(layer.param_shapes())
        return out

    def _check_shapes(self):
        feats = [_infer_shape(b, s) for b, s in zip(self.branches, self.input_shapes)]
        if len(feats) == 2:
            shape = (int(np.prod(feats[0])) + int(np.prod(feats[1])),)
            trunk = self.trunk[1:]
        else:
            shape = feats[0]
            trunk = self.trunk
        shape = _infer_shape(trunk, shape)
        for head in self.heads:
            _infer_shape((head,), shape)

    def to_dict(self) -> dict:
        return {
            "branches": [[l.to_dict() for l in b] for b in self.branches],
            "trunk": [l.to_dict() for l in self.trunk],
            "heads": [l.to_dict() for l in self.heads],
            "input_shapes": [list(s) for s in self.input_shapes],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Network":
        return cls(
            branches=tuple(tuple(LayerSpec.from_dict(x) for x in b) for b in d["branches"]),
            trunk=tuple(LayerSpec.from_dict(x) for x in d["trunk"]),
            heads=tuple(LayerSpec.from_dict(x) for x in d["heads"]),
            input_shapes=tuple(tuple(s) for s in d["input_shapes"]),
        )


def conv_out(size: int, kernel: int, stride: int) -> int:
    return (size - kernel) // stride + 1


def _infer_shape(layers: Sequence[LayerSpec], shape: tuple[int, ...]) -> tuple[int, ...]:
    for layer in layers:
        if layer.kind == "conv2d":
            if len(shape) != 3 or shape[0] != layer.in_channels:
                raise ShapeError(f"layer {layer.name!r}: expected (C={layer.in_channels}, H, W), got {shape}")
            if shape[1] < layer.kernel or shape[2] < layer.kernel:
                raise ShapeError(f"layer {layer.name!r}: kernel {layer.kernel} does not fit {shape[1:]}")
            shape = (layer.out_channels, conv_out(shape[1], layer.kernel, layer.stride),
                     conv_out(shape[2], layer.kernel, layer.stride))
        elif layer.kind == "gap":
            if len(shape) != 3:
                raise ShapeError(f"layer {layer.name!r}: global-avg-pool needs (C, H, W), got {shape}")
            shape = (shape[0],)
        elif layer.kind in ("dense", "softmax_head"):
            if int(np.prod(shape)) != layer.in_features:
                raise ShapeError(f"layer {layer.name!r}: expected {layer.in_features} features, got {shape}")
            shape = (layer.out_features,)
        elif layer.kind == "concat":
            raise ShapeError(f"layer {layer.name!r}: concat is only allowed at the head of the trunk")
    return shape


# ---------------------------------------------------------------------------
# initialisation


def init_params(net: Network, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases."""
    params = {}
    for layer in net.layers():
        if layer.kind == "conv2d":
            k2 = layer.kernel * layer.kernel
            fan_in, fan_out = layer.in_channels * k2, layer.out_channels * k2
        elif layer.kind in ("dense", "softmax_head"):
            fan_in, fan_out = layer.in_features, layer.out_features
        else:
            continue
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        for pname, shape in layer.param_shapes().items():
            if pname.endswith(".W"):
                params[pname] = rng.uniform(-limit, limit, size=shape)
            else:
                params[pname] = np.zeros(shape)
    return params


# ---------------------------------------------------------------------------
# single-layer kernels


def _log_softmax_groups(z: np.ndarray, groups: Sequence[int]) -> np.ndarray:
    out = np.empty_like(z)
    start = 0
    for g in groups:
        seg = z[:, start:start + g]
        m = seg.max(axis=1, keepdims=True)
        shifted = seg - m
        out[:, start:start + g] = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        start += g
    return out


def _conv_patches(x: np.ndarray, k: int, s: int) -> np.ndarray:
    # (N, C, H, W) -> (N, Ho, Wo, C*k*k)
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]
    n, c, ho, wo = win.shape[:4]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n, ho, wo, c * k * k)


def _layer_forward(layer: LayerSpec, params, x: np.ndarray):
    """Returns (output, cache)."""
    kind = layer.kind
    if kind == "conv2d":
        w = params[f"{layer.name}.W"]
        b = params[f"{layer.name}.b"]
        cols = _conv_patches(x, layer.kernel, layer.stride)
        z = cols @ w.reshape(w.shape[0], -1).T + b  # (N, Ho, Wo, O)
        z = z.transpose(0, 3, 1, 2)
        cache = (x.shape, cols)
    elif kind in ("dense", "softmax_head"):
        xf = x.reshape(x.shape[0], -1)
        z = xf @ params[f"{layer.name}.W"] + params[f"{layer.name}.b"]
        cache = (x.shape, xf)
    elif kind == "gap":
        z = x.mean(axis=(2, 3))
        cache = (x.shape,)
    else:
        raise AssertionError(kind)
    if layer.activation == "relu":
        z = np.maximum(z, 0.0)
    if kind == "softmax_head":
        z = _log_softmax_groups(z, layer.groups)
    return z, cache


def _layer_backward(layer: LayerSpec, params, cache, out: np.ndarray, g: np.ndarray,
                    grads: dict, need_input: bool = True):
    kind = layer.kind
    if kind == "softmax_head":
        # out holds log-probabilities; d/dz log_softmax = I - softmax
        probs = np.exp(out)
        dz = np.empty_like(g)
        start = 0
        for size in layer.groups:
            sl = slice(start, start + size)
            dz[:, sl] = g[:, sl] - probs[:, sl] * g[:, sl].sum(axis=1, keepdims=True)
            start += size
        g = dz
    elif layer.activation == "relu":
        g = g * (out > 0.0)

    if kind in ("dense", "softmax_head"):
        in_shape, xf = cache
        w = params[f"{layer.name}.W"]
        grads[f"{layer.name}.W"] = xf.T @ g
        grads[f"{layer.name}.b"] = g.sum(axis=0)
        return (g @ w.T).reshape(in_shape) if need_input else None
    if kind == "conv2d":
        in_shape, cols = cache
        w = params[f"{layer.name}.W"]
        o, c, k, _ = w.shape
        s = layer.stride
        gz = g.transpose(0, 2, 3, 1)  # (N, Ho, Wo, O)
        grads[f"{layer.name}.W"] = np.tensordot(gz, cols, axes=([0, 1, 2], [0, 1, 2])).reshape(w.shape)
        grads[f"{layer.name}.b"] = gz.sum(axis=(0, 1, 2))
        if not need_input:
            return None
        n, ho, wo = gz.shape[:3]
        dcols = (gz @ w.reshape(o, -1)).reshape(n, ho, wo, c, k, k)
        dx = np.zeros(in_shape)
        for i in range(k):
            for j in range(k):
                dx[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s] += \
                    dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return dx
    if kind == "gap":
        (in_shape,) = cache
        h, w = in_shape[2], in_shape[3]
        return np.broadcast_to(g[:, :, None, None] / (h * w), in_shape).copy()
    raise AssertionError(kind)


# ---------------------------------------------------------------------------
# whole-network passes


@dataclass
class Tape:
    """Intermediates recorded by a forward pass, consumed by :func:`backward`."""

    branch_records: list
    trunk_records: list
    head_records: list
    split: int | None


def _check_inputs(net: Network, inputs: Sequence[np.ndarray]):
    if len(inputs) != len(net.branches):
        raise ShapeError(f"network takes {len(net.branches)} input(s), got {len(inputs)}")
    batch = None
    for k, (x, shape) in enumerate(zip(inputs, net.input_shapes)):
        if tuple(x.shape[1:]) != tuple(shape):
            first = net.branches[k][0].name if net.branches[k] else net.trunk[0].name
            raise ShapeError(f"layer {first!r}: input {k} has shape {tuple(x.shape[1:])}, expected {tuple(shape)}")
        if batch is not None and x.shape[0] != batch:
            raise ShapeError("inputs disagree on batch size")
        batch = x.shape[0]


def _run(layers, params, x, records):
    for layer in layers:
        out, cache = _layer_forward(layer, params, x)
        records.append((layer, cache, out))
        x = out
    return x


def forward(net: Network, params: dict, inputs: Sequence[np.ndarray], tape: bool = False):
    """Evaluate ``net``; returns head outputs (a single array when there is one head).

    With ``tape=True`` returns ``(outputs, Tape)`` for a subsequent backward pass.
    Softmax heads emit log-probabilities.
    """
    inputs = [np.asarray(x, dtype=np.float64) for x in inputs]
    _check_inputs(net, inputs)
    branch_records = [[] for _ in net.branches]
    feats = [_run(b, params, x, rec) for b, x, rec in zip(net.branches, inputs, branch_records)]
    split = None
    trunk = net.trunk
    if len(feats) == 2:
        a = feats[0].reshape(feats[0].shape[0], -1)
        b = feats[1].reshape(feats[1].shape[0], -1)
        split = a.shape[1]
        x = np.concatenate([a, b], axis=1)
        trunk = trunk[1:]
    else:
        x = feats[0]
    trunk_records = []
    x = _run(trunk, params, x, trunk_records)
    head_records = []
    outs = []
    for head in net.heads:
        out, cache = _layer_forward(head, params, x)
        head_records.append((head, cache, out))
        outs.append(out)
    if not net.heads:
        outs = [x]
    result = outs[0] if len(outs) == 1 else tuple(outs)
    if tape:
        return result, Tape(branch_records, trunk_records, head_records, split)
    return result


def backward(net: Network, params: dict, tape: Tape, grad_outputs) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. every parameter.

    ``grad_outputs`` mirrors the forward result (array or tuple, one per head);
    ``None`` entries mean the loss does not depend on that head.
    """
    if not isinstance(grad_outputs, (tuple, list)):
        grad_outputs = (grad_outputs,)
    grads = {name: np.zeros(shape) for name, shape in net.param_shapes().items()}
    g_trunk = None
    if tape.head_records:
        for (layer, cache, out), g in zip(tape.head_records, grad_outputs):
            if g is None:
                continue
            gi = _layer_backward(layer, params, cache, out, np.asarray(g, dtype=np.float64), grads)
            g_trunk = gi if g_trunk is None else g_trunk + gi
    else:
        g_trunk = np.asarray(grad_outputs[0], dtype=np.float64)
    if g_trunk is None:
        return grads
    g = g_trunk
    for layer, cache, out in reversed(tape.trunk_records):
        g = _layer_backward(layer, params, cache, out, g, grads)
    if tape.split is not None:
        g_parts = [g[:, :tape.split], g[:, tape.split:]]
    else:
        g_parts = [g]
    for records, gb in zip(tape.branch_records, g_parts):
        for idx in range(len(records) - 1, -1, -1):
            layer, cache, out = records[idx]
            gb = gb.reshape(out.shape)
            gb = _layer_backward(layer, params, cache, out, gb, grads, need_input=idx > 0)
    return grads
