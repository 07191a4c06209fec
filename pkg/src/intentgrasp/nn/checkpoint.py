"""Checkpoint container: a zip (``.npz``) holding a JSON header and flat arrays.

The header records a format version, the network layout and free-form
metadata; parameters are stored flattened with their shapes in the header,
so the file can be read without this package.  numpy writes fixed zip
timestamps, which keeps the bytes identical for identical contents.
"""
from __future__ import annotations

import io
import json
from pathlib import Path

import numpy as np

from .layers import Network
from .optim import ParamSet

FORMAT_VERSION = 1


def save_checkpoint(path, nets: dict[str, Network], params: dict[str, ParamSet],
                    meta: dict | None = None, with_optimizer: bool = False) -> None:
    header = {
        "format": "intentgrasp-checkpoint",
        "version": FORMAT_VERSION,
        "networks": {k: n.to_dict() for k, n in sorted(nets.items())},
        "shapes": {},
        "steps": {k: int(p.step) for k, p in sorted(params.items())},
        "meta": meta or {},
    }
    arrays = {}
    for key in sorted(params):
        ps = params[key]
        for name in sorted(ps.params):
            header["shapes"][f"{key}/{name}"] = list(ps.params[name].shape)
            arrays[f"{key}/{name}"] = np.ascontiguousarray(ps.params[name], dtype=np.float64).ravel()
            if with_optimizer:
                arrays[f"{key}/{name}@m"] = ps.m[name].ravel()
                arrays[f"{key}/{name}@v"] = ps.v[name].ravel()
    blob = json.dumps(header, sort_keys=True).encode()
    buf = io.BytesIO()
    np.savez(buf, __header__=np.frombuffer(blob, dtype=np.uint8), **arrays)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path) -> tuple[dict[str, Network], dict[str, ParamSet], dict]:
    with np.load(Path(path), allow_pickle=False) as z:
        header = json.loads(bytes(z["__header__"]).decode())
        if header.get("format") != "intentgrasp-checkpoint":
            raise ValueError(f"{path}: not a checkpoint file")
        if header["version"] != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {header['version']}")
        nets = {k: Network.from_dict(d) for k, d in header["networks"].items()}
        grouped: dict[str, dict] = {}
        for full, shape in header["shapes"].items():
            key, name = full.split("/", 1)
            entry = grouped.setdefault(key, {"p": {}, "m": {}, "v": {}})
            entry["p"][name] = z[full].reshape(shape).copy()
            if f"{full}@m" in z.files:
                entry["m"][name] = z[f"{full}@m"].reshape(shape).copy()
                entry["v"][name] = z[f"{full}@v"].reshape(shape).copy()
    params = {
        k: ParamSet(e["p"], e["m"], e["v"], header["steps"].get(k, 0))
        for k, e in grouped.items()
    }
    for key, net in nets.items():
        expected = net.param_shapes()
        got = {n: p.shape for n, p in params[key].params.items()}
        if {n: tuple(s) for n, s in expected.items()} != got:
            raise ValueError(f"{path}: parameters of {key!r} do not match its layout")
    return nets, params, header["meta"]
