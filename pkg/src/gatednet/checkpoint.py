"""Versioned binary checkpoint for :class:`GatedMLP`.

Layout::

    8 bytes   magic b"GNETCKPT"
    4 bytes   format version, uint32 little-endian
    4 bytes   header length H, uint32 little-endian
    H bytes   UTF-8 JSON header (sorted keys)
    ...       array payloads, in header order, raw little-endian

The header records ``dims``, per-slot gate ``mode``/``tau``/``theta``, per-layer
mask budgets and, for every array, its ``name``, ``dtype`` (``<f8`` for
parameters, ``|u1`` for mask bits) and ``shape``.  Floats round-trip exactly.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .gates import GatedLayer, GatedMLP, GateParams
from .rigl import SparseMask

MAGIC = b"GNETCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _gate_header(g: GateParams | None):
    if g is None:
        return None
    return {"mode": g.mode, "tau": g.tau, "theta": g.theta}


def to_bytes(model: GatedMLP, meta: dict | None = None) -> bytes:
    arrays = []
    for name, arr in model.named_arrays():
        arrays.append((name, np.ascontiguousarray(arr, dtype="<f8")))
    for k, m in enumerate(model.masks):
        if m is not None:
            arrays.append((f"masks.{k}", np.ascontiguousarray(m.bits, dtype=np.uint8)))
    header = {
        "dims": model.dims,
        "gates": [_gate_header(g) for g in model.gates()],
        "masks": [None if m is None else {"budget": m.budget} for m in model.masks],
        "arrays": [{"name": n, "dtype": a.dtype.str, "shape": list(a.shape)} for n, a in arrays],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(blob)), blob]
    parts.extend(a.tobytes() for _, a in arrays)
    return b"".join(parts)


def from_bytes(raw: bytes) -> tuple[GatedMLP, dict]:
    if raw[:8] != MAGIC:
        raise CheckpointError("not a gatednet checkpoint (bad magic)")
    version, hlen = struct.unpack("<II", raw[8:16])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    pos = 16 + hlen
    arrays = {}
    for spec in header["arrays"]:
        dt = np.dtype(spec["dtype"])
        count = int(np.prod(spec["shape"], dtype=np.int64))
        nbytes = count * dt.itemsize
        if pos + nbytes > len(raw):
            raise CheckpointError(f"truncated payload for {spec['name']}")
        arrays[spec["name"]] = (
            np.frombuffer(raw, dtype=dt, count=count, offset=pos).reshape(spec["shape"]).copy())
        pos += nbytes

    def gate(k):
        g = header["gates"][k]
        if g is None:
            return None
        if g["mode"] == "static":
            return GateParams("static", g["tau"], g["theta"],
                              static_logits=arrays[f"gates.{k}.static_logits"].astype(np.float64))
        return GateParams("dynamic", g["tau"], g["theta"],
                          gate_W=arrays[f"gates.{k}.gate_W"].astype(np.float64),
                          gate_b=arrays[f"gates.{k}.gate_b"].astype(np.float64))

    n_layers = len(header["dims"]) - 1
    layers = []
    for k in range(n_layers):
        layers.append(GatedLayer(
            arrays[f"layers.{k}.W"].astype(np.float64),
            arrays[f"layers.{k}.b"].astype(np.float64),
            gate(k + 1) if k < n_layers - 1 else None,
        ))
    masks = []
    for k, m in enumerate(header["masks"]):
        masks.append(None if m is None else
                     SparseMask(arrays[f"masks.{k}"].astype(np.float64), int(m["budget"])))
    return GatedMLP(layers, gate(0), masks), header.get("meta", {})


def save_checkpoint(path, model: GatedMLP, meta: dict | None = None) -> None:
    Path(path).write_bytes(to_bytes(model, meta))


def load_checkpoint(path) -> tuple[GatedMLP, dict]:
    return from_bytes(Path(path).read_bytes())
