"""Binary model files.

Layout (all little-endian)::

    magic      8 bytes   b"ARZDONET"
    version    u32
    kind       u8        0 = kernel_operator, 1 = law_operator
    p, heads   u32, u32
    range      f8, f8    trained lambda2 interval
    domain     f8        L (kernel) or horizon T (law)
    shift      heads x f8
    scale      heads x f8
    per network (branch, then trunk):
        n_widths u32, widths n_widths x u32, activation u8 (0 tanh, 1 linear)
    parameters: branch then trunk, W0, b0, W1, b1, ... row-major f8

A JSON manifest with the same metadata and the file's SHA-256 is written
next to the binary as ``<file>.json``.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from pathlib import Path

import numpy as np

from .deeponet import KINDS, DeepONetModel
from .mlp import ACTIVATIONS, Mlp

MAGIC = b"ARZDONET"
VERSION = 1


class ModelFormatError(ValueError):
    pass


def _write_net_header(buf, net: Mlp):
    buf.write(struct.pack("<I", len(net.widths)))
    buf.write(struct.pack(f"<{len(net.widths)}I", *net.widths))
    buf.write(struct.pack("<B", ACTIVATIONS.index(net.activation)))


def _read(buf, fmt):
    size = struct.calcsize(fmt)
    raw = buf.read(size)
    if len(raw) != size:
        raise ModelFormatError("truncated model file")
    return struct.unpack(fmt, raw)


def _read_net_header(buf):
    (n,) = _read(buf, "<I")
    if not 2 <= n <= 64:
        raise ModelFormatError(f"implausible layer count {n}")
    widths = list(_read(buf, f"<{n}I"))
    (act,) = _read(buf, "<B")
    if act >= len(ACTIVATIONS):
        raise ModelFormatError(f"unknown activation code {act}")
    return widths, ACTIVATIONS[act]


def model_bytes(model: DeepONetModel) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<IBII", VERSION, KINDS.index(model.kind), model.p, model.heads))
    buf.write(struct.pack("<3d", *model.trained_range, model.domain))
    buf.write(model.out_shift.astype("<f8").tobytes())
    buf.write(model.out_scale.astype("<f8").tobytes())
    _write_net_header(buf, model.branch)
    _write_net_header(buf, model.trunk)
    for arr in model.params:
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return buf.getvalue()


def model_hash(model: DeepONetModel) -> str:
    return hashlib.sha256(model_bytes(model)).hexdigest()


def save_model(model: DeepONetModel, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = model_bytes(model)
    path.write_bytes(data)
    manifest = {
        "format": "ARZDONET",
        "version": VERSION,
        "kind": model.kind,
        "p": model.p,
        "heads": model.heads,
        "trained_range": list(model.trained_range),
        "domain": model.domain,
        "branch_widths": model.branch.widths,
        "trunk_widths": model.trunk.widths,
        "activation": model.branch.activation,
        "sha256": hashlib.sha256(data).hexdigest(),
    }
    path.with_name(path.name + ".json").write_text(json.dumps(manifest, indent=1))
    return path


def load_model(path, kind: str | None = None) -> DeepONetModel:
    """Read a model file; ``kind`` asserts the operator type."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except FileNotFoundError as exc:
        raise ModelFormatError(f"model file {path} not found") from exc
    buf = io.BytesIO(data)
    if buf.read(len(MAGIC)) != MAGIC:
        raise ModelFormatError(f"{path}: bad magic bytes, not a model file")
    version, kind_code, p, heads = _read(buf, "<IBII")
    if version != VERSION:
        raise ModelFormatError(f"{path}: unsupported format version {version} (expected {VERSION})")
    if kind_code >= len(KINDS):
        raise ModelFormatError(f"{path}: unknown operator kind code {kind_code}")
    file_kind = KINDS[kind_code]
    if kind is not None and file_kind != kind:
        raise ModelFormatError(f"{path}: holds a {file_kind} model but a {kind} model is required")
    lo, hi, domain = _read(buf, "<3d")
    shift = np.array(_read(buf, f"<{heads}d"))
    scale = np.array(_read(buf, f"<{heads}d"))
    nets = []
    headers = [_read_net_header(buf), _read_net_header(buf)]
    for widths, act in headers:
        weights, biases = [], []
        for a, b in zip(widths[:-1], widths[1:]):
            weights.append(np.array(_read(buf, f"<{a * b}d")).reshape(a, b))
            biases.append(np.array(_read(buf, f"<{b}d")))
        nets.append(Mlp(widths, weights, biases, act))
    if buf.read(1):
        raise ModelFormatError(f"{path}: trailing bytes after parameters")
    try:
        return DeepONetModel(nets[0], nets[1], p, heads, file_kind, (lo, hi), domain, shift, scale)
    except ValueError as exc:
        raise ModelFormatError(f"{path}: inconsistent shapes: {exc}") from exc
