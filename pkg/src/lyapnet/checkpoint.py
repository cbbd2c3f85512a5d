"""Binary checkpoint format.

Layout (all little-endian)::

    b"LYAP" | u32 version | u32 rank | u32 input extents[rank] | u32 n_layers
    layer descriptors, depth first:
        u8 kind | u8 n_ints | u32 ints[n_ints] | u8 n_floats | f64 floats[n_floats]
        (a residual block stores its branch length in ints[0] and its
        branch descriptors follow immediately)
    u64 n_values | f32 payload[n_values]   (W then b per parameterized layer, traversal order)
    32 bytes SHA-256 digest of the canonical experiment config
"""

import hashlib
import json
import struct

import numpy as np

from .errors import FormatError
from .nn import (AvgPool, Conv2d, Dense, Flatten, LeakyReLU, MaxPool, Model, ResidualBlock)

MAGIC = b"LYAP"
VERSION = 1
KIND_CODES = {"dense": 1, "conv": 2, "leaky_relu": 3, "maxpool": 4, "avgpool": 5, "flatten": 6, "residual": 7}
CODE_KINDS = {v: k for k, v in KIND_CODES.items()}


def config_digest(config):
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(canonical).digest()


def _describe(layer, out):
    ints, floats = [], []
    if isinstance(layer, Dense):
        ints = [layer.in_features, layer.out_features]
    elif isinstance(layer, Conv2d):
        ints = [layer.out_ch, layer.in_ch, layer.kh, layer.kw, layer.stride, layer.pad]
    elif isinstance(layer, LeakyReLU):
        floats = [layer.slope]
    elif isinstance(layer, MaxPool):  # AvgPool included
        ints = [layer.window]
    elif isinstance(layer, ResidualBlock):
        ints = [len(layer.branch)]
    out += struct.pack("<BB", KIND_CODES[layer.kind], len(ints))
    out += struct.pack(f"<{len(ints)}I", *ints)
    out += struct.pack("<B", len(floats))
    out += struct.pack(f"<{len(floats)}d", *floats)
    if isinstance(layer, ResidualBlock):
        for sub in layer.branch:
            _describe(sub, out)


def dumps(model, digest=b"\x00" * 32):
    out = bytearray(MAGIC)
    out += struct.pack("<I", VERSION)
    out += struct.pack("<I", len(model.input_shape))
    out += struct.pack(f"<{len(model.input_shape)}I", *model.input_shape)
    out += struct.pack("<I", len(model.layers))
    for layer in model.layers:
        _describe(layer, out)
    values = [layer.params[name].astype("<f4").ravel() for layer, name in model.parameters()]
    payload = np.concatenate(values) if values else np.zeros(0, dtype="<f4")
    out += struct.pack("<Q", payload.size)
    out += payload.tobytes()
    if len(digest) != 32:
        raise ValueError("config digest must be 32 bytes")
    out += digest
    return bytes(out)


class _Reader:
    def __init__(self, raw):
        self.raw, self.pos = raw, 0

    def take(self, fmt):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.raw):
            raise FormatError("checkpoint truncated", offset=len(self.raw))
        vals = struct.unpack_from(fmt, self.raw, self.pos)
        self.pos += size
        return vals


def _read_layer(r):
    start = r.pos
    code, n_ints = r.take("<BB")
    ints = r.take(f"<{n_ints}I")
    (n_floats,) = r.take("<B")
    floats = r.take(f"<{n_floats}d")
    kind = CODE_KINDS.get(code)
    if kind is None:
        raise FormatError(f"unknown layer kind code {code}", offset=start)
    try:
        if kind == "dense":
            return Dense(*ints)
        if kind == "conv":
            return Conv2d(*ints)
        if kind == "leaky_relu":
            return LeakyReLU(*floats)
        if kind == "maxpool":
            return MaxPool(*ints)
        if kind == "avgpool":
            return AvgPool(*ints)
        if kind == "flatten":
            return Flatten()
        return ResidualBlock([_read_layer(r) for _ in range(ints[0])])
    except (TypeError, IndexError) as exc:
        raise FormatError(f"bad descriptor for {kind}: {exc}", offset=start) from None


def loads(raw):
    """Parse checkpoint bytes into ``(model, digest)``."""
    r = _Reader(raw)
    if raw[:4] != MAGIC:
        raise FormatError("not a lyapnet checkpoint (bad magic)", offset=0)
    r.pos = 4
    (version,) = r.take("<I")
    if version != VERSION:
        raise FormatError(f"checkpoint version {version} is not supported (expected {VERSION})", offset=4)
    (rank,) = r.take("<I")
    input_shape = r.take(f"<{rank}I")
    (n_layers,) = r.take("<I")
    layers = [_read_layer(r) for _ in range(n_layers)]
    model = Model(layers, input_shape, seed=0, dtype=np.float32)
    (n_values,) = r.take("<Q")
    expected = sum(layer.params[name].size for layer, name in model.parameters())
    if n_values != expected:
        raise FormatError(f"payload has {n_values} values, architecture needs {expected}", offset=r.pos - 8)
    end = r.pos + 4 * n_values
    if end + 32 > len(raw):
        raise FormatError("checkpoint truncated", offset=len(raw))
    payload = np.frombuffer(raw, dtype="<f4", count=n_values, offset=r.pos)
    i = 0
    for layer, name in model.parameters():
        p = layer.params[name]
        p[...] = payload[i:i + p.size].reshape(p.shape)
        i += p.size
    digest = raw[end:end + 32]
    if end + 32 != len(raw):
        raise FormatError("trailing bytes after checkpoint digest", offset=end + 32)
    return model, digest


def save_checkpoint(path, model, config=None):
    digest = config_digest(config) if config is not None else b"\x00" * 32
    with open(path, "wb") as f:
        f.write(dumps(model, digest))
    return digest


def load_checkpoint(path):
    with open(path, "rb") as f:
        return loads(f.read())
