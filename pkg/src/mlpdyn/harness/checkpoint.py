"""Binary checkpoints.

Layout (all little-endian)::

    b"MLPD"  u32 version
    u32 n_widths, u32 widths[n_widths]
    u8 activation, u8 normalization, f64 negative_slope, i64 init_seed, f64 init_gain
    u32 n_layers, then per layer: u32 rows, u32 cols, f64 data[rows * cols]
    u32 n_norm, then per normalised layer: f64 mean[h], f64 var[h]
    u32 n_affine, then per layer: f64 scale[h], f64 shift[h]
    u64 epoch
    PCG64 state: u128 state, u128 inc, u32 has_uint32, u32 uinteger
"""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import DataError
from ..mlp import ACTIVATIONS, NORMALIZATIONS, MlpParams, MlpSpec

MAGIC = b"MLPD"
VERSION = 1


@dataclass
class Checkpoint:
    spec: MlpSpec
    params: MlpParams
    epoch: int
    rng_state: dict


def _u128(value):
    return int(value).to_bytes(16, "little")


def encode_checkpoint(ckpt):
    spec, params = ckpt.spec, ckpt.params
    out = [MAGIC, struct.pack("<I", VERSION)]
    out.append(struct.pack("<I", len(spec.layer_widths)))
    out.append(struct.pack(f"<{len(spec.layer_widths)}I", *spec.layer_widths))
    out.append(struct.pack("<BBdqd", ACTIVATIONS.index(spec.activation),
                           NORMALIZATIONS.index(spec.normalization),
                           spec.negative_slope, spec.init_seed, spec.init_gain))
    out.append(struct.pack("<I", len(params.weights)))
    for w in params.weights:
        out.append(struct.pack("<II", *w.shape))
        out.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
    out.append(struct.pack("<I", len(params.running_mean)))
    for m, v in zip(params.running_mean, params.running_var):
        out.append(np.ascontiguousarray(m, dtype="<f8").tobytes())
        out.append(np.ascontiguousarray(v, dtype="<f8").tobytes())
    out.append(struct.pack("<I", len(params.scale)))
    for s, b in zip(params.scale, params.shift):
        out.append(np.ascontiguousarray(s, dtype="<f8").tobytes())
        out.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    out.append(struct.pack("<Q", ckpt.epoch))
    state = ckpt.rng_state
    if state.get("bit_generator") != "PCG64":
        raise ValueError("only PCG64 generator states can be stored")
    out.append(_u128(state["state"]["state"]) + _u128(state["state"]["inc"]))
    out.append(struct.pack("<II", state["has_uint32"], state["uinteger"]))
    return b"".join(out)


class _Reader:
    def __init__(self, raw, source):
        self.raw = raw
        self.pos = 0
        self.source = source

    def take(self, n):
        if self.pos + n > len(self.raw):
            raise DataError(f"{self.source}: truncated checkpoint at offset {self.pos}")
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, n):
        return np.frombuffer(self.take(8 * n), dtype="<f8").astype(np.float64)


def decode_checkpoint(raw, source="<bytes>"):
    r = _Reader(raw, source)
    if r.take(4) != MAGIC:
        raise DataError(f"{source}: bad magic at offset 0")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise DataError(f"{source}: unsupported checkpoint version {version} at offset 4")
    (n_widths,) = r.unpack("<I")
    widths = r.unpack(f"<{n_widths}I")
    act, norm, slope, init_seed, gain = r.unpack("<BBdqd")
    try:
        spec = MlpSpec(widths, ACTIVATIONS[act], slope, NORMALIZATIONS[norm], init_seed, gain)
    except (IndexError, ValueError) as exc:
        raise DataError(f"{source}: invalid network header before offset {r.pos}: {exc}") from None
    (n_layers,) = r.unpack("<I")
    weights = []
    for _ in range(n_layers):
        rows, cols = r.unpack("<II")
        weights.append(r.floats(rows * cols).reshape(rows, cols))
    hidden = widths[1:-1]
    (n_norm,) = r.unpack("<I")
    means, variances = [], []
    for i in range(n_norm):
        means.append(r.floats(hidden[i]))
        variances.append(r.floats(hidden[i]))
    (n_affine,) = r.unpack("<I")
    scale, shift = [], []
    for i in range(n_affine):
        scale.append(r.floats(hidden[i]))
        shift.append(r.floats(hidden[i]))
    (epoch,) = r.unpack("<Q")
    state = int.from_bytes(r.take(16), "little")
    inc = int.from_bytes(r.take(16), "little")
    has_uint32, uinteger = r.unpack("<II")
    if r.pos != len(raw):
        raise DataError(f"{source}: {len(raw) - r.pos} trailing bytes at offset {r.pos}")
    rng_state = {"bit_generator": "PCG64", "state": {"state": state, "inc": inc},
                 "has_uint32": has_uint32, "uinteger": uinteger}
    params = MlpParams(weights, scale, shift, means, variances)
    return Checkpoint(spec, params, int(epoch), rng_state)


def save_checkpoint(path, ckpt):
    Path(path).write_bytes(encode_checkpoint(ckpt))


def load_checkpoint(path):
    return decode_checkpoint(Path(path).read_bytes(), str(path))
