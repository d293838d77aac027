"""Binary checkpoint files for model parameters, BN statistics and Adam state.

Layout (little-endian):

    "WLSG" | version u32 | entry count u32
    per entry: name length u16 | UTF-8 name | ndims u8 | dims u32 * ndims | float32 values
    flags u8 (bit 0: optimizer state follows)
    if bit 0: optimizer count u32, then per optimizer:
        prefix length u16 | prefix | step u32 | lr, beta1, beta2, eps f64 | m, v float32 per parameter
"""
from __future__ import annotations

import struct
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .nn.optim import AdamState

MAGIC = b"WLSG"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    arrays: OrderedDict[str, np.ndarray] = field(default_factory=OrderedDict)
    optimizers: OrderedDict[str, AdamState] = field(default_factory=OrderedDict)


def _name(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise CheckpointError(f"name too long: {s[:40]}...")
    return struct.pack("<H", len(raw)) + raw


def encode(ckpt: Checkpoint) -> bytes:
    out = [MAGIC, struct.pack("<II", VERSION, len(ckpt.arrays))]
    for name, arr in ckpt.arrays.items():
        a = np.asarray(arr)
        if a.ndim > 255:
            raise CheckpointError(f"{name}: too many dimensions")
        out.append(_name(name))
        out.append(struct.pack(f"<B{a.ndim}I", a.ndim, *a.shape))
        out.append(np.ascontiguousarray(a, dtype="<f4").tobytes())
    flags = 1 if ckpt.optimizers else 0
    out.append(struct.pack("<B", flags))
    if flags:
        out.append(struct.pack("<I", len(ckpt.optimizers)))
        for prefix, st in ckpt.optimizers.items():
            out.append(_name(prefix))
            out.append(struct.pack("<I4d", st.step, st.lr, st.beta1, st.beta2, st.eps))
            out.append(struct.pack("<I", len(st.m)))
            for moments in (st.m, st.v):
                for a in moments:
                    out.append(struct.pack("<B", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape))
                    out.append(np.ascontiguousarray(a, dtype="<f4").tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError("truncated checkpoint")
        chunk = self.raw[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        s = struct.Struct("<" + fmt)
        return s.unpack(self.take(s.size))

    def name(self) -> str:
        (n,) = self.unpack("H")
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError("invalid UTF-8 in name") from exc

    def array(self) -> np.ndarray:
        (ndim,) = self.unpack("B")
        dims = self.unpack(f"{ndim}I") if ndim else ()
        count = int(np.prod(dims, dtype=np.int64))
        return np.frombuffer(self.take(4 * count), dtype="<f4").reshape(dims).astype(np.float32)


def decode(raw: bytes) -> Checkpoint:
    r = _Reader(raw)
    if r.take(4) != MAGIC:
        raise CheckpointError("bad magic")
    version, count = r.unpack("II")
    if version != VERSION:
        raise CheckpointError(f"unsupported version {version}")
    ckpt = Checkpoint()
    for _ in range(count):
        name = r.name()
        ckpt.arrays[name] = r.array()
    (flags,) = r.unpack("B")
    if flags & 1:
        (n_opt,) = r.unpack("I")
        for _ in range(n_opt):
            prefix = r.name()
            step, lr, b1, b2, eps = r.unpack("I4d")
            (n_par,) = r.unpack("I")
            m = [r.array() for _ in range(n_par)]
            v = [r.array() for _ in range(n_par)]
            ckpt.optimizers[prefix] = AdamState(lr=lr, beta1=b1, beta2=b2, eps=eps, step=step, m=m, v=v)
    if r.pos != len(raw):
        raise CheckpointError(f"{len(raw) - r.pos} trailing bytes")
    return ckpt


def save_checkpoint(path, generator=None, discriminator=None, optimizers: dict[str, AdamState] | None = None) -> None:
    ckpt = Checkpoint()
    for net in (generator, discriminator):
        if net is not None:
            ckpt.arrays.update(net.state_arrays())
    for prefix, st in (optimizers or {}).items():
        ckpt.optimizers[prefix] = st
    with open(path, "wb") as fh:
        fh.write(encode(ckpt))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return decode(fh.read())
