"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"DDT1"                     magic
    u32    version (= 1)
    u32    n, then n bytes      arch descriptor, canonical UTF-8 text
    u32    C                    class count
    u32    K                    embedding dim
    u8     mode                 0 = ddt, 1 = ce
    u8     head present flag
    u64    P                    parameter count
    P x f64                     weights, in the encoder's documented order
    u64                         Adam step counter
    P x f64                     Adam first moments
    P x f64                     Adam second moments

The prototype is not stored: it is rebuilt from (C, K).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .encoder import Arch, EncoderParams
from .errors import ConfigError, FormatError, IoError

MAGIC = b"DDT1"
VERSION = 1
MODES = ("ddt", "ce")


@dataclass
class Checkpoint:
    params: EncoderParams
    mode: str = "ddt"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "ce" and not self.params.has_head:
            raise ConfigError("a ce-mode checkpoint needs a classification head")

    @property
    def n_classes(self):
        return self.params.n_classes

    @property
    def dim(self):
        return self.params.dim

    def copy(self) -> "Checkpoint":
        return Checkpoint(self.params.copy(), self.mode)

    def to_bytes(self) -> bytes:
        p = self.params
        arch = p.arch.canonical().encode("utf-8")
        parts = [
            MAGIC,
            struct.pack("<II", VERSION, len(arch)),
            arch,
            struct.pack("<IIBBQ", p.n_classes, p.dim, MODES.index(self.mode), int(p.has_head), p.weights.size),
            p.weights.astype("<f8").tobytes(),
            struct.pack("<Q", p.step),
            p.opt_m.astype("<f8").tobytes(),
            p.opt_v.astype("<f8").tobytes(),
        ]
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        reader = _Reader(data)
        if reader.take(4) != MAGIC:
            raise FormatError("not a DDT checkpoint (bad magic)")
        version, arch_len = reader.unpack("<II")
        if version != VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        try:
            arch = Arch.parse(reader.take(arch_len).decode("utf-8"))
        except (UnicodeDecodeError, ConfigError) as exc:
            raise FormatError(f"bad arch descriptor: {exc}") from None
        n_classes, dim, mode, head, count = reader.unpack("<IIBBQ")
        if mode >= len(MODES) or head > 1:
            raise FormatError("bad mode or head flag")
        weights = reader.floats(count)
        (step,) = reader.unpack("<Q")
        opt_m = reader.floats(count)
        opt_v = reader.floats(count)
        if not reader.done():
            raise FormatError("trailing bytes after checkpoint")
        try:
            params = EncoderParams(arch, dim, n_classes, bool(head), weights, opt_m, opt_v, step)
            return cls(params, MODES[mode])
        except (ConfigError, ValueError) as exc:
            raise FormatError(f"inconsistent checkpoint: {exc}") from None


class _Reader:
    def __init__(self, data):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise FormatError("truncated checkpoint")
        out = bytes(self.data[self.pos:self.pos + n])
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, n):
        return np.frombuffer(self.take(8 * n), dtype="<f8").astype(np.float64)

    def done(self):
        return self.pos == len(self.data)


def save_checkpoint(ckpt: Checkpoint, path):
    try:
        with open(path, "wb") as fh:
            fh.write(ckpt.to_bytes())
    except OSError as exc:
        raise IoError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read checkpoint {path}: {exc}") from exc
    return Checkpoint.from_bytes(data)
