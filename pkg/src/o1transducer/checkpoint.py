"""Binary checkpoint format.

Layout (all integers little-endian)::

    magic      8 bytes   b"O1TCKPT\\0"
    version    u32
    n_sections u32
    sections   n_sections x (name_len u16, name utf-8, payload_len u64, payload)

Sections, always written in this order: ``model_config`` (utf-8
``key=value`` lines), ``fingerprint`` (utf-8), ``step`` (u64), ``params``,
``adam_m``, ``adam_v`` (float64 little-endian arrays; the moment arrays are
empty when no optimizer state is stored) and ``adam_step`` (u64).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError
from .model import ModelConfig, ModelParams
from .optim import AdamState

MAGIC = b"O1TCKPT\0"
VERSION = 1
SECTIONS = ("model_config", "fingerprint", "step", "params", "adam_m", "adam_v", "adam_step")


@dataclass
class Checkpoint:
    params: ModelParams
    step: int = 0
    adam: AdamState | None = None
    fingerprint: str = ""
    version: int = VERSION


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    adam = ckpt.adam
    empty = np.zeros(0)
    payloads = {
        "model_config": ckpt.params.config.to_text().encode(),
        "fingerprint": ckpt.fingerprint.encode(),
        "step": struct.pack("<Q", ckpt.step),
        "params": ckpt.params.flat.astype("<f8").tobytes(),
        "adam_m": (adam.m if adam else empty).astype("<f8").tobytes(),
        "adam_v": (adam.v if adam else empty).astype("<f8").tobytes(),
        "adam_step": struct.pack("<Q", adam.step if adam else 0),
    }
    out = [MAGIC, struct.pack("<II", VERSION, len(SECTIONS))]
    for name in SECTIONS:
        raw = name.encode()
        out.append(struct.pack("<H", len(raw)) + raw + struct.pack("<Q", len(payloads[name])))
        out.append(payloads[name])
    return b"".join(out)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    Path(path).write_bytes(encode_checkpoint(ckpt))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(
                f"truncated checkpoint: needed {n} bytes for {what}, {len(self.data) - self.pos} left",
                offset=self.pos,
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_checkpoint(data: bytes) -> Checkpoint:
    r = _Reader(data)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise FormatError("not a checkpoint file (bad magic)", offset=0)
    version, count = r.unpack("<II", "header")
    if version != VERSION:
        raise FormatError(f"incompatible checkpoint version {version}, this build reads {VERSION}", offset=8)
    sections = {}
    for _ in range(count):
        start = r.pos
        (name_len,) = r.unpack("<H", "section name length")
        name = r.take(name_len, "section name").decode("utf-8", errors="replace")
        (size,) = r.unpack("<Q", f"length of section {name!r}")
        if name in sections:
            raise FormatError(f"duplicate section {name!r}", offset=start)
        sections[name] = (r.pos, r.take(size, f"section {name!r}"))
    if r.pos != len(data):
        raise FormatError("trailing bytes after last section", offset=r.pos)
    missing = [s for s in SECTIONS if s not in sections]
    if missing:
        raise FormatError(f"missing sections: {', '.join(missing)}", offset=r.pos)

    def array(name):
        offset, raw = sections[name]
        if len(raw) % 8:
            raise FormatError(f"section {name!r} is not a float64 array", offset=offset)
        return np.frombuffer(raw, dtype="<f8").astype(np.float64)

    try:
        config = ModelConfig.from_text(sections["model_config"][1].decode())
    except (ValueError, TypeError) as exc:
        raise FormatError(f"bad model_config section: {exc}", offset=sections["model_config"][0]) from None
    flat = array("params")
    if flat.shape != (config.param_count,):
        raise FormatError(
            f"params section holds {flat.size} values, config expects {config.param_count}",
            offset=sections["params"][0],
        )
    def u64(name):
        offset, raw = sections[name]
        if len(raw) != 8:
            raise FormatError(f"section {name!r} must hold one u64", offset=offset)
        return struct.unpack("<Q", raw)[0]

    step, adam_step = u64("step"), u64("adam_step")
    m, v = array("adam_m"), array("adam_v")
    adam = AdamState(m, v, adam_step) if m.size else None
    if adam is not None and (m.shape != flat.shape or v.shape != flat.shape):
        raise FormatError("optimizer moments do not match the parameter count", offset=sections["adam_m"][0])
    return Checkpoint(ModelParams(config, flat), step, adam, sections["fingerprint"][1].decode(), version)


def load_checkpoint(path) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes())
