"""Synthetic transduction corpora with confusable symbols.

Each label is rendered as 1-3 noisy copies of a per-symbol prototype
vector.  Every symbol has one designated confusable partner; with
probability ``substitution_confusion_rate`` a frame shows the partner's
prototype instead, which gives the decoder genuinely competing hypotheses.

On disk a corpus is a text index plus a float32 sidecar::

    # o1corpus 1 feature_dim=<D>
    <id> <split> <T> <U> <label_1> ... <label_U> <byte_offset>

The sidecar (``<index path>.f32``) holds each utterance's ``T x D``
features, little-endian float32, row-major, starting at ``byte_offset``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractViolation, FormatError

FORMAT_VERSION = 1
LABELED = "labeled"
UNLABELED = "unlabeled"


@dataclass(frozen=True)
class Utterance:
    id: str
    features: np.ndarray
    labels: tuple[int, ...]
    split: str = LABELED

    @property
    def num_frames(self) -> int:
        return len(self.features)

    def __eq__(self, other):
        return (
            isinstance(other, Utterance)
            and self.id == other.id
            and self.labels == other.labels
            and self.split == other.split
            and np.array_equal(self.features, other.features)
        )


@dataclass(frozen=True)
class CorpusSpec:
    seed: int = 0
    utterance_count: int = 2000
    unlabeled_count: int = 0
    vocab_size: int = 16
    label_len: tuple[int, int] = (4, 10)
    frames_per_symbol: tuple[int, int] = (1, 3)
    feature_dim: int = 16
    noise_sigma: float = 0.5
    substitution_confusion_rate: float = 0.15
    id_prefix: str = "utt"

    def validate(self) -> None:
        lo, hi = self.label_len
        flo, fhi = self.frames_per_symbol
        if not (0 <= lo <= hi):
            raise ContractViolation(f"empty label_len range {self.label_len}")
        if not (1 <= flo <= fhi):
            raise ContractViolation(f"frames_per_symbol range {self.frames_per_symbol} must be non-empty and >= 1")
        if self.vocab_size < 1 or self.feature_dim < 1:
            raise ContractViolation("vocab_size and feature_dim must be >= 1")
        if self.noise_sigma < 0:
            raise ContractViolation("noise_sigma must be >= 0")
        if not 0.0 <= self.substitution_confusion_rate <= 1.0:
            raise ContractViolation("substitution_confusion_rate must lie in [0, 1]")
        if self.utterance_count < 0 or self.unlabeled_count < 0:
            raise ContractViolation("utterance counts must be >= 0")


def prototypes(spec: CorpusSpec) -> tuple[np.ndarray, np.ndarray]:
    """Per-symbol prototype vectors (row 0 unused) and each symbol's confusable partner."""
    rng = np.random.default_rng([spec.seed, 0])
    protos = rng.normal(size=(spec.vocab_size + 1, spec.feature_dim))
    protos[0] = 0.0
    order = rng.permutation(np.arange(1, spec.vocab_size + 1))
    partner = np.arange(spec.vocab_size + 1)
    for a, b in zip(order[0::2], order[1::2]):
        partner[a], partner[b] = b, a
    return protos, partner


def generate_corpus(spec: CorpusSpec) -> list[Utterance]:
    """Labeled utterances first, then unlabeled ones; a pure function of ``spec``."""
    spec.validate()
    protos, partner = prototypes(spec)
    rng = np.random.default_rng([spec.seed, 1])
    corpus = []
    total = spec.utterance_count + spec.unlabeled_count
    width = max(5, len(str(total)))
    for n in range(total):
        split = LABELED if n < spec.utterance_count else UNLABELED
        length = int(rng.integers(spec.label_len[0], spec.label_len[1] + 1))
        labels = rng.integers(1, spec.vocab_size + 1, size=length)
        repeats = rng.integers(spec.frames_per_symbol[0], spec.frames_per_symbol[1] + 1, size=length)
        frame_symbols = np.repeat(labels, repeats)
        if len(frame_symbols) == 0:
            # an empty transcript still needs one (silent) frame
            frame_symbols = np.zeros(1, dtype=np.int64)
        confused = rng.random(len(frame_symbols)) < spec.substitution_confusion_rate
        shown = np.where(confused & (frame_symbols > 0), partner[frame_symbols], frame_symbols)
        features = protos[shown] + spec.noise_sigma * rng.normal(size=(len(shown), spec.feature_dim))
        corpus.append(Utterance(f"{spec.id_prefix}{n:0{width}d}", features, tuple(int(y) for y in labels), split))
    return corpus


def split_corpus(corpus: list[Utterance]) -> tuple[list[Utterance], list[Utterance]]:
    labeled = [u for u in corpus if u.split == LABELED]
    unlabeled = [u for u in corpus if u.split == UNLABELED]
    return labeled, unlabeled


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".f32")


def write_corpus(corpus: list[Utterance], path) -> None:
    path = Path(path)
    dims = {u.features.shape[1] for u in corpus}
    if len(dims) > 1:
        raise ContractViolation(f"utterances disagree on feature dim: {sorted(dims)}")
    dim = dims.pop() if dims else 0
    lines = [f"# o1corpus {FORMAT_VERSION} feature_dim={dim}"]
    blobs, offset = [], 0
    for u in corpus:
        if any(c.isspace() for c in u.id) or not u.id:
            raise ContractViolation(f"utterance id {u.id!r} must be non-empty and whitespace-free")
        blob = np.ascontiguousarray(u.features, dtype="<f4").tobytes()
        fields = [u.id, u.split, str(u.num_frames), str(len(u.labels)), *map(str, u.labels), str(offset)]
        lines.append(" ".join(fields))
        blobs.append(blob)
        offset += len(blob)
    path.write_text("\n".join(lines) + "\n")
    sidecar_path(path).write_bytes(b"".join(blobs))


def read_corpus(path) -> list[Utterance]:
    path = Path(path)
    side = sidecar_path(path)
    if not side.exists():
        raise FormatError(f"feature sidecar {side} is missing")
    text = path.read_text().splitlines()
    blob = side.read_bytes()
    if not text:
        raise FormatError("corpus index is empty", line=1)
    header = text[0].split()
    if len(header) != 4 or header[:2] != ["#", "o1corpus"] or not header[3].startswith("feature_dim="):
        raise FormatError("bad corpus header", line=1)
    if header[2] != str(FORMAT_VERSION):
        raise FormatError(f"unsupported corpus version {header[2]}", line=1)
    try:
        dim = int(header[3].split("=", 1)[1])
    except ValueError:
        raise FormatError("bad feature_dim in header", line=1) from None

    corpus = []
    for lineno, line in enumerate(text[1:], start=2):
        if not line.strip():
            continue
        fields = line.split()
        try:
            uid, split, T, U = fields[0], fields[1], int(fields[2]), int(fields[3])
            labels = tuple(int(x) for x in fields[4 : 4 + U])
            if len(fields) != 5 + U or len(labels) != U:
                raise ValueError("field count does not match U")
            offset = int(fields[4 + U])
        except (IndexError, ValueError) as exc:
            raise FormatError(f"malformed record: {exc}", line=lineno) from None
        if split not in (LABELED, UNLABELED):
            raise FormatError(f"unknown split tag {split!r}", line=lineno)
        if T < 1 or offset < 0:
            raise FormatError("frame count must be >= 1 and offset >= 0", line=lineno)
        size = T * dim * 4
        if offset + size > len(blob):
            raise FormatError(
                f"feature offset {offset}+{size} is outside the {len(blob)}-byte sidecar", line=lineno
            )
        feats = np.frombuffer(blob, dtype="<f4", count=T * dim, offset=offset).reshape(T, dim)
        corpus.append(Utterance(uid, feats.astype(np.float64), labels, split))
    return corpus
