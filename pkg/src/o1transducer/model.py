"""A minimal recurrent transducer with hand-written backpropagation.

Encoder: one tanh recurrent layer over feature frames plus a projection.
Predictor: symbol embedding and one tanh recurrent layer over the label
history (blank doubles as the start symbol).  Joint: additive combination,
tanh, and an output projection onto blank + vocabulary.

All parameters live in one flat float64 vector; the named weight matrices
are views into it, so finite-difference checks can poke single coordinates.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import BLANK
from .errors import ContractViolation

INIT_SCALE = 0.08


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    vocab_size: int  # excluding blank
    hidden: int = 64
    embed: int = 32

    def layout(self) -> list[tuple[str, tuple[int, ...]]]:
        D, V1, H, E = self.input_dim, self.vocab_size + 1, self.hidden, self.embed
        return [
            ("enc_in", (H, D)),
            ("enc_rec", (H, H)),
            ("enc_b", (H,)),
            ("enc_proj", (H, H)),
            ("enc_proj_b", (H,)),
            ("embed", (V1, E)),
            ("pred_in", (H, E)),
            ("pred_rec", (H, H)),
            ("pred_b", (H,)),
            ("pred_proj", (H, H)),
            ("out", (V1, H)),
            ("out_b", (V1,)),
        ]

    @property
    def param_count(self) -> int:
        return sum(int(np.prod(shape)) for _, shape in self.layout())

    def to_text(self) -> str:
        return (
            f"input_dim={self.input_dim}\nvocab_size={self.vocab_size}\n"
            f"hidden={self.hidden}\nembed={self.embed}\n"
        )

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        fields = dict(line.split("=", 1) for line in text.splitlines() if line)
        return cls(**{k: int(v) for k, v in fields.items()})

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


class ModelParams:
    """Flat parameter vector with named reshaped views."""

    def __init__(self, config: ModelConfig, flat: np.ndarray | None = None):
        self.config = config
        if flat is None:
            flat = np.zeros(config.param_count)
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (config.param_count,):
            raise ContractViolation(
                f"flat parameter vector has shape {flat.shape}, expected ({config.param_count},)"
            )
        self.flat = flat.copy()
        self.version = 0
        self._views = {}
        offset = 0
        for name, shape in config.layout():
            size = int(np.prod(shape))
            self._views[name] = self.flat[offset : offset + size].reshape(shape)
            offset += size

    @classmethod
    def initialize(cls, config: ModelConfig, seed: int) -> "ModelParams":
        # PCG64 via default_rng: reproducible across platforms for a given seed
        rng = np.random.default_rng(seed)
        flat = rng.uniform(-INIT_SCALE, INIT_SCALE, size=config.param_count)
        return cls(config, flat)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._views[name]

    def names(self) -> list[str]:
        return list(self._views)

    def assign(self, flat: np.ndarray) -> None:
        """Overwrite all values in place and invalidate outstanding caches."""
        self.flat[:] = flat
        self.version += 1

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, self.flat)

    def unflatten(self, flat: np.ndarray) -> dict[str, np.ndarray]:
        out, offset = {}, 0
        for name, shape in self.config.layout():
            size = int(np.prod(shape))
            out[name] = flat[offset : offset + size].reshape(shape)
            offset += size
        return out


@dataclass
class EncoderCache:
    features: np.ndarray
    hidden: np.ndarray  # (T, H) recurrent states
    states: np.ndarray  # (T, H) projected, fed to the joint


@dataclass
class PredictorCache:
    inputs: np.ndarray  # (U+1,) symbols fed in, blank first
    hidden: np.ndarray  # (U+1, H)
    states: np.ndarray  # (U+1, H) projected


@dataclass
class ForwardCache:
    params: ModelParams
    version: int
    encoder: EncoderCache
    predictors: list[PredictorCache]
    joints: list[np.ndarray] = field(default_factory=list)  # tanh activations (T, U+1, H)


def _run_rnn(inputs: np.ndarray, rec: np.ndarray) -> np.ndarray:
    """tanh recurrence h_t = tanh(inputs_t + rec @ h_{t-1}) with h_{-1} = 0."""
    hidden = np.empty_like(inputs)
    h = np.zeros(inputs.shape[1])
    rec_t = rec.T
    for t in range(inputs.shape[0]):
        h = np.tanh(inputs[t] + h @ rec_t)
        hidden[t] = h
    return hidden


def _rnn_backward(d_hidden: np.ndarray, hidden: np.ndarray, rec: np.ndarray) -> np.ndarray:
    """Back-propagate through ``_run_rnn``; returns d(pre-activation) per step."""
    d_pre = np.empty_like(hidden)
    carry = np.zeros(hidden.shape[1])
    for t in range(hidden.shape[0] - 1, -1, -1):
        d = (d_hidden[t] + carry) * (1.0 - hidden[t] ** 2)
        d_pre[t] = d
        carry = d @ rec
    return d_pre


class ToyTransducer:
    def __init__(self, params: ModelParams):
        self.params = params
        self.config = params.config

    def encode(self, features: np.ndarray) -> EncoderCache:
        p = self.params
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[0] < 1:
            raise ContractViolation(f"features must be a non-empty T x D array, got {features.shape}")
        if features.shape[1] != self.config.input_dim:
            raise ContractViolation(
                f"feature dim {features.shape[1]} does not match model input_dim {self.config.input_dim}"
            )
        pre = features @ p["enc_in"].T + p["enc_b"]
        hidden = _run_rnn(pre, p["enc_rec"])
        states = hidden @ p["enc_proj"].T + p["enc_proj_b"]
        return EncoderCache(features, hidden, states)

    def predict(self, labels: Sequence[int]) -> PredictorCache:
        p = self.params
        inputs = np.asarray((BLANK, *labels), dtype=np.int64)
        if np.any(inputs[1:] < 1) or np.any(inputs > self.config.vocab_size):
            raise ContractViolation(f"labels out of range 1..{self.config.vocab_size}")
        pre = p["embed"][inputs] @ p["pred_in"].T + p["pred_b"]
        hidden = _run_rnn(pre, p["pred_rec"])
        return PredictorCache(inputs, hidden, hidden @ p["pred_proj"].T)

    def joint(self, enc_states: np.ndarray, pred_states: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        z = np.tanh(enc_states[:, None, :] + pred_states[None, :, :])
        logits = z @ self.params["out"].T + self.params["out_b"]
        return logits, z

    def forward_lattices(
        self, features: np.ndarray, label_seqs: Sequence[Sequence[int]]
    ) -> tuple[list[np.ndarray], ForwardCache]:
        """Joint logits for several label sequences sharing one encoder pass."""
        enc = self.encode(features)
        cache = ForwardCache(self.params, self.params.version, enc, [])
        lattices = []
        for labels in label_seqs:
            pred = self.predict(labels)
            logits, z = self.joint(enc.states, pred.states)
            cache.predictors.append(pred)
            cache.joints.append(z)
            lattices.append(logits)
        return lattices, cache

    def forward_lattice(self, features: np.ndarray, labels: Sequence[int]) -> tuple[np.ndarray, ForwardCache]:
        lattices, cache = self.forward_lattices(features, [labels])
        return lattices[0], cache

    def backward(self, cache: ForwardCache, lattice_grads) -> np.ndarray:
        """Flat gradient of ``sum(lattice_grad * logits)`` over all cached lattices."""
        p = self.params
        if cache.params is not p or cache.version != p.version:
            raise ContractViolation("forward cache is stale: parameters changed since the forward pass")
        if isinstance(lattice_grads, np.ndarray):
            lattice_grads = [lattice_grads]
        if len(lattice_grads) != len(cache.joints):
            raise ContractViolation(
                f"{len(lattice_grads)} lattice gradients for {len(cache.joints)} cached lattices"
            )
        flat = np.zeros_like(p.flat)
        g = p.unflatten(flat)
        enc = cache.encoder
        d_enc_states = np.zeros_like(enc.states)

        for d_logits, z, pred in zip(lattice_grads, cache.joints, cache.predictors):
            if d_logits.shape != z.shape[:2] + (self.config.vocab_size + 1,):
                raise ContractViolation(f"lattice gradient shape {d_logits.shape} does not match the forward pass")
            H = z.shape[-1]
            g["out"] += d_logits.reshape(-1, d_logits.shape[-1]).T @ z.reshape(-1, H)
            g["out_b"] += d_logits.sum(axis=(0, 1))
            d_pre_joint = (d_logits @ p["out"]) * (1.0 - z**2)
            d_enc_states += d_pre_joint.sum(axis=1)
            d_pred_states = d_pre_joint.sum(axis=0)

            g["pred_proj"] += d_pred_states.T @ pred.hidden
            d_pre = _rnn_backward(d_pred_states @ p["pred_proj"], pred.hidden, p["pred_rec"])
            emb = p["embed"][pred.inputs]
            g["pred_in"] += d_pre.T @ emb
            g["pred_rec"] += d_pre[1:].T @ pred.hidden[:-1]
            g["pred_b"] += d_pre.sum(axis=0)
            np.add.at(g["embed"], pred.inputs, d_pre @ p["pred_in"])

        g["enc_proj"] += d_enc_states.T @ enc.hidden
        g["enc_proj_b"] += d_enc_states.sum(axis=0)
        d_pre = _rnn_backward(d_enc_states @ p["enc_proj"], enc.hidden, p["enc_rec"])
        g["enc_in"] += d_pre.T @ enc.features
        g["enc_rec"] += d_pre[1:].T @ enc.hidden[:-1]
        g["enc_b"] += d_pre.sum(axis=0)
        return flat

    def scorer(self) -> "TransducerScorer":
        return TransducerScorer(self)


class TransducerScorer:
    """Step-wise scorer for beam search with a per-decode prefix cache.

    Predictor states are stored row-wise in growing arrays; the cache maps
    each label prefix to its row.
    """

    def __init__(self, model: ToyTransducer):
        p = model.params
        self.vocab_size = model.config.vocab_size
        self._embed_in = p["embed"] @ p["pred_in"].T + p["pred_b"]
        self._rec_t = p["pred_rec"].T
        self._proj_t = p["pred_proj"].T
        self._out_t = p["out"].T
        self._out_b = p["out_b"]
        H = model.config.hidden
        self._hidden = np.empty((64, H))
        self._states = np.empty((64, H))
        self._hidden[0] = np.tanh(self._embed_in[BLANK])
        self._states[0] = self._hidden[0] @ self._proj_t
        self._rows: dict[tuple[int, ...], int] = {(): 0}

    def _store(self, hidden: np.ndarray, states: np.ndarray) -> range:
        start, n = len(self._rows), len(hidden)
        if start + n > len(self._hidden):
            size = max(2 * len(self._hidden), start + n)
            self._hidden = np.resize(self._hidden, (size, self._hidden.shape[1]))
            self._states = np.resize(self._states, (size, self._states.shape[1]))
        self._hidden[start : start + n] = hidden
        self._states[start : start + n] = states
        return range(start, start + n)

    def _extend(self, missing: list[tuple[int, ...]]) -> None:
        rows = self._rows
        need = set()
        for q in missing:
            while q not in rows and q not in need:
                need.add(q)
                q = q[:-1]
        for length in sorted({len(q) for q in need}):
            todo = sorted(q for q in need if len(q) == length)
            parents = self._hidden[[rows[q[:-1]] for q in todo]]
            last = [q[-1] for q in todo]
            hidden = np.tanh(self._embed_in[last] + parents @ self._rec_t)
            for q, row in zip(todo, self._store(hidden, hidden @ self._proj_t)):
                rows[q] = row

    def log_probs(self, frame: np.ndarray, prefixes: Sequence[tuple[int, ...]]) -> np.ndarray:
        """Log-softmax over blank + vocabulary for each prefix at one frame."""
        rows = self._rows
        missing = [q for q in prefixes if q not in rows]
        if missing:
            self._extend(missing)
        states = self._states[[rows[q] for q in prefixes]]
        logits = np.tanh(frame + states) @ self._out_t + self._out_b
        logits -= logits.max(axis=-1, keepdims=True)
        return logits - np.log(np.exp(logits).sum(axis=-1, keepdims=True))
