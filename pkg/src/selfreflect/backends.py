"""Deterministic toy language-model backends.

Every backend exposes per-position final hidden states plus a shared projection
head W, so next-token logits at position i are W @ h_i. Backends are immutable
after construction and safe to share across decodes; all state produced during
generation lives in PrefixActivations values.
"""

from __future__ import annotations

import abc
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InputError
from .utils import softmax


def _frozen(a: np.ndarray) -> np.ndarray:
    out = np.asarray(a, dtype=np.float64)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class VocabSpec:
    """Token inventory. token_names, when given, must cover every id."""

    size: int
    token_names: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.size < 2:
            raise InputError("vocabulary needs at least two tokens")
        if self.token_names is not None:
            object.__setattr__(self, "token_names", tuple(self.token_names))
            if len(self.token_names) != self.size:
                raise InputError("token_names length must equal vocab size")

    def name_of(self, token: int) -> str:
        if self.token_names is not None:
            return self.token_names[token]
        return str(token)


@dataclass(frozen=True)
class ProjectionHead:
    """Vocabulary projection W with shape (vocab, hidden_dim); entries finite."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] < 2 or m.shape[1] < 1:
            raise InputError(f"projection head must be (vocab, dim) 2-d, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise InputError("projection head entries must be finite")
        object.__setattr__(self, "matrix", _frozen(m))

    @property
    def vocab_size(self) -> int:
        return self.matrix.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.matrix.shape[1]


def logits_at(head: ProjectionHead, hidden, delta=None) -> np.ndarray:
    """Next-token logits W @ (h + delta). delta=None means no correction."""
    h = np.asarray(hidden, dtype=np.float64)
    if h.shape != (head.hidden_dim,):
        raise InputError(f"hidden state must have shape ({head.hidden_dim},), got {h.shape}")
    if delta is not None:
        d = np.asarray(delta, dtype=np.float64)
        if d.shape != h.shape:
            raise InputError(f"correction must have shape {h.shape}, got {d.shape}")
        h = h + d
    return head.matrix @ h


@dataclass
class PrefixActivations:
    """Cached hidden states for a token prefix.

    hidden[i] is the state after consuming tokens[:i+1]; it predicts tokens[i+1]
    (or the next token to be sampled, for i == len(tokens)-1). prompt_len marks
    where the prompt ends and generated tokens begin.
    """

    tokens: tuple[int, ...]
    hidden: list[np.ndarray]
    model_id: str
    prompt_len: int = field(default=-1)

    def __post_init__(self):
        self.tokens = tuple(int(t) for t in self.tokens)
        if len(self.hidden) != len(self.tokens):
            raise InputError("need exactly one hidden state per token")
        if self.prompt_len < 0:
            self.prompt_len = len(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def last_hidden(self) -> np.ndarray:
        return self.hidden[-1]


class ModelBackend(abc.ABC):
    """Frozen toy model: maps token prefixes to final hidden states."""

    vocab: VocabSpec
    head: ProjectionHead
    model_id: str

    def _check_tokens(self, tokens) -> tuple[int, ...]:
        toks = tuple(int(t) for t in tokens)
        if not toks:
            raise InputError("prefix must contain at least one token")
        for t in toks:
            if not 0 <= t < self.vocab.size:
                raise InputError(f"token id {t} out of range for vocab of {self.vocab.size}")
        return toks

    @abc.abstractmethod
    def _state(self, prefix: tuple[int, ...]) -> np.ndarray:
        """Hidden state after consuming exactly `prefix`. Pure and deterministic."""

    def forward_prefix(self, tokens) -> PrefixActivations:
        toks = self._check_tokens(tokens)
        hidden = [_frozen(self._state(toks[: i + 1])) for i in range(len(toks))]
        return PrefixActivations(toks, hidden, self.model_id)

    def append_token(self, acts: PrefixActivations, token: int) -> PrefixActivations:
        """Extend a cached prefix by one token; earlier states are reused untouched."""
        toks = self._check_tokens(acts.tokens + (int(token),))
        hidden = list(acts.hidden)
        hidden.append(_frozen(self._state(toks)))
        return PrefixActivations(toks, hidden, self.model_id, prompt_len=acts.prompt_len)


class ScriptedBackend(ModelBackend):
    """Lookup-table backend: hidden states come from explicit scripts.

    Resolution order for a prefix: exact match in by_prefix, then
    by_position[len(prefix)-1], then fallback. The default head is the identity,
    so scripted hidden vectors are read directly as logits (hidden_dim == vocab).
    """

    def __init__(self, vocab_size, by_prefix=None, by_position=None, fallback=None,
                 head=None, token_names=None):
        self.vocab = VocabSpec(int(vocab_size), token_names)
        self.by_prefix = {}
        for key, vec in (by_prefix or {}).items():
            self.by_prefix[tuple(int(t) for t in key)] = _frozen(vec)
        self.by_position = [_frozen(v) for v in (by_position or [])]
        self.fallback = _frozen(fallback) if fallback is not None else None

        dims = {v.shape for v in self.by_prefix.values()}
        dims |= {v.shape for v in self.by_position}
        if self.fallback is not None:
            dims.add(self.fallback.shape)
        if head is not None:
            self.head = ProjectionHead(head)
        else:
            self.head = ProjectionHead(np.eye(self.vocab.size))
        want = (self.head.hidden_dim,)
        for shape in dims:
            if shape != want:
                raise InputError(f"scripted hidden entries must have shape {want}, got {shape}")
        if self.head.vocab_size != self.vocab.size:
            raise InputError("head row count must equal vocab size")
        self.model_id = f"scripted-v{self.vocab.size}-d{self.head.hidden_dim}"

    def _state(self, prefix):
        hit = self.by_prefix.get(prefix)
        if hit is not None:
            return hit
        i = len(prefix) - 1
        if i < len(self.by_position):
            return self.by_position[i]
        if self.fallback is not None:
            return self.fallback
        raise InputError(f"no scripted hidden state for prefix of length {len(prefix)}")


class MarkovBackend(ModelBackend):
    """First-order Markov chain. Hidden state is the one-hot of the last token
    and the head is log(P) transposed, so logits reproduce the transition row."""

    def __init__(self, transition, smoothing: float = 0.0, token_names=None):
        p = np.asarray(transition, dtype=np.float64)
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise InputError("transition matrix must be square")
        if p.shape[0] < 2:
            raise InputError("vocabulary needs at least two tokens")
        if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-8):
            raise InputError("transition rows must be non-negative and sum to 1")
        if smoothing < 0 or smoothing * p.shape[0] >= 1:
            raise InputError("smoothing must satisfy 0 <= smoothing < 1/vocab")
        self.transition_raw = _frozen(p)
        self.smoothing = float(smoothing)
        if self.smoothing > 0:
            p = p * (1.0 - self.smoothing * p.shape[0]) + self.smoothing
        if np.any(p <= 0):
            raise InputError("zero transition probabilities need smoothing > 0")
        self.transition = _frozen(p)
        self.vocab = VocabSpec(p.shape[0], token_names)
        self.head = ProjectionHead(np.log(p).T)
        self.model_id = f"markov-v{self.vocab.size}"

    def _state(self, prefix):
        h = np.zeros(self.vocab.size)
        h[prefix[-1]] = 1.0
        return h


class AttentionBackend(ModelBackend):
    """Single fixed self-attention layer with seeded random weights (forward only).

    Architecture, per position j of a prefix (d = hidden_dim, f = 2d):
        x_j = emb[token_j] + pos[j]
        q   = x_last @ wq ;  k_j = x_j @ wk ;  v_j = x_j @ wv
        a   = sum_j softmax_j(q . k_j / sqrt(d)) * v_j
        u   = x_last + a @ wo
        h   = u + tanh(u @ w1) @ w2
    Weights are drawn from numpy's default_rng(seed) in the fixed order
    emb, pos, wq, wk, wv, wo, w1, w2, head, each scaled by 1/sqrt(d).
    """

    def __init__(self, vocab_size, hidden_dim, seed, max_len: int = 512, token_names=None):
        self.vocab = VocabSpec(int(vocab_size), token_names)
        d = int(hidden_dim)
        if d < 1:
            raise InputError("hidden_dim must be positive")
        if max_len < 1:
            raise InputError("max_len must be positive")
        self.seed = int(seed)
        self.max_len = int(max_len)
        rng = np.random.default_rng(self.seed)
        s = 1.0 / math.sqrt(d)
        self.emb = _frozen(rng.standard_normal((self.vocab.size, d)) * s)
        self.pos = _frozen(rng.standard_normal((self.max_len, d)) * s)
        self.wq = _frozen(rng.standard_normal((d, d)) * s)
        self.wk = _frozen(rng.standard_normal((d, d)) * s)
        self.wv = _frozen(rng.standard_normal((d, d)) * s)
        self.wo = _frozen(rng.standard_normal((d, d)) * s)
        self.w1 = _frozen(rng.standard_normal((d, 2 * d)) * s)
        self.w2 = _frozen(rng.standard_normal((2 * d, d)) * s)
        self.head = ProjectionHead(rng.standard_normal((self.vocab.size, d)) * s)
        self.model_id = f"attention-v{self.vocab.size}-d{d}-s{self.seed}"

    def _state(self, prefix):
        t = len(prefix)
        if t > self.max_len:
            raise InputError(f"prefix length {t} exceeds max_len {self.max_len}")
        d = self.head.hidden_dim
        x = self.emb[list(prefix)] + self.pos[:t]
        q = x[-1] @ self.wq
        keys = x @ self.wk
        vals = x @ self.wv
        scores = keys @ q / math.sqrt(d)
        attn = softmax(scores)
        a = attn @ vals
        u = x[-1] + a @ self.wo
        return u + np.tanh(u @ self.w1) @ self.w2


_BACKEND_KEYS = {
    "scripted": {"kind", "vocab_size", "token_names", "by_prefix", "by_position",
                 "fallback", "head"},
    "markov": {"kind", "vocab_size", "token_names", "transition", "smoothing"},
    "attention": {"kind", "vocab_size", "token_names", "hidden_dim", "seed", "max_len"},
}


def build_toy_backend(kind: str, config: dict) -> ModelBackend:
    """Construct a backend from a plain definition dict (the JSON file schema).

    Unknown keys are fatal so that typos never silently change a run.
    """
    if kind not in _BACKEND_KEYS:
        raise ConfigError(f"unknown backend kind: {kind!r}")
    allowed = _BACKEND_KEYS[kind]
    for key in config:
        if key not in allowed:
            raise ConfigError(f"unknown backend config key: {key!r}")
    cfg = dict(config)
    cfg.pop("kind", None)
    names = cfg.pop("token_names", None)
    if names is not None:
        names = tuple(names)
    try:
        if kind == "scripted":
            by_prefix = {}
            for key, vec in (cfg.get("by_prefix") or {}).items():
                toks = tuple(int(t) for t in str(key).split(",")) if isinstance(key, str) else tuple(key)
                by_prefix[toks] = vec
            return ScriptedBackend(
                cfg["vocab_size"], by_prefix=by_prefix,
                by_position=cfg.get("by_position"), fallback=cfg.get("fallback"),
                head=cfg.get("head"), token_names=names)
        if kind == "markov":
            return MarkovBackend(cfg["transition"], smoothing=cfg.get("smoothing", 0.0),
                                 token_names=names)
        return AttentionBackend(cfg["vocab_size"], cfg["hidden_dim"], cfg["seed"],
                                max_len=cfg.get("max_len", 512), token_names=names)
    except KeyError as exc:
        raise ConfigError(f"backend config missing key: {exc.args[0]!r}") from None


def backend_to_dict(backend: ModelBackend) -> dict:
    """Definition dict for a backend; null-valued optionals are omitted."""
    names = list(backend.vocab.token_names) if backend.vocab.token_names else None
    if isinstance(backend, ScriptedBackend):
        identity = np.array_equal(backend.head.matrix, np.eye(backend.vocab.size))
        data = {
            "kind": "scripted",
            "vocab_size": backend.vocab.size,
            "token_names": names,
            "by_prefix": {",".join(str(t) for t in k): v.tolist()
                          for k, v in sorted(backend.by_prefix.items())} or None,
            "by_position": [v.tolist() for v in backend.by_position] or None,
            "fallback": backend.fallback.tolist() if backend.fallback is not None else None,
            "head": None if identity else backend.head.matrix.tolist(),
        }
    elif isinstance(backend, MarkovBackend):
        data = {
            "kind": "markov",
            "vocab_size": backend.vocab.size,
            "token_names": names,
            "transition": backend.transition_raw.tolist(),
            "smoothing": backend.smoothing,
        }
    elif isinstance(backend, AttentionBackend):
        data = {
            "kind": "attention",
            "vocab_size": backend.vocab.size,
            "token_names": names,
            "hidden_dim": backend.head.hidden_dim,
            "seed": backend.seed,
            "max_len": backend.max_len,
        }
    else:
        raise InputError(f"cannot serialize backend type {type(backend).__name__}")
    return {k: v for k, v in data.items() if v is not None}


def backend_from_dict(data: dict) -> ModelBackend:
    if not isinstance(data, dict) or "kind" not in data:
        raise ConfigError("backend definition must be an object with a 'kind' key")
    return build_toy_backend(data["kind"], data)


def save_backend(backend: ModelBackend, path) -> None:
    with open(path, "w") as fh:
        json.dump(backend_to_dict(backend), fh, indent=1)
        fh.write("\n")


def load_backend(path) -> ModelBackend:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"backend file is not valid JSON: {exc}") from None
    return backend_from_dict(data)
