"""Decoder-only transformer over byte tokens.

Pre-norm blocks with learned positional embeddings, bias-free linear
maps, GELU MLPs, and an untied LM head. The forward pass can add
per-target weight deltas (a blended set of low-rank updates) to the MLP
projections, and reports the activations at a configurable capture
point: the post-norm input to a chosen layer's MLP, which is what the
memory-key embedding function pools over.

Generation is greedy and maintains an internal per-layer key/value
cache; the cached path is an implementation detail checked against the
full forward pass, which remains the reference.
"""

from __future__ import annotations

import copy
import math
import re
from dataclasses import dataclass, field

import numpy as np

from . import tokenizer
from .tensor import Tensor, embedding, gelu, layer_norm, no_grad, softmax
from .util import ConfigError, check_finite

MASK_VALUE = -1e9

# adapter-targetable module names, resolved per layer
TARGET_MODULES = ("mlp_up", "mlp_down")


@dataclass
class ModelConfig:
    n_layers: int = 4
    d_model: int = 128
    n_heads: int = 4
    d_ff: int = 512
    max_seq: int = 512
    vocab_size: int = tokenizer.VOCAB_SIZE
    capture_layer: int | None = None  # None = last layer

    def __post_init__(self):
        if min(self.n_layers, self.d_model, self.n_heads, self.d_ff, self.max_seq) < 1:
            raise ConfigError("model dimensions must be positive")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        cap = self.capture_index()
        if not 0 <= cap < self.n_layers:
            raise ConfigError(f"capture_layer {self.capture_layer} out of range")

    def capture_index(self) -> int:
        return self.n_layers - 1 if self.capture_layer is None else self.capture_layer

    def to_dict(self) -> dict:
        return {
            "n_layers": self.n_layers,
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "d_ff": self.d_ff,
            "max_seq": self.max_seq,
            "vocab_size": self.vocab_size,
            "capture_layer": self.capture_layer,
        }


def target_param_name(layer: int, module: str) -> str:
    if module == "mlp_up":
        return f"layers.{layer}.mlp.up"
    if module == "mlp_down":
        return f"layers.{layer}.mlp.down"
    raise ConfigError(f"unknown adapter target module {module!r}")


def target_shape(config: ModelConfig, module: str) -> tuple[int, int]:
    if module == "mlp_up":
        return (config.d_model, config.d_ff)
    return (config.d_ff, config.d_model)


@dataclass
class BaseModel:
    config: ModelConfig
    params: dict[str, Tensor]
    frozen: bool = False
    # embedding-space statistics (centering vector, whitening matrix)
    # computed once over the pretraining corpus; None until pretrained
    embed_stats: dict | None = field(default=None, repr=False, compare=False)
    _word_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def freeze(self) -> "BaseModel":
        for p in self.params.values():
            p.requires_grad = False
        self.frozen = True
        return self

    def clone_unfrozen(self) -> "BaseModel":
        """Deep parameter copy, trainable; the base itself stays frozen."""
        params = {
            k: Tensor(p.data.copy(), requires_grad=True) for k, p in self.params.items()
        }
        stats = None
        if self.embed_stats is not None:
            stats = {k: v.copy() for k, v in self.embed_stats.items()}
        return BaseModel(
            config=copy.deepcopy(self.config),
            params=params,
            frozen=False,
            embed_stats=stats,
        )

    def param_arrays(self) -> dict[str, np.ndarray]:
        return {k: p.data for k, p in self.params.items()}


@dataclass
class BlendedWeights:
    """Additive per-target weight deltas, keyed by (layer, module)."""

    deltas: dict[tuple[int, str], np.ndarray] = field(default_factory=dict)

    def is_empty(self) -> bool:
        return not self.deltas or all(not np.any(d) for d in self.deltas.values())


@dataclass
class ForwardResult:
    logits: Tensor  # [T, V]
    captured: Tensor  # [T, d_model]


@dataclass
class GenerationResult:
    text: str
    token_ids: np.ndarray  # continuation ids, EOS excluded
    truncated: bool  # token budget ran out before EOS


def init_model(config: ModelConfig, seed: int, dtype=np.float32) -> BaseModel:
    """Fresh trainable model; weights N(0, 0.02), norms identity."""
    from .util import rng_for

    rng = rng_for("model-init", seed)
    params: dict[str, Tensor] = {}

    def normal(name, shape):
        params[name] = Tensor(
            rng.normal(0.0, 0.02, size=shape).astype(dtype), requires_grad=True
        )

    def ones(name, shape):
        params[name] = Tensor(np.ones(shape, dtype=dtype), requires_grad=True)

    def zeros(name, shape):
        params[name] = Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)

    d, f = config.d_model, config.d_ff
    normal("tok_emb", (config.vocab_size, d))
    normal("pos_emb", (config.max_seq, d))
    for i in range(config.n_layers):
        ones(f"layers.{i}.ln1.g", (d,))
        zeros(f"layers.{i}.ln1.b", (d,))
        normal(f"layers.{i}.attn.wq", (d, d))
        normal(f"layers.{i}.attn.wk", (d, d))
        normal(f"layers.{i}.attn.wv", (d, d))
        normal(f"layers.{i}.attn.wo", (d, d))
        ones(f"layers.{i}.ln2.g", (d,))
        zeros(f"layers.{i}.ln2.b", (d,))
        normal(f"layers.{i}.mlp.up", (d, f))
        normal(f"layers.{i}.mlp.down", (f, d))
    ones("final_ln.g", (d,))
    zeros("final_ln.b", (d,))
    normal("lm_head", (d, config.vocab_size))
    return BaseModel(config=config, params=params)


_MASK_CACHE: dict[tuple[int, str], np.ndarray] = {}


def _causal_mask(t: int, dtype) -> np.ndarray:
    key = (t, np.dtype(dtype).str)
    m = _MASK_CACHE.get(key)
    if m is None:
        m = np.triu(np.full((t, t), MASK_VALUE, dtype=dtype), k=1)
        _MASK_CACHE[key] = m
    return m


def _effective_weight(model, layer, module, deltas, adapters):
    """MLP projection weight with any low-rank update applied on-tape."""
    w = model.params[target_param_name(layer, module)]
    if adapters and (layer, module) in adapters:
        a, b, scale = adapters[(layer, module)]
        w = w + (a @ b) * scale
    if deltas and (layer, module) in deltas:
        w = w + Tensor(np.asarray(deltas[(layer, module)], dtype=w.data.dtype))
    return w


def forward_tape(
    model: BaseModel,
    ids: np.ndarray,
    blend: BlendedWeights | None = None,
    adapters: dict | None = None,
    want_kv: bool = False,
):
    """Batched forward building a tape.

    ids: int array [B, T]. adapters maps (layer, module) to
    (A: Tensor, B: Tensor, scale: float) so gradients reach the factors;
    blend supplies constant deltas instead. Returns (logits [B,T,V],
    captured [B,T,d], kv) where kv is a per-layer list of (K, V) arrays
    [B, H, T, dh] when requested.
    """
    cfg = model.config
    ids = np.asarray(ids)
    if ids.ndim != 2:
        raise ValueError("forward_tape expects ids of shape [B, T]")
    b, t = ids.shape
    if t > cfg.max_seq:
        raise ValueError(f"sequence length {t} exceeds max_seq {cfg.max_seq}")
    if t == 0:
        raise ValueError("empty sequence")
    deltas = blend.deltas if blend is not None else None
    p = model.params
    h = cfg.n_heads
    dh = cfg.d_model // h
    scale = 1.0 / math.sqrt(dh)

    x = embedding(p["tok_emb"], ids) + embedding(p["pos_emb"], np.arange(t))
    mask = _causal_mask(t, x.data.dtype)
    captured = None
    kv = [] if want_kv else None
    cap = cfg.capture_index()
    for i in range(cfg.n_layers):
        h1 = layer_norm(x, p[f"layers.{i}.ln1.g"], p[f"layers.{i}.ln1.b"])
        q = (h1 @ p[f"layers.{i}.attn.wq"]).reshape(b, t, h, dh).transpose((0, 2, 1, 3))
        k = (h1 @ p[f"layers.{i}.attn.wk"]).reshape(b, t, h, dh).transpose((0, 2, 1, 3))
        v = (h1 @ p[f"layers.{i}.attn.wv"]).reshape(b, t, h, dh).transpose((0, 2, 1, 3))
        if want_kv:
            kv.append((k.data, v.data))
        scores = (q @ k.swapaxes(-1, -2)) * scale + Tensor(mask)
        att = softmax(scores, axis=-1)
        ctx = (att @ v).transpose((0, 2, 1, 3)).reshape(b, t, cfg.d_model)
        x = x + ctx @ p[f"layers.{i}.attn.wo"]
        h2 = layer_norm(x, p[f"layers.{i}.ln2.g"], p[f"layers.{i}.ln2.b"])
        if i == cap:
            captured = h2
        up = _effective_weight(model, i, "mlp_up", deltas, adapters)
        down = _effective_weight(model, i, "mlp_down", deltas, adapters)
        x = x + gelu(h2 @ up) @ down
    x = layer_norm(x, p["final_ln.g"], p["final_ln.b"])
    logits = x @ p["lm_head"]
    return logits, captured, kv


def forward(model: BaseModel, tokens, blend: BlendedWeights | None = None) -> ForwardResult:
    """Single-sequence inference forward; no tape."""
    ids = np.asarray(tokens)
    if ids.ndim != 1:
        raise ValueError("forward expects a 1-D token sequence")
    with no_grad():
        logits, captured, _ = forward_tape(model, ids[None, :], blend=blend)
    return ForwardResult(
        logits=Tensor(logits.data[0]), captured=Tensor(captured.data[0])
    )


# words that carry prompt scaffolding or pure syntax; they are shared
# across every text in the protocol and would drown the event-specific
# words a memory key has to be matched by
EMBED_STOPWORDS = frozenset(
    """
    the a an on at in of and or to for from with by as is are was were be
    been it its this that these those he she they his her their
    after before during because while when where which what who why how
    did does do had has have not just also
    please tell me story you memorized reconstruct entire related above
    question answer should no more than one sentence based following
    """.split()
)

_WORD_RE = re.compile(r"[a-z0-9]+")


def content_words(text: str | bytes) -> list[str]:
    """Lowercased alphanumeric words minus scaffolding stopwords.

    Falls back to all words, then to the whole normalized text, so any
    text with at least one content token embeds to something.
    """
    if isinstance(text, bytes):
        text = text.decode("utf-8", errors="replace")
    lowered = text.lower()
    words = _WORD_RE.findall(lowered)
    kept = [w for w in words if w not in EMBED_STOPWORDS]
    if kept:
        return kept
    if words:
        return words
    return [lowered]


def word_state(model: BaseModel, word: str) -> np.ndarray:
    """Capture-point activation at the final position of the word alone.

    The word runs through the model with no surrounding context, so the
    state depends only on the word's byte sequence and the weights: the
    same word always maps to the same vector. Cached per frozen model;
    an unfrozen model recomputes because its weights can change.
    """
    key = (word, model.config.capture_layer)
    if model.frozen:
        hit = model._word_cache.get(key)
        if hit is not None:
            return hit
    ids = tokenizer.encode(word)
    res = forward(model, ids)
    state = res.captured.data[-1]
    if model.frozen:
        model._word_cache[key] = state
    return state


def embed(model: BaseModel, text: str | bytes) -> np.ndarray:
    """Memory-key embedding: mean of per-word capture-point states.

    Each content word is encoded in isolation (identical words map to
    identical vectors regardless of position or context), then the word
    vectors are centered and whitened by statistics gathered over the
    pretraining corpus vocabulary and stored with the model. Whitening
    decorrelates the word space, so the dot product of two embeddings
    behaves like a shared-word count and a question scores highest
    against the story that mentions the same entities.
    """
    ids = tokenizer.encode(text)
    content = ids < 256
    if not content.any():
        raise ValueError("embed requires at least one content token")
    words = content_words(text)
    states = np.stack([word_state(model, w) for w in words])
    if model.embed_stats is not None:
        mu = model.embed_stats["mu"]
        whiten = model.embed_stats["whiten"]
        states = (states - mu) @ whiten.T
    return states.mean(axis=0).astype(np.float32)


def _decode_weights(model: BaseModel, blend: BlendedWeights | None) -> dict[str, np.ndarray]:
    eff = {k: p.data for k, p in model.params.items()}
    if blend is not None:
        for (layer, module), delta in blend.deltas.items():
            name = target_param_name(layer, module)
            eff[name] = eff[name] + np.asarray(delta, dtype=eff[name].dtype)
    return eff


def _np_layer_norm(x, g, b, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    return g * (xc / np.sqrt(var + eps)) + b


def _np_gelu(x):
    u = math.sqrt(2.0 / math.pi) * (x + 0.044715 * x**3)
    return 0.5 * x * (1.0 + np.tanh(u))


def _decode_step(cfg: ModelConfig, w, caches, token_id: int, pos: int) -> np.ndarray:
    """Advance the KV cache by one token; returns logits at this position."""
    h = cfg.n_heads
    dh = cfg.d_model // h
    x = w["tok_emb"][token_id] + w["pos_emb"][pos]
    x = x[None, :]  # [1, d]
    for i in range(cfg.n_layers):
        h1 = _np_layer_norm(x, w[f"layers.{i}.ln1.g"], w[f"layers.{i}.ln1.b"])
        q = (h1 @ w[f"layers.{i}.attn.wq"]).reshape(h, dh)
        k = (h1 @ w[f"layers.{i}.attn.wk"]).reshape(h, dh)
        v = (h1 @ w[f"layers.{i}.attn.wv"]).reshape(h, dh)
        kc, vc = caches[i]
        kc[:, pos, :] = k
        vc[:, pos, :] = v
        scores = np.einsum("hd,htd->ht", q, kc[:, : pos + 1, :]) / math.sqrt(dh)
        att = np.exp(scores - scores.max(axis=-1, keepdims=True))
        att /= att.sum(axis=-1, keepdims=True)
        ctx = np.einsum("ht,htd->hd", att, vc[:, : pos + 1, :]).reshape(1, cfg.d_model)
        x = x + ctx @ w[f"layers.{i}.attn.wo"]
        h2 = _np_layer_norm(x, w[f"layers.{i}.ln2.g"], w[f"layers.{i}.ln2.b"])
        x = x + _np_gelu(h2 @ w[f"layers.{i}.mlp.up"]) @ w[f"layers.{i}.mlp.down"]
    x = _np_layer_norm(x, w["final_ln.g"], w["final_ln.b"])
    return (x @ w["lm_head"])[0]


def decode_logits(model: BaseModel, tokens, blend: BlendedWeights | None = None) -> np.ndarray:
    """Last-position logits via the token-by-token cached path.

    Exists so tests can hold the cached decode route against the full
    forward pass on identical inputs.
    """
    cfg = model.config
    ids = np.asarray(tokens)
    w = _decode_weights(model, blend)
    dh = cfg.d_model // cfg.n_heads
    dtype = w["tok_emb"].dtype
    caches = [
        (
            np.zeros((cfg.n_heads, len(ids), dh), dtype=dtype),
            np.zeros((cfg.n_heads, len(ids), dh), dtype=dtype),
        )
        for _ in range(cfg.n_layers)
    ]
    logits = None
    for pos, tok in enumerate(ids):
        logits = _decode_step(cfg, w, caches, int(tok), pos)
    return logits


def generate(
    model: BaseModel,
    prompt: str | bytes,
    blend: BlendedWeights | None = None,
    max_new_tokens: int = 256,
    stop_at_eos: bool = True,
) -> GenerationResult:
    """Greedy decoding from a text prompt.

    Ties in argmax resolve to the lowest token id. Stops at EOS (not
    emitted) or when the budget runs out, in which case the result is
    flagged truncated.
    """
    cfg = model.config
    ids = tokenizer.encode(prompt)
    if max_new_tokens < 0:
        raise ConfigError("max_new_tokens must be non-negative")
    total = len(ids) + max_new_tokens
    if total > cfg.max_seq:
        raise ValueError(
            f"prompt ({len(ids)} tokens) + max_new_tokens ({max_new_tokens}) "
            f"exceeds max_seq {cfg.max_seq}"
        )
    if max_new_tokens == 0:
        return GenerationResult(text="", token_ids=np.array([], dtype=np.int32), truncated=True)

    w = _decode_weights(model, blend)
    dh = cfg.d_model // cfg.n_heads
    dtype = w["tok_emb"].dtype
    caches = [
        (
            np.zeros((cfg.n_heads, total, dh), dtype=dtype),
            np.zeros((cfg.n_heads, total, dh), dtype=dtype),
        )
        for _ in range(cfg.n_layers)
    ]
    logits = None
    for pos, tok in enumerate(ids):
        logits = _decode_step(cfg, w, caches, int(tok), pos)

    out: list[int] = []
    truncated = True
    pos = len(ids)
    for _ in range(max_new_tokens):
        check_finite(logits, "generation logits")
        nxt = int(np.argmax(logits))
        if stop_at_eos and nxt == tokenizer.EOS:
            truncated = False
            break
        out.append(nxt)
        if len(out) == max_new_tokens:
            break
        logits = _decode_step(cfg, w, caches, nxt, pos)
        pos += 1
    token_ids = np.array(out, dtype=np.int32)
    return GenerationResult(text=tokenizer.decode(token_ids), token_ids=token_ids, truncated=truncated)
