"""Low-rank adapters: creation, application, per-memory fine-tuning, merge.

An adapter holds a pair of factors (A, B) per targeted projection,
scaled by gamma = alpha / sqrt(rank) (rank-stabilized). B starts at
zero so a fresh adapter is exactly a no-op. Fine-tuning trains only the
factors; the host model's weights are treated as constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import read_tensor_dir, write_tensor_dir
from .model import BaseModel, ModelConfig, target_param_name, target_shape
from .optim import TrainHyper
from .prompts import FINETUNE_PROMPT, finetune_pair, qa_prompt, recall_prompt
from .tensor import Tensor
from .train import TrainReport, fit_pairs
from .util import ConfigError, derive_seed, rng_for


@dataclass
class FinetunePrompt:
    text: str = FINETUNE_PROMPT

    def __post_init__(self):
        if not self.text:
            raise ConfigError("fine-tuning prompt must be non-empty")


def default_targets(config: ModelConfig) -> tuple:
    """All MLP up/down projections, every layer."""
    return tuple(
        (layer, module)
        for layer in range(config.n_layers)
        for module in ("mlp_up", "mlp_down")
    )


@dataclass
class LoraAdapter:
    rank: int
    alpha: float
    targets: tuple
    mats: dict = field(default_factory=dict)  # (layer, module) -> (A, B) Tensors
    memory_id: str | None = None
    train_report: TrainReport | None = None

    @property
    def gamma(self) -> float:
        # recomputed on access, never stored
        return self.alpha / math.sqrt(self.rank)

    def tensors_for_forward(self, gain: float = 1.0) -> dict:
        return {t: (a, b, gain * self.gamma) for t, (a, b) in self.mats.items()}

    def delta(self, target, gain: float = 1.0) -> np.ndarray:
        a, b = self.mats[target]
        return (gain * self.gamma) * (a.data @ b.data)


def init_adapter(
    config: ModelConfig,
    rank: int,
    alpha: float | None = None,
    targets=None,
    seed: int = 0,
    init_std: float = 0.02,
) -> LoraAdapter:
    """Fresh adapter: A ~ N(0, init_std^2) seeded, B = 0."""
    if rank < 1:
        raise ConfigError("rank must be positive")
    if alpha is None:
        alpha = float(rank)
    if targets is None:
        targets = default_targets(config)
    targets = tuple(tuple(t) for t in targets)
    rng = rng_for("adapter-init", seed)
    mats = {}
    for layer, module in targets:
        if not 0 <= layer < config.n_layers:
            raise ConfigError(f"adapter target layer {layer} out of range")
        target_param_name(layer, module)  # rejects unknown module names
        d_in, d_out = target_shape(config, module)
        a = Tensor(rng.normal(0.0, init_std, size=(d_in, rank)).astype(np.float32), requires_grad=True)
        b = Tensor(np.zeros((rank, d_out), dtype=np.float32), requires_grad=True)
        mats[(layer, module)] = (a, b)
    return LoraAdapter(rank=rank, alpha=float(alpha), targets=targets, mats=mats)


def apply(w: np.ndarray, a: np.ndarray, b: np.ndarray, gamma: float, gain: float = 1.0) -> np.ndarray:
    """Effective weight W + gain * gamma * (A @ B)."""
    if a.shape[0] != w.shape[0] or b.shape[1] != w.shape[1] or a.shape[1] != b.shape[0]:
        raise ValueError(f"adapter shapes {a.shape}x{b.shape} do not match weight {w.shape}")
    return w + (gain * gamma) * (a @ b)


def memory_pairs(sample, prompt_text: str = FINETUNE_PROMPT, primary_repeats: int = 5) -> list:
    """(context, target) training pairs for one event memory.

    The original story is repeated primary_repeats times against its
    paraphrases: all variants share one prompt, so an even mixture has
    no single greedy continuation. Repetition makes the original the
    mode of the conditional and greedy decoding reproduces it verbatim.

    When the sample carries QA pairs, each question also contributes a
    reconstruction pair (recall prompt -> story) and an answer pair.
    A small model does not generalize a memory from one prompt format
    to another on its own, so every format evaluated later has to
    appear in training. Every method trains on the same pair set.
    """
    if primary_repeats < 1:
        raise ConfigError("primary_repeats must be at least 1")
    texts = sample.texts() if hasattr(sample, "texts") else [sample.text]
    if not texts:
        raise ConfigError("sample has no text variants")
    pairs = [finetune_pair(texts[0], prompt_text)] * primary_repeats
    pairs += [finetune_pair(t, prompt_text) for t in texts[1:]]
    for q in getattr(sample, "qa", []) or []:
        pairs.append((recall_prompt(q.question), texts[0]))
        pairs.append((qa_prompt(q.question), q.answer))
    return pairs


def finetune_adapter(
    base: BaseModel,
    sample,
    prompt: FinetunePrompt | str = FINETUNE_PROMPT,
    hyper: TrainHyper | None = None,
    rank: int = 8,
    seed: int = 0,
    alpha: float | None = None,
    targets=None,
    batch_size: int = 5,
    reg_lambda: float = 0.0,
    primary_repeats: int = 5,
    stop_loss: float | None = 0.1,
) -> LoraAdapter:
    """Train one adapter to reproduce the sample's story and paraphrases.

    Only the factors train; host weights get no gradients and are byte
    identical afterward. The adapter seed and shuffle stream derive
    from (seed, memory_id), so re-running an injection reproduces the
    adapter bit for bit. reg_lambda adds an L2 pull toward zero on the
    raw factor entries (used by the merged-adapter baseline).

    Training pairs come from memory_pairs; see there for the weighting
    of original vs paraphrases and for the per-question pairs. The
    epoch cap in hyper is generous; training stops once every pair sits
    below stop_loss and all pairs except the paraphrase variants decode
    argmax-exact (see fit_pairs). Samples differ a lot in how many
    epochs verbatim recall takes.
    """
    prompt_text = prompt.text if isinstance(prompt, FinetunePrompt) else prompt
    if not prompt_text:
        raise ConfigError("fine-tuning prompt must be non-empty")
    if hyper is None:
        hyper = TrainHyper(learning_rate=2e-3, epochs=60)
    pairs = memory_pairs(sample, prompt_text, primary_repeats=primary_repeats)
    # paraphrases share the primary pairs' context with different
    # targets, so they are exempt from the argmax-exactness stop rule
    n_para = len(sample.texts()) - 1 if hasattr(sample, "texts") else 0
    exact = None
    if stop_loss is not None:
        exact = list(range(primary_repeats)) + list(range(primary_repeats + n_para, len(pairs)))
    adapter = init_adapter(
        base.config,
        rank=rank,
        alpha=alpha,
        targets=targets,
        seed=derive_seed("adapter", seed, sample.memory_id),
    )
    adapter.memory_id = sample.memory_id
    trainable = {}
    for (layer, module), (a, b) in adapter.mats.items():
        trainable[f"adapter.{layer}.{module}.A"] = a
        trainable[f"adapter.{layer}.{module}.B"] = b

    penalty_fn = None
    if reg_lambda > 0.0:
        def penalty_fn():
            total = None
            for p in trainable.values():
                term = (p * p).sum()
                total = term if total is None else total + term
            return total * reg_lambda

    # host weights are constants for this run regardless of the model's
    # own trainability; restore flags afterward
    saved_flags = {k: p.requires_grad for k, p in base.params.items()}
    for p in base.params.values():
        p.requires_grad = False
    try:
        adapter.train_report = fit_pairs(
            base,
            pairs,
            hyper,
            trainable,
            batch_size=batch_size,
            rng_key=("inject", seed, sample.memory_id),
            adapters=adapter.tensors_for_forward(),
            penalty_fn=penalty_fn,
            per_pair_loss=True,
            stop_loss=stop_loss,
            exact_pairs=exact,
        )
    finally:
        for k, p in base.params.items():
            p.requires_grad = saved_flags[k]
    return adapter


def merge_into_base(model: BaseModel, adapter: LoraAdapter, gain: float = 1.0) -> BaseModel:
    """W <- W + gain * gamma * A @ B per target, in place."""
    if model.frozen:
        raise ValueError("refusing to merge into a frozen model; work on a copy")
    for target in adapter.targets:
        name = target_param_name(*target)
        w = model.params[name]
        delta = adapter.delta(target, gain)
        if delta.shape != w.data.shape:
            raise ValueError(f"adapter delta {delta.shape} does not match {name} {w.data.shape}")
        w.data += delta.astype(w.data.dtype)
    return model


def save_adapter(path, adapter: LoraAdapter) -> None:
    named = {}
    for (layer, module), (a, b) in adapter.mats.items():
        named[f"{layer}.{module}.A"] = a.data
        named[f"{layer}.{module}.B"] = b.data
    meta = {
        "kind": "adapter",
        "memory_id": adapter.memory_id,
        "rank": adapter.rank,
        "alpha": adapter.alpha,
        "targets": [list(t) for t in adapter.targets],
    }
    write_tensor_dir(path, named, meta)


def load_adapter(path) -> LoraAdapter:
    named, meta = read_tensor_dir(path)
    if meta.get("kind") != "adapter":
        raise ValueError(f"{path} is not an adapter checkpoint")
    targets = tuple(tuple(t) for t in meta["targets"])
    mats = {}
    for layer, module in targets:
        a = Tensor(named[f"{layer}.{module}.A"])
        b = Tensor(named[f"{layer}.{module}.B"])
        mats[(layer, module)] = (a, b)
    return LoraAdapter(
        rank=meta["rank"],
        alpha=meta["alpha"],
        targets=targets,
        mats=mats,
        memory_id=meta.get("memory_id"),
    )
