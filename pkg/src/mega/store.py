"""Memory store: gated retrieval over per-memory adapters.

Each injected memory contributes one context key (the base model's
embedding of its original text) and one trained adapter. At query time
the question is embedded the same way, scored against every key, and
the resulting gate weights mix the adapters' weight deltas into a
single blended update applied for that query only. The base model is
never modified.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .lora import LoraAdapter, finetune_adapter, load_adapter, save_adapter
from .model import BaseModel, BlendedWeights, embed, generate
from .optim import TrainHyper
from .prompts import FINETUNE_PROMPT, irag_prompt, qa_prompt, recall_prompt
from . import tokenizer
from .util import ConfigError, MissingArtifactError

STORE_VERSION = 1

# decoding budgets per answer mode; a reconstruction needs room for a
# whole story, a one-sentence answer does not
RECALL_BUDGET = 320
QA_BUDGET = 80


@dataclass
class GatingConfig:
    beta: float = 1.0
    mode: str = "soft"  # "soft" mixes all adapters, "top1" picks one
    min_gate_logit: float | None = None  # below this, fall back to the bare base
    normalize: bool = False  # cosine instead of raw dot products

    def __post_init__(self):
        if self.mode not in ("soft", "top1"):
            raise ConfigError(f"gating mode must be 'soft' or 'top1', got {self.mode!r}")
        if self.beta <= 0:
            raise ConfigError("beta must be positive")

    def to_dict(self) -> dict:
        return {
            "beta": self.beta,
            "mode": self.mode,
            "min_gate_logit": self.min_gate_logit,
            "normalize": self.normalize,
        }


@dataclass
class StoredMemory:
    memory_id: str
    text: str
    key: np.ndarray
    adapter: LoraAdapter


@dataclass
class GatingWeights:
    weights: np.ndarray  # [n_memories], sums to 1 unless fallback
    logits: np.ndarray  # beta-scaled similarities the weights came from
    query_embedding: np.ndarray
    fallback: bool = False

    def top_index(self) -> int | None:
        if self.fallback or len(self.weights) == 0:
            return None
        return int(np.argmax(self.weights))


@dataclass
class AnswerResult:
    text: str
    gating: GatingWeights
    reconstruction: str | None = None
    truncated: bool = False


def softmax_weights(logits: np.ndarray) -> np.ndarray:
    z = logits.astype(np.float64)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


@dataclass
class MemoryStore:
    model: BaseModel
    gating: GatingConfig = field(default_factory=GatingConfig)
    seed: int = 0
    rank: int = 8
    alpha: float | None = None
    hyper: TrainHyper = field(default_factory=lambda: TrainHyper(learning_rate=2e-3, epochs=60))
    batch_size: int = 5
    primary_repeats: int = 5
    stop_loss: float | None = 0.1
    finetune_prompt: str = FINETUNE_PROMPT
    memories: list[StoredMemory] = field(default_factory=list)

    def __post_init__(self):
        if not self.model.frozen:
            raise ConfigError("memory store requires a frozen base model")

    def __len__(self) -> int:
        return len(self.memories)

    def ids(self) -> list[str]:
        return [m.memory_id for m in self.memories]

    def key_matrix(self) -> np.ndarray:
        if not self.memories:
            return np.zeros((0, self.model.config.d_model), dtype=np.float32)
        return np.stack([m.key for m in self.memories])

    def inject(self, sample) -> StoredMemory:
        """Fine-tune one adapter for the sample and add it to the store."""
        if sample.memory_id in self.ids():
            raise ConfigError(f"memory id {sample.memory_id!r} already stored")
        key = embed(self.model, sample.text)
        adapter = finetune_adapter(
            self.model,
            sample,
            prompt=self.finetune_prompt,
            hyper=self.hyper,
            rank=self.rank,
            seed=self.seed,
            alpha=self.alpha,
            batch_size=self.batch_size,
            primary_repeats=self.primary_repeats,
            stop_loss=self.stop_loss,
        )
        memory = StoredMemory(sample.memory_id, sample.text, key, adapter)
        self.memories.append(memory)
        return memory

    def gate(self, question: str) -> GatingWeights:
        """Score the bare question against every stored key.

        The question goes in without any protocol suffix: the keys were
        embedded from raw memory text, so the query should be raw too.
        """
        q = embed(self.model, question)
        keys = self.key_matrix()
        if len(self.memories) == 0:
            return GatingWeights(
                weights=np.zeros(0), logits=np.zeros(0), query_embedding=q, fallback=True
            )
        if self.gating.normalize:
            keys = keys / np.linalg.norm(keys, axis=1, keepdims=True)
            q = q / np.linalg.norm(q)
        logits = self.gating.beta * (keys @ q).astype(np.float64)
        if self.gating.min_gate_logit is not None and logits.max() < self.gating.min_gate_logit:
            return GatingWeights(
                weights=np.zeros(len(logits)),
                logits=logits,
                query_embedding=q,
                fallback=True,
            )
        if self.gating.mode == "top1":
            weights = np.zeros(len(logits))
            weights[int(np.argmax(logits))] = 1.0  # ties resolve to lowest index
        else:
            weights = softmax_weights(logits)
        return GatingWeights(weights=weights, logits=logits, query_embedding=q)

    def blend(self, gating: GatingWeights) -> BlendedWeights | None:
        """Mix adapter deltas by gate weight; None means bare base model."""
        if gating.fallback:
            return None
        deltas: dict = {}
        for w, memory in zip(gating.weights, self.memories):
            if w == 0.0:
                continue
            for target in memory.adapter.targets:
                d = memory.adapter.delta(target) * float(w)
                if target in deltas:
                    deltas[target] = deltas[target] + d
                else:
                    deltas[target] = d
        return BlendedWeights(deltas)

    def blend_for(self, question: str) -> BlendedWeights | None:
        return self.blend(self.gate(question))

    def answer(self, question: str, mode: str = "qa", max_new_tokens: int | None = None) -> AnswerResult:
        """Gate once on the question, then decode in the requested mode.

        recall reconstructs the related story; qa answers directly; irag
        first reconstructs, then answers from its own reconstruction,
        reusing the phase-1 gate for both decodes.
        """
        gating = self.gate(question)
        blend = self.blend(gating)
        if mode == "recall":
            out = _generate_fit(self.model, recall_prompt(question), blend, max_new_tokens or RECALL_BUDGET)
            return AnswerResult(out.text, gating, truncated=out.truncated)
        if mode == "qa":
            out = _generate_fit(self.model, qa_prompt(question), blend, max_new_tokens or QA_BUDGET)
            return AnswerResult(out.text, gating, truncated=out.truncated)
        if mode == "irag":
            recalled = _generate_fit(self.model, recall_prompt(question), blend, RECALL_BUDGET)
            prompt = _fit_irag_prompt(
                recalled.text, question, self.model.config.max_seq, max_new_tokens or QA_BUDGET
            )
            out = _generate_fit(self.model, prompt, blend, max_new_tokens or QA_BUDGET)
            return AnswerResult(
                out.text, gating, reconstruction=recalled.text, truncated=out.truncated
            )
        raise ConfigError(f"unknown answer mode {mode!r}")


def _generate_fit(model, prompt: str, blend, want: int):
    """Greedy decode with the budget clamped to the context window."""
    room = model.config.max_seq - len(tokenizer.encode(prompt))
    if room < 1:
        raise ValueError(f"prompt of {len(prompt)} bytes leaves no room to decode")
    return generate(model, prompt, blend=blend, max_new_tokens=min(want, room))


def _fit_irag_prompt(recalled: str, question: str, max_seq: int, budget: int) -> str:
    """Trim the reconstruction (from the end) until phase 2 fits."""
    overhead = len(tokenizer.encode(irag_prompt("", question))) + budget
    room = max_seq - overhead
    if room < 1:
        raise ValueError("question too long for a two-phase answer")
    trimmed = recalled.encode("utf-8")[:room].decode("utf-8", errors="ignore")
    return irag_prompt(trimmed, question)


# -- persistence -----------------------------------------------------------


def save_store(path, store: MemoryStore) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    doc = {
        "format_version": STORE_VERSION,
        "gating": store.gating.to_dict(),
        "seed": store.seed,
        "rank": store.rank,
        "alpha": store.alpha,
        "batch_size": store.batch_size,
        "primary_repeats": store.primary_repeats,
        "stop_loss": store.stop_loss,
        "finetune_prompt": store.finetune_prompt,
        "hyper": {
            "learning_rate": store.hyper.learning_rate,
            "epochs": store.hyper.epochs,
            "weight_decay": store.hyper.weight_decay,
        },
        "memories": [
            {
                "memory_id": m.memory_id,
                "text": m.text,
                "key": [float(x) for x in m.key],
            }
            for m in store.memories
        ],
    }
    (path / "store.json").write_text(json.dumps(doc, indent=2, sort_keys=True))
    for m in store.memories:
        save_adapter(path / "adapters" / m.memory_id, m.adapter)


def load_store(path, model: BaseModel) -> MemoryStore:
    path = Path(path)
    spath = path / "store.json"
    if not spath.exists():
        raise MissingArtifactError(f"no store.json under {path}")
    doc = json.loads(spath.read_text())
    if doc.get("format_version") != STORE_VERSION:
        raise ValueError(f"unsupported store format_version {doc.get('format_version')}")
    h = doc["hyper"]
    store = MemoryStore(
        model=model,
        gating=GatingConfig(**doc["gating"]),
        seed=doc["seed"],
        rank=doc["rank"],
        alpha=doc["alpha"],
        hyper=TrainHyper(
            learning_rate=h["learning_rate"],
            epochs=h["epochs"],
            weight_decay=h["weight_decay"],
        ),
        batch_size=doc["batch_size"],
        primary_repeats=doc.get("primary_repeats", 5),
        stop_loss=doc.get("stop_loss", 0.1),
        finetune_prompt=doc["finetune_prompt"],
    )
    for entry in doc["memories"]:
        key = np.asarray(entry["key"], dtype=np.float32)
        if key.shape != (model.config.d_model,):
            raise ValueError(
                f"stored key of dim {key.shape} does not match model d_model {model.config.d_model}"
            )
        adapter = load_adapter(path / "adapters" / entry["memory_id"])
        store.memories.append(StoredMemory(entry["memory_id"], entry["text"], key, adapter))
    return store
