"""Base-model pretraining on packed document blocks.

Documents are tokenized as BOS + bytes + EOS and packed greedily into
fixed-length blocks that always start at a document boundary, so every
training block looks like an inference sequence (BOS at position 0).
The tail of each block is PAD, masked out of the loss. Each epoch
reshuffles document order and repacks.
"""

from __future__ import annotations

import logging
import math

import numpy as np

from . import tokenizer
from .model import BaseModel, ModelConfig, content_words, forward_tape, init_model, word_state
from .optim import AdamWState, TrainHyper, adamw_step
from .tensor import cross_entropy, no_grad
from .train import TrainReport
from .util import ConfigError, rng_for

log = logging.getLogger(__name__)


def _doc_ids(doc: str, cap: int) -> np.ndarray:
    raw = doc.encode("utf-8")[: cap - 2]
    return np.concatenate(
        [
            np.array([tokenizer.BOS], dtype=np.int32),
            np.frombuffer(raw, dtype=np.uint8).astype(np.int32),
            np.array([tokenizer.EOS], dtype=np.int32),
        ]
    )


def pack_blocks(docs: list[str], block_len: int, rng=None) -> np.ndarray:
    """Document-aligned packing into [n_blocks, block_len] id arrays.

    A document never spans two blocks; remaining space is PAD. With an
    rng, document order and block order are shuffled.
    """
    idx = list(range(len(docs)))
    if rng is not None:
        idx = [int(i) for i in rng.permutation(len(docs))]
    blocks: list[np.ndarray] = []
    cur: list[np.ndarray] = []
    cur_len = 0
    for i in idx:
        ids = _doc_ids(docs[i], block_len)
        if cur_len + len(ids) > block_len:
            blocks.append(np.concatenate(cur))
            cur, cur_len = [], 0
        cur.append(ids)
        cur_len += len(ids)
    if cur:
        blocks.append(np.concatenate(cur))
    out = np.full((len(blocks), block_len), tokenizer.PAD, dtype=np.int32)
    for j, b in enumerate(blocks):
        out[j, : len(b)] = b
    if rng is not None:
        out = out[rng.permutation(len(out))]
    return out


def _block_batch(blocks: np.ndarray):
    inputs = blocks[:, :-1]
    targets = blocks[:, 1:]
    mask = (targets != tokenizer.PAD).astype(np.float32)
    return inputs, targets, mask


def pretrain(
    config: ModelConfig,
    corpus,
    hyper: TrainHyper,
    seed: int,
    batch_size: int = 2,
    log_every: int = 50,
) -> BaseModel:
    """Train a fresh model on the corpus; returns it frozen.

    corpus is either raw text with `====` separators or a list of
    documents (already held-out-filtered by the caller). Deterministic
    given identical inputs and seed.
    """
    from .datagen import split_docs

    docs = split_docs(corpus) if isinstance(corpus, str) else list(corpus)
    if not docs:
        raise ConfigError("pretraining corpus is empty")
    model = init_model(config, seed=seed)
    trainable = model.params
    state = AdamWState()
    rng = rng_for("pretrain", seed)
    block_len = config.max_seq + 1  # inputs span every trainable position
    report = TrainReport()
    for epoch in range(hyper.epochs):
        blocks = pack_blocks(docs, block_len, rng)
        tok_loss, tok_count = 0.0, 0.0
        for start in range(0, len(blocks), batch_size):
            inputs, targets, mask = _block_batch(blocks[start : start + batch_size])
            logits, _, _ = forward_tape(model, inputs)
            loss = cross_entropy(
                logits.reshape(inputs.shape[0] * inputs.shape[1], -1),
                targets.reshape(-1),
                mask.reshape(-1),
            )
            for p in trainable.values():
                p.zero_grad()
            loss.backward()
            grads = {k: p.grad for k, p in trainable.items() if p.grad is not None}
            adamw_step(trainable, grads, state, hyper)
            val = loss.item()
            n_tok = float(mask.sum())
            tok_loss += val * n_tok
            tok_count += n_tok
            report.steps += 1
            if np.isnan(report.first_loss):
                report.first_loss = val
            report.last_loss = val
            if log_every and report.steps % log_every == 0:
                log.info("pretrain step %d epoch %d loss %.4f", report.steps, epoch + 1, val)
        report.epoch_losses.append(tok_loss / tok_count)
        log.info("pretrain epoch %d/%d mean loss %.4f", epoch + 1, hyper.epochs, report.epoch_losses[-1])
    model.freeze()
    model.train_report = report
    attach_embed_stats(model, docs)
    return model


def attach_embed_stats(model: BaseModel, docs: list[str], max_vocab: int = 4000, ridge: float = 1e-4) -> None:
    """Compute and store centering/whitening statistics for embeddings.

    Word vectors straight out of a small LM are strongly anisotropic:
    every word shares a few dominant directions, so dot products rank
    by length and letter statistics instead of identity. Whitening
    against the corpus vocabulary makes distinct words near-orthogonal,
    which turns embedding dot products into shared-word counts. Stats
    are computed once on the frozen weights and live with the model.
    """
    counts: dict[str, int] = {}
    for doc in docs:
        for w in content_words(doc):
            counts[w] = counts.get(w, 0) + 1
    vocab = sorted(counts, key=lambda w: (-counts[w], w))[:max_vocab]
    if len(vocab) < 2:
        return  # degenerate corpus; embeddings fall back to raw word states
    states = np.stack([word_state(model, w) for w in vocab]).astype(np.float64)
    mu = states.mean(axis=0)
    centered = states - mu
    cov = centered.T @ centered / (len(vocab) - 1)
    cov += ridge * np.eye(cov.shape[0])
    evals, evecs = np.linalg.eigh(cov)
    whiten = evecs @ np.diag(evals**-0.5) @ evecs.T
    # word_state caches raw capture states, which whitening never touches,
    # so the vocabulary states gathered here stay warm for later embeds
    model.embed_stats = {
        "mu": mu.astype(np.float32),
        "whiten": whiten.astype(np.float32),
    }


def perplexity(model: BaseModel, docs: list[str], blend=None, batch_size: int = 4) -> float:
    """exp(mean next-token NLL) over the packed documents."""
    blocks = pack_blocks(docs, model.config.max_seq + 1)
    total, count = 0.0, 0.0
    with no_grad():
        for start in range(0, len(blocks), batch_size):
            inputs, targets, mask = _block_batch(blocks[start : start + batch_size])
            logits, _, _ = forward_tape(model, inputs, blend=blend)
            loss = cross_entropy(
                logits.reshape(inputs.shape[0] * inputs.shape[1], -1),
                targets.reshape(-1),
                mask.reshape(-1),
            )
            n = float(mask.sum())
            total += loss.item() * n
            count += n
    return math.exp(total / count)


def unigram_perplexity(train_docs: list[str], eval_docs: list[str], block_len: int = 513) -> float:
    """Counting-oracle baseline: Laplace-smoothed unigram over token ids,
    fit on train_docs, scored on the same packed targets as the model."""
    counts = np.zeros(tokenizer.VOCAB_SIZE, dtype=np.float64)
    for doc in train_docs:
        ids = _doc_ids(doc, 10**9)
        np.add.at(counts, ids, 1.0)
    probs = (counts + 1.0) / (counts.sum() + tokenizer.VOCAB_SIZE)
    logp = np.log(probs)
    blocks = pack_blocks(eval_docs, block_len)
    _, targets, mask = _block_batch(blocks)
    sel = mask.reshape(-1) > 0
    return float(np.exp(-logp[targets.reshape(-1)[sel]].mean()))
