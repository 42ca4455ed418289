"""Shared minibatch training loop over (context, target) text pairs.

Used by adapter fine-tuning, the continual baselines, and batch
training. Pairs are tokenized as BOS + context + target + EOS, padded
per batch, and the loss is masked to target positions only: the context
is conditioning, not a prediction objective.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import tokenizer
from .model import BaseModel, forward_tape
from .optim import AdamWState, TrainHyper, adamw_step
from .tensor import Tensor, cross_entropy
from .util import rng_for

log = logging.getLogger(__name__)


@dataclass
class TrainReport:
    steps: int = 0
    first_loss: float = float("nan")
    last_loss: float = float("nan")
    epoch_losses: list = field(default_factory=list)
    # per-epoch max of the per-pair mean losses; only filled when
    # stop_loss tracking is on
    pair_loss_curve: list = field(default_factory=list)
    warning: str | None = None


def encode_pair(context: str, target: str, max_seq: int) -> tuple[np.ndarray, np.ndarray]:
    """Token ids and target-position loss mask for one training pair.

    Returns (ids, mask) where ids = BOS + context + target + EOS and
    mask marks the positions whose NEXT token is part of target + EOS.
    """
    ctx = context.encode("utf-8")
    tgt = target.encode("utf-8")
    ids = np.concatenate(
        [
            np.array([tokenizer.BOS], dtype=np.int32),
            np.frombuffer(ctx, dtype=np.uint8).astype(np.int32),
            np.frombuffer(tgt, dtype=np.uint8).astype(np.int32),
            np.array([tokenizer.EOS], dtype=np.int32),
        ]
    )
    if len(ids) > max_seq:
        raise ValueError(f"pair of {len(ids)} tokens exceeds max_seq {max_seq}")
    mask = np.zeros(len(ids) - 1, dtype=np.float32)
    mask[len(ctx):] = 1.0  # predicts target bytes and the closing EOS
    return ids, mask


def _batch_arrays(encoded: list[tuple[np.ndarray, np.ndarray]]):
    """Pad a list of (ids, mask) to a rectangular batch."""
    t = max(len(ids) for ids, _ in encoded)
    b = len(encoded)
    ids = np.full((b, t), tokenizer.PAD, dtype=np.int32)
    mask = np.zeros((b, t - 1), dtype=np.float32)
    for i, (seq, m) in enumerate(encoded):
        ids[i, : len(seq)] = seq
        mask[i, : len(m)] = m
    return ids[:, :-1], ids[:, 1:], mask


def _row_mean_loss(flat_logits: np.ndarray, targets: np.ndarray, mask: np.ndarray, row: int) -> float:
    """Mean masked token loss of one batch row, from detached logits."""
    t = targets.shape[1]
    logits = flat_logits[row * t : (row + 1) * t]
    m = mask[row]
    total = float(m.sum())
    if total == 0.0:
        return 0.0
    mx = logits.max(axis=-1, keepdims=True)
    lse = mx[:, 0] + np.log(np.exp(logits - mx).sum(axis=-1))
    nll = lse - logits[np.arange(t), targets[row]]
    return float((m * nll).sum() / total)


def fit_pairs(
    model: BaseModel,
    pairs: list[tuple[str, str]],
    hyper: TrainHyper,
    trainable: dict[str, Tensor],
    *,
    batch_size: int,
    rng_key: tuple,
    adapters: dict | None = None,
    penalty_fn=None,
    per_pair_loss: bool = False,
    stop_loss: float | None = None,
    exact_pairs: list | None = None,
    log_every: int = 0,
) -> TrainReport:
    """Train `trainable` tensors on the pairs for hyper.epochs passes.

    The epoch shuffle stream is keyed by rng_key only, so two calls with
    identical inputs and key are bit-identical. penalty_fn, when given,
    returns a scalar Tensor added to the data loss each step (built
    fresh per step so its gradient flows into `trainable`).

    per_pair_loss weights every pair equally instead of every token:
    without it a three-token answer is invisible next to a story three
    hundred tokens long and never trains. Implemented by normalizing
    each pair's loss mask to unit sum, so the masked token mean becomes
    the mean of per-pair means.

    stop_loss ends training early once every pair's mean token loss in
    an epoch falls below the threshold. Convergence speed varies a lot
    across samples; a fixed epoch count either wastes time on easy ones
    or underfits hard ones. The max over pairs is used, not the mean:
    one unbound question pair hides inside a good mean.

    exact_pairs (indices into pairs, needs stop_loss set) additionally
    requires those pairs to be argmax-exact at every masked position
    for two consecutive epochs before stopping. Mean loss is a weak
    proxy for greedy decoding: one wrong argmax derails the whole
    continuation. When a pair is teacher-forced exact, greedy decoding
    from its context reproduces its target verbatim, by induction over
    positions. Only meaningful for pairs whose context determines the
    target; pairs sharing one context with different targets can never
    all be exact. Both rules are pure functions of the data, so early
    stopping keeps training deterministic.
    """
    if not pairs:
        raise ValueError("fit_pairs needs at least one pair")
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    max_seq = model.config.max_seq
    encoded = [encode_pair(c, t, max_seq) for c, t in pairs]
    if per_pair_loss:
        encoded = [(ids, m / m.sum()) for ids, m in encoded]
    rng = rng_for("fit", *rng_key)
    state = AdamWState()
    report = TrainReport()
    if exact_pairs is not None and stop_loss is None:
        raise ValueError("exact_pairs requires stop_loss")
    pair_losses = np.full(len(encoded), np.inf)
    pair_errors = np.full(len(encoded), -1, dtype=np.int64)
    exact_streak = 0
    for epoch in range(hyper.epochs):
        order = rng.permutation(len(encoded))
        tok_loss = 0.0
        tok_count = 0.0
        for start in range(0, len(encoded), batch_size):
            chunk = [encoded[int(i)] for i in order[start : start + batch_size]]
            inputs, targets, mask = _batch_arrays(chunk)
            logits, _, _ = forward_tape(model, inputs, adapters=adapters)
            flat_logits = logits.reshape(inputs.shape[0] * inputs.shape[1], -1)
            loss = cross_entropy(flat_logits, targets.reshape(-1), mask.reshape(-1))
            data_loss = loss.item()
            if penalty_fn is not None:
                loss = loss + penalty_fn()
            for p in trainable.values():
                p.zero_grad()
            loss.backward()
            grads = {k: p.grad for k, p in trainable.items() if p.grad is not None}
            adamw_step(trainable, grads, state, hyper)
            n_tok = float(mask.sum())
            tok_loss += data_loss * n_tok
            tok_count += n_tok
            report.steps += 1
            if np.isnan(report.first_loss):
                report.first_loss = data_loss
            report.last_loss = data_loss
            if stop_loss is not None:
                preds = flat_logits.data.argmax(axis=-1).reshape(targets.shape)
                wrong = (preds != targets) & (mask > 0)
                for row, idx in enumerate(order[start : start + batch_size]):
                    pair_losses[int(idx)] = _row_mean_loss(
                        flat_logits.data, targets, mask, row
                    )
                    pair_errors[int(idx)] = int(wrong[row].sum())
        report.epoch_losses.append(tok_loss / tok_count)
        if log_every and (epoch + 1) % log_every == 0:
            log.info("epoch %d/%d loss %.4f", epoch + 1, hyper.epochs, report.epoch_losses[-1])
        if stop_loss is not None:
            report.pair_loss_curve.append(float(pair_losses.max()))
            loss_ok = report.pair_loss_curve[-1] < stop_loss
            if exact_pairs is not None:
                exact_streak = exact_streak + 1 if not pair_errors[exact_pairs].any() else 0
                if loss_ok and exact_streak >= 2:
                    break
            elif loss_ok:
                break
    if len(report.epoch_losses) > 1 and report.epoch_losses[-1] >= report.epoch_losses[0]:
        report.warning = (
            f"training loss did not decrease: first epoch {report.epoch_losses[0]:.4f}, "
            f"last epoch {report.epoch_losses[-1]:.4f}"
        )
        log.warning("%s", report.warning)
    return report
