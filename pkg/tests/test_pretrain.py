import numpy as np
import pytest

from mega import tokenizer
from mega.checkpoint import model_checksum
from mega.model import ModelConfig
from mega.optim import TrainHyper
from mega.pretrain import (
    _block_batch,
    _doc_ids,
    pack_blocks,
    perplexity,
    pretrain,
    unigram_perplexity,
)
from mega.util import ConfigError, rng_for


def tiny_config():
    return ModelConfig(n_layers=2, d_model=32, n_heads=2, d_ff=64, max_seq=64)


def toy_docs(n=60, seed=0):
    """Small corpus with real sequential structure."""
    names = ["mara", "odin", "pell", "sela", "tivo", "ursa"]
    foods = ["plums", "bread", "rice", "corn", "figs", "kale"]
    verbs = ["eats", "buys", "cooks", "shares"]
    rng = rng_for("toy-docs", seed)
    docs = []
    for _ in range(n):
        a = names[int(rng.integers(len(names)))]
        v = verbs[int(rng.integers(len(verbs)))]
        f = foods[int(rng.integers(len(foods)))]
        docs.append(f"{a} {v} {f} every day.")
    return docs


def test_doc_ids_layout():
    ids = _doc_ids("hi", cap=64)
    assert ids.tolist() == [tokenizer.BOS, 104, 105, tokenizer.EOS]


def test_doc_ids_cap():
    ids = _doc_ids("abcdef", cap=5)
    assert len(ids) == 5
    assert ids[0] == tokenizer.BOS and ids[-1] == tokenizer.EOS
    assert bytes(ids[1:-1].tolist()).decode() == "abc"


def test_pack_blocks_document_aligned():
    docs = ["aa", "bbbb", "c", "dddddd", "ee", "fff"]
    blocks = pack_blocks(docs, block_len=12)
    assert blocks.shape[1] == 12
    assert np.all(blocks[:, 0] == tokenizer.BOS)
    # reassemble: every block is whole docs then PAD tail
    seen = []
    for row in blocks:
        row = row[row != tokenizer.PAD]
        # docs are delimited by BOS ... EOS runs
        starts = np.flatnonzero(row == tokenizer.BOS)
        ends = np.flatnonzero(row == tokenizer.EOS)
        assert len(starts) == len(ends)
        for s, e in zip(starts, ends):
            seen.append(bytes(row[s + 1 : e].tolist()).decode())
    assert sorted(seen) == sorted(docs)


def test_pack_blocks_shuffle_deterministic():
    docs = [f"doc number {i}" for i in range(20)]
    b1 = pack_blocks(docs, 32, rng_for("pack", 0))
    b2 = pack_blocks(docs, 32, rng_for("pack", 0))
    b3 = pack_blocks(docs, 32, rng_for("pack", 1))
    assert np.array_equal(b1, b2)
    assert not np.array_equal(b1, b3)


def test_block_batch_masks_pad():
    blocks = pack_blocks(["ab", "c"], block_len=10)
    inputs, targets, mask = _block_batch(blocks)
    assert inputs.shape == (1, 9) and targets.shape == (1, 9)
    assert np.all((mask == 0) == (targets == tokenizer.PAD))


def test_pretrain_empty_corpus():
    with pytest.raises(ConfigError):
        pretrain(tiny_config(), [], TrainHyper(learning_rate=1e-3, epochs=1), seed=0)


def test_pretrain_deterministic():
    docs = toy_docs(20)
    hyper = TrainHyper(learning_rate=1e-3, epochs=2)
    m1 = pretrain(tiny_config(), docs, hyper, seed=11, log_every=0)
    m2 = pretrain(tiny_config(), docs, hyper, seed=11, log_every=0)
    m3 = pretrain(tiny_config(), docs, hyper, seed=12, log_every=0)
    assert model_checksum(m1) == model_checksum(m2)
    assert model_checksum(m1) != model_checksum(m3)
    assert m1.frozen
    assert m1.train_report.steps > 0
    assert len(m1.train_report.epoch_losses) == 2


def test_pretrain_beats_unigram_oracle():
    docs = toy_docs(80)
    train_docs, eval_docs = docs[:64], docs[64:]
    hyper = TrainHyper(learning_rate=3e-3, epochs=12)
    model = pretrain(tiny_config(), train_docs, hyper, seed=4, batch_size=4, log_every=0)
    ppl_model = perplexity(model, eval_docs)
    ppl_unigram = unigram_perplexity(train_docs, eval_docs, block_len=65)
    assert ppl_model < ppl_unigram
    assert model.train_report.epoch_losses[-1] < model.train_report.epoch_losses[0]


def test_perplexity_deterministic_and_batch_invariant():
    docs = toy_docs(10)
    model = pretrain(
        tiny_config(), docs, TrainHyper(learning_rate=1e-3, epochs=1), seed=2, log_every=0
    )
    p1 = perplexity(model, docs[:6], batch_size=2)
    p2 = perplexity(model, docs[:6], batch_size=3)
    assert p1 == pytest.approx(p2, rel=1e-6)
