import json

import numpy as np
import pytest

from mega.checkpoint import (
    load_model,
    model_checksum,
    read_tensor_dir,
    save_model,
    tensors_checksum,
    write_tensor_dir,
)
from mega.model import ModelConfig, forward, init_model
from mega.tokenizer import encode
from mega.util import MissingArtifactError


def test_tensor_dir_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    named = {
        "a": rng.normal(size=(3, 4)).astype(np.float32),
        "b": rng.normal(size=(7,)).astype(np.float32),
        "empty_dim": np.zeros((0, 5), dtype=np.float32),
    }
    write_tensor_dir(tmp_path / "ck", named, {"kind": "test", "note": 1})
    loaded, meta = read_tensor_dir(tmp_path / "ck")
    assert meta == {"kind": "test", "note": 1}
    assert list(loaded) == list(named)
    for k in named:
        assert loaded[k].dtype == np.float32
        np.testing.assert_array_equal(loaded[k], named[k])
        assert loaded[k].tobytes() == named[k].tobytes()


def test_manifest_contents(tmp_path):
    named = {"w": np.arange(6, dtype=np.float32).reshape(2, 3)}
    write_tensor_dir(tmp_path / "ck", named, {})
    manifest = json.loads((tmp_path / "ck" / "manifest.json").read_text())
    assert manifest["format_version"] == 1
    entry = manifest["tensors"][0]
    assert entry == {"name": "w", "shape": [2, 3], "offset": 0, "numel": 6}
    raw = (tmp_path / "ck" / "weights.bin").read_bytes()
    assert len(raw) == 6 * 4
    np.testing.assert_array_equal(np.frombuffer(raw, dtype="<f4"), np.arange(6))


def test_missing_artifact_raises(tmp_path):
    with pytest.raises(MissingArtifactError):
        read_tensor_dir(tmp_path / "nope")


def test_bad_format_version(tmp_path):
    write_tensor_dir(tmp_path / "ck", {"w": np.zeros(1, dtype=np.float32)}, {})
    mpath = tmp_path / "ck" / "manifest.json"
    manifest = json.loads(mpath.read_text())
    manifest["format_version"] = 99
    mpath.write_text(json.dumps(manifest))
    with pytest.raises(ValueError):
        read_tensor_dir(tmp_path / "ck")


def test_model_roundtrip(tmp_path):
    cfg = ModelConfig(n_layers=2, d_model=16, n_heads=2, d_ff=32, max_seq=32)
    m = init_model(cfg, seed=5)
    save_model(tmp_path / "base", m)
    loaded = load_model(tmp_path / "base")
    assert loaded.frozen
    assert loaded.config == cfg
    assert model_checksum(loaded) == model_checksum(m)
    ids = encode("check")
    np.testing.assert_array_equal(
        forward(m, ids).logits.data, forward(loaded, ids).logits.data
    )


def test_wrong_kind_rejected(tmp_path):
    write_tensor_dir(tmp_path / "ck", {"w": np.zeros(2, dtype=np.float32)}, {"kind": "adapter"})
    with pytest.raises(ValueError):
        load_model(tmp_path / "ck")


def test_checksum_sensitivity():
    a = {"w": np.zeros(4, dtype=np.float32)}
    b = {"w": np.zeros(4, dtype=np.float32)}
    assert tensors_checksum(a) == tensors_checksum(b)
    b["w"] = b["w"].copy()
    b["w"][0] = 1e-12
    assert tensors_checksum(a) != tensors_checksum(b)
    c = {"x": np.zeros(4, dtype=np.float32)}
    assert tensors_checksum(a) != tensors_checksum(c)
