"""End-to-end smoke tests for the python bindings.

These deliberately re-check a few values that the C++ suites pin down
exactly, so a packaging or conversion bug in the bindings cannot hide
behind a green native build.
"""

import math

import pytest

import labelcl

TINY_CONFIG = """
d_model = 16
d_proj = 8
d_hidden = 16
heads = 2
enc_layers = 1
dec_layers = 1
epochs = 1
batch_size = 8
data_classes = 4
data_grid_h = 4
data_grid_w = 4
data_grid_c = 4
data_kappa = 1.5
data_noise = 0.1
data_train_count = 32
data_test_count = 8
data_seed = 5
seed = 11
"""


def test_version():
    assert isinstance(labelcl.__version__, str) and labelcl.__version__


def test_config_roundtrip():
    text = labelcl.default_config_text()
    assert labelcl.normalize_config_text(text) == text
    with pytest.raises(Exception):
        labelcl.normalize_config_text("definitely_unknown_key = 1")


def test_softmax_rows():
    out = labelcl.softmax_rows([[0.0, 0.0, 0.0], [1.0, 2.0, 3.0]])
    assert out[0] == pytest.approx([1 / 3] * 3, abs=1e-12)
    assert sum(out[1]) == pytest.approx(1.0, abs=1e-12)
    assert out[1][0] < out[1][1] < out[1][2]


def test_l2_normalize_rows():
    out = labelcl.l2_normalize_rows([[3.0, 4.0]])
    assert out[0] == pytest.approx([0.6, 0.8], abs=1e-12)


def test_positional_encoding():
    pe = labelcl.positional_encoding(2, 3, 8)
    assert len(pe) == 6 and len(pe[0]) == 8
    # Cell (0, 0): every sine coordinate is 0 and every cosine coordinate is 1.
    assert pe[0] == pytest.approx([0, 1, 0, 1, 0, 1, 0, 1], abs=1e-12)


def test_average_precision():
    ap = labelcl.average_precision([0.9, 0.8, 0.3], [1, 0, 1])
    assert ap == pytest.approx(5 / 6, abs=1e-12)
    assert labelcl.average_precision([0.9, 0.8], [0, 0]) is None


def test_evaluate_scores_perfect():
    # Two samples, two classes, scores exactly matching the targets.
    rep = labelcl.evaluate_scores([0.9, 0.1, 0.1, 0.9], [1, 0, 0, 1], 2, 2, mode="all")
    assert rep["map"] == pytest.approx(1.0)
    assert rep["cf1"] == pytest.approx(1.0)
    assert rep["of1"] == pytest.approx(1.0)


def test_generate_dataset_deterministic():
    a = labelcl.generate_dataset(num_classes=4, grid_h=4, grid_w=4, grid_c=4,
                                 kappa=1.5, noise=0.1, train_count=16, test_count=4, seed=5)
    b = labelcl.generate_dataset(num_classes=4, grid_h=4, grid_w=4, grid_c=4,
                                 kappa=1.5, noise=0.1, train_count=16, test_count=4, seed=5)
    assert a.train_size == 16 and a.test_size == 4 and a.num_classes == 4
    for i in range(a.train_size):
        assert a.labels("train", i) == b.labels("train", i)
    shape, values = a.grid("train", 0)
    assert shape == (4, 4, 4) and len(values) == 64
    assert all(math.isfinite(v) for v in values)


def test_dataset_save_load(tmp_path):
    ds = labelcl.generate_dataset(num_classes=4, grid_h=4, grid_w=4, grid_c=4,
                                  kappa=1.5, noise=0.1, train_count=8, test_count=2, seed=5)
    path = str(tmp_path / "tiny.ds")
    ds.save(path)
    back = labelcl.load_dataset(path)
    assert back.train_size == ds.train_size
    assert back.labels("test", 0) == ds.labels("test", 0)
    assert back.grid("train", 3) == ds.grid("train", 3)


def test_train_and_resume(tmp_path):
    out = labelcl.train(TINY_CONFIG)
    assert out["epochs_done"] == 1
    assert len(out["history"]) == out["iterations"] == 4  # 32 samples / batch 8
    for epoch, it, l_bce, l_s2s, l_p2s, l_total, lr in out["history"]:
        assert epoch == 1 and 1 <= it <= 4
        for v in (l_bce, l_s2s, l_p2s, l_total, lr):
            assert math.isfinite(v)
        assert l_total >= l_bce >= 0.0
    assert 0.0 <= out["metrics_all"]["map"] <= 1.0
    assert out["metrics_top3"]["mode"] == "top3"

    # Same config, same seed: bit-identical history.
    again = labelcl.train(TINY_CONFIG)
    assert again["history"] == out["history"]

    # Two-epoch run vs. stop-after-one + resume: identical continuation.
    two = TINY_CONFIG.replace("epochs = 1", "epochs = 2")
    full = labelcl.train(two)
    ckpt = str(tmp_path / "mid.ckpt")
    first = labelcl.train(two, stop_after=1, checkpoint_out=ckpt)
    rest = labelcl.train(two, resume=ckpt)
    assert first["history"] + rest["history"] == full["history"]
    assert rest["metrics_all"] == full["metrics_all"]


def test_train_iteration_callback():
    seen = []
    labelcl.train(TINY_CONFIG, on_iteration=seen.append)
    assert len(seen) == 4 and seen[0][1] == 1
