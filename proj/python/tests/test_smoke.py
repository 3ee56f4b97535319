import math

import numpy as np
import pytest

import gatevit

TINY = {
    "model": {"image_size": 8, "patch_size": 4, "embed_dim": 8, "num_heads": 2, "num_blocks": 2},
    "train": {"epochs": 1, "batch_size": 16},
    "data": {
        "synthetic": {
            "image_size": 8,
            "cell_size": 4,
            "placement": "cell",
            "easy_glyphs": 1,
            "hard_glyphs_min": 3,
            "hard_glyphs_max": 4,
            "train_samples": 64,
            "test_samples": 32,
        }
    },
    "seed": 2,
}


def test_config_defaults_and_strictness():
    full = gatevit.normalize_config(TINY)
    assert full["budget"]["gamma_patch"] == 0.5
    assert full["head_mode"] == "full"
    with pytest.raises(gatevit.ConfigError, match="model.depth"):
        gatevit.normalize_config({"model": {"depth": 2}})


def test_open_policy_costs_match_static_cost():
    static = gatevit.static_flops(TINY)
    n, h = 4, 2
    policy = [{"patches": [1.0] * n, "heads": [1.0] * h, "blocks": [1.0, 1.0]} for _ in range(2)]
    assert gatevit.policy_flops(TINY, policy, charge_decisions=False)["total"] == static["total"]
    policy[1]["heads"] = [1.0, 0.0]
    full = gatevit.policy_flops(TINY, policy, "full")["total"]
    partial = gatevit.policy_flops(TINY, policy, "partial")["total"]
    assert partial > full


def test_synthetic_splits_are_balanced_arrays():
    train, test = gatevit.synthetic_splits(TINY)
    assert train["images"].shape == (64, 8, 8, 1)
    assert train["images"].dtype == np.float32
    assert np.bincount(train["labels"]).tolist() == [16, 16, 16, 16]
    assert set(test["difficulty"].tolist()) <= {0, 1}


def test_gumbel_and_welch():
    keep, drop = gatevit.gumbel_softmax_binary(0.3, 0.5, 0.2, -0.1)
    assert math.isclose(keep + drop, 1.0, abs_tol=1e-12)
    r = gatevit.welch_t_test([1, 2, 3, 4], [1, 2, 3, 4])
    assert r["t"] == 0 and math.isclose(r["p"], 1.0)


def test_train_load_predict(tmp_path):
    cfg = dict(TINY, output_dir=str(tmp_path / "run"))
    row = gatevit.train(cfg)
    assert 0.0 <= float(row["top1"]) <= 1.0
    model = gatevit.Model.load(tmp_path / "run" / "checkpoint.bin")
    assert model.adaptive
    _, test = gatevit.synthetic_splits(TINY)
    logits, policies = model.predict(test["images"])
    assert logits.shape == (32, 4)
    assert len(policies) == 32 and len(policies[0]) == 2
    acc = float((logits.argmax(1) == test["labels"]).mean())
    assert math.isclose(acc, float(row["top1"]), abs_tol=1e-4)
    open_logits, _ = model.predict(test["images"], source="open")
    assert open_logits.shape == logits.shape
    with pytest.raises(gatevit.ConfigError):
        gatevit.train(cfg)  # existing directory


def test_corrupt_checkpoint_raises(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"GATEVIT1garbage")
    with pytest.raises(gatevit.ArtifactError):
        gatevit.Model.load(bad)
