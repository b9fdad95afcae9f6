# Copyright (c) 2026, The smld Authors
# SPDX-License-Identifier: Apache-2.0

import math

import numpy as np
import pytest

import smld

TINY_CONFIG = """
[data]
samples_per_cell = 4
frames = 40
judge_samples_per_cell = 4
[vae]
latent_dim = 8
hidden = 16
patch = 8
stage1_epochs = 2
stage2_epochs = 1
warmup_epochs = 1
[diffusion]
steps = 20
width = 16
blocks = 2
epochs = 2
style_epochs = 1
style_min_step = 5
classifier_epochs = 1
[sample]
steps = 5
[align]
epochs = 2
[judge]
epochs = 2
text_epochs = 2
[eval]
samples_per_pair = 1
diversity_pairs = 8
rprecision_pool = 8
"""


def fuse_reference(content, style, gamma, eta):
    mean = content.mean(axis=1, keepdims=True)
    var = content.var(axis=1, keepdims=True)
    return content + gamma * (style - mean) / np.sqrt(var + eta)


def test_fuse_matches_numpy():
    rng = np.random.default_rng(0)
    for gamma in (0.0, 0.6, 1.2):
        content = rng.normal(size=(4, 8))
        style = rng.normal(size=(4, 8))
        np.testing.assert_allclose(smld.fuse(content, style, gamma=gamma), fuse_reference(content, style, gamma, 1e-5),
                                   atol=1e-5)


def test_fuse_rejects_mismatched_shapes():
    with pytest.raises(smld.DimensionError):
        smld.fuse(np.zeros((4, 8)), np.zeros((4, 6)))
    with pytest.raises(ValueError):
        smld.fuse(np.zeros((4, 8)), np.zeros((4, 8)), gamma=-1)


def test_align_loss():
    rng = np.random.default_rng(1)
    assert smld.align_loss(rng.normal(size=(1, 16)), rng.normal(size=(1, 16))) == 0.0
    eye = np.eye(2)
    assert smld.align_loss(eye, eye, tau=1.0) == pytest.approx(math.log(1 + math.exp(-1)), rel=1e-5)


def test_metric_truths():
    rng = np.random.default_rng(2)
    a = rng.normal(size=(200, 4))
    assert abs(smld.fid(a, a)) < 1e-6
    assert smld.fid_gaussian([0.0], [1.0], [1.0], [1.0]) == pytest.approx(1.0)
    assert smld.diversity(np.tile([[0.3, -1.0, 2.0]], (20, 1)), pairs=5) == 0.0
    assert smld.mm_distance(a, a) == 0.0


def test_motion_round_trip(tmp_path):
    frames = smld.generate_motion("walk", "proud", seed=4, frames=48)
    assert frames.shape == (48, smld.feature_dim())
    path = tmp_path / "m.smot"
    smld.write_motion(path, frames, "walk", "proud")
    back, content, style = smld.read_motion(path)
    np.testing.assert_array_equal(back, frames)
    assert (content, style) == ("walk", "proud")
    assert 0.0 <= smld.foot_skate_ratio([frames]) <= 1.0
    with pytest.raises(smld.VocabularyError):
        smld.generate_motion("swim", "proud")


def test_config():
    config = smld.RunConfig()
    assert config.number("fusion.gamma") == pytest.approx(0.6)
    config.set("fusion.gamma", "1.2")
    assert config.get("fusion.gamma") == "1.2"
    assert "align.tau" in config
    with pytest.raises(smld.ConfigError):
        config.set("fusion.gama", "1")


def test_missing_dependency(tmp_path):
    with pytest.raises(smld.DependencyError):
        smld.train_vae(tmp_path)


def test_tiny_pipeline(tmp_path):
    config = smld.RunConfig()
    config.merge_text(TINY_CONFIG)
    smld.run_pipeline(tmp_path, config)
    out = smld.stylize(tmp_path, "walk", "old", tmp_path / "a.smot", seed=3, config=config)
    assert out["content"] == "walk"
    again = smld.stylize(tmp_path, "walk", "old", tmp_path / "b.smot", seed=3, config=config)
    assert (tmp_path / "a.smot").read_bytes() == (tmp_path / "b.smot").read_bytes()
    assert again["style"]["input"] == "old"

    mix = smld.interpolate(tmp_path, "hop", [(3, "old"), (1, "tiptoe")], tmp_path / "mix.smot", config=config)
    assert mix["weights"] == pytest.approx([0.75, 0.25])

    report = smld.param_report(tmp_path)
    fusion = next(m for m in report["modules"] if m["module"] == "cross_fusion")
    assert fusion["learnable"] == 0
    assert sum(m["total"] for m in report["modules"]) == report["total"]

    rows = smld.ablate_gamma(tmp_path, [0.0, 0.6], config=config)
    assert [r["gamma"] for r in rows] == [0.0, 0.6]
    header = (tmp_path / "reports" / "gamma_sweep.csv").read_text().splitlines()[0]
    assert header == "gamma,sra,fid,fid_vs_baseline,content_accuracy"
