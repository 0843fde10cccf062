import logging

import numpy as np
import pytest

import audio_core
import perturbation
from audio_core import AudioClip, Segment, Segmentation
from perturbation import PerturbationPlan


def plan(strategy=perturbation.LIME_WS, **kw):
    return PerturbationPlan(strategy, **kw).check()


def expert(d, size=100):
    return Segmentation(
        [Segment(i, i * size, (i + 1) * size, f"p{i}") for i in range(d)], audio_core.EXPERT, 16000
    )


def test_sample_lime_reproducible():
    p = plan(perturbation.LIME, n_global=3, seed=11)
    first = perturbation.sample_lime(p, 4)
    assert first.shape == (3, 4)
    assert np.array_equal(first, perturbation.sample_lime(p, 4))
    assert not first.all(axis=1).any()


def test_sample_lime_single_segment():
    masks = perturbation.sample_lime(plan(perturbation.LIME, n_global=20), 1)
    assert (masks == 0).all()


def test_sample_lime_warns_when_underdetermined(caplog):
    with caplog.at_level(logging.WARNING):
        perturbation.sample_lime(plan(perturbation.LIME, n_global=2), 5)
    assert "below the segment count" in caplog.text


@pytest.mark.parametrize("mask_prob", [0.0, 1.0])
def test_mask_prob_bounds(mask_prob):
    with pytest.raises(ValueError):
        plan(perturbation.LIME, mask_prob=mask_prob)


def test_no_segments():
    with pytest.raises(ValueError):
        perturbation.sample_lime(plan(perturbation.LIME), 0)
    with pytest.raises(ValueError):
        perturbation.sample_ws(plan(), 0)


def test_sample_ws_counts():
    masks = perturbation.sample_ws(plan(window_k=4, n_per_window=2), 10)
    assert masks.shape == (14, 10)


def test_sample_ws_masks_stay_in_window():
    p = plan(window_k=4, n_per_window=5, seed=2)
    masks = perturbation.sample_ws(p, 10)
    for row, mask in enumerate(masks):
        s = row // p.n_per_window
        outside = np.r_[mask[:s], mask[s + 4 :]]
        assert outside.all()
        assert 1 <= (mask == 0).sum() <= 4


def test_sample_ws_short_clip_single_window():
    masks = perturbation.sample_ws(plan(window_k=7, n_per_window=6), 3)
    assert masks.shape == (6, 3)
    assert ((masks == 0).sum(axis=1) >= 1).all()


@pytest.mark.parametrize("d", [1, 2, 5, 9, 30])
def test_every_segment_is_maskable(d):
    masks = perturbation.sample_ws(plan(), d)
    assert (masks == 0).any(axis=0).all()
    if d >= 2:
        assert perturbation.constant_columns(masks) == []


def test_sample_ws_deterministic():
    p = plan(seed=5)
    assert np.array_equal(perturbation.sample_ws(p, 12), perturbation.sample_ws(p, 12))
    assert not np.array_equal(perturbation.sample_ws(p, 12), perturbation.sample_ws(p._replace(seed=6), 12))


def test_sample_ts():
    clip = AudioClip(np.ones(7840))
    seg, masks = perturbation.sample_ts(plan(perturbation.LIME_TS, n_per_window=3), clip)
    assert seg.kind == audio_core.TIME and seg.d == 7
    assert masks.shape == (3, 7)


def test_sample_requires_expert_segments():
    clip = AudioClip(np.ones(1000))
    with pytest.raises(ValueError):
        perturbation.sample(plan(perturbation.LIME_WS), clip, None)
    with pytest.raises(ValueError):
        perturbation.sample(plan(perturbation.LIME), clip, audio_core.time_segmentation(clip, 10))
    seg, masks = perturbation.sample(plan(perturbation.LIME, n_global=10), clip, expert(5))
    assert seg.d == 5 and masks.shape == (10, 5)


def test_realize():
    clip = AudioClip(np.arange(1, 301))
    seg = expert(3)
    assert perturbation.realize(clip, seg, [1, 1, 1]) == clip
    assert not perturbation.realize(clip, seg, [0, 0, 0]).samples.any()
    out = perturbation.realize(clip, seg, [1, 0, 1]).samples
    assert set(np.flatnonzero(out == 0)) == set(range(100, 200))
    with pytest.raises(ValueError):
        perturbation.realize(clip, seg, [1, 0])


def test_strategy_names():
    assert perturbation.strategy_name("lime-ts") == perturbation.LIME_TS
    with pytest.raises(ValueError):
        perturbation.strategy_name("shap")


def test_plan_json():
    p = plan(perturbation.LIME_TS, ts_duration_ms=78, seed=3)
    assert PerturbationPlan.from_json(p.to_json()) == p
    assert PerturbationPlan.from_json(dict(p.to_json(), strategy="lime-ts")) == p
