import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from bevdrive.bev import render_static_channels
from bevdrive.perception_proxy import (
    DegradationProfile,
    MaskDegrader,
    StopClassifierSim,
    degrade_to_iou,
    iou,
    simulate_stop_classifier,
)
from bevdrive.world import TownSpec, generate_town


def test_iou_examples():
    a = np.zeros((4, 4), dtype=np.uint8)
    a[:2] = 1
    assert iou(a, a) == 1.0
    assert iou(a, 1 - a) == 0.0
    b = np.ones((4, 4), dtype=np.uint8)
    assert iou(a, b) == 0.5
    assert iou(np.zeros((3, 3)), np.zeros((3, 3))) == 1.0
    with pytest.raises(ValueError):
        iou(np.zeros((2, 2)), np.zeros((3, 3)))


@settings(max_examples=100, deadline=None)
@given(arrays(np.uint8, (6, 6), elements=st.integers(0, 1)), arrays(np.uint8, (6, 6), elements=st.integers(0, 1)))
def test_iou_symmetric_and_one_only_when_equal(a, b):
    assert iou(a, b) == iou(b, a)
    assert 0.0 <= iou(a, b) <= 1.0
    if a.any() or b.any():
        assert (iou(a, b) == 1.0) == bool(np.array_equal(a, b))


@pytest.fixture(scope="module")
def masks():
    """100 road and 100 lane-line masks from random poses in a few towns."""
    rng = np.random.default_rng(0)
    towns = [generate_town(i, spec) for i, spec in
             enumerate([TownSpec(), TownSpec(lanes=2, blocks=(3, 2)), TownSpec(blocks=(1, 3), block_size=40.0)])]
    road, lanes = [], []
    while len(road) < 100:
        town = towns[len(road) % len(towns)]
        lane = town.lane(int(rng.choice(town.lane_ids)))
        s = float(rng.uniform(0, lane.length))
        p = lane.point_at(s)
        r, l = render_static_channels(town, (p[0], p[1], lane.heading_at(s) + rng.normal(0, 0.1)))
        if r.any() and l.any():
            road.append(r)
            lanes.append(l)
    return np.stack(road), np.stack(lanes)


def test_target_one_is_identity(masks):
    out = degrade_to_iou(masks[0][0], DegradationProfile(1.0))
    assert np.array_equal(out.mask, masks[0][0])


@pytest.mark.parametrize("cls,target", [(0, 0.924), (1, 0.756)])
def test_degradation_hits_target_on_average(masks, cls, target):
    rng = np.random.default_rng(1)
    profile = DegradationProfile(target)
    values = []
    for m in masks[cls]:
        out = degrade_to_iou(m, profile, 0.0, rng)
        assert out.mask.dtype == m.dtype and set(np.unique(out.mask)) <= {0, 1}
        assert out.iou == pytest.approx(iou(m, out.mask))
        values.append(out.iou)
    assert abs(np.mean(values) - target) <= 0.02
    assert all(abs(v - target) <= 0.02 for v in values)


def test_degradation_is_deterministic_in_seed(masks):
    m = masks[1][3]
    a = degrade_to_iou(m, DegradationProfile(0.756), 1.0, np.random.default_rng(5)).mask
    b = degrade_to_iou(m, DegradationProfile(0.756), 1.0, np.random.default_rng(5)).mask
    assert np.array_equal(a, b)


def test_empty_mask_is_flagged_unattainable():
    out = degrade_to_iou(np.zeros((8, 8), dtype=np.uint8), DegradationProfile(0.8))
    assert not out.attainable and not out.mask.any()


def test_profile_validation_and_effective_target():
    with pytest.raises(ValueError):
        DegradationProfile(0.0)
    with pytest.raises(ValueError):
        DegradationProfile(0.9, ood_multiplier=0.5)
    p = DegradationProfile(0.9, ood_multiplier=2.0)
    assert p.effective_target(0.0) == 0.9
    assert p.effective_target(1.0) == pytest.approx(0.9 / 1.5)
    assert p.effective_target(2.0) == p.effective_target(50.0) == pytest.approx(0.45)
    with pytest.raises(ValueError):
        p.effective_target(-1.0)


def test_deviation_never_raises_expected_iou(masks):
    rng = np.random.default_rng(2)
    profile = DegradationProfile(0.924)
    near, far = [], []
    for trial in range(1000):
        cls = trial % 2
        m = masks[cls][int(rng.integers(100))]
        d1, d2 = np.sort(rng.uniform(0.0, 3.0, 2))
        seed = int(rng.integers(2**31))
        near.append(degrade_to_iou(m, profile, d1, np.random.default_rng(seed)).iou)
        far.append(degrade_to_iou(m, profile, d2, np.random.default_rng(seed)).iou)
    near, far = np.asarray(near), np.asarray(far)
    assert near.mean() >= far.mean()
    # no evidence that more deviation gives higher IoU
    assert stats.ttest_rel(far, near, alternative="greater").pvalue > 0.05


def test_mask_degrader_estimator(masks):
    deg = MaskDegrader(target_iou=0.756, random_state=3).fit()
    out = deg.transform(masks[1][:5])
    assert out.shape == (5, 192, 192)
    values = [iou(a, b) for a, b in zip(masks[1][:5], out)]
    assert abs(np.mean(values) - 0.756) <= 0.02
    assert deg.get_params()["target_iou"] == 0.756
    with pytest.raises(ValueError):
        deg.transform(masks[1][0])


# -- stop classifier ------------------------------------------------------------

def test_perfect_classifier_echoes_truth():
    sim = StopClassifierSim(1.0, 0.0)
    rng = np.random.default_rng(0)
    truth = rng.random(1000) < 0.3
    assert [simulate_stop_classifier(t, sim, rng) for t in truth] == truth.tolist()


def test_empirical_rates_match_configuration():
    sim = StopClassifierSim(0.95, 0.02)
    rng = np.random.default_rng(1)
    pos = np.mean([sim.step(True, rng) for _ in range(100_000)])
    neg = np.mean([sim.step(False, rng) for _ in range(100_000)])
    assert abs(pos - 0.95) <= 0.01 and abs(neg - 0.02) <= 0.01


def test_latency_delays_the_decision():
    sim = StopClassifierSim(1.0, 0.0, latency=2)
    rng = np.random.default_rng(0)
    truth = [False] * 5 + [True] * 5
    out = [sim.step(t, rng) for t in truth]
    assert out == [False] * 7 + [True] * 3


def test_latent_probability_respects_threshold():
    sim = StopClassifierSim(0.5, 0.5, threshold=0.4)
    rng = np.random.default_rng(2)
    vals = np.array([sim.latent(True, rng) for _ in range(2000)])
    assert ((0 <= vals) & (vals <= 1)).all()
    assert abs(np.mean(vals >= 0.4) - 0.5) < 0.05


@pytest.mark.parametrize("kwargs", [{"tpr": 1.2}, {"fpr": -0.1}, {"threshold": 1.0}, {"latency": -1}])
def test_classifier_validation(kwargs):
    with pytest.raises(ValueError):
        StopClassifierSim(**kwargs)
