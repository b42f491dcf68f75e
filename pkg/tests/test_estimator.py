import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chainless.estimator import (CapPolicy, ObservableAccumulator, binder_ratio,
                                 binder_with_error, cap_sweep, capped_weighted_mean,
                                 flow_diagnostic, magnetization, overlap, pair_moments,
                                 tc_bracket)
from chainless.lattice import GeometryError, build_hierarchy
from chainless.model import ising_couplings
from conftest import random_spins


def test_capped_example():
    lw = np.log([1.0, 2.0, 4.0, 8.0])
    h = np.array([1.0, 2.0, 3.0, 4.0])
    est = capped_weighted_mean(lw, h, np.log(4.0))
    assert est.f == 0.5
    assert est.n_eff == pytest.approx(2.75)
    assert est.mean == pytest.approx((1 + 4 + 12 + 16) / 11)


def test_equal_weights_unchanged_by_cap():
    h = np.array([0.1, 0.5, -0.2, 0.9])
    lw = np.zeros(4)
    for cap in (0.5, 2.0, 10.0):
        est = capped_weighted_mean(lw, h, cap)
        assert est.mean == pytest.approx(h.mean())
        assert est.f == 0.0
    assert capped_weighted_mean(lw, h, 0.0).f == 1.0


def test_cap_sweep_with_constant_weights():
    rep = cap_sweep(np.zeros(50), np.linspace(0, 1, 50), CapPolicy((-1.0, 2.0, 4.0)))
    assert [r.f for r in rep.rows] == [1.0, 0.0, 0.0]
    assert len({round(r.mean, 12) for r in rep.rows}) == 1
    assert rep.converged


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-20, 20), min_size=2, max_size=60))
def test_f_and_effective_count_fall_as_cap_rises(lw):
    lw = np.array(lw)
    h = np.arange(len(lw), dtype=float)
    rows = [capped_weighted_mean(lw, h, c) for c in np.linspace(-25, 25, 11)]
    fs = [r.f for r in rows]
    ne = [r.n_eff for r in rows]
    assert all(a >= b for a, b in zip(fs, fs[1:]))
    assert all(a >= b - 1e-9 for a, b in zip(ne, ne[1:]))
    assert all(1 - 1e-9 <= n <= len(lw) + 1e-9 for n in ne)


def test_uncapped_error_is_finite():
    rng = np.random.default_rng(0)
    est = capped_weighted_mean(rng.normal(size=500), rng.normal(size=500), np.inf)
    assert np.isfinite(est.error) and est.error < 1


def test_symmetric_weighted_magnetization_is_zero_within_error(rng):
    s = random_spins(rng, 4000, 64)
    est = capped_weighted_mean(np.zeros(4000), magnetization(s))
    assert abs(est.mean) <= 3 * est.error


@pytest.mark.parametrize("spins, mu", [([1, 1, 1, 1], 1.0), ([1, -1, 1, -1], 0.0),
                                       ([-1, -1, -1, 1], -0.5)])
def test_magnetization(spins, mu):
    assert magnetization(np.array(spins)) == mu


def test_overlap_examples():
    s = np.array([1, -1, 1, 1])
    assert overlap(s, s) == 1.0
    assert overlap(s, -s) == -1.0
    with pytest.raises(ValueError):
        overlap(s, np.ones(3))


def test_accumulator_merge_matches_joint(rng):
    h, w = rng.normal(size=100), rng.random(100)
    joint = ObservableAccumulator().add(h, w)
    merged = ObservableAccumulator().add(h[:30], w[:30]).merge(
        ObservableAccumulator().add(h[30:], w[30:]))
    assert merged.mean == pytest.approx(joint.mean)
    assert merged.error == pytest.approx(joint.error)
    assert merged.count == 100


def test_identical_pairs_give_unit_binder():
    q = np.ones(20)
    assert binder_ratio(q, q) == 1.0


@pytest.mark.parametrize("M", [2, 4, 8, 16])
def test_binder_of_independent_spins_is_one_over_M(M):
    # brute force over every pair of configurations: q is uniform over products
    states = 1 - 2 * ((np.arange(2**M)[:, None] >> np.arange(M)) & 1)
    q = (states.sum(axis=1) / M).astype(float)  # overlap with the all-up reference
    q2, q4 = np.mean(q**2), np.mean(q**4)
    assert q2 == pytest.approx(1 / M)
    assert q4 == pytest.approx((3 * M - 2) / M**3)
    assert binder_ratio([q2], [q4]) == pytest.approx(1 / M)


def test_pair_moments_of_independent_samples(rng):
    s = random_spins(rng, 600, 16)
    m = pair_moments(s, np.zeros(600))
    assert m.q2 == pytest.approx(1 / 16, rel=0.05)
    assert m.n_pairs == 600 * 599 // 2
    d = pair_moments(s, np.zeros(600), pairing="disjoint")
    assert d.n_pairs == 300
    with pytest.raises(ValueError):
        pair_moments(s, np.zeros(600), pairing="triples")


def test_pair_moments_chunking_invariant(rng):
    s = random_spins(rng, 150, 27)
    lw = rng.normal(size=150)
    a = pair_moments(s, lw, 1.0, chunk=7)
    b = pair_moments(s, lw, 1.0, chunk=1024)
    assert a.q2 == pytest.approx(b.q2) and a.q4 == pytest.approx(b.q4)


def test_binder_error_from_group_scatter(rng):
    q2 = rng.uniform(0.1, 0.3, 50)
    q4 = q2**2 * rng.uniform(1.0, 2.0, 50)
    g, err = binder_with_error(q2, q4)
    assert g == pytest.approx(binder_ratio(q2, q4))
    assert 0 < err < 1
    with pytest.raises(ValueError):
        binder_with_error([0.1], [0.01])


@pytest.mark.parametrize("temps, verdicts, expected", [
    ([2.2, 2.25, 2.3, 2.35], ["growth", "growth", "mixed", "decay"], (2.25, 2.35)),
    ([2.2, 2.35], ["growth", "decay"], (2.2, 2.35)),
    ([2.2, 2.35], ["decay", "decay"], None),
    ([2.35, 2.2], ["decay", "growth"], (2.2, 2.35)),
])
def test_tc_bracket(temps, verdicts, expected):
    assert tc_bracket(temps, verdicts) == expected


def test_flow_diagnostic_shapes(rng):
    hier = build_hierarchy(2, 16)
    c = ising_couplings(hier.geom, 2.2)
    res = flow_diagnostic(hier, random_spins(rng, 300, 256), c, [2, 4])
    assert res.values.shape == (2,)
    assert len(res.coefficients[0]) == 7
    assert res.verdict in ("growth", "decay", "mixed")
    with pytest.raises(GeometryError):
        flow_diagnostic(hier, random_spins(rng, 10, 256), c, [2, 3])
    with pytest.raises(ValueError):
        flow_diagnostic(hier, random_spins(rng, 10, 256), c, [2], statistic="max")


def test_bad_cap_grid_rejected():
    with pytest.raises(ValueError):
        CapPolicy((4.0, 2.0))
