import numpy as np
import pytest

from chainless.estimator import magnetization
from chainless.lattice import LatticeGeometry
from chainless.model import CouplingField, draw_disorder, ising_couplings
from chainless.reference import (EnumerationOracle, _Checkerboard, _half_sweep, exact_expectation, geometric_ladder,
                                 index_to_spins, metropolis_chain, parallel_tempering,
                                 spins_to_index)


def test_index_round_trip():
    idx = np.arange(256)
    np.testing.assert_array_equal(spins_to_index(index_to_spins(idx, 8)), idx)


def test_oracle_probabilities_sum_to_one():
    o = EnumerationOracle(ising_couplings(LatticeGeometry(2, 4), 2.2))
    assert o.prob.sum() == pytest.approx(1.0)


def test_oracle_refuses_large_lattices():
    with pytest.raises(ValueError):
        EnumerationOracle(ising_couplings(LatticeGeometry(2, 8), 2.2))


def test_exact_expectation_limits():
    g = LatticeGeometry(2, 4)
    hot = EnumerationOracle(CouplingField(g, np.ones((16, 2)), 0.0))
    assert exact_expectation(hot, magnetization) == pytest.approx(0.0, abs=1e-15)
    cold = EnumerationOracle(ising_couplings(g, 0.1))
    assert exact_expectation(cold, lambda s: np.abs(magnetization(s))) == pytest.approx(1.0)


def test_half_sweep_detailed_balance_on_2x2():
    # empirical one-colour transition matrix from every state, checked against P
    g = LatticeGeometry(2, 2)
    c = ising_couplings(g, 1.5)
    o = EnumerationOracle(c)
    cb = _Checkerboard(g)
    rng = np.random.default_rng(0)
    reps = 20_000
    for col in (0, 1):
        start = np.repeat(index_to_spins(np.arange(16), 4).astype(float), reps, axis=0)
        spins = start.copy()
        local = np.broadcast_to(c.local_raw[cb.colors[col]], (len(spins), 2, 4))
        _half_sweep(spins, cb.colors[col], cb.nb[col], local, np.full(len(spins), c.beta), 0.0,
                    rng)
        a = np.repeat(np.arange(16), reps)
        b = spins_to_index(spins.astype(np.int8))
        T = np.zeros((16, 16))
        np.add.at(T, (a, b), 1.0 / reps)
        flow = o.prob[:, None] * T
        np.testing.assert_allclose(flow, flow.T, atol=4e-3)


def test_metropolis_magnetization_distribution_matches_enumeration():
    g = LatticeGeometry(2, 4)
    c = ising_couplings(g, 2.2)
    o = EnumerationOracle(c)
    m_exact = o.spins().sum(axis=1)
    exact = np.bincount(m_exact + 16, weights=o.prob, minlength=33)
    rec, _ = metropolis_chain(c, 20_000, seed=1, n_chains=8, burn_in=500,
                              observable=lambda s: s.sum(axis=1).astype(int))
    m = np.concatenate(rec)
    emp = np.bincount(m + 16, minlength=33) / m.size
    np.testing.assert_allclose(emp, exact, atol=0.01)


def test_metropolis_at_infinite_temperature_accepts_everything():
    g = LatticeGeometry(2, 8)
    c = CouplingField(g, np.ones((64, 2)), 0.0)
    rec, acc = metropolis_chain(c, 50, seed=0, n_chains=2)
    assert acc == 1.0


def test_geometric_ladder_includes_targets():
    lad = geometric_ladder(0.5, 2.5, 12, include=[0.9, 1.5])
    assert 0.9 in lad and 1.5 in lad
    assert np.all(np.diff(lad) > 0)


def test_parallel_tempering_at_high_temperature_is_iid():
    g = LatticeGeometry(3, 4)
    reals = [draw_disorder(s, g, 1.0) for s in range(16)]
    res = parallel_tempering(reals, [40.0, 80.0], 2000, seed=0)
    # <q^2> of nearly independent spins is 1/M (corrections of order beta^2)
    assert res.q2.mean() == pytest.approx(1 / 64, rel=0.1)
    with pytest.raises(KeyError):
        res.at(3.0)
    assert res.at(40.0) == 0


@pytest.mark.slow
def test_parallel_tempering_agrees_with_long_metropolis():
    g = LatticeGeometry(3, 4)
    c = draw_disorder(5, g, 2.0)
    pt = parallel_tempering([c], geometric_ladder(1.5, 3.0, 6, include=[2.0]), 6000, seed=2)
    q2_pt = pt.q2[0, pt.at(2.0)]
    # two independent Metropolis copies, overlap per sweep
    rec, _ = metropolis_chain(c, 6000, seed=3, n_chains=16, burn_in=1000)
    s = np.array(rec, dtype=float)
    q = (s[:, 0::2] * s[:, 1::2]).mean(axis=-1)
    q2_mc = (q**2).mean(axis=0)
    se = q2_mc.std(ddof=1) / np.sqrt(q2_mc.size)
    assert abs(q2_pt - q2_mc.mean()) < 3 * se + 0.01
