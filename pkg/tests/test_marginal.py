from math import comb  # noqa: F401

import numpy as np
import pytest

from chainless.basis import BasisSet, _pair, sampling_bases
from chainless.lattice import LatticeGeometry, build_hierarchy
from chainless.marginal import (CoefficientTable, ExactMarginals, ProjectionSystem,
                                accumulate_projection, read_table, solve_coefficients,
                                solve_system, symmetrize, write_table)
from chainless.model import CouplingField, ising_couplings
from conftest import random_spins


def _system(A, b):
    g = LatticeGeometry(2, 4)
    basis = BasisSet(g, 1, "test", np.array([0]), [_pair([(1, 0)])] * len(b))
    sys_ = ProjectionSystem(basis)
    sys_.A_sum = np.asarray(A, dtype=float)[None]
    sys_.b_sum = np.asarray(b, dtype=float)[None]
    sys_.weight, sys_.count = 1.0, 1
    return sys_


def test_identity_system_returns_rhs():
    b = [0.5, 0.25, 0.125]
    coef, bad = solve_system(_system(np.eye(3), b))
    np.testing.assert_allclose(coef[0], b)
    assert not bad[0]


def test_singular_system_jettisoned():
    A = np.array([[1.0, 1.0], [1.0, 1.0]])
    coef, bad = solve_system(_system(A, [1.0, 1.0]))
    assert bad[0]
    np.testing.assert_array_equal(coef[0], 0.0)


def test_empty_system_raises():
    hier = build_hierarchy(2, 8)
    sys_ = ProjectionSystem(sampling_bases(hier)[1])
    with pytest.raises(ValueError):
        solve_system(sys_)


def test_merge_equals_joint_accumulation(rng):
    hier = build_hierarchy(2, 8)
    c = ising_couplings(hier.geom, 2.0)
    bases = sampling_bases(hier)
    s = random_spins(rng, 40, 64)
    joint = accumulate_projection(s, hier, bases, c)
    a = accumulate_projection(s[:15], hier, bases, c)
    b = accumulate_projection(s[15:], hier, bases, c)
    for lv in bases:
        m = a[lv].merge(b[lv])
        np.testing.assert_allclose(m.A, joint[lv].A)
        np.testing.assert_allclose(m.b, joint[lv].b)


def test_beta_zero_projection_is_small(rng):
    hier = build_hierarchy(2, 16)
    c = CouplingField(hier.geom, np.ones((256, 2)), beta=0.0)
    n = 2000
    systems = accumulate_projection(random_spins(rng, n, 256), hier, sampling_bases(hier), c)
    table = solve_coefficients(systems, hier)
    assert np.abs(table.flat()).max() < 5 / np.sqrt(n)


def test_symmetrize_averages_endpoints():
    hier = build_hierarchy(2, 8)
    t = CoefficientTable.constant(hier, 0.30)
    c = t.coef[hier.n]
    rev = hier.base_reverse
    # one bond: set its two endpoint estimates to 0.30 and 0.34
    b, t2 = rev[0, 0]
    c[b, t2] = 0.34
    out = symmetrize(t)
    assert out.coef[hier.n][0, 0] == pytest.approx(0.32)
    assert out.coef[hier.n][b, t2] == pytest.approx(0.32)


def test_symmetrize_is_idempotent(rng):
    hier = build_hierarchy(2, 8)
    t = CoefficientTable.constant(hier, 0.0)
    for lv in range(1, hier.n + 1):
        t.coef[lv] = rng.normal(size=t.coef[lv].shape)
    once = symmetrize(t)
    twice = symmetrize(once)
    np.testing.assert_allclose(once.flat(), twice.flat())


def test_base_matrix_is_symmetric_after_symmetrize(rng):
    hier = build_hierarchy(2, 16)
    t = CoefficientTable.constant(hier, 0.0)
    t.coef[hier.n] = rng.normal(size=t.coef[hier.n].shape)
    M = symmetrize(t).base_matrix()
    np.testing.assert_allclose(M, M.T)


def test_table_round_trip(tmp_path, rng):
    hier = build_hierarchy(2, 16)
    t = CoefficientTable.constant(hier, 0.0)
    for lv in range(1, hier.n + 1):
        t.coef[lv] = rng.normal(size=t.coef[lv].shape)
    t.jettisoned[2][3] = True
    write_table(tmp_path / "t.csv", t)
    r = read_table(tmp_path / "t.csv", hier)
    np.testing.assert_array_equal(r.flat(), t.flat())
    assert r.jettison_count == 1


@pytest.mark.parametrize("damage", ["truncate", "garble", "wrong-lattice", "nan"])
def test_corrupted_table_rejected(tmp_path, damage):
    hier = build_hierarchy(2, 16)
    write_table(tmp_path / "t.csv", CoefficientTable.constant(hier, 0.3))
    lines = (tmp_path / "t.csv").read_text().splitlines()
    if damage == "truncate":
        lines = lines[:-10]
    elif damage == "garble":
        lines[-1] = "1,0 0,zero,??"
    elif damage == "nan":
        lines[-1] = lines[-1].rsplit(",", 2)[0] + ",nan,0"
    (tmp_path / "t.csv").write_text("\n".join(lines) + "\n")
    target = build_hierarchy(2, 8) if damage == "wrong-lattice" else hier
    with pytest.raises(ValueError):
        read_table(tmp_path / "t.csv", target)


def test_exact_marginals_normalize(oracle_lattice):
    hier, c = oracle_lattice
    ex = ExactMarginals(hier, c)
    for lv in range(len(hier.levels)):
        assert np.exp(np.logaddexp.reduce(ex.log_marginal(lv))) == pytest.approx(1.0)


def test_conditional_expectation_matches_marginal_derivative(oracle_lattice):
    hier, c = oracle_lattice
    ex = ExactMarginals(hier, c)
    for lv in range(1, len(hier.levels)):
        for site in hier.levels[lv][:2]:
            np.testing.assert_allclose(ex.conditional_derivative(lv, int(site)),
                                       ex.marginal_derivative(lv, int(site)), atol=1e-10)


@pytest.mark.slow
def test_monte_carlo_coefficients_approach_oracle(oracle_lattice):
    hier, c = oracle_lattice
    ex = ExactMarginals(hier, c)
    ref = ex.fitted_table()
    bases = sampling_bases(hier)
    rng = np.random.default_rng(3)
    # independent batches give a scatter-based standard error per coefficient
    fits = []
    for _ in range(20):
        spins, _ = ex.draw(5_000, rng)
        fit = solve_coefficients(accumulate_projection(spins, hier, bases, c), hier)
        fits.append(symmetrize(fit).flat())
    fits = np.array(fits)
    mean = fits.mean(axis=0)
    se = fits.std(axis=0, ddof=1) / np.sqrt(len(fits))
    assert np.all(np.abs(mean - ref.flat()) <= 3 * se + 1e-12)
