import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chainless.basis import (LinkageTerm, _pair, derivative_at, diagnostic_basis,
                             diagnostic_terms_2d, diagnostic_terms_3d, lattice_polynomial,
                             merge_duplicates, sampling_bases)
from chainless.lattice import GeometryError, LatticeGeometry, build_hierarchy
from conftest import random_spins


def test_grouped_diagonal_pair_derivative_all_up():
    g = LatticeGeometry(2, 8)
    term = _pair([(1, 1), (-1, -1)])
    assert derivative_at(term, np.ones(64), 9, g) == pytest.approx(4.0)


def test_cubic_summand_all_up():
    # sigma = 6 axis neighbours, s * sigma^3 / 10
    g = LatticeGeometry(3, 4)
    cube = [t for t in diagnostic_terms_3d(1) if t.label == "cube"][0]
    val = lattice_polynomial(cube, np.ones(64), np.array([0]), g)
    assert val == pytest.approx(21.6)


def test_term_counts():
    assert len(diagnostic_terms_2d(1)) == 7
    assert len(diagnostic_terms_3d(1)) == 20


@pytest.mark.parametrize("dim, side, level", [(2, 16, 2), (2, 16, 4), (3, 8, 3)])
def test_diagnostic_terms_even_under_flip(rng, dim, side, level):
    hier = build_hierarchy(dim, side)
    basis = diagnostic_basis(hier, level)
    s = random_spins(rng, 4, hier.geom.n_sites).astype(float)
    for t in basis.terms:
        a = lattice_polynomial(t, s, basis.sites, hier.geom)
        b = lattice_polynomial(t, -s, basis.sites, hier.geom)
        np.testing.assert_allclose(a, b)


def _lattice_sum(term, geom):
    return lambda s: lattice_polynomial(term, s, np.arange(geom.n_sites), geom)


@pytest.mark.parametrize("term", diagnostic_terms_2d(1)[:5] + [_pair([(1, 1), (-1, -1)])],
                         ids=lambda t: t.label or "grouped")
def test_pair_derivative_two_point_difference(rng, term):
    g = LatticeGeometry(2, 8)
    # pair terms closed under negation so that the lattice sum is symmetric
    closed = _pair(list(term.offsets) + [tuple(-x for x in v) for v in term.offsets])
    psi = _lattice_sum(closed, g)
    s = random_spins(rng, 1, 64)[0].astype(float)
    for site in (0, 17, 63):
        up, dn = s.copy(), s.copy()
        up[site], dn[site] = 1, -1
        # the closed term counts each bond twice, the local derivative once per ordered pair
        assert (psi(up) - psi(dn)) / 2 == pytest.approx(derivative_at(closed, s, site, g))


@pytest.mark.parametrize("power, norm", [(3, 10.0), (5, 100.0)])
def test_odd_power_derivative_complex_step(rng, power, norm):
    g = LatticeGeometry(2, 4)
    axis = ((1, 0), (-1, 0), (0, 1), (0, -1))
    term = LinkageTerm("odd-power", axis, power=power, norm=norm)
    s = random_spins(rng, 1, 16)[0].astype(complex)
    for site in range(16):
        z = s.copy()
        z[site] += 1e-20j
        d = lattice_polynomial(term, z, np.arange(16), g).imag / 1e-20
        assert d == pytest.approx(derivative_at(term, s.real, site, g), abs=1e-9)


def test_vectorized_derivatives_match_scalar(rng):
    hier = build_hierarchy(2, 16)
    basis = diagnostic_basis(hier, 4)
    s = random_spins(rng, 3, 256)
    d = basis.derivatives(s)
    for k, t in enumerate(basis.terms):
        for a in (0, 5, len(basis.sites) - 1):
            assert d[1, a, k] == pytest.approx(derivative_at(t, s[1], basis.sites[a], hier.geom))


def test_sampling_basis_matches_stencil():
    hier = build_hierarchy(2, 16)
    for lv, b in sampling_bases(hier).items():
        st_ = hier.stencil(lv)
        np.testing.assert_array_equal(b.sites, st_.sites)
        assert b.size == st_.n_terms


def test_merge_drops_self_offsets_and_pools_duplicates():
    terms = [_pair([(4, 4)], "a"), _pair([(-4, -4)], "b"), _pair([(8, 0), (0, 8)], "c")]
    out = merge_duplicates(terms, 8)
    assert len(out) == 1
    assert out[0].members == 2


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(-8, 8), st.integers(-8, 8)), min_size=1, max_size=8))
def test_merge_is_idempotent_and_preserves_members(offsets):
    terms = [_pair([v], f"t{k}") for k, v in enumerate(offsets)]
    once = merge_duplicates(terms, 8)
    twice = merge_duplicates(once, 8)
    assert [t.offsets for t in once] == [t.offsets for t in twice]
    kept = sum(1 for v in offsets if any(x % 8 for x in v))
    assert sum(t.members for t in once) == kept


def test_nonsimilar_level_rejected():
    hier = build_hierarchy(2, 16)
    with pytest.raises(GeometryError):
        diagnostic_basis(hier, 3)


def test_half_side_level_keeps_three_terms():
    hier = build_hierarchy(3, 16)
    assert diagnostic_basis(hier, 6).size == 20
    assert len(diagnostic_basis(build_hierarchy(2, 16), 6).terms) == 3
