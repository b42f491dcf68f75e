import numpy as np
import pytest

from chainless.lattice import LatticeGeometry
from chainless.model import (CouplingField, ModelParams, draw_disorder, ising_couplings,
                             read_disorder, write_disorder)
from conftest import random_spins


def test_zero_beta_density_vanishes(rng):
    g = LatticeGeometry(2, 4)
    c = CouplingField(g, np.ones((16, 2)), beta=0.0)
    assert np.all(c.log_density(random_spins(rng, 10, 16)) == 0)
    assert np.all(c.site_derivative(random_spins(rng, 10, 16)) == 0)


def test_all_up_derivative_is_four_beta():
    g = LatticeGeometry(2, 8)
    c = ising_couplings(g, 2.5)
    d = c.site_derivative(np.ones(64))
    np.testing.assert_allclose(d, 4.0 / 2.5)


def test_all_up_energy_counts_each_bond_once():
    g = LatticeGeometry(3, 4)
    c = ising_couplings(g, 1.0)
    assert c.log_density(np.ones(64)) == pytest.approx(3 * 64)


@pytest.mark.parametrize("dim, side", [(2, 4), (2, 8), (3, 4)])
def test_derivative_matches_spin_flip_difference(rng, dim, side):
    g = LatticeGeometry(dim, side)
    c = draw_disorder(7, g, 1.3)
    s = random_spins(rng, 5, g.n_sites).astype(float)
    d = c.site_derivative(s)
    for site in (0, g.n_sites // 3, g.n_sites - 1):
        up, dn = s.copy(), s.copy()
        up[:, site], dn[:, site] = 1, -1
        fd = (c.log_density(up) - c.log_density(dn)) / 2
        np.testing.assert_allclose(d[:, site], fd, atol=1e-12)


def test_disorder_is_reproducible():
    g = LatticeGeometry(3, 4)
    a, b = draw_disorder(3, g, 1.0), draw_disorder(3, g, 1.0)
    np.testing.assert_array_equal(a.raw, b.raw)
    assert not np.array_equal(a.raw, draw_disorder(4, g, 1.0).raw)


def test_disorder_round_trip(tmp_path):
    g = LatticeGeometry(3, 4)
    c = draw_disorder(11, g, 1.5)
    write_disorder(tmp_path / "d.txt", c)
    r = read_disorder(tmp_path / "d.txt")
    np.testing.assert_array_equal(r.raw, c.raw)
    assert r.beta == pytest.approx(c.beta)
    assert r.seed == 11


def test_truncated_disorder_file_rejected(tmp_path):
    g = LatticeGeometry(3, 4)
    write_disorder(tmp_path / "d.txt", draw_disorder(1, g, 1.0))
    lines = (tmp_path / "d.txt").read_text().splitlines()
    (tmp_path / "d.txt").write_text("\n".join(lines[:-5]) + "\n")
    with pytest.raises(ValueError):
        read_disorder(tmp_path / "d.txt")


def test_wrong_lattice_size_rejected():
    c = ising_couplings(LatticeGeometry(2, 4), 1.0)
    with pytest.raises(ValueError):
        c.log_density(np.ones(15))


@pytest.mark.parametrize("t", [0.0, -1.0])
def test_nonpositive_temperature_rejected(t):
    with pytest.raises(ValueError):
        ModelParams(t)
