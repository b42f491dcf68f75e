"""
Near-neighbour spin Hamiltonians with the inverse temperature folded in.

The log-density is

    W0(S) = sum_site sum_axis J[site, axis] * s[site] * s[site + e_axis]
            + field * sum_site s[site]

with ``J = beta`` (Ising) or ``J = beta * xi``, ``xi ~ N(0, 1)`` i.i.d.
(Edwards-Anderson).  Spin arrays carry sites on the last axis, so every
function here accepts a single configuration or a batch.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .lattice import LatticeGeometry


class ModelKind(str, Enum):
    ISING = "ising"
    EA = "ea"


@dataclass(frozen=True)
class ModelParams:
    temperature: float
    kind: ModelKind = ModelKind.ISING
    field0: float = 0.0  # epsilon_0; the Metropolis reference uses field0 / N

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if self.field0 < 0:
            raise ValueError("field0 must be >= 0")

    @property
    def beta(self) -> float:
        return 1.0 / self.temperature


class CouplingField:
    """Bond couplings ``J[site, axis]`` for the bond ``site -- site + e_axis``.

    ``raw`` holds the temperature-free couplings (1 or xi); ``values`` are
    ``beta * raw``.
    """

    def __init__(self, geom: LatticeGeometry, raw: np.ndarray, beta: float,
                 field: float = 0.0, seed: int | None = None, kind: ModelKind = ModelKind.ISING):
        raw = np.asarray(raw, dtype=float)
        if raw.shape != (geom.n_sites, geom.dim):
            raise ValueError(f"couplings shape {raw.shape} != {(geom.n_sites, geom.dim)}")
        self.geom = geom
        self.raw = raw
        self.raw.setflags(write=False)
        self.beta = float(beta)
        self.values = self.beta * raw
        self.values.setflags(write=False)
        self.field = float(field)
        self.seed = seed
        self.kind = ModelKind(kind)
        nb = geom.neighbors
        self._plus = nb[:, 0::2]
        self._minus = nb[:, 1::2]
        # coupling to each of the 2*dim neighbours, ordered like geom.neighbors
        local = np.empty((geom.n_sites, 2 * geom.dim))
        local[:, 0::2] = raw
        local[:, 1::2] = raw[self._minus, np.arange(geom.dim)]
        self.local_raw = local
        self.local = self.beta * local

    def __repr__(self):
        return f"CouplingField({self.kind.value}, {self.geom!r}, beta={self.beta:.4g})"

    def at_beta(self, beta: float) -> "CouplingField":
        return CouplingField(self.geom, self.raw, beta, self.field * beta / self.beta
                             if self.beta else 0.0, self.seed, self.kind)

    def _check(self, spins: np.ndarray) -> np.ndarray:
        spins = np.asarray(spins)
        if spins.shape[-1] != self.geom.n_sites:
            raise ValueError(
                f"spin configuration has {spins.shape[-1]} sites, lattice has {self.geom.n_sites}"
            )
        # complex spins are allowed for complex-step derivatives
        return spins if np.iscomplexobj(spins) else spins.astype(float, copy=False)

    def log_density(self, spins) -> np.ndarray:
        """Unnormalized log-density ``W0`` (each bond counted once)."""
        s = self._check(spins)
        w = np.einsum("...ia,...ia,ia->...", s[..., :, None], s[..., self._plus], self.values)
        if self.field:
            w = w + self.field * s.sum(axis=-1)
        return w

    def site_derivative(self, spins, sites=None) -> np.ndarray:
        """``dW0/ds`` at ``sites`` (all sites by default)."""
        s = self._check(spins)
        nb = self.geom.neighbors
        loc = self.local
        if sites is not None:
            nb = nb[sites]
            loc = loc[sites]
        d = np.einsum("...ik,ik->...i", s[..., nb], loc)
        if self.field:
            d = d + self.field
        return d


def ising_couplings(geom: LatticeGeometry, temperature: float, field: float = 0.0) -> CouplingField:
    """Uniform ferromagnet, ``J0 = 1``.  ``field`` is the log-density field."""
    return CouplingField(geom, np.ones((geom.n_sites, geom.dim)), 1.0 / temperature, field)


def draw_disorder(seed: int, geom: LatticeGeometry, temperature: float) -> CouplingField:
    """Edwards-Anderson couplings with ``xi ~ N(0, 1)`` drawn from ``seed``."""
    rng = np.random.default_rng(seed)
    xi = rng.standard_normal((geom.n_sites, geom.dim))
    return CouplingField(geom, xi, 1.0 / temperature, seed=seed, kind=ModelKind.EA)


def make_couplings(kind, geom: LatticeGeometry, temperature: float, seed: int | None = None):
    kind = ModelKind(kind)
    if kind is ModelKind.ISING:
        return ising_couplings(geom, temperature)
    if seed is None:
        raise ValueError("EA couplings need a disorder seed")
    return draw_disorder(seed, geom, temperature)


def write_disorder(path, couplings: CouplingField, temperature: float | None = None) -> None:
    """One line per bond: coords, axis, xi.  Header records seed, N, T."""
    geom = couplings.geom
    t = temperature if temperature is not None else 1.0 / couplings.beta
    lines = [f"# seed={couplings.seed} N={geom.side} dim={geom.dim} T={float(t)!r}"]
    coords = geom.coords
    for site in range(geom.n_sites):
        c = " ".join(str(int(x)) for x in coords[site])
        for ax in range(geom.dim):
            lines.append(f"{c} {ax} {float(couplings.raw[site, ax])!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_disorder(path) -> CouplingField:
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith("#"):
        raise ValueError(f"{path}: missing disorder header")
    meta = dict(tok.split("=", 1) for tok in text[0][1:].split())
    geom = LatticeGeometry(int(meta["dim"]), int(meta["N"]))
    raw = np.full((geom.n_sites, geom.dim), np.nan)
    for line in text[1:]:
        if not line.strip():
            continue
        parts = line.split()
        coords = [int(x) for x in parts[: geom.dim]]
        raw[geom.index(coords), int(parts[geom.dim])] = float(parts[geom.dim + 1])
    if np.isnan(raw).any():
        raise ValueError(f"{path}: incomplete bond list")
    seed = None if meta["seed"] == "None" else int(meta["seed"])
    return CouplingField(geom, raw, 1.0 / float(meta["T"]), seed=seed, kind=ModelKind.EA)
