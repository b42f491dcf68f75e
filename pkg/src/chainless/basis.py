"""
Linkage polynomials and their site derivatives.

Derivative conventions
----------------------
A *pair* term owned by site ``u`` with offsets ``V`` has local derivative

    phi(u) = 2 * sum_{v in V} s[u + v]

For a negation-closed ``V`` this equals the derivative of the lattice sum
``psi = sum_x s_x sum_{v in V} s_{x+v}`` (each bond is reached from both ends).
A single-offset term is that bond's share, so four diagonal terms with a
common coefficient reproduce the grouped ``2 (s_{+v} + s_{-v})`` derivatives.

An *odd-power* term ``psi = sum_x s_x sigma_x**p / norm`` with ``sigma`` the
sum of the axis neighbours at distance ``a`` has derivative

    sigma_u**p / norm + sum_{y ~ u} s_y * p * sigma_y**(p-1) / norm
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .lattice import GeometryError, LatticeGeometry, LevelHierarchy


@dataclass(frozen=True)
class LinkageTerm:
    kind: str  # "pair" or "odd-power"
    offsets: tuple
    power: int = 1
    norm: float = 1.0
    members: int = 1  # original terms merged into this one by periodic wrap
    label: str = ""

    def describe(self) -> str:
        offs = " ".join("(" + ",".join(map(str, v)) + ")" for v in self.offsets)
        if self.kind == "pair":
            return f"{self.label or 'pair'} pair offsets={offs} members={self.members}"
        return (f"{self.label or 'odd'} s*sigma^{self.power}/{self.norm:g} "
                f"sigma-offsets={offs}")


@dataclass
class BasisSet:
    """An ordered list of terms, evaluated at a fixed list of owning sites."""

    geom: LatticeGeometry
    level: int
    role: str
    sites: np.ndarray
    terms: list
    _pair_idx: list = field(default_factory=list, repr=False)
    _odd_idx: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._pair_idx = []
        for t in self.terms:
            if t.kind == "pair":
                self._pair_idx.append(
                    np.stack([self.geom.shift(self.sites, v) for v in t.offsets], axis=1)
                )
            else:
                self._pair_idx.append(None)
                key = t.offsets
                if key not in self._odd_idx:
                    nb = np.stack([self.geom.shift(self.sites, v) for v in t.offsets], axis=1)
                    nb2 = np.stack(
                        [np.stack([self.geom.shift(nb[:, k], w) for w in t.offsets], axis=1)
                         for k in range(nb.shape[1])],
                        axis=1,
                    )
                    self._odd_idx[key] = (nb, nb2)

    @property
    def size(self) -> int:
        return len(self.terms)

    def describe(self) -> list[str]:
        head = f"level={self.level} role={self.role} sites={len(self.sites)} terms={self.size}"
        return [head] + [f"  [{k}] {t.describe()}" for k, t in enumerate(self.terms)]

    def derivatives(self, spins) -> np.ndarray:
        """``(..., n_owned_sites, n_terms)`` local derivatives for a spin batch."""
        s = np.asarray(spins, dtype=float)
        out = np.empty(s.shape[:-1] + (len(self.sites), self.size))
        for k, t in enumerate(self.terms):
            if t.kind == "pair":
                out[..., k] = 2.0 * s[..., self._pair_idx[k]].sum(axis=-1)
                continue
            nb, nb2 = self._odd_idx[t.offsets]
            p = t.power
            sigma_u = s[..., nb].sum(axis=-1)
            sigma_y = s[..., nb2].sum(axis=-1)
            out[..., k] = (sigma_u**p + (s[..., nb] * p * sigma_y ** (p - 1)).sum(axis=-1)) / t.norm
        return out


def _pair(offsets, label="", members=1):
    return LinkageTerm("pair", tuple(tuple(int(x) for x in v) for v in offsets), members=members,
                       label=label)


def merge_duplicates(terms: list, side: int) -> list:
    """Merge pair terms whose offsets coincide modulo ``side``.

    Identical local functions would make every projection matrix singular;
    the merged term keeps one representative and counts its ``members``.
    Offsets that wrap onto the owning site are dropped, and so is a term
    left with none.
    """
    out: list = []
    keys: dict = {}
    for t in terms:
        if t.kind == "pair":
            # s_u * s_u is constant: self offsets carry no linkage
            kept = tuple(v for v in t.offsets if any(x % side for x in v))
            if not kept:
                continue
            t = replace(t, offsets=kept)
        if t.kind != "pair":
            out.append(t)
            continue
        key = tuple(sorted(tuple(x % side for x in v) for v in t.offsets))
        if key in keys:
            k = keys[key]
            prev = out[k]
            out[k] = replace(prev, members=prev.members + t.members,
                             label=prev.label + "+" + t.label if t.label else prev.label)
        else:
            keys[key] = len(out)
            out.append(t)
    return out


def sampling_basis(hier: LevelHierarchy, level: int) -> BasisSet:
    """Pair terms on the hierarchy stencil of ``level`` (``1 <= level <= n``)."""
    if level == 0:
        raise GeometryError("level 0 uses the model Hamiltonian, not a fitted basis")
    st = hier.stencil(level)
    terms = [_pair(offs, label=f"t{k}") for k, offs in enumerate(st.offsets)]
    return BasisSet(hier.geom, level, "sampling", st.sites, terms)


def sampling_bases(hier: LevelHierarchy) -> dict[int, BasisSet]:
    return {i: sampling_basis(hier, i) for i in range(1, hier.n + 1)}


def diagnostic_terms_2d(a: int) -> list:
    diag = [(a, a), (a, -a), (-a, a), (-a, -a)]
    terms = [_pair([v], label=f"psi{k + 1}") for k, v in enumerate(diag)]
    terms.append(_pair([(2 * a, 0), (-2 * a, 0), (0, 2 * a), (0, -2 * a)], label="psi5"))
    axis = ((a, 0), (-a, 0), (0, a), (0, -a))
    terms.append(LinkageTerm("odd-power", axis, power=3, norm=10.0, label="psi6"))
    terms.append(LinkageTerm("odd-power", axis, power=5, norm=100.0, label="psi7"))
    return terms


def diagnostic_terms_3d(a: int) -> list:
    axis = []
    for ax in range(3):
        for sign in (1, -1):
            v = [0, 0, 0]
            v[ax] = sign * a
            axis.append(tuple(v))
    face = []
    for ax1, ax2 in ((0, 1), (0, 2), (1, 2)):
        for s1 in (1, -1):
            for s2 in (1, -1):
                v = [0, 0, 0]
                v[ax1], v[ax2] = s1 * a, s2 * a
                face.append(tuple(v))
    terms = [_pair([v], label=f"ax{k}") for k, v in enumerate(axis)]
    terms += [_pair([v], label=f"fd{k}") for k, v in enumerate(face)]
    terms.append(LinkageTerm("odd-power", tuple(axis), power=3, norm=10.0, label="cube"))
    terms.append(LinkageTerm("odd-power", tuple(axis), power=5, norm=100.0, label="fifth"))
    return terms


def diagnostic_basis(hier: LevelHierarchy, level: int) -> BasisSet:
    """Extended basis on a square (2D) or cubic (3D) level, all its sites.

    Levels past ``hier.n`` are allowed; only the site pattern is needed.
    """
    if level < 1 or not hier.is_similar(level):
        raise GeometryError(f"level {level} is not a similar (square/cubic) level")
    a = hier.spacing(level)
    raw = diagnostic_terms_2d(a) if hier.dim == 2 else diagnostic_terms_3d(a)
    terms = merge_duplicates(raw, hier.geom.side)
    return BasisSet(hier.geom, level, "diagnostic", hier.level_sites(level), terms)


def derivative_at(term: LinkageTerm, spins, site: int, geom: LatticeGeometry) -> float:
    """Scalar local derivative of ``term`` at ``site``."""
    s = np.asarray(spins, dtype=float)
    c = geom.coords[site]
    at = lambda v: s[geom.index(c + np.asarray(v))]  # noqa: E731
    if term.kind == "pair":
        return 2.0 * sum(at(v) for v in term.offsets)
    p = term.power
    sigma = lambda w: sum(at(np.asarray(w) + np.asarray(v)) for v in term.offsets)  # noqa: E731
    total = sigma((0,) * geom.dim) ** p
    for v in term.offsets:
        total += at(v) * p * sigma(v) ** (p - 1)
    return total / term.norm


def lattice_polynomial(term: LinkageTerm, spins, sites, geom: LatticeGeometry):
    """``psi(S)`` summed over owning ``sites``; accepts complex spins."""
    s = np.asarray(spins)
    sites = np.asarray(sites)
    if term.kind == "pair":
        partner = sum(s[..., geom.shift(sites, v)] for v in term.offsets)
        return (s[..., sites] * partner).sum(axis=-1)
    sigma = sum(s[..., geom.shift(sites, v)] for v in term.offsets)
    return (s[..., sites] * sigma**term.power).sum(axis=-1) / term.norm
