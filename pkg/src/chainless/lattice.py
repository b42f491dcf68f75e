"""
Periodic hypercubic lattices and their nested decimation hierarchies.

Coordinates are 0-based.  A site with 1-based coordinates ``(i, j[, k])`` maps
to ``(i - 1, j - 1[, k - 1])``.  With this convention the origin belongs to
every level of the hierarchy.

2D levels (``s = 2**(i // 2)``):

* even ``i``: square lattice of spacing ``s`` (coords divisible by ``s``)
* odd ``i``: checkerboard of that square lattice

3D levels (``s = 2**(i // 3)``, coordinates divided by ``s``):

* stage 0: cubic lattice of spacing ``s``
* stage 1: even coordinate sum
* stage 2: all even, or (odd, even, odd)

Every site removed at level ``i`` (the set ``D_i``) only couples through its
stencil to sites of level ``i + 1``, so the removed spins are conditionally
independent given the next level.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

DEFAULT_BASE_SIZE = 16


class GeometryError(ValueError):
    """Raised for lattice sizes or levels the hierarchy does not support."""


def _is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


class LatticeGeometry:
    """Periodic ``side**dim`` lattice with row-major site numbering."""

    def __init__(self, dim: int, side: int):
        if dim not in (2, 3):
            raise GeometryError(f"dim must be 2 or 3, got {dim}")
        if side < 2:
            raise GeometryError(f"side must be >= 2, got {side}")
        self.dim = int(dim)
        self.side = int(side)
        self.shape = (self.side,) * self.dim
        self.n_sites = self.side**self.dim
        self.periodic = True

    def __repr__(self):
        return f"LatticeGeometry(dim={self.dim}, side={self.side})"

    def __eq__(self, other):
        return (
            isinstance(other, LatticeGeometry)
            and other.dim == self.dim
            and other.side == self.side
        )

    def __hash__(self):
        return hash((self.dim, self.side))

    @cached_property
    def coords(self) -> np.ndarray:
        """``(n_sites, dim)`` integer coordinates of every site."""
        grids = np.meshgrid(*[np.arange(self.side)] * self.dim, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def index(self, coords) -> np.ndarray:
        """Site index of (possibly unreduced) coordinates, last axis = dim."""
        c = np.mod(np.asarray(coords), self.side)
        return np.ravel_multi_index(tuple(np.moveaxis(c, -1, 0)), self.shape)

    def shift(self, sites, offset) -> np.ndarray:
        """Site indices of ``sites + offset`` with periodic wrap."""
        return self.index(self.coords[np.asarray(sites)] + np.asarray(offset))

    def axis_offsets(self, spacing: int = 1) -> np.ndarray:
        """The ``2*dim`` axis offsets ``(+-spacing, 0, ...)`` and permutations."""
        out = []
        for ax in range(self.dim):
            for sign in (1, -1):
                v = [0] * self.dim
                v[ax] = sign * spacing
                out.append(v)
        return np.array(out)

    @cached_property
    def neighbors(self) -> np.ndarray:
        """``(n_sites, 2*dim)`` nearest neighbours, ordered as ``axis_offsets``."""
        sites = np.arange(self.n_sites)
        return np.stack([self.shift(sites, v) for v in self.axis_offsets()], axis=1)

    def parity(self) -> np.ndarray:
        """Coordinate-sum parity, the usual two-colouring for even ``side``."""
        return self.coords.sum(axis=1) % 2


def _stage_count(dim: int) -> int:
    return 2 if dim == 2 else 3


def level_scale(dim: int, level: int) -> tuple[int, int]:
    """``(spacing, stage)`` of ``level``."""
    n_stage = _stage_count(dim)
    return 2 ** (level // n_stage), level % n_stage


def level_kind(dim: int, level: int) -> str:
    _, stage = level_scale(dim, level)
    if dim == 2:
        return ("square", "checker")[stage]
    return ("cubic", "fcc", "mixed")[stage]


def in_level(coords, dim: int, level: int) -> np.ndarray:
    """Membership of unreduced integer ``coords`` in the infinite level pattern."""
    c = np.asarray(coords)
    s, stage = level_scale(dim, level)
    on_grid = np.all(c % s == 0, axis=-1)
    x = c // s
    if stage == 0:
        pattern = np.ones(on_grid.shape, dtype=bool)
    elif stage == 1:
        pattern = x.sum(axis=-1) % 2 == 0
    else:
        odd = x % 2 == 1
        all_even = ~odd.any(axis=-1)
        oeo = odd[..., 0] & ~odd[..., 1] & odd[..., 2]
        pattern = all_even | oeo
    return on_grid & pattern


def stencil_offsets(dim: int, level: int) -> np.ndarray:
    """Partner offsets (original units) for sites removed at ``level``."""
    s, stage = level_scale(dim, level)
    if dim == 2:
        if stage == 0:
            base = [(1, 0), (-1, 0), (0, 1), (0, -1)]
        else:
            base = [(1, 1), (1, -1), (-1, 1), (-1, -1)]
    elif stage == 0:
        base = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
    elif stage == 1:
        base = [(0, a, b) for a in (1, -1) for b in (1, -1)]
        base += [(a, b, 0) for a in (1, -1) for b in (1, -1)]
    else:
        base = [(a, 0, b) for a in (1, -1) for b in (1, -1)]
        base += [(a, c, b) for a in (1, -1) for c in (2, -2) for b in (1, -1)]
    return s * np.array(base)


def base_offsets(dim: int, level: int) -> np.ndarray:
    """Partner offsets for the enumerated base level.

    All lattice vectors of the level pattern no longer than the longest
    sampling stencil of the same stage.  For square and cubic levels these are
    the axis neighbours at the level spacing.
    """
    s, _ = level_scale(dim, level)
    radius2 = max(int((v * v).sum()) for v in stencil_offsets(dim, level))
    probe = np.array(list(itertools.product(range(4 * s), repeat=dim)))
    probe = probe[in_level(probe, dim, level)]
    out = []
    for w in itertools.product(range(-3, 4), repeat=dim):
        v = s * np.array(w)
        d2 = int((v * v).sum())
        if d2 == 0 or d2 > radius2:
            continue
        if np.all(in_level(probe + v, dim, level)):
            out.append(v)
    out.sort(key=lambda v: (int((v * v).sum()), tuple(-v)))
    return np.array(out)


@dataclass(frozen=True)
class Stencil:
    """Per-site partner table of one level.

    ``partners[a, t]`` is the partner site of ``sites[a]`` for term ``t``;
    ``mult[t]`` counts how many raw offsets collapsed onto that partner under
    periodic wrap; ``offsets[t]`` lists those raw offsets.
    """

    level: int
    sites: np.ndarray
    partners: np.ndarray
    mult: np.ndarray
    offsets: tuple = field(repr=False)

    @property
    def n_terms(self) -> int:
        return self.partners.shape[1]


def collapse_offsets(offsets: np.ndarray, side: int) -> list[list[np.ndarray]]:
    """Group raw offsets that coincide modulo ``side``, in first-seen order."""
    groups: dict[tuple, list] = {}
    for v in offsets:
        key = tuple(int(x) % side for x in v)
        groups.setdefault(key, []).append(np.array(v))
    return list(groups.values())


def build_stencil(geom: LatticeGeometry, level: int, sites: np.ndarray, offsets) -> Stencil:
    groups = collapse_offsets(np.asarray(offsets), geom.side)
    groups = [g for g in groups if any(x % geom.side for x in g[0])]  # drop self
    partners = np.stack([geom.shift(sites, g[0]) for g in groups], axis=1)
    mult = np.array([len(g) for g in groups])
    offs = tuple(tuple(tuple(int(x) for x in v) for v in g) for g in groups)
    return Stencil(level, sites, partners, mult, offs)


class LevelHierarchy:
    """Nested site sets ``L_0 > L_1 > ... > L_n`` with per-level stencils.

    Parameters
    ----------
    geom : LatticeGeometry
    base_size : int
        Halving stops at the first level with at most this many sites.
    """

    def __init__(self, geom: LatticeGeometry, base_size: int = DEFAULT_BASE_SIZE):
        if not _is_power_of_two(geom.side) or geom.side < 4:
            raise GeometryError(f"side must be a power of 2 and >= 4, got {geom.side}")
        if base_size < 2:
            raise GeometryError("base_size must be >= 2")
        self.geom = geom
        self.dim = geom.dim
        self.base_size = int(base_size)
        self.levels: list[np.ndarray] = [self.level_sites(0)]
        while len(self.levels[-1]) > base_size:
            self.levels.append(self.level_sites(len(self.levels)))
        self.n = len(self.levels) - 1
        self._stencils = [
            build_stencil(geom, i, self.sampled(i), stencil_offsets(self.dim, i))
            for i in range(self.n)
        ]
        self._base = build_stencil(geom, self.n, self.levels[self.n], base_offsets(self.dim, self.n))
        # reverse[a, t] = (b, t2): the same bond seen from the partner's side
        pos = {int(u): a for a, u in enumerate(self._base.sites)}
        keys = [tuple(int(x) % geom.side for x in g[0]) for g in self._base.offsets]
        neg = {k: t for t, k in enumerate(keys)}
        rev = np.zeros(self._base.partners.shape + (2,), dtype=int)
        for a in range(len(self._base.sites)):
            for t, k in enumerate(keys):
                b = pos[int(self._base.partners[a, t])]
                rev[a, t] = (b, neg[tuple((-x) % geom.side for x in k)])
        self.base_reverse = rev

    def __repr__(self):
        return f"LevelHierarchy({self.geom!r}, sizes={self.sizes})"

    @property
    def sizes(self) -> list[int]:
        return [len(s) for s in self.levels]

    def level_sites(self, level: int) -> np.ndarray:
        """Sites of ``L_level``; valid beyond ``n`` for diagnostics."""
        mask = in_level(self.geom.coords, self.dim, level)
        if not mask.any():
            raise GeometryError(f"level {level} is empty at side {self.geom.side}")
        return np.flatnonzero(mask)

    def spacing(self, level: int) -> int:
        return level_scale(self.dim, level)[0]

    def kind(self, level: int) -> str:
        return level_kind(self.dim, level)

    def is_similar(self, level: int) -> bool:
        """True for square (2D) / cubic (3D) levels, similar to ``L_0``."""
        return level_scale(self.dim, level)[1] == 0

    def sampled(self, level: int) -> np.ndarray:
        """``D_i = L_i \\ L_{i+1}`` for ``i < n``."""
        if not 0 <= level < self.n:
            raise GeometryError(f"no sampled set at level {level}")
        nxt = np.zeros(self.geom.n_sites, dtype=bool)
        nxt[self.levels[level + 1]] = True
        cur = self.levels[level]
        return cur[~nxt[cur]]

    def stencil(self, level: int) -> Stencil:
        """Sampling stencil of ``D_level`` (``level < n``) or the base stencil."""
        if level == self.n:
            return self._base
        if not 0 <= level < self.n:
            raise GeometryError(f"level {level} outside 0..{self.n}")
        return self._stencils[level]

    @property
    def base(self) -> Stencil:
        return self._base

    def classify(self, site) -> int:
        """Deepest level of the hierarchy containing ``site`` (index or coords)."""
        if np.ndim(site) > 0:
            site = int(self.geom.index(site))
        return int(self.depth[int(site)])

    @cached_property
    def depth(self) -> np.ndarray:
        d = np.zeros(self.geom.n_sites, dtype=int)
        for i, s in enumerate(self.levels):
            d[s] = i
        return d


def build_hierarchy_2d(side: int, base_size: int = DEFAULT_BASE_SIZE) -> LevelHierarchy:
    return LevelHierarchy(LatticeGeometry(2, side), base_size)


def build_hierarchy_3d(side: int, base_size: int = DEFAULT_BASE_SIZE) -> LevelHierarchy:
    return LevelHierarchy(LatticeGeometry(3, side), base_size)


def build_hierarchy(dim: int, side: int, base_size: int = DEFAULT_BASE_SIZE) -> LevelHierarchy:
    return LevelHierarchy(LatticeGeometry(dim, side), base_size)


def dump_rows(hier: LevelHierarchy):
    """``(level, *coords)`` rows, one per site, for the deepest level holding it."""
    coords = hier.geom.coords
    for site in range(hier.geom.n_sites):
        yield (int(hier.depth[site]), *map(int, coords[site]))
