"""
Chainless sampling: enumerate the base level, then fill in the removed
sites level by level from their (conditionally independent) local fields.

Every sample carries ``log_p0``, the log-probability with which the sampler
produced it, and ``log_weight = W0(S) - log_p0``.  Nothing is ever formed
outside log space.

Random numbers come in fixed blocks of :data:`BLOCK` samples, each block
with its own ``SeedSequence`` child keyed by ``(stream..., block index)``.
A sample therefore depends only on the seed, the stream key and its index,
not on how a run is chunked or parallelised.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .lattice import LevelHierarchy
from .marginal import CoefficientTable
from .model import CouplingField
from .reference import index_to_spins, spins_to_index

BLOCK = 64
MAX_BASE_SITES = 16
CHUNK_ELEMENTS = 1 << 17


@dataclass
class BaseLevelDistribution:
    sites: np.ndarray
    log_prob: np.ndarray  # over state index, -inf where restricted away
    restricted: bool

    @property
    def n_states(self) -> int:
        return len(self.log_prob)

    def states(self) -> np.ndarray:
        return index_to_spins(np.arange(self.n_states), len(self.sites))


def build_base_distribution(table: CoefficientTable | None, hier: LevelHierarchy,
                            couplings: CouplingField | None = None,
                            restrict_nonneg: bool = False) -> BaseLevelDistribution:
    """Exact categorical law of the base spins under ``W_n``.

    With ``hier.n == 0`` the base level is the whole lattice and the model
    itself is enumerated.  ``restrict_nonneg`` keeps only states whose spin sum
    is ``>= 0``.
    """
    sites = hier.levels[hier.n]
    k = len(sites)
    if k > MAX_BASE_SITES:
        raise ValueError(f"base level has {k} sites (> {MAX_BASE_SITES})")
    states = index_to_spins(np.arange(2**k), k).astype(float)
    if hier.n == 0:
        if couplings is None:
            raise ValueError("an unrefined hierarchy samples the model; pass couplings")
        w = couplings.log_density(states)
    else:
        M = table.base_matrix()
        w = np.einsum("sa,ab,sb->s", states, M, states)
    if restrict_nonneg:
        w = np.where(states.sum(axis=1) >= 0, w, -np.inf)
    log_prob = w - np.logaddexp.reduce(w)
    return BaseLevelDistribution(sites, log_prob, restrict_nonneg)


@dataclass
class WeightedBatch:
    """A batch of independent samples with their log sampling weights."""

    spins: np.ndarray  # (S, n_sites) int8
    log_p0: np.ndarray
    log_weight: np.ndarray  # W0 - log_p0, not centred

    def __len__(self):
        return len(self.log_p0)

    def centered(self) -> np.ndarray:
        return center_log_weights(self.log_weight)

    @classmethod
    def concat(cls, batches) -> "WeightedBatch":
        batches = list(batches)
        return cls(np.concatenate([b.spins for b in batches]),
                   np.concatenate([b.log_p0 for b in batches]),
                   np.concatenate([b.log_weight for b in batches]))


def center_log_weights(log_weight) -> np.ndarray:
    """Shift log-weights to zero mean (fixes the unknown normalisation)."""
    lw = np.asarray(log_weight, dtype=float)
    if lw.size == 0:
        raise ValueError("empty batch")
    return lw - lw.mean()


def uniforms(seed: int, stream: tuple, start: int, count: int, width: int) -> np.ndarray:
    """Per-sample uniform rows ``[start, start + count)`` of a keyed stream."""
    out = np.empty((count, width))
    b0, b1 = start // BLOCK, (start + count - 1) // BLOCK
    row = 0
    for b in range(b0, b1 + 1):
        ss = np.random.SeedSequence(seed, spawn_key=tuple(stream) + (b,))
        block = np.random.default_rng(ss).random((BLOCK, width))
        lo = max(start - b * BLOCK, 0)
        hi = min(start + count - b * BLOCK, BLOCK)
        out[row:row + hi - lo] = block[lo:hi]
        row += hi - lo
    return out


def _level_field(spins_t, table, hier, couplings, level):
    """Conditional field at the sampled sites of ``level``; site-major ``(k, S)``."""
    st = hier.stencil(level)
    if level == 0:
        nb = hier.geom.neighbors[st.sites]
        h = np.einsum("kts,kt->ks", spins_t[nb], couplings.local[st.sites])
        return h + couplings.field if couplings.field else h
    return np.einsum("kts,kt->ks", spins_t[st.partners], table.field_weights(level))


def _log_density_t(spins_t, couplings):
    plus = couplings.geom.neighbors[:, 0::2]
    w = np.einsum("is,ias,ia->s", spins_t, spins_t[plus], couplings.values)
    if couplings.field:
        w = w + couplings.field * spins_t.sum(axis=0)
    return w


def _fill(table, hier, couplings, base, u):
    """Draw spins from pre-drawn uniforms ``u`` (one column per site + base).

    Works site-major internally: gathers of partner spins then read
    contiguous rows, which keeps the cost per sample linear in the site count.
    """
    u_t = np.ascontiguousarray(u.T)
    S = u.shape[0]
    spins_t = np.zeros((hier.geom.n_sites, S))
    cdf = np.cumsum(np.exp(base.log_prob))
    idx = np.minimum(np.searchsorted(cdf, u_t[-1] * cdf[-1], side="right"), base.n_states - 1)
    # never land on a restricted (zero-mass) state
    idx = _nearest_allowed(idx, base.log_prob)
    spins_t[base.sites] = index_to_spins(idx, len(base.sites)).T
    log_p0 = base.log_prob[idx].copy()
    for level in range(hier.n - 1, -1, -1):
        h = _level_field(spins_t, table, hier, couplings, level)
        if not np.isfinite(h).all():
            raise FloatingPointError(f"non-finite conditional field at level {level}")
        sites = hier.stencil(level).sites
        s = np.where(u_t[sites] < expit(2.0 * h), 1.0, -1.0)
        spins_t[sites] = s
        log_p0 -= np.logaddexp(0.0, -2.0 * h * s).sum(axis=0)
    log_w = _log_density_t(spins_t, couplings) - log_p0
    return spins_t.T.astype(np.int8), log_p0, log_w


def _nearest_allowed(idx, log_prob):
    bad = ~np.isfinite(log_prob[idx])
    if bad.any():
        allowed = np.flatnonzero(np.isfinite(log_prob))
        idx = idx.copy()
        idx[bad] = allowed[np.minimum(np.searchsorted(allowed, idx[bad]), len(allowed) - 1)]
    return idx


def draw_samples(table: CoefficientTable | None, hier: LevelHierarchy, couplings: CouplingField,
                 base: BaseLevelDistribution, n_samples: int, seed: int,
                 stream: tuple = (0,), start: int = 0, chunk: int | None = None) -> WeightedBatch:
    """Draw samples ``start .. start + n_samples - 1`` of a stream."""
    if n_samples <= 0:
        raise ValueError("n_samples must be positive")
    width = hier.geom.n_sites + 1
    if chunk is None:
        chunk = max(BLOCK, (CHUNK_ELEMENTS // width) // BLOCK * BLOCK)
    parts = []
    for a in range(start, start + n_samples, chunk):
        cnt = min(chunk, start + n_samples - a)
        u = uniforms(seed, stream, a, cnt, width)
        parts.append(WeightedBatch(*_fill(table, hier, couplings, base, u)))
    return WeightedBatch.concat(parts)


def draw_sample(table, hier, couplings, base, seed: int, index: int = 0, stream=(0,)):
    b = draw_samples(table, hier, couplings, base, 1, seed, stream, start=index)
    return b.spins[0], float(b.log_p0[0]), float(b.log_weight[0])


def log_sampling_prob(spins, table: CoefficientTable | None, hier: LevelHierarchy,
                      couplings: CouplingField, base: BaseLevelDistribution) -> np.ndarray:
    """``log P0`` of given configurations under the sampler."""
    spins = np.atleast_2d(np.asarray(spins, dtype=np.int8))
    lp = base.log_prob[spins_to_index(spins[:, base.sites])].copy()
    spins_t = np.ascontiguousarray(spins.T, dtype=float)
    for level in range(hier.n - 1, -1, -1):
        h = _level_field(spins_t, table, hier, couplings, level)
        s = spins_t[hier.stencil(level).sites]
        lp -= np.logaddexp(0.0, -2.0 * h * s).sum(axis=0)
    return lp


class ChainlessSampler:
    """A fitted table plus its base distribution, ready to draw."""

    def __init__(self, table: CoefficientTable | None, hier: LevelHierarchy,
                 couplings: CouplingField, restrict_nonneg: bool = False):
        if table is not None:
            table.check_finite()
        self.table = table
        self.hier = hier
        self.couplings = couplings
        self.base = build_base_distribution(table, hier, couplings, restrict_nonneg)

    def draw(self, n_samples: int, seed: int, stream=(0,), start: int = 0) -> WeightedBatch:
        return draw_samples(self.table, self.hier, self.couplings, self.base,
                            n_samples, seed, stream, start)

    def log_prob(self, spins) -> np.ndarray:
        return log_sampling_prob(spins, self.table, self.hier, self.couplings, self.base)
