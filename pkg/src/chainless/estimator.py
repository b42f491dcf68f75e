"""
Weighted estimates with capped ("layered") weights, observables and the
renormalization-flow diagnostic.

Weights enter only through centered log-weights.  A cap ``W`` is given as
``log W`` on the centered scale, so ``w' = min(w, W)`` becomes
``lw' = min(lw, log W)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .basis import diagnostic_basis
from .lattice import GeometryError, LevelHierarchy
from .marginal import RCOND_MIN, accumulate_projection, solve_system

DEFAULT_CAPS = tuple(range(2, 52, 2))


@dataclass(frozen=True)
class CapPolicy:
    log_caps: tuple = DEFAULT_CAPS

    def __post_init__(self):
        caps = np.asarray(self.log_caps, dtype=float)
        if caps.size == 0 or np.any(np.diff(caps) <= 0):
            raise ValueError("cap grid must be non-empty and strictly increasing")

    @classmethod
    def uncapped(cls) -> "CapPolicy":
        return cls((np.inf,))


@dataclass
class CappedEstimate:
    log_cap: float
    mean: float
    error: float
    f: float
    n_eff: float


@dataclass
class CapReport:
    rows: list
    converged: bool
    n_samples: int

    @property
    def final(self) -> CappedEstimate:
        return self.rows[-1]

    def first_below(self, f_max: float) -> CappedEstimate | None:
        """The first row (smallest cap) whose capped fraction is ``<= f_max``."""
        return next((r for r in self.rows if r.f <= f_max), None)


def capped_weighted_mean(log_weight, values, log_cap: float = np.inf) -> CappedEstimate:
    """Capped importance-weighted mean of ``values``.

    ``f`` counts samples with ``w >= W``; the effective count is
    ``N_W + sum_{w < W} w / W`` with ``W`` no larger than the largest weight,
    so it falls from ``N`` toward ``sum w / max w`` as the cap rises.
    """
    lw = np.asarray(log_weight, dtype=float)
    h = np.asarray(values, dtype=float)
    if lw.size == 0:
        raise ValueError("empty batch")
    if h.shape != lw.shape:
        raise ValueError("values and weights differ in length")
    lwc = np.minimum(lw, log_cap)
    top = lwc.max()
    w = np.exp(lwc - top)
    mean = float(np.dot(w, h) / w.sum())
    capped = lw >= log_cap
    # effective count in units of the cap; a cap above every weight acts as the largest weight
    ref = min(log_cap, top)
    n_eff = float(np.exp(lwc - ref).sum())
    var = float(np.dot(w, (h - mean) ** 2) / w.sum())
    err = np.sqrt(var / n_eff) if n_eff > 0 else np.inf
    return CappedEstimate(float(log_cap), mean, float(err), float(capped.mean()), n_eff)


def cap_sweep(log_weight, values, policy: CapPolicy = CapPolicy()) -> CapReport:
    """Capped means over the cap grid; converged when the last two agree."""
    rows = [capped_weighted_mean(log_weight, values, c) for c in policy.log_caps]
    if len(rows) >= 2:
        a, b = rows[-2], rows[-1]
        converged = abs(a.mean - b.mean) <= np.hypot(a.error, b.error) and b.f <= a.f
        # a flat tail is only meaningful once the cap stops binding
        converged = converged and b.f == 0.0
    else:
        converged = rows[0].f == 0.0
    return CapReport(rows, bool(converged), len(np.asarray(log_weight)))


# --------------------------------------------------------------------------
# accumulation
# --------------------------------------------------------------------------

@dataclass
class ObservableAccumulator:
    """Running weighted sums; merging equals accumulating both streams."""

    sw: float = 0.0
    swh: float = 0.0
    swh2: float = 0.0
    sw2: float = 0.0
    count: int = 0

    def add(self, values, weights=None) -> "ObservableAccumulator":
        h = np.asarray(values, dtype=float).ravel()
        w = np.ones_like(h) if weights is None else np.asarray(weights, dtype=float).ravel()
        self.sw += float(w.sum())
        self.swh += float(np.dot(w, h))
        self.swh2 += float(np.dot(w, h * h))
        self.sw2 += float(np.dot(w, w))
        self.count += h.size
        return self

    def merge(self, other: "ObservableAccumulator") -> "ObservableAccumulator":
        return ObservableAccumulator(self.sw + other.sw, self.swh + other.swh,
                                     self.swh2 + other.swh2, self.sw2 + other.sw2,
                                     self.count + other.count)

    @property
    def mean(self) -> float:
        if self.count == 0:
            raise ValueError("empty accumulator")
        return self.swh / self.sw

    @property
    def error(self) -> float:
        var = max(self.swh2 / self.sw - self.mean**2, 0.0)
        n_eff = self.sw**2 / self.sw2
        return float(np.sqrt(var / n_eff))


# --------------------------------------------------------------------------
# observables
# --------------------------------------------------------------------------

def magnetization(spins) -> np.ndarray:
    return np.asarray(spins, dtype=float).mean(axis=-1)


def overlap(spins1, spins2) -> np.ndarray:
    a, b = np.asarray(spins1, dtype=float), np.asarray(spins2, dtype=float)
    if a.shape[-1] != b.shape[-1]:
        raise ValueError("overlap of configurations on different lattices")
    return (a * b).mean(axis=-1)


@dataclass
class ThermalMoments:
    """Weighted ``<q^2>``, ``<q^4>`` of one disorder realization at one T."""

    q2: float
    q4: float
    n_pairs: int
    f: float = 0.0
    n_eff: float = float("nan")
    jettisoned: int = 0


def pair_moments(spins, log_weight, log_cap: float = np.inf, pairing: str = "all",
                 chunk: int = 1024) -> ThermalMoments:
    """Thermal q-moments of one realization from pairs of weighted samples.

    Each sample is capped individually and a pair weighs the product of its
    two weights.  ``pairing="all"`` uses every pair ``i != j`` of distinct
    (hence independent) draws; ``"disjoint"`` uses ``(0,1), (2,3), ...`` only.
    """
    spins = np.asarray(spins, dtype=float)
    lw_raw = np.asarray(log_weight, dtype=float)
    lw = np.minimum(lw_raw, log_cap)
    n = len(lw)
    if n < 2:
        raise ValueError("need at least two samples for an overlap")
    f = float((lw_raw >= log_cap).mean())
    w = np.exp(lw - lw.max())
    if pairing == "disjoint":
        k = n // 2
        q = overlap(spins[0:2 * k:2], spins[1:2 * k:2])
        wp = w[0:2 * k:2] * w[1:2 * k:2]
        wp = wp / wp.sum()
        return ThermalMoments(float(np.dot(wp, q**2)), float(np.dot(wp, q**4)), k, f,
                              float(1.0 / np.dot(wp, wp)))
    if pairing != "all":
        raise ValueError(f"unknown pairing {pairing!r}")
    m = spins.shape[1]
    s2 = s4 = sw = sw2 = 0.0
    for a in range(0, n, chunk):
        q = spins[a:a + chunk] @ spins.T / m
        wp = w[a:a + chunk, None] * w[None, :]
        rows = np.arange(a, min(a + chunk, n))
        wp[rows - a, rows] = 0.0  # drop i == j
        q2 = q * q
        s2 += float((wp * q2).sum())
        s4 += float((wp * q2 * q2).sum())
        sw += float(wp.sum())
        sw2 += float((wp * wp).sum())
    # ordered pairs count each unordered pair twice; ratios are unaffected
    return ThermalMoments(s2 / sw, s4 / sw, n * (n - 1) // 2, f, 0.5 * sw * sw / sw2)


def binder_ratio(q2, q4) -> float:
    """``g = 0.5 * (3 - [<q^4>] / [<q^2>]^2)`` from per-realization moments."""
    q2 = np.atleast_1d(np.asarray(q2, dtype=float))
    q4 = np.atleast_1d(np.asarray(q4, dtype=float))
    return float(0.5 * (3.0 - q4.mean() / q2.mean() ** 2))


def binder_with_error(q2, q4, n_groups: int = 10) -> tuple[float, float]:
    """Disorder-averaged ``g`` and its error from the scatter over groups.

    Realizations are split into ``n_groups`` consecutive groups, each acting
    as an independent repeated run.
    """
    q2, q4 = np.asarray(q2, dtype=float), np.asarray(q4, dtype=float)
    if q2.size < 2:
        raise ValueError("disorder-averaged g needs at least two realizations")
    g = binder_ratio(q2, q4)
    n_groups = min(n_groups, q2.size)
    parts = np.array_split(np.arange(q2.size), n_groups)
    gs = np.array([binder_ratio(q2[p], q4[p]) for p in parts])
    err = float(gs.std(ddof=1) / np.sqrt(n_groups)) if n_groups > 1 else float("nan")
    return g, err


# --------------------------------------------------------------------------
# flow diagnostic
# --------------------------------------------------------------------------

@dataclass
class FlowResult:
    levels: list
    statistic: str
    values: np.ndarray  # per level
    coefficients: list = field(default_factory=list)  # per level, site-averaged
    jettisoned: list = field(default_factory=list)

    @property
    def verdict(self) -> str:
        d = np.diff(self.values)
        if np.all(d > 0):
            return "growth"
        if np.all(d < 0):
            return "decay"
        return "mixed"


def flow_diagnostic(hier: LevelHierarchy, spins, couplings, levels, statistic: str = "sum",
                    weights=None, rcond_min: float = RCOND_MIN) -> FlowResult:
    """Extended-basis coefficients on mutually similar levels.

    Every level is projected from the same full-lattice samples; per-site
    coefficient vectors are averaged over sites (jettisoned sites excluded)
    and reduced by ``sum`` or ``sum-abs`` over terms.
    """
    if statistic not in ("sum", "sum-abs"):
        raise ValueError(f"unknown statistic {statistic!r}")
    levels = list(levels)
    if not all(hier.is_similar(lv) for lv in levels):
        raise GeometryError(f"levels {levels} are not all square/cubic")
    bases = {lv: diagnostic_basis(hier, lv) for lv in levels}
    systems = accumulate_projection(spins, hier, bases, couplings, weights)
    values, coefs, jett = [], [], []
    for lv in levels:
        coef, bad = solve_system(systems[lv], rcond_min)
        # a merged term's coefficient is already the sum over its identified members
        mean = coef[~bad].mean(axis=0) if (~bad).any() else np.zeros(coef.shape[1])
        coefs.append(mean)
        jett.append(int(bad.sum()))
        values.append(mean.sum() if statistic == "sum" else np.abs(mean).sum())
    return FlowResult(levels, statistic, np.array(values), coefs, jett)


def tc_bracket(temperatures, verdicts) -> tuple[float, float] | None:
    """Largest growth temperature below the smallest decay temperature above it."""
    t = np.asarray(temperatures, dtype=float)
    v = np.asarray(verdicts)
    order = np.argsort(t)
    t, v = t[order], v[order]
    grow = t[v == "growth"]
    decay = t[v == "decay"]
    if grow.size == 0 or decay.size == 0:
        return None
    lo = grow.max()
    above = decay[decay > lo]
    if above.size == 0:
        return None
    return float(lo), float(above.min())
