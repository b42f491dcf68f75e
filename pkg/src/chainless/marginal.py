"""
Approximate marginal Hamiltonians by projection of the level-0 derivative.

For a site ``u`` retained at level ``i`` the exact marginal satisfies

    dW_i/ds_u = E[dW0/ds_u | L_i]

and the conditional expectation is approximated by the least-squares
projection onto the basis derivatives ``phi_p(u)``:

    A_pq = E[phi_p phi_q],   b_p = E[dW0/ds_u * phi_p],   a = A^{-1} b.

The same full-lattice samples feed every level and the target is always the
level-0 derivative.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .basis import BasisSet, sampling_bases
from .lattice import LevelHierarchy
from .model import CouplingField
from .reference import EnumerationOracle, index_to_spins

log = logging.getLogger(__name__)

RCOND_MIN = 1e-10
JETTISON_ALARM = 0.05


class ProjectionSystem:
    """Running sums of the per-site normal equations of one basis.

    Accumulators add: merging two systems equals accumulating both streams.
    """

    def __init__(self, basis: BasisSet):
        k, m = len(basis.sites), basis.size
        self.basis = basis
        self.A_sum = np.zeros((k, m, m))
        self.b_sum = np.zeros((k, m))
        self.weight = 0.0
        self.count = 0

    def add(self, spins, target, weights=None) -> "ProjectionSystem":
        """Add samples; ``target`` is ``dW0/ds`` at the basis sites, ``(S, k)``."""
        phi = self.basis.derivatives(spins)
        target = np.asarray(target, dtype=float)
        if weights is None:
            self.A_sum += np.einsum("skp,skq->kpq", phi, phi)
            self.b_sum += np.einsum("sk,skp->kp", target, phi)
            self.weight += phi.shape[0]
        else:
            w = np.asarray(weights, dtype=float)
            self.A_sum += np.einsum("s,skp,skq->kpq", w, phi, phi)
            self.b_sum += np.einsum("s,sk,skp->kp", w, target, phi)
            self.weight += float(w.sum())
        self.count += phi.shape[0]
        return self

    def merge(self, other: "ProjectionSystem") -> "ProjectionSystem":
        out = ProjectionSystem(self.basis)
        out.A_sum = self.A_sum + other.A_sum
        out.b_sum = self.b_sum + other.b_sum
        out.weight = self.weight + other.weight
        out.count = self.count + other.count
        return out

    @property
    def A(self) -> np.ndarray:
        self._require()
        return self.A_sum / self.weight

    @property
    def b(self) -> np.ndarray:
        self._require()
        return self.b_sum / self.weight

    def _require(self):
        if self.count == 0 or self.weight <= 0:
            raise ValueError(f"no samples accumulated for level {self.basis.level}")


def accumulate_projection(samples, hier: LevelHierarchy, bases: dict, couplings: CouplingField,
                          weights=None, systems: dict | None = None) -> dict:
    """Accumulate the normal equations of every basis from one spin batch."""
    spins = np.asarray(samples)
    if spins.ndim != 2 or spins.shape[0] == 0:
        raise ValueError("need a non-empty (n_samples, n_sites) spin batch")
    systems = systems if systems is not None else {lv: ProjectionSystem(b) for lv, b in bases.items()}
    for lv, basis in bases.items():
        target = couplings.site_derivative(spins, basis.sites)
        systems[lv].add(spins, target, weights)
    return systems


def solve_system(system: ProjectionSystem, rcond_min: float = RCOND_MIN):
    """Per-site ``A a = b``; near-singular sites get zeros and a jettison flag."""
    A, b = system.A, system.b
    k, m = b.shape
    coef = np.zeros((k, m))
    finite = np.isfinite(A).all(axis=(1, 2)) & np.isfinite(b).all(axis=1)
    with np.errstate(all="ignore"):
        cond = np.full(k, np.inf)
        cond[finite] = np.linalg.cond(A[finite])
    ok = finite & np.isfinite(cond) & (1.0 / cond >= rcond_min)
    if ok.any():
        coef[ok] = np.linalg.solve(A[ok], b[ok][..., None])[..., 0]
    return coef, ~ok


@dataclass
class CoefficientTable:
    """Fitted coefficients of the sampling Hamiltonians ``W_1 ... W_n``.

    ``coef[i]`` is ``(len(stencil(i).sites), n_terms)`` for level ``i``;
    ``coef[0]`` is unused (level 0 samples from the model itself).
    """

    hier: LevelHierarchy
    coef: list
    jettisoned: list
    meta: dict = field(default_factory=dict)

    @classmethod
    def constant(cls, hier: LevelHierarchy, value: float) -> "CoefficientTable":
        coef = [None] + [np.full(hier.stencil(i).partners.shape, float(value))
                         for i in range(1, hier.n + 1)]
        jett = [None] + [np.zeros(len(hier.stencil(i).sites), dtype=bool)
                         for i in range(1, hier.n + 1)]
        return cls(hier, coef, jett)

    def copy(self) -> "CoefficientTable":
        return CoefficientTable(
            self.hier,
            [None if c is None else c.copy() for c in self.coef],
            [None if j is None else j.copy() for j in self.jettisoned],
            dict(self.meta),
        )

    @property
    def jettison_count(self) -> int:
        return int(sum(j.sum() for j in self.jettisoned[1:]))

    @property
    def site_count(self) -> int:
        return int(sum(len(j) for j in self.jettisoned[1:]))

    def field_weights(self, level: int) -> np.ndarray:
        """Multipliers of partner spins in the conditional field at ``level``."""
        return 2.0 * self.hier.stencil(level).mult * self.coef[level]

    def base_matrix(self) -> np.ndarray:
        """``M`` with ``W_n = s^T M s`` over the base sites."""
        st = self.hier.base
        pos = {int(u): a for a, u in enumerate(st.sites)}
        k = len(st.sites)
        M = np.zeros((k, k))
        c = self.coef[self.hier.n]
        for a in range(k):
            for t in range(st.n_terms):
                M[a, pos[int(st.partners[a, t])]] += st.mult[t] * c[a, t]
        return M

    def flat(self) -> np.ndarray:
        return np.concatenate([c.ravel() for c in self.coef[1:]]) if self.hier.n else np.zeros(0)

    def check_finite(self) -> None:
        for i, c in enumerate(self.coef[1:], start=1):
            if c.shape != self.hier.stencil(i).partners.shape:
                raise ValueError(f"level {i}: coefficient shape {c.shape} does not match stencil")
            if not np.isfinite(c).all():
                raise ValueError(f"level {i}: non-finite coefficients")


def solve_coefficients(systems: dict, hier: LevelHierarchy, rcond_min: float = RCOND_MIN,
                       alarm: float = JETTISON_ALARM) -> CoefficientTable:
    table = CoefficientTable.constant(hier, 0.0)
    for lv in range(1, hier.n + 1):
        table.coef[lv], table.jettisoned[lv] = solve_system(systems[lv], rcond_min)
    frac = table.jettison_count / max(table.site_count, 1)
    table.meta["jettisoned"] = table.jettison_count
    table.meta["samples"] = int(systems[1].count) if hier.n else 0
    if frac > alarm:
        log.warning("jettisoned %d of %d projection systems (%.1f%%)",
                    table.jettison_count, table.site_count, 100 * frac)
        table.meta["jettison_alarm"] = True
    return table


def symmetrize(table: CoefficientTable) -> CoefficientTable:
    """Replace both endpoint estimates of every base bond by their mean.

    Sampling levels keep their coefficients: there the owning site of every
    bond is unambiguous.  The endpoint correlation is stored in ``meta``.
    """
    out = table.copy()
    hier = table.hier
    if hier.n == 0:
        return out
    c = table.coef[hier.n]
    rev = hier.base_reverse
    other = c[rev[..., 0], rev[..., 1]]
    out.coef[hier.n] = 0.5 * (c + other)
    x, y = c.ravel(), other.ravel()
    if x.std() > 0 and y.std() > 0:
        out.meta["endpoint_correlation"] = float(np.corrcoef(x, y)[0, 1])
    else:
        out.meta["endpoint_correlation"] = float("nan")
    return out


def estimate_table(spins, hier: LevelHierarchy, couplings: CouplingField, weights=None,
                   rcond_min: float = RCOND_MIN) -> CoefficientTable:
    """Accumulate, solve and symmetrize in one call."""
    bases = sampling_bases(hier)
    systems = accumulate_projection(spins, hier, bases, couplings, weights)
    return symmetrize(solve_coefficients(systems, hier, rcond_min))


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------

def write_table(path, table: CoefficientTable, header: dict | None = None) -> None:
    hier = table.hier
    lines = [f"# dim={hier.dim} N={hier.geom.side} base_size={hier.base_size} n={hier.n}"]
    for key, val in (header or {}).items():
        lines.append(f"# {key}={val}")
    for key, val in table.meta.items():
        lines.append(f"# meta.{key}={val}")
    for lv in range(1, hier.n + 1):
        st = hier.stencil(lv)
        lines.append(f"# level {lv} terms: " + " ".join(
            "[" + ";".join(",".join(map(str, v)) for v in offs) + "]" for offs in st.offsets))
    lines.append("level,coords,term,value,jettisoned")
    coords = hier.geom.coords
    for lv in range(1, hier.n + 1):
        st = hier.stencil(lv)
        for a, u in enumerate(st.sites):
            c = " ".join(map(str, coords[u]))
            j = int(table.jettisoned[lv][a])
            for t in range(st.n_terms):
                lines.append(f"{lv},{c},{t},{float(table.coef[lv][a, t])!r},{j}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_table(path, hier: LevelHierarchy) -> CoefficientTable:
    """Load a table written by :func:`write_table`, validating it against ``hier``."""
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith("# dim="):
        raise ValueError(f"{path}: not a coefficient table")
    meta = dict(tok.split("=", 1) for tok in text[0][2:].split())
    if (int(meta["dim"]), int(meta["N"]), int(meta["n"])) != (hier.dim, hier.geom.side, hier.n):
        raise ValueError(f"{path}: table does not match hierarchy {hier!r}")
    table = CoefficientTable.constant(hier, np.nan)
    pos = [None] + [{int(u): a for a, u in enumerate(hier.stencil(i).sites)}
                    for i in range(1, hier.n + 1)]
    for line in text:
        if line.startswith("#") or line.startswith("level,") or not line.strip():
            continue
        try:
            lv, c, t, val, j = line.split(",")
            lv, t = int(lv), int(t)
            a = pos[lv][int(hier.geom.index([int(x) for x in c.split()]))]
            table.coef[lv][a, t] = float(val)
            table.jettisoned[lv][a] = bool(int(j))
        except (ValueError, KeyError, IndexError) as exc:
            raise ValueError(f"{path}: bad row {line!r}") from exc
    table.check_finite()
    return table


# --------------------------------------------------------------------------
# exact marginals by enumeration
# --------------------------------------------------------------------------

class ExactMarginals:
    """Exact marginals ``W_i`` on every level of a small lattice.

    ``W[i]`` is indexed by the bit pattern of the ``L_i`` spins (bit ``a`` set
    means spin ``levels[i][a]`` is ``-1``).
    """

    def __init__(self, hier: LevelHierarchy, couplings: CouplingField):
        self.hier = hier
        self.couplings = couplings
        self.oracle = EnumerationOracle(couplings)
        self.W0 = self.oracle.log_weights
        bits = self.oracle.bits
        self.keys = []
        self.W = []
        shift = self.W0.max()
        e = np.exp(self.W0 - shift)
        for sites in hier.levels:
            key = (bits[:, sites].astype(np.int64) << np.arange(len(sites))).sum(axis=1)
            tot = np.bincount(key, weights=e, minlength=2 ** len(sites))
            self.keys.append(key)
            with np.errstate(divide="ignore"):
                self.W.append(np.log(tot) + shift)
        self.log_z = float(np.logaddexp.reduce(self.W0))

    def log_marginal(self, level: int) -> np.ndarray:
        """Normalized log-probability of every ``L_level`` state."""
        return self.W[level] - self.log_z

    def conditional_derivative(self, level: int, site: int) -> np.ndarray:
        """``E[dW0/ds_site | L_level]`` for every ``L_level`` state."""
        d = self.couplings.site_derivative(self.oracle.spins(), [site])[:, 0]
        e = np.exp(self.W0 - self.W0.max())
        n = 2 ** len(self.hier.levels[level])
        num = np.bincount(self.keys[level], weights=e * d, minlength=n)
        den = np.bincount(self.keys[level], weights=e, minlength=n)
        return num / den

    def marginal_derivative(self, level: int, site: int, step: float = 1e-20) -> np.ndarray:
        """``dW_level/ds_site`` by complex step on the log-sum over eliminated spins."""
        spins = self.oracle.spins().astype(complex)
        spins[:, site] += 1j * step
        w = self.couplings.log_density(spins)
        shift = w.real.max()
        n = 2 ** len(self.hier.levels[level])
        e = np.exp(w - shift)
        tot = (np.bincount(self.keys[level], weights=e.real, minlength=n)
               + 1j * np.bincount(self.keys[level], weights=e.imag, minlength=n))
        return np.log(tot).imag / step

    def fitted_table(self) -> CoefficientTable:
        """Basis coefficients from exact expectations (reference values)."""
        bases = sampling_bases(self.hier)
        spins = self.oracle.spins()
        p = np.exp(self.W0 - self.log_z)
        systems = accumulate_projection(spins, self.hier, bases, self.couplings, weights=p)
        return symmetrize(solve_coefficients(systems, self.hier))

    def draw(self, n_samples: int, rng: np.random.Generator):
        """Exact samples drawn level by level from the joint conditionals.

        Returns ``(spins, log_p0)``; ``log_p0`` equals ``W0 - log Z``.
        """
        hier = self.hier
        spins = np.zeros((n_samples, hier.geom.n_sites), dtype=np.int8)
        lp = self.log_marginal(hier.n)
        idx = rng.choice(len(lp), size=n_samples, p=np.exp(lp))
        log_p0 = lp[idx].copy()
        spins[:, hier.levels[hier.n]] = index_to_spins(idx, len(hier.levels[hier.n]))
        for i in range(hier.n - 1, -1, -1):
            cur = hier.levels[i]
            d_pos = np.flatnonzero(np.isin(cur, hier.sampled(i)))
            r_pos = np.flatnonzero(~np.isin(cur, hier.sampled(i)))
            nxt_bits = ((1 - spins[:, cur[r_pos]]) // 2).astype(np.int64)
            key_fixed = (nxt_bits << r_pos).sum(axis=1)
            cand = np.arange(2 ** len(d_pos))
            cand_bits = (cand[:, None] >> np.arange(len(d_pos))) & 1
            key_cand = (cand_bits.astype(np.int64) << d_pos).sum(axis=1)
            keys = key_fixed[:, None] + key_cand[None, :]
            logits = self.W[i][keys]
            logits -= np.logaddexp.reduce(logits, axis=1, keepdims=True)
            cum = np.cumsum(np.exp(logits), axis=1)
            u = rng.random(n_samples)[:, None]
            choice = np.minimum((cum < u).sum(axis=1), cum.shape[1] - 1)
            log_p0 += logits[np.arange(n_samples), choice]
            spins[:, cur[d_pos]] = 1 - 2 * cand_bits[choice]
        return spins, log_p0
