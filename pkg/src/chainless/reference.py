"""
Baselines: exact enumeration, single-site Metropolis and parallel tempering.

All chains are vectorized over a leading "chain" axis and use the
checkerboard colouring, which is exact for near-neighbour couplings on
lattices of even side.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import CouplingField

MAX_ENUM_SPINS = 24


def index_to_spins(idx, n: int) -> np.ndarray:
    """Spins of state ``idx``: bit ``j`` set means spin ``j`` is ``-1``."""
    bits = (np.asarray(idx, dtype=np.int64)[..., None] >> np.arange(n)) & 1
    return (1 - 2 * bits).astype(np.int8)


def spins_to_index(spins) -> np.ndarray:
    s = np.asarray(spins)
    bits = ((1 - s) // 2).astype(np.int64)
    return (bits << np.arange(s.shape[-1])).sum(axis=-1)


class EnumerationOracle:
    """Every state of a small lattice with its exact probability."""

    def __init__(self, couplings: CouplingField, max_spins: int = MAX_ENUM_SPINS):
        n = couplings.geom.n_sites
        if n > max_spins:
            raise ValueError(f"{n} spins exceed the enumeration ceiling of {max_spins}")
        self.couplings = couplings
        self.n_spins = n
        self.n_states = 2**n
        chunk = 1 << 16
        self.log_weights = np.concatenate([
            couplings.log_density(index_to_spins(np.arange(a, min(a + chunk, self.n_states)), n))
            for a in range(0, self.n_states, chunk)
        ])
        self.log_z = float(np.logaddexp.reduce(self.log_weights))
        self.log_prob = self.log_weights - self.log_z

    @property
    def bits(self) -> np.ndarray:
        return ((np.arange(self.n_states)[:, None] >> np.arange(self.n_spins)) & 1).astype(np.uint8)

    def spins(self) -> np.ndarray:
        return index_to_spins(np.arange(self.n_states), self.n_spins)

    @property
    def prob(self) -> np.ndarray:
        return np.exp(self.log_prob)


def exact_expectation(oracle: EnumerationOracle, observable) -> float:
    """``sum_states P(state) * observable(state)``; ``observable`` maps a spin batch."""
    total = 0.0
    chunk = 1 << 16
    for a in range(0, oracle.n_states, chunk):
        idx = np.arange(a, min(a + chunk, oracle.n_states))
        vals = np.asarray(observable(index_to_spins(idx, oracle.n_spins)), dtype=float)
        total += float(np.dot(np.exp(oracle.log_prob[idx]), vals))
    return total


# --------------------------------------------------------------------------
# Metropolis
# --------------------------------------------------------------------------

class _Checkerboard:
    def __init__(self, geom):
        if geom.side % 2:
            raise ValueError("checkerboard updates need an even lattice side")
        par = geom.parity()
        self.colors = [np.flatnonzero(par == c) for c in (0, 1)]
        self.nb = [geom.neighbors[c] for c in self.colors]


def _half_sweep(spins, color, nb, local, beta, field, rng):
    """One Metropolis pass over the sites of one colour.

    ``local``: raw couplings to neighbours, ``(..., n_color, 2*dim)``;
    ``beta``: ``(C,)``.
    """
    s_nb = spins[:, nb]
    h = beta[:, None] * np.einsum("cik,cik->ci", s_nb, local) + field
    s = spins[:, color]
    d_w = -2.0 * s * h
    accept = np.log(rng.random(s.shape)) < d_w
    spins[:, color] = np.where(accept, -s, s)
    return accept


def metropolis_sweeps(spins, local_raw, beta, field, n_sweeps: int, rng, geom, callback=None):
    """Run ``n_sweeps`` checkerboard sweeps in place on a ``(C, n)`` batch.

    ``local_raw`` is ``(C, n, 2*dim)`` (or broadcastable ``(1, n, 2*dim)``).
    ``callback(sweep, spins)`` is called after every sweep.  Returns the mean
    acceptance rate.
    """
    cb = _Checkerboard(geom)
    beta = np.asarray(beta, dtype=float)
    locs = [np.broadcast_to(local_raw[:, c], (spins.shape[0],) + local_raw[:, c].shape[1:])
            for c in cb.colors]
    spins_f = spins.astype(float)
    acc = 0.0
    for sweep in range(n_sweeps):
        for c in (0, 1):
            acc += _half_sweep(spins_f, cb.colors[c], cb.nb[c], locs[c], beta, field, rng).mean()
        if callback is not None:
            callback(sweep, spins_f)
    spins[:] = spins_f.astype(spins.dtype)
    return acc / (2 * max(n_sweeps, 1))


def metropolis_chain(couplings: CouplingField, sweeps: int, seed: int, n_chains: int = 1,
                     field0: float = 0.0, burn_in: int = 0, thin: int = 1, observable=None):
    """Single-site Metropolis at the couplings' temperature.

    ``field0`` adds ``beta * field0 / N`` per spin to the log-density.  Returns
    ``(records, acceptance)``: one entry per recorded sweep, holding either the
    ``(n_chains, n_sites)`` spins or ``observable(spins)``.
    """
    geom = couplings.geom
    rng = np.random.default_rng(seed)
    spins = rng.choice(np.array([-1, 1], dtype=np.int8), size=(n_chains, geom.n_sites))
    local = couplings.local_raw[None]
    beta = np.full(n_chains, couplings.beta)
    field = couplings.beta * field0 / geom.side + couplings.field
    records = []

    def record(sweep, s):
        if sweep >= burn_in and (sweep - burn_in) % thin == 0:
            records.append(observable(s) if observable else s.astype(np.int8))

    acc = metropolis_sweeps(spins, local, beta, field, sweeps, rng, geom, record)
    return records, acc


# --------------------------------------------------------------------------
# parallel tempering
# --------------------------------------------------------------------------

def geometric_ladder(t_min: float, t_max: float, n: int, include=()) -> np.ndarray:
    temps = set(np.round(np.geomspace(t_min, t_max, n), 10))
    temps.update(float(t) for t in include)
    return np.array(sorted(temps))


@dataclass
class PTResult:
    temperatures: np.ndarray
    q2: np.ndarray  # (n_realizations, n_temps) thermal <q^2>
    q4: np.ndarray
    swap_acceptance: np.ndarray  # (n_temps - 1,)
    n_measurements: int

    def at(self, temperature: float) -> int:
        k = int(np.argmin(np.abs(self.temperatures - temperature)))
        if abs(self.temperatures[k] - temperature) > 1e-9:
            raise KeyError(f"temperature {temperature} not on the ladder")
        return k


def parallel_tempering(raw_couplings: list, temperatures, sweeps: int, seed: int,
                       burn_in: int | None = None, swap_every: int = 1) -> PTResult:
    """Replica exchange for a list of disorder realizations, two copies each.

    ``raw_couplings`` are :class:`CouplingField` objects; only their ``raw``
    bonds are used.  The overlap of the two independent copies at every
    ladder temperature gives the thermal ``<q^2>``, ``<q^4>``.
    """
    geom = raw_couplings[0].geom
    temps = np.asarray(temperatures, dtype=float)
    n_real, n_t, n = len(raw_couplings), len(temps), geom.n_sites
    burn_in = sweeps // 4 if burn_in is None else burn_in
    rng = np.random.default_rng(seed)
    local = np.stack([c.local_raw for c in raw_couplings])
    shape = (n_real, 2, n_t)
    C = n_real * 2 * n_t
    spins = rng.choice(np.array([-1.0, 1.0]), size=(C, n))
    local_c = np.repeat(local, 2 * n_t, axis=0)
    # slot -> ladder position; configurations move between slots on swaps
    beta_ladder = 1.0 / temps
    beta = np.tile(beta_ladder, n_real * 2)
    plus = geom.neighbors[:, 0::2]
    raw_plus = np.repeat(np.stack([c.raw for c in raw_couplings]), 2 * n_t, axis=0)
    cb = _Checkerboard(geom)
    locs = [local_c[:, c] for c in cb.colors]
    q2 = np.zeros((n_real, n_t))
    q4 = np.zeros((n_real, n_t))
    n_meas = 0
    swaps_try = np.zeros(n_t - 1)
    swaps_acc = np.zeros(n_t - 1)
    for sweep in range(sweeps):
        for c in (0, 1):
            _half_sweep(spins, cb.colors[c], cb.nb[c], locs[c], beta, 0.0, rng)
        if n_t > 1 and sweep % swap_every == 0:
            w = (spins[:, :, None] * spins[:, plus] * raw_plus).sum(axis=(1, 2)).reshape(shape)
            sp = spins.reshape(shape + (n,))
            start = sweep // swap_every % 2
            for k in range(start, n_t - 1, 2):
                delta = (beta_ladder[k] - beta_ladder[k + 1]) * (w[..., k + 1] - w[..., k])
                acc = np.log(rng.random(delta.shape)) < delta
                swaps_try[k] += acc.size
                swaps_acc[k] += acc.sum()
                a, b = sp[..., k, :].copy(), sp[..., k + 1, :].copy()
                sp[..., k, :] = np.where(acc[..., None], b, a)
                sp[..., k + 1, :] = np.where(acc[..., None], a, b)
            spins = sp.reshape(C, n)
        if sweep >= burn_in:
            sp = spins.reshape(shape + (n,))
            q = (sp[:, 0] * sp[:, 1]).mean(axis=-1)
            q2 += q**2
            q4 += q**4
            n_meas += 1
    with np.errstate(invalid="ignore"):
        rate = swaps_acc / swaps_try
    return PTResult(temps, q2 / n_meas, q4 / n_meas, rate, n_meas)
