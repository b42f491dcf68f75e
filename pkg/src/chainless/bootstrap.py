"""
Fixed-point iteration for the coefficient table.

The sampler needs coefficients and the coefficients need samples.  Starting
from a constant table, each round draws samples with the current table,
re-projects, and (by default) averages old and new coefficients.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .basis import sampling_bases
from .lattice import LevelHierarchy
from .marginal import (JETTISON_ALARM, RCOND_MIN, CoefficientTable, accumulate_projection,
                       solve_coefficients, symmetrize)
from .model import CouplingField
from .sampler import ChainlessSampler

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BootstrapConfig:
    initial: float = 0.3
    iterations: int = 2
    samples: int = 1000
    averaging: bool = True
    restrict_nonneg: bool = False
    weighted: bool = False  # experimental: importance-weighted projections
    rcond_min: float = RCOND_MIN

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("bootstrap needs at least one iteration")
        if self.samples < 1:
            raise ValueError("bootstrap needs at least one sample per iteration")


@dataclass
class IterationRecord:
    iteration: int
    delta_norm: float
    jettisoned: int
    seconds: float


@dataclass
class BootstrapResult:
    table: CoefficientTable
    report: list = field(default_factory=list)

    @property
    def alarm(self) -> bool:
        """True when any iteration jettisoned more than the alarm fraction of sites."""
        limit = JETTISON_ALARM * max(self.table.site_count, 1)
        return any(r.jettisoned > limit for r in self.report)

    def report_lines(self, timing: bool = True) -> list[str]:
        out = []
        for r in self.report:
            line = f"iteration={r.iteration} delta_norm={r.delta_norm:.6g} jettisoned={r.jettisoned}"
            out.append(line + (f" seconds={r.seconds:.3f}" if timing else ""))
        return out


def averaged_update(old: CoefficientTable, new: CoefficientTable) -> CoefficientTable:
    out = new.copy()
    for i in range(1, old.hier.n + 1):
        out.coef[i] = 0.5 * (old.coef[i] + new.coef[i])
    return out


def run_bootstrap(config: BootstrapConfig, hier: LevelHierarchy, couplings: CouplingField,
                  seed: int, stream: tuple = (), initial_table: CoefficientTable | None = None,
                  bases: dict | None = None) -> BootstrapResult:
    """Iterate sample -> project -> solve -> symmetrize ``config.iterations`` times.

    Iteration ``r`` draws from stream ``stream + (1, r)``; evaluation runs
    should use a different stream prefix.
    """
    bases = bases if bases is not None else sampling_bases(hier)
    table = (initial_table.copy() if initial_table is not None
             else CoefficientTable.constant(hier, config.initial))
    result = BootstrapResult(table)
    if hier.n == 0:
        return result
    for r in range(1, config.iterations + 1):
        t0 = time.perf_counter()
        sampler = ChainlessSampler(table, hier, couplings, config.restrict_nonneg)
        batch = sampler.draw(config.samples, seed, stream=tuple(stream) + (1, r))
        weights = np.exp(batch.centered()) if config.weighted else None
        systems = accumulate_projection(batch.spins, hier, bases, couplings, weights)
        new = symmetrize(solve_coefficients(systems, hier, config.rcond_min, JETTISON_ALARM))
        nxt = averaged_update(table, new) if config.averaging else new
        delta = float(np.linalg.norm(nxt.flat() - table.flat()))
        result.report.append(IterationRecord(r, delta, new.jettison_count,
                                             time.perf_counter() - t0))
        table = nxt
    deltas = [rec.delta_norm for rec in result.report]
    if len(deltas) > 1 and deltas[-1] > deltas[-2]:
        log.info("bootstrap change norm grew: %s", ", ".join(f"{d:.3g}" for d in deltas))
    table.meta["bootstrap_iterations"] = config.iterations
    table.meta["bootstrap_samples"] = config.samples
    result.table = table
    return result
