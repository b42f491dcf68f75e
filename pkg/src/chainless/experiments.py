"""
End-to-end pipelines behind the command-line subcommands.

Each pipeline takes a validated :class:`RunConfig`, writes CSV tables (and
PNG figures next to them) into ``config.output`` and returns a summary dict.
Random streams are keyed by (seed, purpose, temperature index, ...), so a
pipeline's numbers do not depend on the number of workers.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import output
from .basis import diagnostic_basis, sampling_bases
from .bootstrap import BootstrapConfig, run_bootstrap
from .config import ConfigError, RunConfig
from .estimator import (CapPolicy, binder_with_error, cap_sweep, flow_diagnostic, magnetization,
                        pair_moments, tc_bracket)
from .lattice import build_hierarchy
from .model import draw_disorder, ising_couplings, write_disorder
from .reference import geometric_ladder, metropolis_chain, parallel_tempering
from .sampler import BLOCK, ChainlessSampler, WeightedBatch

log = logging.getLogger(__name__)

# stream tags: (purpose, temperature index, ...)
BOOT, EVAL, FREE = 1, 2, 3
EA_LOG_CAP = 30.0
MAX_REDRAWS = 5
PT_LADDER = (0.5, 2.5, 12)


def bootstrap_config(cfg: RunConfig, restrict: bool | None = None) -> BootstrapConfig:
    return BootstrapConfig(initial=cfg.initial_coefficient, iterations=cfg.iterations,
                           samples=cfg.boot_samples, averaging=cfg.averaging,
                           restrict_nonneg=cfg.restrict if restrict is None else restrict,
                           weighted=cfg.weighted)


def _out(cfg: RunConfig, name: str) -> Path:
    d = Path(cfg.output)
    d.mkdir(parents=True, exist_ok=True)
    return d / name


# --------------------------------------------------------------------------
# parallel sampling
# --------------------------------------------------------------------------

def _draw_part(args):
    sampler, n, seed, stream, start = args
    return sampler.draw(n, seed, stream, start)


def draw_parallel(sampler: ChainlessSampler, n: int, seed: int, stream: tuple,
                  workers: int = 1) -> WeightedBatch:
    """Split ``[0, n)`` into block-aligned ranges; identical to a serial draw."""
    if workers <= 1 or n <= BLOCK:
        return sampler.draw(n, seed, stream)
    per = -(-n // workers)
    per = -(-per // BLOCK) * BLOCK
    jobs = [(sampler, min(per, n - a), seed, stream, a) for a in range(0, n, per)]
    with ProcessPoolExecutor(workers) as pool:
        return WeightedBatch.concat(pool.map(_draw_part, jobs))


def _map(fn, items, workers: int):
    if workers <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(workers) as pool:
        return list(pool.map(fn, items))


def prepare_sampler(cfg: RunConfig, couplings, hier, t_index: int, stream_prefix=(),
                    restrict: bool | None = None):
    boot = run_bootstrap(bootstrap_config(cfg, restrict), hier, couplings, cfg.seed,
                         stream=tuple(stream_prefix) + (BOOT, t_index))
    flag = cfg.restrict if restrict is None else restrict
    return ChainlessSampler(boot.table, hier, couplings, flag), boot


def _require(cfg: RunConfig, model: str, dim: int | None = None):
    if cfg.model != model:
        raise ConfigError(f"this command needs model = {model}, got {cfg.model}")
    if dim is not None and cfg.dim != dim:
        raise ConfigError(f"this command needs dim = {dim}, got {cfg.dim}")


# --------------------------------------------------------------------------
# Ising magnetization with a cap sweep
# --------------------------------------------------------------------------

def ising_magnetization(cfg: RunConfig) -> dict:
    _require(cfg, "ising", 2)
    hier = build_hierarchy(2, cfg.N, cfg.base_size)
    policy = CapPolicy(cfg.log_caps)
    rows, summary = [], {"temperatures": []}
    basis_desc = []
    for k, T in enumerate(cfg.temperatures):
        couplings = ising_couplings(hier.geom, T)
        sampler, boot = prepare_sampler(cfg, couplings, hier, k)
        batch = draw_parallel(sampler, cfg.samples, cfg.seed, (EVAL, k), cfg.workers)
        lw = batch.centered()
        rep = cap_sweep(lw, magnetization(batch.spins), policy)
        # |mu| from the same table without the sign restriction
        if cfg.restrict:
            free = ChainlessSampler(boot.table, hier, couplings, False)
            batch = draw_parallel(free, cfg.samples, cfg.seed, (FREE, k), cfg.workers)
        rep_abs = cap_sweep(batch.centered(), np.abs(magnetization(batch.spins)), policy)
        for r, ra in zip(rep.rows, rep_abs.rows):
            rows.append([T, r.log_cap, r.f, r.n_eff, r.mean, r.error, ra.mean, ra.error, ra.f])
        ref = None
        if cfg.metropolis_sweeps:
            ref = metropolis_reference(couplings, cfg.metropolis_sweeps, cfg.seed + k)
        summary["temperatures"].append({
            "T": T, "converged": rep.converged, "mean": rep.final.mean, "error": rep.final.error,
            "abs_mean": rep_abs.final.mean, "abs_error": rep_abs.final.error,
            "f_final": rep.final.f, "abs_converged": rep_abs.converged,
            "log_weight_std": float(lw.std()),
            "bootstrap": boot.report_lines(timing=False), "jettisoned": boot.table.jettison_count,
            "metropolis": ref})
        output.plot_cap_sweep(_out(cfg, f"ising_mag_T{T:g}.png"), rep.rows,
                              f"E[mu], N={cfg.N}, T={T:g}")
        basis_desc = [f"level {i}: {len(b.terms)} pair terms" for i, b in
                      sampling_bases(hier).items()]
    extra = {"mu_columns": "sign-restricted base" if cfg.restrict else "unrestricted base",
             "abs_mu_columns": "unrestricted base"}
    for s in summary["temperatures"]:
        t = s["T"]
        extra[f"T{t:g}.converged"] = s["converged"]
        extra[f"T{t:g}.jettisoned"] = s["jettisoned"]
        for i, line in enumerate(s["bootstrap"], start=1):
            extra[f"T{t:g}.bootstrap{i}"] = line
        if s["metropolis"]:
            extra[f"T{t:g}.metropolis_abs_mu"] = "{:.6g} +- {:.2g}".format(*s["metropolis"])
    header = output.header_block(cfg, extra, basis_desc)
    path = output.write_csv(_out(cfg, "ising_mag.csv"),
                            ["T", "log_W", "f", "n_eff", "mean_mu", "err_mu", "mean_abs_mu",
                             "err_abs_mu", "f_abs"], rows, header)
    summary["csv"] = str(path)
    return summary


def metropolis_reference(couplings, sweeps: int, seed: int, n_chains: int = 8):
    """``(E[|mu|], error)`` from independent Metropolis chains."""
    burn = sweeps // 5
    rec, _ = metropolis_chain(couplings, sweeps, seed, n_chains=n_chains, burn_in=burn,
                              observable=lambda s: np.abs(s.mean(axis=1)))
    per_chain = np.array(rec).mean(axis=0)
    return float(per_chain.mean()), float(per_chain.std(ddof=1) / np.sqrt(n_chains))


# --------------------------------------------------------------------------
# weight histogram
# --------------------------------------------------------------------------

def weight_histogram(cfg: RunConfig) -> dict:
    hier = build_hierarchy(cfg.dim, cfg.N, cfg.base_size)
    T = cfg.temperatures[0]
    if cfg.model == "ising":
        couplings = ising_couplings(hier.geom, T)
    else:
        couplings = draw_disorder(disorder_seed(cfg.seed, 0, 0), hier.geom, T)
    sampler, boot = prepare_sampler(cfg, couplings, hier, 0)
    batch = draw_parallel(sampler, cfg.samples, cfg.seed, (EVAL, 0), cfg.workers)
    lw = batch.centered()
    counts, edges = np.histogram(lw, bins=cfg.bins)
    header = output.header_block(cfg, {"log_weight_mean": float(lw.mean()),
                                       "log_weight_std": float(lw.std()),
                                       "jettisoned": boot.table.jettison_count})
    path = output.write_csv(_out(cfg, "weights_hist.csv"), ["bin_left", "count"],
                            zip(edges[:-1].tolist(), counts.tolist()), header)
    output.plot_histogram(_out(cfg, "weights_hist.png"), edges, counts,
                          f"log weights, {cfg.model} N={cfg.N}, T={T:g}")
    return {"csv": str(path), "std": float(lw.std()), "mean": float(lw.mean()),
            "occupied_bins": int((counts > 0).sum())}


# --------------------------------------------------------------------------
# flow diagnostics
# --------------------------------------------------------------------------

def default_levels(hier) -> list:
    """Similar levels with spacing at most half the lattice side."""
    step = hier.dim
    out = []
    i = step
    while hier.spacing(i) <= hier.geom.side // 2:
        out.append(i)
        i += step
    return out


def _flow_one(args):
    cfg, hier, couplings, levels, statistic, stream = args
    sampler, boot = prepare_sampler(cfg, couplings, hier, stream[-1], stream[:-1])
    batch = sampler.draw(cfg.samples, cfg.seed, tuple(stream[:-1]) + (EVAL, stream[-1]))
    weights = np.exp(batch.centered()) if cfg.weighted else None
    res = flow_diagnostic(hier, batch.spins, couplings, levels, statistic, weights)
    return res, boot.table.jettison_count


def ising_flow(cfg: RunConfig) -> dict:
    _require(cfg, "ising", 2)
    hier = build_hierarchy(2, cfg.N, cfg.base_size)
    levels = list(cfg.levels) or [2, 4, 6]
    jobs = [(cfg, hier, ising_couplings(hier.geom, T), levels, "sum", (k,))
            for k, T in enumerate(cfg.temperatures)]
    results = _map(_flow_one, jobs, cfg.workers)
    rows, verdicts, values = [], [], []
    for T, (res, jett) in zip(cfg.temperatures, results):
        verdicts.append(res.verdict)
        values.append(res.values)
        for lv, v, j in zip(res.levels, res.values, res.jettisoned):
            rows.append([T, lv, "sum", float(v), 0.0, res.verdict, j])
    bracket = tc_bracket(cfg.temperatures, verdicts)
    extra = {"bracket": "none" if bracket is None else f"{bracket[0]:g} {bracket[1]:g}"}
    if bracket:
        extra["tc_midpoint"] = 0.5 * (bracket[0] + bracket[1])
    basis = [x for lv in levels for x in diagnostic_basis(hier, lv).describe()]
    header = output.header_block(cfg, extra, basis)
    path = output.write_csv(_out(cfg, "ising_flow.csv"),
                            ["T", "level", "statistic", "value", "scatter", "verdict",
                             "jettisoned"], rows, header)
    output.plot_flow(_out(cfg, "ising_flow.png"), cfg.temperatures, levels, np.array(values),
                     f"Ising N={cfg.N}: coefficient sums")
    return {"csv": str(path), "verdicts": dict(zip(cfg.temperatures, verdicts)),
            "values": {T: v.tolist() for T, v in zip(cfg.temperatures, values)},
            "bracket": bracket}


def ea_flow(cfg: RunConfig) -> dict:
    _require(cfg, "ea", 3)
    hier = build_hierarchy(3, cfg.N, cfg.base_size)
    levels = list(cfg.levels) or default_levels(hier)
    rows, verdicts, means = [], [], []
    for k, T in enumerate(cfg.temperatures):
        jobs = [(cfg, hier, draw_disorder(disorder_seed(cfg.seed, r, 0), hier.geom, T), levels,
                 "sum-abs", (r, k)) for r in range(cfg.realizations)]
        results = _map(_flow_one, jobs, cfg.workers)
        vals = np.array([res.values for res, _ in results])
        mean = vals.mean(axis=0)
        scatter = (vals.std(axis=0, ddof=1) / np.sqrt(len(vals)) if len(vals) > 1
                   else np.full(len(levels), np.nan))
        d = np.diff(mean)
        verdict = "growth" if np.all(d > 0) else "decay" if np.all(d < 0) else "mixed"
        verdicts.append(verdict)
        means.append(mean)
        jett = sum(j for _, j in results)
        for lv, m, s in zip(levels, mean, scatter):
            rows.append([T, lv, "sum-abs", float(m), float(s), verdict, jett])
    bifurcation = "growth" in verdicts and "decay" in verdicts
    basis = [x for lv in levels for x in diagnostic_basis(hier, lv).describe()]
    header = output.header_block(cfg, {"bifurcation": bifurcation}, basis)
    path = output.write_csv(_out(cfg, "ea_flow.csv"),
                            ["T", "level", "statistic", "value", "scatter", "verdict",
                             "jettisoned"], rows, header)
    output.plot_flow(_out(cfg, "ea_flow.png"), cfg.temperatures, levels, np.array(means),
                     f"EA N={cfg.N}: sums of |coefficients|")
    return {"csv": str(path), "verdicts": dict(zip(cfg.temperatures, verdicts)),
            "values": {T: m.tolist() for T, m in zip(cfg.temperatures, means)},
            "bifurcation": bifurcation}


# --------------------------------------------------------------------------
# EA Binder ratio
# --------------------------------------------------------------------------

def disorder_seed(seed: int, realization: int, attempt: int) -> int:
    ss = np.random.SeedSequence([seed, realization, attempt])
    return int(ss.generate_state(1, np.uint32)[0])


MOMENT_COLUMNS = ["realization", "attempt", "disorder_seed", "T", "q2", "q4", "f", "n_eff",
                  "jettisoned"]


def _ea_realization(args):
    """All temperatures of one realization; redrawn when a projection alarms."""
    cfg, hier, r, temps = args
    for attempt in range(MAX_REDRAWS):
        dseed = disorder_seed(cfg.seed, r, attempt)
        rows, failed = [], False
        for k, T in temps:
            couplings = draw_disorder(dseed, hier.geom, T)
            sampler, boot = prepare_sampler(cfg, couplings, hier, k, (r, attempt), restrict=False)
            if boot.alarm:
                failed = True
                break
            batch = sampler.draw(cfg.samples, cfg.seed, (r, attempt, EVAL, k))
            m = pair_moments(batch.spins, batch.centered(), EA_LOG_CAP)
            rows.append([r, attempt, dseed, T, m.q2, m.q4, m.f, m.n_eff,
                         boot.table.jettison_count])
        if not failed:
            return rows
        log.warning("realization %d attempt %d: excess jettisoning, redrawing", r, attempt)
    raise RuntimeError(f"realization {r}: {MAX_REDRAWS} disorder draws all failed")


def _restart_key(cfg: RunConfig) -> list[str]:
    skip = ("output", "workers", "realizations", "pt_sweeps", "temperatures")
    return ["# config " + x for x in cfg.echo() if x.split(" = ")[0] not in skip]


def load_moments(path: Path, cfg: RunConfig) -> list:
    if not path.exists():
        return []
    head, rows = output.read_csv(path)
    if [h for h in head if h.startswith("# config ")] != _restart_key(cfg):
        raise ConfigError(f"{path} was written with a different configuration")
    return [[int(r["realization"]), int(r["attempt"]), int(r["disorder_seed"]), r["T"],
             r["q2"], r["q4"], r["f"], r["n_eff"], int(r["jettisoned"])] for r in rows]


def ea_binder(cfg: RunConfig) -> dict:
    _require(cfg, "ea", 3)
    hier = build_hierarchy(3, cfg.N, cfg.base_size)
    moments_path = _out(cfg, "ea_moments.csv")
    done = load_moments(moments_path, cfg)
    have = {(row[0], row[3]) for row in done}
    temps = list(enumerate(cfg.temperatures))
    todo = []
    for r in range(cfg.realizations):
        missing = [(k, T) for k, T in temps if (r, T) not in have]
        if len(missing) == len(temps):
            todo.append((cfg, hier, r, temps))
        elif missing:
            # keep a realization's disorder: redo it whole if partially stored
            done = [row for row in done if row[0] != r]
            todo.append((cfg, hier, r, temps))
    if todo:
        new_rows = []
        if cfg.workers <= 1:
            for job in todo:
                rows = _ea_realization(job)
                new_rows += rows
                _write_moments(moments_path, cfg, sorted(done + new_rows))
        else:
            with ProcessPoolExecutor(cfg.workers) as pool:
                for rows in pool.map(_ea_realization, todo):
                    new_rows += rows
                    _write_moments(moments_path, cfg, sorted(done + new_rows))
        done = sorted(done + new_rows)
    redraws = len({row[0] for row in done if row[1] > 0 and row[0] < cfg.realizations})
    arr = [row for row in done if row[0] < cfg.realizations]
    result_rows, curves = [], {}
    g_all, e_all = [], []
    for T in cfg.temperatures:
        sel = [row for row in arr if row[3] == T]
        q2 = np.array([row[4] for row in sel])
        q4 = np.array([row[5] for row in sel])
        g, err = binder_with_error(q2, q4)
        g_all.append(g)
        e_all.append(err)
        result_rows.append(["chainless", cfg.N, T, g, err, len(sel)])
    curves["chainless"] = (g_all, e_all)
    summary = {"g": dict(zip(cfg.temperatures, g_all)), "err": dict(zip(cfg.temperatures, e_all)),
               "redrawn": redraws, "moments": str(moments_path)}
    if cfg.pt_sweeps:
        pt = pt_baseline(cfg, hier, arr)
        g_pt, e_pt = [], []
        for T in cfg.temperatures:
            k = pt.at(T)
            g, err = binder_with_error(pt.q2[:, k], pt.q4[:, k])
            g_pt.append(g)
            e_pt.append(err)
            result_rows.append(["pt", cfg.N, T, g, err, pt.q2.shape[0]])
        curves["pt"] = (g_pt, e_pt)
        summary["g_pt"] = dict(zip(cfg.temperatures, g_pt))
        summary["swap_acceptance"] = pt.swap_acceptance.tolist()
    extra = {"log_cap": EA_LOG_CAP, "pairing": "all distinct pairs", "redrawn_realizations":
             redraws, "pt_ladder": "geometric {} {} {} plus targets".format(*PT_LADDER)}
    header = output.header_block(cfg, extra)
    path = output.write_csv(_out(cfg, "ea_binder.csv"),
                            ["method", "N", "T", "g", "err", "realizations"], result_rows,
                            header)
    output.plot_binder(_out(cfg, "ea_binder.png"), cfg.temperatures, curves,
                       f"Binder ratio, EA N={cfg.N}")
    summary["csv"] = str(path)
    return summary


def _write_moments(path: Path, cfg: RunConfig, rows):
    output.write_csv(path, MOMENT_COLUMNS, rows, output.header_block() + _restart_key(cfg))


def pt_baseline(cfg: RunConfig, hier, moment_rows):
    """Parallel tempering over the realizations' final disorder draws."""
    seeds = {}
    for row in moment_rows:
        seeds[row[0]] = row[2]
    couplings = [draw_disorder(seeds[r], hier.geom, 1.0) for r in sorted(seeds)]
    ladder = geometric_ladder(*PT_LADDER, include=cfg.temperatures)
    return parallel_tempering(couplings, ladder, cfg.pt_sweeps, cfg.seed)


def write_disorder_files(cfg: RunConfig, directory) -> list:
    """Dump every realization's bonds (used for provenance)."""
    geom = build_hierarchy(3, cfg.N, cfg.base_size).geom
    out = []
    for r in range(cfg.realizations):
        c = draw_disorder(disorder_seed(cfg.seed, r, 0), geom, cfg.temperatures[0])
        p = Path(directory) / f"disorder_{r:04d}.txt"
        write_disorder(p, c)
        out.append(p)
    return out
