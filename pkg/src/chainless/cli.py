"""
Command-line entry point.

Every subcommand reads an optional ``--config`` file of ``key = value``
lines; flags override file values, and the ``CHAINLESS_SEED`` environment
variable overrides the file seed but not ``--seed``.

Exit codes: 0 success, 1 configuration error, 2 validation failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__, experiments, output, validation
from .config import ConfigError, RunConfig, load_config
from .lattice import GeometryError, build_hierarchy, dump_rows

EXIT_OK, EXIT_CONFIG, EXIT_VALIDATION = 0, 1, 2

# subcommand -> defaults that differ from RunConfig
COMMAND_DEFAULTS = {
    "ising-mag": {},
    "ising-flow": {"temperatures": (2.0, 2.1, 2.2, 2.25, 2.3, 2.35, 2.4, 2.6), "samples": 10_000},
    "weights-hist": {"samples": 10_000},
    "ea-binder": {"model": "ea", "dim": 3, "N": 4, "temperatures": (0.9, 1.5, 2.0, 2.5),
                  "samples": 2000},
    "ea-flow": {"model": "ea", "dim": 3, "N": 8, "temperatures": (0.6, 1.0, 2.0),
                "samples": 2000, "realizations": 10},
    "lattice-dump": {},
    "validate": {},
}

# flag name, config key, type, help
FLAGS = [
    ("--model", "model", str, "ising or ea"),
    ("--dim", "dim", int, "lattice dimension (2 or 3)"),
    ("--N", "N", int, "lattice side, a power of two"),
    ("--temperatures", "temperatures", str, "list 'a,b,c' or range 'start:stop:step'"),
    ("--samples", "samples", int, "production samples per temperature"),
    ("--a0", "a0", float, "initial coefficient of the bootstrap"),
    ("--iterations", "iterations", int, "bootstrap iterations"),
    ("--boot-samples", "boot_samples", int, "samples per bootstrap iteration"),
    ("--averaging", "averaging", str, "average successive bootstrap tables (true/false)"),
    ("--log-caps", "log_caps", str, "cap grid on the log scale"),
    ("--restrict", "restrict", str, "restrict the base level to non-negative magnetization"),
    ("--weighted", "weighted", str, "weight projections by importance weights"),
    ("--seed", "seed", int, "master seed"),
    ("--realizations", "realizations", int, "disorder realizations"),
    ("--base-size", "base_size", int, "largest level sampled by enumeration"),
    ("--levels", "levels", str, "diagnostic levels"),
    ("--bins", "bins", int, "histogram bins"),
    ("--metropolis-sweeps", "metropolis_sweeps", int, "Metropolis reference sweeps (0: off)"),
    ("--pt-sweeps", "pt_sweeps", int, "parallel tempering sweeps (0: off)"),
    ("--workers", "workers", int, "worker processes"),
    ("--output", "output", str, "output directory"),
]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chainless",
                                     description="Chainless sampling of Ising-type models.")
    parser.add_argument("--version", action="version", version=f"chainless {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "ising-mag": "2D Ising magnetization with a cap sweep",
        "ising-flow": "2D Ising coefficient flow and critical bracket",
        "weights-hist": "histogram of log importance weights",
        "ea-binder": "3D Edwards-Anderson Binder ratio",
        "ea-flow": "3D Edwards-Anderson coefficient flow",
        "lattice-dump": "level membership of every site",
        "validate": "oracle suites on enumerable lattices",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("--config", type=Path, help="file of 'key = value' lines")
        for flag, key, typ, h in FLAGS:
            p.add_argument(flag, dest=key, type=typ, default=None, help=h)
        if name == "validate":
            p.add_argument("--suite", choices=sorted(validation.SUITES), action="append",
                           help="run only these suites")
    return parser


def resolve_config(args, env=None) -> RunConfig:
    overrides = {key: getattr(args, key) for _, key, _, _ in FLAGS}
    base = RunConfig().with_updates(**COMMAND_DEFAULTS[args.command])
    return load_config(args.config, overrides, base=base, env=env)


def _lattice_dump(cfg: RunConfig) -> int:
    hier = build_hierarchy(cfg.dim, cfg.N, cfg.base_size)
    coords = ["x", "y", "z"][:cfg.dim]
    header = output.header_block(cfg, {"levels": hier.n + 1, "sizes": hier.sizes})
    path = output.write_csv(Path(cfg.output) / "lattice.csv", ["level"] + coords,
                            dump_rows(hier), header)
    print(f"wrote {path}")
    return EXIT_OK


def _validate(cfg: RunConfig, suites) -> int:
    names = suites or list(validation.SUITES)
    ok = True
    for name in names:
        res = validation.run_suite(name, cfg.seed)
        print(res.line())
        ok &= res.passed
    return EXIT_OK if ok else EXIT_VALIDATION


def _print_summary(command: str, res: dict) -> None:
    if command == "ising-mag":
        for s in res["temperatures"]:
            print(f"T={s['T']:g} E[mu]={s['mean']:.5f}+-{s['error']:.5f} "
                  f"E[|mu|]={s['abs_mean']:.5f}+-{s['abs_error']:.5f} "
                  f"converged={s['converged']}")
    elif command in ("ising-flow", "ea-flow"):
        for T, v in res["verdicts"].items():
            vals = " ".join(f"{x:.4g}" for x in res["values"][T])
            print(f"T={T:g} {v} [{vals}]")
        if "bracket" in res:
            print(f"bracket={res['bracket']}")
        if "bifurcation" in res:
            print(f"bifurcation={res['bifurcation']}")
    elif command == "ea-binder":
        for T, g in res["g"].items():
            line = f"T={T:g} g={g:.4f}+-{res['err'][T]:.4f}"
            if "g_pt" in res:
                line += f" g_pt={res['g_pt'][T]:.4f}"
            print(line)
    elif command == "weights-hist":
        print(f"log-weight std={res['std']:.4g} occupied bins={res['occupied_bins']}")
    if "csv" in res:
        print(f"wrote {res['csv']}")


RUNNERS = {
    "ising-mag": experiments.ising_magnetization,
    "ising-flow": experiments.ising_flow,
    "weights-hist": experiments.weight_histogram,
    "ea-binder": experiments.ea_binder,
    "ea-flow": experiments.ea_flow,
}


def main(argv=None, env=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args, env)
        if args.command == "lattice-dump":
            return _lattice_dump(cfg)
        if args.command == "validate":
            return _validate(cfg, args.suite)
        res = RUNNERS[args.command](cfg)
    except (ConfigError, GeometryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    _print_summary(args.command, res)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
