"""CSV tables with a provenance header, and figures rendered next to them."""

from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from . import __version__


def header_block(config=None, extra: dict | None = None, basis: list | None = None) -> list[str]:
    lines = [f"chainless version {__version__}"]
    if config is not None:
        lines.append(f"seed = {config.seed}")
        lines += ["config " + x for x in config.echo()]
    for key, val in (extra or {}).items():
        lines.append(f"{key} = {val}")
    for b in basis or []:
        lines.append("basis " + b)
    return ["# " + x for x in lines]


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def write_csv(path, columns: list, rows, header: list | None = None) -> Path:
    """Write ``rows`` under a ``#`` header block.  Floats keep full precision."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    for line in header or []:
        buf.write(line + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    path.write_text(buf.getvalue())
    return path


def read_csv(path) -> tuple[list, list[dict]]:
    """``(header_lines, rows)``; numeric-looking fields come back as float."""
    text = Path(path).read_text().splitlines()
    head = [x for x in text if x.startswith("#")]
    body = [x for x in text if not x.startswith("#")]
    rows = []
    for rec in csv.DictReader(body):
        out = {}
        for k, v in rec.items():
            try:
                out[k] = float(v)
            except (TypeError, ValueError):
                out[k] = v
        rows.append(out)
    return head, rows


# --------------------------------------------------------------------------
# figures
# --------------------------------------------------------------------------

def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_cap_sweep(path, rows, title: str = "") -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    x = [r.log_cap for r in rows]
    ax.errorbar(x, [r.mean for r in rows], yerr=[r.error for r in rows], marker="o", ms=3)
    ax.set_xlabel("log W")
    ax.set_ylabel("capped mean")
    ax2 = ax.twinx()
    ax2.plot(x, [r.f for r in rows], color="tab:red", ls="--", lw=1)
    ax2.set_ylabel("f", color="tab:red")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_histogram(path, edges, counts, title: str = "") -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.stairs(counts, edges, fill=True)
    ax.set_xlabel("log w (centered)")
    ax.set_ylabel("count")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_flow(path, temperatures, levels, values, title: str = "") -> Path:
    """``values[t, l]``: statistic at temperature ``t`` and level ``l``."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for t, row in zip(temperatures, values):
        ax.plot(levels, row, marker="o", label=f"T={t:g}")
    ax.set_xlabel("level")
    ax.set_ylabel("coefficient statistic")
    ax.set_xticks(list(levels))
    ax.legend(fontsize=7)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_binder(path, temperatures, curves: dict, title: str = "") -> Path:
    """``curves[label] = (g, err)`` arrays over ``temperatures``."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, (g, err) in curves.items():
        ax.errorbar(temperatures, g, yerr=err, marker="o", ms=3, label=label, capsize=2)
    ax.set_xlabel("T")
    ax.set_ylabel("g")
    ax.legend(fontsize=8)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
