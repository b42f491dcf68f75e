"""
Flat ``key = value`` run configuration.

Every key has a type and a default; values are validated before any
computation starts and the resolved configuration is echoed into every
output header.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields, replace
from pathlib import Path

SEED_ENV = "CHAINLESS_SEED"


class ConfigError(ValueError):
    pass


def _floats(text) -> tuple:
    if isinstance(text, (tuple, list)):
        return tuple(float(x) for x in text)
    text = str(text).strip()
    if ":" in text:
        # start:stop:step, stop inclusive
        a, b, s = (float(x) for x in text.split(":"))
        n = int(round((b - a) / s)) + 1
        return tuple(round(a + i * s, 10) for i in range(n))
    return tuple(float(x) for x in text.replace(",", " ").split())


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class RunConfig:
    model: str = "ising"
    dim: int = 2
    N: int = 16
    temperatures: tuple = (2.2,)
    samples: int = 1000
    a0: float | None = None  # None: 0.3 for ising, 0.0 for ea
    iterations: int = 2
    boot_samples: int = 1000
    averaging: bool = True
    log_caps: tuple = tuple(float(x) for x in range(2, 52, 2))
    restrict: bool = True
    weighted: bool = False
    seed: int = 0
    realizations: int = 100
    base_size: int = 16
    levels: tuple = ()
    bins: int = 40
    metropolis_sweeps: int = 0
    pt_sweeps: int = 0
    workers: int = 1
    output: str = "results"

    _CONVERT = {
        "model": str, "dim": int, "N": int, "temperatures": _floats, "samples": int,
        "a0": float, "iterations": int, "boot_samples": int, "averaging": _bool,
        "log_caps": _floats, "restrict": _bool, "weighted": _bool, "seed": int,
        "realizations": int, "base_size": int,
        "levels": lambda t: tuple(int(x) for x in _floats(t)), "bins": int,
        "metropolis_sweeps": int, "pt_sweeps": int, "workers": int, "output": str,
    }

    def validate(self) -> "RunConfig":
        if self.model not in ("ising", "ea"):
            raise ConfigError(f"model must be 'ising' or 'ea', got {self.model!r}")
        if self.dim not in (2, 3):
            raise ConfigError("dim must be 2 or 3")
        if self.N < 4 or self.N & (self.N - 1):
            raise ConfigError(f"N must be a power of two >= 4, got {self.N}")
        if not self.temperatures or min(self.temperatures) <= 0:
            raise ConfigError("temperatures must be positive")
        for key in ("samples", "iterations", "boot_samples", "realizations", "bins", "workers",
                    "base_size"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1")
        if any(b <= a for a, b in zip(self.log_caps, self.log_caps[1:])) or not self.log_caps:
            raise ConfigError("log_caps must be a non-empty increasing list")
        if self.metropolis_sweeps < 0 or self.pt_sweeps < 0:
            raise ConfigError("sweep counts must be >= 0")
        return self

    @property
    def initial_coefficient(self) -> float:
        if self.a0 is not None:
            return self.a0
        return 0.3 if self.model == "ising" else 0.0

    def items(self):
        return [(f.name, getattr(self, f.name)) for f in fields(self)]

    def echo(self) -> list[str]:
        out = []
        for k, v in self.items():
            if k == "a0":
                v = self.initial_coefficient
            if isinstance(v, tuple):
                v = " ".join(f"{x:g}" if isinstance(x, float) else str(x) for x in v)
            out.append(f"{k} = {v}")
        return out

    def with_updates(self, **kw) -> "RunConfig":
        return apply_updates(self, kw)


def apply_updates(cfg: RunConfig, updates: dict) -> RunConfig:
    conv = {}
    for key, val in updates.items():
        if val is None:
            continue
        if key not in RunConfig._CONVERT:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            conv[key] = RunConfig._CONVERT[key](val)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {val!r} ({exc})") from None
    return replace(cfg, **conv)


def parse_config_text(text: str) -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value', got {line!r}")
        key, val = (x.strip() for x in line.split("=", 1))
        if key in out:
            raise ConfigError(f"line {n}: duplicate key {key!r}")
        out[key] = val
    return out


def load_config(path=None, overrides: dict | None = None, base: RunConfig | None = None,
                env=None) -> RunConfig:
    """Defaults < config file < environment seed < command-line overrides."""
    env = os.environ if env is None else env
    cfg = base or RunConfig()
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        cfg = apply_updates(cfg, parse_config_text(text))
    if env.get(SEED_ENV):
        cfg = apply_updates(cfg, {"seed": env[SEED_ENV]})
    cfg = apply_updates(cfg, overrides or {})
    return cfg.validate()
