"""Run configuration with typed, range-checked numeric overrides."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from .errors import ParameterError

# key -> (low, high) inclusive safe range
_RANGES = {
    "h": (1e-4, 0.5),
    "x_cut": (1.0, 5000.0),
    "max_energy": (1e-6, 1e6),
    "band_a": (1e-12, 1e6),
    "band_b": (1e-10, 1e6),
    "panels_per_unit": (1, 4096),
    "order": (2, 64),
    "band_mass_target": (1e-6, 1.0),
    "mu_low": (1e-8, 10.0),
    "oracle_dt": (1e-9, 1.0),
    "flow_dt": (1e-6, 0.1),
    "n_grid": (11, 10_000_000),
    "seed": (0, 2 ** 32 - 1),
}


@dataclass
class RunConfig:
    graph: str = ""
    subcommand: str = ""
    output: str | None = None
    h: float | None = None
    x_cut: float = 40.0
    max_energy: float = 400.0
    band_a: float | None = None
    band_b: float | None = None
    panels_per_unit: int = 64
    order: int = 16
    band_mass_target: float = 0.999
    mu_low: float = 1e-3
    oracle_dt: float | None = None
    flow_dt: float = 1e-3
    n_grid: int | None = None
    seed: int = 0

    def override(self, key: str, text: str):
        names = {f.name: f for f in fields(self)}
        if key not in _RANGES or key not in names:
            raise ParameterError(f"cli: unknown config key {key!r}; known: {', '.join(sorted(_RANGES))}")
        integral = key in ("panels_per_unit", "order", "n_grid", "seed")
        try:
            value = int(text) if integral else float(text)
        except ValueError:
            raise ParameterError(f"cli: {key} expects {'an integer' if integral else 'a number'}, got {text!r}") \
                from None
        lo, hi = _RANGES[key]
        if not lo <= value <= hi:
            raise ParameterError(f"cli: {key}={value} outside the safe range [{lo:g}, {hi:g}]")
        setattr(self, key, value)

    def check(self):
        if (self.band_a is None) != (self.band_b is None):
            raise ParameterError("cli: set both band_a and band_b, or neither")
        if self.band_a is not None and not self.band_a < self.band_b:
            raise ParameterError("cli: band_a must be below band_b")

    def echo(self):
        return [(k, v) for k, v in asdict(self).items() if v is not None]
