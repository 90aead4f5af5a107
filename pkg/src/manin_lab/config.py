"""JSON instance configuration shared by the CLI and the report pipeline."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Any, Dict, List, Optional

from .counting import OPENSETS, Caps
from .forms import BidegreeForm, FormError, form_from_literal, random_form
from .toric import FanError, build_fan

__all__ = ["ConfigError", "InstanceConfig", "load_config", "parse_config"]


class ConfigError(ValueError):
    """Missing or inconsistent configuration field."""


@dataclass(frozen=True)
class BGrid:
    B_min: float = 1.0
    B_max: float = 64.0
    points: int = 7
    values: Optional[List[Any]] = None

    def grid(self) -> List[Fraction]:
        if self.values is not None:
            out = [Fraction(str(v)) for v in self.values]
        elif self.points == 1:
            out = [Fraction(repr(float(self.B_min)))]
        else:
            ratio = (self.B_max / self.B_min) ** (1.0 / (self.points - 1))
            out = [Fraction(f"{self.B_min * ratio**i:.6g}") for i in range(self.points)]
        if any(b2 <= b1 for b1, b2 in zip(out, out[1:])):
            raise ConfigError(f"B_grid must be strictly increasing, got {[str(b) for b in out]}")
        if any(b < 0 for b in out):
            raise ConfigError("B_grid values must be nonnegative")
        return out


@dataclass(frozen=True)
class DensityConfig:
    p_max: int = 13
    N_max: int = 2
    eps: float = 1e-3
    samples: int = 1_000_000
    seed: int = 20240611
    phi: float = 20.0
    beta_grid: int = 80
    quad_grid: int = 64


@dataclass(frozen=True)
class HypersumConfig:
    P: int = 10_000
    J_steps: int = 16
    mu: Optional[float] = None
    d: int = 1
    f: str = "histogram"


@dataclass(frozen=True)
class InstanceConfig:
    n: int
    r: int
    m: int
    d1: int
    d2: int
    form_spec: Dict[str, Any]
    openset_id: str = "all"
    x_cap: Optional[int] = None
    on_cap: str = "raise"
    B_grid: BGrid = field(default_factory=BGrid)
    density: DensityConfig = field(default_factory=DensityConfig)
    hypersum: HypersumConfig = field(default_factory=HypersumConfig)
    dimV1: int = 0
    dimV2: int = 0
    regime_eps: float = 1e-6
    workers: int = 1

    def fan(self):
        return build_fan(self.n, self.r, self.m)

    def form(self) -> BidegreeForm:
        spec = self.form_spec
        try:
            if "monomials" in spec:
                return form_from_literal((self.n, self.r, self.m), self.d1, self.d2, spec["monomials"])
            rnd = spec["random"]
            return random_form(self.fan(), self.d1, self.d2, int(rnd["coeff_bound"]), int(rnd["seed"]))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"form needs 'monomials' or 'random' with seed and coeff_bound: missing {exc}") from None
        except (FormError, FanError) as exc:
            raise ConfigError(f"form: {exc}") from None

    def caps(self) -> Caps:
        return Caps(self.x_cap, self.on_cap)

    def describe(self) -> Dict[str, Any]:
        d = asdict(self)
        d["B_grid"]["resolved"] = [str(b) for b in self.B_grid.grid()]
        return d


REQUIRED = ("n", "r", "m", "d1", "d2", "form")


def _section(raw: Dict[str, Any], name: str, cls):
    data = raw.get(name, {}) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"'{name}' must be an object")
    known = set(cls.__dataclass_fields__)
    extra = set(data) - known
    if extra:
        raise ConfigError(f"unknown field(s) in '{name}': {sorted(extra)}")
    return cls(**data)


def parse_config(raw: Dict[str, Any]) -> InstanceConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    for key in REQUIRED:
        if key not in raw:
            raise ConfigError(f"missing required field '{key}'")
    for key in ("n", "r", "m", "d1", "d2"):
        if not isinstance(raw[key], int) or isinstance(raw[key], bool):
            raise ConfigError(f"field '{key}' must be an integer")
    caps = raw.get("caps", {}) or {}
    dims = raw.get("dims", {}) or {}
    cfg = InstanceConfig(
        n=raw["n"],
        r=raw["r"],
        m=raw["m"],
        d1=raw["d1"],
        d2=raw["d2"],
        form_spec=raw["form"],
        openset_id=raw.get("openset_id", "all"),
        x_cap=caps.get("x_cap"),
        on_cap=caps.get("on_cap", "raise"),
        B_grid=_section(raw, "B_grid", BGrid),
        density=_section(raw, "density", DensityConfig),
        hypersum=_section(raw, "hypersum", HypersumConfig),
        dimV1=int(dims.get("dimV1", 0)),
        dimV2=int(dims.get("dimV2", 0)),
        regime_eps=float(dims.get("eps", 1e-6)),
        workers=int(raw.get("workers", 1)),
    )
    try:
        cfg.fan()
    except FanError as exc:
        raise ConfigError(f"fan: {exc}") from None
    if cfg.openset_id not in OPENSETS:
        raise ConfigError(f"openset_id must be one of {OPENSETS}, got {cfg.openset_id!r}")
    if cfg.on_cap not in ("raise", "flag"):
        raise ConfigError("caps.on_cap must be 'raise' or 'flag'")
    cfg.form()
    cfg.B_grid.grid()
    b1, b2 = cfg.fan().betas(cfg.d1, cfg.d2)
    if b1 < 1 or b2 < 1:
        raise ConfigError(f"height exponents ({b1}, {b2}) must be positive")
    return cfg


def load_config(path: str) -> InstanceConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from None
    return parse_config(raw)
