"""Run configuration: YAML parsing, defaults, validation, dotted overrides.

Every knob that influences generation, tracing, or export lives in a single
document so a run is reproducible from its config echo alone. Unknown keys
are hard errors; a silent typo in a reproducibility-critical config is worse
than friction.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import yaml

from .constants import SPEED_OF_LIGHT_M_S
from .scene import DEFAULT_MATERIALS, MaterialParams, ProcGenParams


class ConfigError(ValueError):
    """Malformed document, unknown key, or out-of-range value."""


@dataclass(frozen=True)
class GridSpec:
    """Uniform receiver grid; point (i, j) sits at origin + (i*s, j*s, height)."""

    nx: int = 128
    ny: int = 128
    spacing_m: float = 1.0
    height_m: float = 1.0
    origin_xy: tuple[float, float] = (-64.0, -64.0)

    @property
    def n_points(self) -> int:
        return self.nx * self.ny

    def positions(self) -> np.ndarray:
        """All receiver positions, shape (nx*ny, 3), index = j*nx + i."""
        xs = self.origin_xy[0] + self.spacing_m * np.arange(self.nx, dtype=float)
        ys = self.origin_xy[1] + self.spacing_m * np.arange(self.ny, dtype=float)
        out = np.empty((self.nx * self.ny, 3))
        out[:, 0] = np.tile(xs, self.ny)
        out[:, 1] = np.repeat(ys, self.nx)
        out[:, 2] = self.height_m
        return out


@dataclass(frozen=True)
class TraceConfig:
    """Every simulation hyperparameter for one run."""

    carrier_frequency_hz: float = 3.5e9
    max_reflection_depth: int = 3
    enable_diffraction: bool = True
    enable_scattering: bool = False
    n_paths_retained: int = 5
    tx_position: tuple[float, float, float] = (0.0, 0.0, 30.0)
    rx_grid: GridSpec = field(default_factory=GridSpec)
    antenna_model: str = "isotropic"
    seed: int = 0
    batch_size: int = 2048
    batch_time_budget_s: float | None = None
    min_outdoor_fraction: float = 0.3
    materials: dict[str, MaterialParams] = field(default_factory=dict)
    scattering_coefficient_default: float = 0.2
    procgen: ProcGenParams = field(default_factory=ProcGenParams)

    @property
    def wavelength_m(self) -> float:
        return SPEED_OF_LIGHT_M_S / self.carrier_frequency_hz


def default_config() -> TraceConfig:
    return TraceConfig()


# ---------------------------------------------------------------------------
# parsing


class _Section:
    """Dict reader that tracks consumed keys and flags the rest as unknown."""

    def __init__(self, mapping: dict, prefix: str = ""):
        if not isinstance(mapping, dict):
            raise ConfigError(f"expected a mapping at {prefix or 'top level'}")
        self._m = dict(mapping)
        self._p = prefix

    def key(self, name: str) -> str:
        return f"{self._p}{name}"

    def take(self, name: str, default):
        return self._m.pop(name, default)

    def has(self, name: str) -> bool:
        return name in self._m

    def finish(self) -> None:
        if self._m:
            raise ConfigError(f"unknown key: {self.key(sorted(self._m)[0])}")


_MISSING = object()


def _as_float(value, key: str) -> float:
    # YAML 1.1 does not resolve "3.5e9" (no exponent sign) as a float, so
    # accept numeric strings as well.
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"invalid value for {key}: expected a number") from None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"invalid value for {key}: expected a number")
    return float(value)


def _as_opt_float(value, key: str):
    if value is None:
        return None
    return _as_float(value, key)


def _as_int(value, key: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"invalid value for {key}: expected an integer")
    return value


def _as_bool(value, key: str) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(f"invalid value for {key}: expected true/false")
    return value


def _as_str(value, key: str) -> str:
    if not isinstance(value, str):
        raise ConfigError(f"invalid value for {key}: expected a string")
    return value


def _as_vec(value, key: str, n: int) -> tuple[float, ...]:
    if not isinstance(value, (list, tuple)) or len(value) != n:
        raise ConfigError(f"invalid value for {key}: expected a {n}-vector")
    return tuple(_as_float(v, key) for v in value)


def _grid_from_mapping(mapping, prefix="rx_grid.") -> GridSpec:
    sec = _Section(mapping, prefix)
    base = GridSpec()
    grid = GridSpec(
        nx=_as_int(sec.take("nx", base.nx), sec.key("nx")),
        ny=_as_int(sec.take("ny", base.ny), sec.key("ny")),
        spacing_m=_as_float(sec.take("spacing_m", base.spacing_m), sec.key("spacing_m")),
        height_m=_as_float(sec.take("height_m", base.height_m), sec.key("height_m")),
        origin_xy=_as_vec(sec.take("origin_xy", list(base.origin_xy)), sec.key("origin_xy"), 2),
    )
    sec.finish()
    return grid


def _procgen_from_mapping(mapping, prefix="procgen.") -> ProcGenParams:
    sec = _Section(mapping, prefix)
    base = ProcGenParams()
    params = ProcGenParams(
        block_grid=_as_int(sec.take("block_grid", base.block_grid), sec.key("block_grid")),
        building_probability=_as_float(
            sec.take("building_probability", base.building_probability),
            sec.key("building_probability"),
        ),
        footprint_min_m=_as_float(
            sec.take("footprint_min_m", base.footprint_min_m), sec.key("footprint_min_m")
        ),
        footprint_max_m=_as_float(
            sec.take("footprint_max_m", base.footprint_max_m), sec.key("footprint_max_m")
        ),
        height_mu_log=_as_float(
            sec.take("height_mu_log", base.height_mu_log), sec.key("height_mu_log")
        ),
        height_sigma_log=_as_float(
            sec.take("height_sigma_log", base.height_sigma_log), sec.key("height_sigma_log")
        ),
        bounds_m=_as_float(sec.take("bounds_m", base.bounds_m), sec.key("bounds_m")),
    )
    sec.finish()
    return params


def _materials_from_mapping(mapping) -> dict[str, MaterialParams]:
    if not isinstance(mapping, dict):
        raise ConfigError("invalid value for materials: expected a mapping")
    out = {}
    for name in sorted(mapping):
        entry = mapping[name]
        prefix = f"materials.{name}."
        sec = _Section(entry, prefix)
        base = DEFAULT_MATERIALS.get(name)
        eps_r = sec.take("eps_r", base.eps_r if base else _MISSING)
        cond = sec.take("conductivity_s_per_m", base.conductivity_s_per_m if base else _MISSING)
        scat = sec.take("scattering_coeff", base.scattering_coeff if base else 0.2)
        if eps_r is _MISSING or cond is _MISSING:
            raise ConfigError(
                f"materials.{name}: eps_r and conductivity_s_per_m are required "
                "for materials without built-in defaults"
            )
        out[name] = MaterialParams(
            name=name,
            eps_r=_as_float(eps_r, prefix + "eps_r"),
            conductivity_s_per_m=_as_float(cond, prefix + "conductivity_s_per_m"),
            scattering_coeff=_as_float(scat, prefix + "scattering_coeff"),
        )
        sec.finish()
    return out


def config_from_dict(data: dict) -> TraceConfig:
    """Build and validate a TraceConfig from a plain mapping."""
    sec = _Section(data if data is not None else {}, "")
    base = TraceConfig()
    budget = sec.take("batch_time_budget_s", base.batch_time_budget_s)
    cfg = TraceConfig(
        carrier_frequency_hz=_as_float(
            sec.take("carrier_frequency_hz", base.carrier_frequency_hz),
            "carrier_frequency_hz",
        ),
        max_reflection_depth=_as_int(
            sec.take("max_reflection_depth", base.max_reflection_depth),
            "max_reflection_depth",
        ),
        enable_diffraction=_as_bool(
            sec.take("enable_diffraction", base.enable_diffraction), "enable_diffraction"
        ),
        enable_scattering=_as_bool(
            sec.take("enable_scattering", base.enable_scattering), "enable_scattering"
        ),
        n_paths_retained=_as_int(
            sec.take("n_paths_retained", base.n_paths_retained), "n_paths_retained"
        ),
        tx_position=_as_vec(sec.take("tx_position", list(base.tx_position)), "tx_position", 3),
        rx_grid=_grid_from_mapping(sec.take("rx_grid", {})),
        antenna_model=_as_str(sec.take("antenna_model", base.antenna_model), "antenna_model"),
        seed=_as_int(sec.take("seed", base.seed), "seed"),
        batch_size=_as_int(sec.take("batch_size", base.batch_size), "batch_size"),
        batch_time_budget_s=_as_opt_float(budget, "batch_time_budget_s"),
        min_outdoor_fraction=_as_float(
            sec.take("min_outdoor_fraction", base.min_outdoor_fraction),
            "min_outdoor_fraction",
        ),
        materials=_materials_from_mapping(sec.take("materials", {})),
        scattering_coefficient_default=_as_float(
            sec.take("scattering_coefficient_default", base.scattering_coefficient_default),
            "scattering_coefficient_default",
        ),
        procgen=_procgen_from_mapping(sec.take("procgen", {})),
    )
    sec.finish()
    problems = validate_config(cfg)
    if problems:
        raise ConfigError("; ".join(problems))
    return cfg


def load_config(text: str) -> TraceConfig:
    """Parse a YAML document into a validated TraceConfig.

    An empty document yields the full default configuration. Raises
    ConfigError naming the offending key for parse failures, unknown keys,
    or out-of-range values.
    """
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"parse error: {exc}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("parse error: top level must be a mapping")
    return config_from_dict(data)


def validate_config(cfg: TraceConfig) -> list[str]:
    """Check every invariant; returns one message per violation (empty when valid)."""
    problems = []
    f = cfg.carrier_frequency_hz
    if not (isinstance(f, float) and f > 0.0 and math.isfinite(f)):
        problems.append("carrier_frequency_hz: must be a positive finite frequency")
    if cfg.max_reflection_depth < 0:
        problems.append("max_reflection_depth: must be >= 0")
    if cfg.n_paths_retained < 1:
        problems.append("n_paths_retained: must be >= 1")
    g = cfg.rx_grid
    if g.nx < 1:
        problems.append("rx_grid.nx: must be >= 1")
    if g.ny < 1:
        problems.append("rx_grid.ny: must be >= 1")
    if not g.spacing_m > 0.0:
        problems.append("rx_grid.spacing_m: must be > 0")
    if not g.height_m > 0.0:
        problems.append("rx_grid.height_m: must be > 0")
    if cfg.antenna_model != "isotropic":
        problems.append("antenna_model: only 'isotropic' is supported")
    if not 0 <= cfg.seed < 2**64:
        problems.append("seed: must fit an unsigned 64-bit integer")
    if cfg.batch_size < 1:
        problems.append("batch_size: must be >= 1")
    if cfg.batch_time_budget_s is not None and cfg.batch_time_budget_s < 0.0:
        problems.append("batch_time_budget_s: must be >= 0 or null")
    if not 0.0 <= cfg.min_outdoor_fraction <= 1.0:
        problems.append("min_outdoor_fraction: must lie in [0, 1]")
    if not 0.0 <= cfg.scattering_coefficient_default <= 1.0:
        problems.append("scattering_coefficient_default: must lie in [0, 1]")
    for name, m in cfg.materials.items():
        if m.eps_r < 1.0:
            problems.append(f"materials.{name}.eps_r: must be >= 1")
        if m.conductivity_s_per_m < 0.0:
            problems.append(f"materials.{name}.conductivity_s_per_m: must be >= 0")
        if not 0.0 <= m.scattering_coeff <= 1.0:
            problems.append(f"materials.{name}.scattering_coeff: must lie in [0, 1]")
    p = cfg.procgen
    if p.block_grid < 1:
        problems.append("procgen.block_grid: must be >= 1")
    if not 0.0 <= p.building_probability <= 1.0:
        problems.append("procgen.building_probability: must lie in [0, 1]")
    if not 0.0 < p.footprint_min_m <= p.footprint_max_m:
        problems.append("procgen.footprint_min_m: need 0 < footprint_min_m <= footprint_max_m")
    if not p.bounds_m > 0.0:
        problems.append("procgen.bounds_m: must be > 0")
    if p.height_sigma_log < 0.0:
        problems.append("procgen.height_sigma_log: must be >= 0")
    if p.bounds_m > 0 and p.block_grid >= 1:
        usable = p.bounds_m / p.block_grid - 4.0
        if p.footprint_max_m > usable:
            problems.append(
                "procgen.footprint_max_m: footprint range exceeds cell size "
                f"(usable {usable:.3g} m after 2 m margins)"
            )
    return problems


# ---------------------------------------------------------------------------
# serialization and overrides


def config_to_dict(cfg: TraceConfig) -> dict:
    """Plain, YAML/JSON-ready mapping; loading it back reproduces cfg exactly."""
    return {
        "carrier_frequency_hz": cfg.carrier_frequency_hz,
        "max_reflection_depth": cfg.max_reflection_depth,
        "enable_diffraction": cfg.enable_diffraction,
        "enable_scattering": cfg.enable_scattering,
        "n_paths_retained": cfg.n_paths_retained,
        "tx_position": list(cfg.tx_position),
        "rx_grid": {
            "nx": cfg.rx_grid.nx,
            "ny": cfg.rx_grid.ny,
            "spacing_m": cfg.rx_grid.spacing_m,
            "height_m": cfg.rx_grid.height_m,
            "origin_xy": list(cfg.rx_grid.origin_xy),
        },
        "antenna_model": cfg.antenna_model,
        "seed": cfg.seed,
        "batch_size": cfg.batch_size,
        "batch_time_budget_s": cfg.batch_time_budget_s,
        "min_outdoor_fraction": cfg.min_outdoor_fraction,
        "materials": {
            name: {
                "eps_r": m.eps_r,
                "conductivity_s_per_m": m.conductivity_s_per_m,
                "scattering_coeff": m.scattering_coeff,
            }
            for name, m in sorted(cfg.materials.items())
        },
        "scattering_coefficient_default": cfg.scattering_coefficient_default,
        "procgen": {
            "block_grid": cfg.procgen.block_grid,
            "building_probability": cfg.procgen.building_probability,
            "footprint_min_m": cfg.procgen.footprint_min_m,
            "footprint_max_m": cfg.procgen.footprint_max_m,
            "height_mu_log": cfg.procgen.height_mu_log,
            "height_sigma_log": cfg.procgen.height_sigma_log,
            "bounds_m": cfg.procgen.bounds_m,
        },
    }


def config_to_yaml(cfg: TraceConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=True, default_flow_style=False)


def apply_overrides(cfg: TraceConfig, assignments) -> TraceConfig:
    """Apply ``key=value`` pairs with dotted paths, e.g. rx_grid.nx=64."""
    data = config_to_dict(cfg)
    for item in assignments:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"override {key}: unparseable value {raw!r}: {exc}") from exc
        node = data
        parts = key.split(".")
        in_materials = parts[0] == "materials"
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                if in_materials and isinstance(node, dict) and part not in node:
                    node[part] = {}  # new material entry
                else:
                    raise ConfigError(f"unknown key: {key}")
            node = node[part]
        leaf = parts[-1]
        if leaf not in node and not in_materials:
            raise ConfigError(f"unknown key: {key}")
        node[leaf] = value
    return config_from_dict(data)
