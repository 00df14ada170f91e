"""Experiment configuration in the same ``key = value`` text format as the parameters.

Every field has a default, so a config file only lists what it changes.
``to_text`` gives a canonical form that is echoed into each result file;
``from_provenance`` reads it back from such a header.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .params import CellParams, ParameterError, parse_keyvalue

KINDS = ("sweep", "collect-data", "track", "robust-noise", "robust-params", "benchmark")
CONTROLLERS = ("deepc-bf", "deepc", "pi", "slmpc")
PROVENANCE_TAG = "hostdeepc provenance"


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _strs(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _fmt(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str = "benchmark"
    controller: str = "deepc-bf"
    controllers: tuple = ("deepc-bf", "slmpc", "pi")
    seed: int = 0
    # reference suite
    reference: str = "steps"
    grid: int = 5
    quantile_lo: float = 0.1
    quantile_hi: float = 0.9
    sin_amplitude: float = 0.25
    sin_period: float = 60.0
    ell_s: int = 200
    T_s: float = 10.0
    # reachable-set sweep (normalised inputs)
    sweep_n_s: int = 12
    sweep_n_g: int = 12
    # data collection
    u_rest: tuple = (0.1, 1.0)
    n_random_walk: int = 90
    n_constant: int = 90
    rw_step: float = 0.05
    # noise and uncertainty
    sigma_v: float = 0.0
    sigma_v_levels: tuple = (0.0, 0.01, 0.02, 0.05)
    noise_convention: str = "std"
    delta_levels: tuple = (0.05, 0.1, 0.15, 0.2, 0.25)
    repetitions: int = 20
    # predictive controllers
    T_ini: int = 5
    N: int = 20
    n_x: int = 5
    Q: tuple = (0.1, 1.0)
    R_bf: tuple = (1.0, 10.0)
    R_raw: tuple = (0.1, 200.0)
    rho_g: float = 0.01
    rho_y: float = 10.0
    tol: float = 1e-8
    # PI
    K_Ig: float = 1e-6
    K_Pg: float = 1e-5
    K_Is: float = 4e4
    K_Ps: float = 4e3
    pi_error_units: str = "physical"
    # execution
    workers: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {', '.join(KINDS)}")
        for name in (self.controller, *self.controllers):
            if name not in CONTROLLERS:
                raise ConfigError(f"unknown controller {name!r}")
        if self.reference not in ("steps", "sinusoid"):
            raise ConfigError("reference must be 'steps' or 'sinusoid'")
        if self.noise_convention not in ("std", "variance"):
            raise ConfigError("noise_convention must be 'std' or 'variance'")
        if self.pi_error_units not in ("physical", "normalized"):
            raise ConfigError("pi_error_units must be 'physical' or 'normalized'")
        if self.ell_s < 1 or self.grid < 1 or self.repetitions < 1 or self.workers < 1:
            raise ConfigError("ell_s, grid, repetitions and workers must be >= 1")
        if self.sweep_n_s < 2 or self.sweep_n_g < 2:
            raise ConfigError("sweep grids need at least two points per axis")
        if not 0 <= self.quantile_lo < self.quantile_hi <= 1:
            raise ConfigError("need 0 <= quantile_lo < quantile_hi <= 1")
        if not (self.controllers and self.sigma_v_levels and self.delta_levels):
            raise ConfigError("controller, sigma_v and delta lists must be nonempty")
        if min(self.sigma_v_levels) < 0 or self.sigma_v < 0:
            raise ConfigError("noise levels must be >= 0")
        if min(self.delta_levels) < 0 or max(self.delta_levels) >= 1:
            raise ConfigError("delta levels must lie in [0, 1)")
        if len(self.u_rest) != 2 or len(self.Q) != 2 or len(self.R_bf) != 2 or len(self.R_raw) != 2:
            raise ConfigError("u_rest, Q, R_bf and R_raw take two values")
        if self.T_s <= 0 or self.sin_period <= 0 or self.tol <= 0:
            raise ConfigError("T_s, sin_period and tol must be positive")
        if self.n_random_walk + self.n_constant < 1:
            raise ConfigError("data collection needs at least one sample")

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    # text form ---------------------------------------------------------------
    def to_text(self) -> str:
        return "".join(f"{f.name} = {_fmt(getattr(self, f.name))}\n" for f in fields(self))

    @classmethod
    def from_mapping(cls, mapping: dict[str, str], source: str = "<config>") -> "ExperimentConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(mapping) - set(known))
        if unknown:
            raise ConfigError(f"{source}: unknown key(s) {', '.join(unknown)}")
        values = {}
        for key, raw in mapping.items():
            default = known[key].default
            try:
                if isinstance(default, tuple):
                    values[key] = _strs(raw) if default and isinstance(default[0], str) else _floats(raw)
                elif isinstance(default, bool):
                    values[key] = raw.lower() in ("1", "true", "yes")
                elif isinstance(default, int):
                    values[key] = int(raw)
                elif isinstance(default, float):
                    values[key] = float(raw)
                else:
                    values[key] = raw
            except ValueError as exc:
                raise ConfigError(f"{source}: bad value for {key}: {raw!r}") from exc
        return cls(**values)

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "ExperimentConfig":
        try:
            return cls.from_mapping(parse_keyvalue(text, source), source)
        except ParameterError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        text = path.read_text()
        if is_provenance(text):
            return read_provenance(text)[0]
        return cls.from_text(text, str(path))


# provenance headers -----------------------------------------------------------

def provenance_lines(config: ExperimentConfig, params: CellParams, version: str) -> list[str]:
    """Header lines (without the leading '# ') that pin down a run completely."""
    lines = [PROVENANCE_TAG, f"version = {version}", f"params_sha256 = {params.digest()}",
             f"seed = {config.seed}", f"noise_convention = {config.noise_convention}"]
    lines += [f"config.{ln}" for ln in config.to_text().splitlines()]
    lines += [f"param.{ln}" for ln in params.to_text().splitlines()]
    return lines


def is_provenance(text: str) -> bool:
    return text.startswith(f"# {PROVENANCE_TAG}")


def read_provenance(text: str) -> tuple[ExperimentConfig, CellParams]:
    """Recover (config, params) from a result file header; checks the parameter hash."""
    cfg_lines, par_lines, digest = [], [], None
    for line in text.splitlines():
        if not line.startswith("# "):
            break
        body = line[2:]
        if body.startswith("config."):
            cfg_lines.append(body[len("config."):])
        elif body.startswith("param."):
            par_lines.append(body[len("param."):])
        elif body.startswith("params_sha256 = "):
            digest = body.split("=", 1)[1].strip()
    if not cfg_lines or not par_lines:
        raise ConfigError("no provenance header found")
    config = ExperimentConfig.from_text("\n".join(cfg_lines), "<provenance>")
    params = CellParams.from_text("\n".join(par_lines), "<provenance>")
    if digest is not None and params.digest() != digest:
        raise ConfigError("parameter hash in provenance does not match the embedded parameters")
    return config, params
