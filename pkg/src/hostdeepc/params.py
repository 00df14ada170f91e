"""Kinetic parameters of the host-aware cell model.

Parameters live in a plain-text ``key = value`` file, one entry per line,
with ``#`` comments. Unknown keys are rejected so that typos surface early.
"""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, fields
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np

# Gene order used for every per-gene vector and for the state layout.
GENES = ("t", "m", "q", "z", "g")
HOST_GENES = GENES[:4]

# Normalisation constants of the inputs and outputs (fixed, not configurable).
U_S_BAR = 1.0e4  # molecules
Y_LAMBDA_BAR = 1.0e-2  # 1 / min
Y_G_BAR = 1.0e4  # molecules

DEFAULT_PARAMS_FILE = "default_params.txt"


class ParameterError(ValueError):
    """Raised for malformed parameter files or invalid parameter values."""


def parse_keyvalue(text: str, source: str = "<string>") -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParameterError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise ParameterError(f"{source}:{lineno}: empty key or value")
        if key in out:
            raise ParameterError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


@dataclass(frozen=True)
class CellParams:
    gamma_max: float
    K_gamma: float
    rho: float
    V_t: float
    A_t: float
    V_m: float
    A_m: float
    eta_s: float
    alpha_max_t: float
    alpha_max_m: float
    alpha_max_q: float
    alpha_max_z: float
    theta_t: float
    theta_m: float
    theta_q: float
    theta_z: float
    A_q: float
    h_q: float
    n_t: float
    n_m: float
    n_q: float
    n_z: float
    n_g: float
    k_plus_t: float
    k_plus_m: float
    k_plus_q: float
    k_plus_z: float
    k_plus_g: float
    k_minus_t: float
    k_minus_m: float
    k_minus_q: float
    k_minus_z: float
    k_minus_g: float
    delta_t: float
    delta_m: float
    delta_q: float
    delta_z: float
    delta_g: float
    alpha_syn_max: float
    theta_syn: float
    F_b: float
    A_g: float
    h_g: float
    tau_g: float
    mu_g: float

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not np.isfinite(value):
                raise ParameterError(f"{f.name} must be finite, got {value}")
            if f.name in ("F_b", "tau_g"):
                continue
            if value <= 0:
                raise ParameterError(f"{f.name} must be strictly positive, got {value}")
        if self.h_q < 1 or self.h_g < 1:
            raise ParameterError("Hill exponents h_q and h_g must be >= 1")
        if not 0 <= self.F_b < 1:
            raise ParameterError(f"F_b must lie in [0, 1), got {self.F_b}")
        if self.tau_g < 0:
            raise ParameterError(f"tau_g must be >= 0, got {self.tau_g}")

    # normalisation ---------------------------------------------------------
    @property
    def u_s_bar(self) -> float:
        return U_S_BAR

    @property
    def u_g_bar(self) -> float:
        return self.A_g

    @property
    def y_lambda_bar(self) -> float:
        return Y_LAMBDA_BAR

    @property
    def y_g_bar(self) -> float:
        return Y_G_BAR

    # per-gene vectors in GENES order ---------------------------------------
    def _gene_vector(self, prefix: str, genes=GENES) -> np.ndarray:
        vec = np.array([getattr(self, f"{prefix}_{x}") for x in genes], dtype=float)
        vec.setflags(write=False)
        return vec

    @cached_property
    def alpha_max_host(self) -> np.ndarray:
        return self._gene_vector("alpha_max", HOST_GENES)

    @cached_property
    def theta_host(self) -> np.ndarray:
        return self._gene_vector("theta", HOST_GENES)

    @cached_property
    def n(self) -> np.ndarray:
        return self._gene_vector("n")

    @cached_property
    def k_plus(self) -> np.ndarray:
        return self._gene_vector("k_plus")

    @cached_property
    def k_minus(self) -> np.ndarray:
        return self._gene_vector("k_minus")

    @cached_property
    def delta(self) -> np.ndarray:
        return self._gene_vector("delta")

    @cached_property
    def packed(self) -> np.ndarray:
        from .model import pack_params

        pv = pack_params(self)
        pv.setflags(write=False)
        return pv

    # construction / serialisation ------------------------------------------
    def replace(self, **changes) -> "CellParams":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_mapping(cls, mapping: dict[str, str | float], source: str = "<mapping>") -> "CellParams":
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(mapping) - names)
        if unknown:
            raise ParameterError(f"{source}: unknown parameter(s) {', '.join(unknown)}")
        missing = sorted(names - set(mapping))
        if missing:
            raise ParameterError(f"{source}: missing parameter(s) {', '.join(missing)}")
        values = {}
        for key, raw in mapping.items():
            try:
                values[key] = float(raw)
            except ValueError as exc:
                raise ParameterError(f"{source}: {key} is not a number: {raw!r}") from exc
        return cls(**values)

    @classmethod
    def from_text(cls, text: str, source: str = "<string>") -> "CellParams":
        return cls.from_mapping(parse_keyvalue(text, source), source)

    @classmethod
    def from_file(cls, path: str | Path) -> "CellParams":
        path = Path(path)
        return cls.from_text(path.read_text(), str(path))

    @classmethod
    def default(cls) -> "CellParams":
        return cls.from_text(default_params_text(), DEFAULT_PARAMS_FILE)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)!r}\n" for f in fields(self))

    def digest(self) -> str:
        """SHA-256 of the canonical text form (stable across file formatting)."""
        return hashlib.sha256(self.to_text().encode()).hexdigest()


def default_params_text() -> str:
    return resources.files("hostdeepc").joinpath("data", DEFAULT_PARAMS_FILE).read_text()


def load_params(path: str | Path | None = None) -> CellParams:
    return CellParams.default() if path is None else CellParams.from_file(path)
