"""Host-aware gene expression dynamics.

State layout (18 entries)::

    m_t m_m m_q m_z m_g | M_t M_m M_q M_z M_g | p_t p_m p_q p_z p_g | P_g s a

``p_z`` is the free-ribosome pool and ``P_g`` mature GFP. All rate laws are
pure functions of their arguments.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np
from numba import njit

from .params import GENES, CellParams

N_STATES = 18
N_GENES = len(GENES)

SL_m = slice(0, 5)
SL_M = slice(5, 10)
SL_p = slice(10, 15)
I_PZ = 13
I_PG = 14
I_PG_MATURE = 15
I_S = 16
I_A = 17

STATE_NAMES = (
    [f"m_{x}" for x in GENES]
    + [f"M_{x}" for x in GENES]
    + [f"p_{x}" for x in GENES]
    + ["P_g", "s", "a"]
)


class DomainError(ValueError):
    """Argument outside the physical domain (negative amounts or inputs)."""


class InputPair(NamedTuple):
    """Physical inputs: external nutrient (molecules) and light ratio."""

    u_s: float
    u_g: float

    def normalized(self, params: CellParams) -> np.ndarray:
        return np.array([self.u_s / params.u_s_bar, self.u_g / params.u_g_bar])

    @classmethod
    def from_normalized(cls, u, params: CellParams) -> "InputPair":
        return cls(float(u[0]) * params.u_s_bar, float(u[1]) * params.u_g_bar)


class CellState:
    """Named view onto an 18-vector of molecule counts."""

    __slots__ = ("x",)

    def __init__(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (N_STATES,):
            raise ValueError(f"cell state must have shape ({N_STATES},), got {x.shape}")
        self.x = x

    def __array__(self, dtype=None, copy=None):
        return self.x if dtype is None else self.x.astype(dtype)

    def __repr__(self):
        inner = ", ".join(f"{k}={v:.4g}" for k, v in zip(STATE_NAMES, self.x))
        return f"CellState({inner})"

    @classmethod
    def zeros(cls) -> "CellState":
        return cls(np.zeros(N_STATES))

    @classmethod
    def from_parts(cls, m, M, p, P_g, s, a) -> "CellState":
        return cls(np.concatenate([m, M, p, [P_g, s, a]]))

    @property
    def m(self):
        return dict(zip(GENES, self.x[SL_m]))

    @property
    def M(self):
        return dict(zip(GENES, self.x[SL_M]))

    @property
    def p(self):
        return dict(zip(GENES, self.x[SL_p]))

    @property
    def p_z(self) -> float:
        return float(self.x[I_PZ])

    @property
    def P_g(self) -> float:
        return float(self.x[I_PG_MATURE])

    @property
    def s(self) -> float:
        return float(self.x[I_S])

    @property
    def a(self) -> float:
        return float(self.x[I_A])


def default_initial_state() -> np.ndarray:
    """A generic nonzero starting point inside the basin of the physiological steady state."""
    x = np.zeros(N_STATES)
    x[SL_p] = [1e3, 1e3, 1e5, 1e4, 0.0]
    x[I_A] = 1e3
    return x


def _check_nonneg(name, value):
    if np.any(np.asarray(value) < 0):
        raise DomainError(f"{name} must be nonnegative, got {value}")


# rate laws ------------------------------------------------------------------

def host_transcription_rates(a: float, p_q: float, params: CellParams) -> dict[str, float]:
    """Energy-limited host transcription; housekeeping genes are autorepressed."""
    _check_nonneg("a", a)
    _check_nonneg("p_q", p_q)
    rates = params.alpha_max_host * a / (params.theta_host + a)
    rates[2] /= 1.0 + (p_q / params.A_q) ** params.h_q
    return {x: float(r) for x, r in zip(("t", "m", "q", "z"), rates)}


def light_activation(u_g: float, params: CellParams) -> float:
    """Fraction of maximal promoter activity, (F_b + H) / (1 + H) with H = (u_g/A_g)^h_g."""
    if np.isinf(u_g):
        return 1.0
    H = (u_g / params.A_g) ** params.h_g
    return (params.F_b + H) / (1.0 + H)


def synthetic_transcription_rate(a: float, u_g_delayed: float, params: CellParams) -> float:
    """Light-inducible transcription of the synthetic gene; caller supplies u_g(t - tau_g)."""
    _check_nonneg("a", a)
    _check_nonneg("u_g_delayed", u_g_delayed)
    energy = 1.0 if np.isinf(a) else a / (params.theta_syn + a)
    return params.alpha_syn_max * energy * light_activation(u_g_delayed, params)


def elongation_and_translation_rates(a: float, params: CellParams) -> tuple[float, dict[str, float]]:
    _check_nonneg("a", a)
    gamma = params.gamma_max * a / (params.K_gamma + a)
    return gamma, {x: gamma / n for x, n in zip(GENES, params.n)}


def growth_rate(a: float, M, params: CellParams) -> float:
    """lambda = (gamma(a) / rho) * sum of translational complexes over all genes."""
    M = np.asarray(list(M.values()) if isinstance(M, dict) else M, dtype=float)
    _check_nonneg("a", a)
    _check_nonneg("M", M)
    gamma = params.gamma_max * a / (params.K_gamma + a)
    return gamma / params.rho * M.sum()


def energy_drain(x, params: CellParams) -> float:
    """Energy consumed by translation, sum over genes of gamma * M_x."""
    x = np.asarray(x, dtype=float)
    a = x[I_A]
    gamma = params.gamma_max * a / (params.K_gamma + a)
    return gamma * x[SL_M].sum()


# right-hand side ----------------------------------------------------------
# The vector field is compiled; parameters travel as a flat float vector.

_PV_SCALARS = ("gamma_max", "K_gamma", "rho", "V_t", "A_t", "V_m", "A_m", "eta_s", "A_q", "h_q",
               "alpha_syn_max", "theta_syn", "F_b", "A_g", "h_g", "mu_g")
_PV_SIZE = len(_PV_SCALARS) + 4 + 4 + 5 * 4


def pack_params(params: CellParams) -> np.ndarray:
    pv = np.concatenate([
        [getattr(params, k) for k in _PV_SCALARS],
        params.alpha_max_host, params.theta_host,
        params.n, params.k_plus, params.k_minus, params.delta,
    ]).astype(float)
    assert pv.size == _PV_SIZE
    return pv


@njit(cache=True)
def _rhs_kernel(x, u_s, u_g, pv):
    gamma_max, K_gamma, rho, V_t, A_t, V_m, A_m, eta_s = pv[0], pv[1], pv[2], pv[3], pv[4], pv[5], pv[6], pv[7]
    A_q, h_q, alpha_syn_max, theta_syn, F_b, A_g, h_g, mu_g = (
        pv[8], pv[9], pv[10], pv[11], pv[12], pv[13], pv[14], pv[15])
    amax = pv[16:20]
    theta = pv[20:24]
    n = pv[24:29]
    k_plus = pv[29:34]
    k_minus = pv[34:39]
    delta = pv[39:44]

    a = x[17]
    s = x[16]
    z = x[13]
    gamma = gamma_max * a / (K_gamma + a)
    sum_M = 0.0
    for i in range(5):
        sum_M += x[5 + i]
    lam = gamma / rho * sum_M

    if np.isinf(u_g):
        act = 1.0
    else:
        H = (u_g / A_g) ** h_g
        act = (F_b + H) / (1.0 + H)

    dx = np.empty(18)
    ribo_flux = 0.0
    for i in range(5):
        if i < 4:
            alpha = amax[i] * a / (theta[i] + a)
            if i == 2:
                alpha /= 1.0 + (x[12] / A_q) ** h_q
        else:
            alpha = alpha_syn_max * a / (theta_syn + a) * act
        m = x[i]
        M = x[5 + i]
        bind = k_plus[i] * z * m
        unbind = k_minus[i] * M
        trans = gamma / n[i] * M
        dx[i] = alpha - (lam + delta[i]) * m - bind + trans + unbind
        dx[5 + i] = bind - trans - unbind - lam * M
        dx[10 + i] = trans - lam * x[10 + i]
        ribo_flux += trans - bind + unbind
    dx[13] += ribo_flux
    dx[14] -= mu_g * x[14]
    dx[15] = mu_g * x[14] - lam * x[15]

    imported = x[10] * V_t * u_s / (A_t + u_s)
    catabolised = x[11] * V_m * s / (A_m + s)
    dx[16] = imported - catabolised - lam * s
    dx[17] = eta_s * catabolised - lam * a - gamma * sum_M
    return dx


@njit(cache=True)
def _rhs_clamped(t, x, u_s, u_g, pv):
    return _rhs_kernel(np.maximum(x, 0.0), u_s, u_g, pv)


@njit(cache=True)
def _jac_clamped(t, x, u_s, u_g, pv):
    # forward differences; only steers the implicit solver's Newton iterations
    xc = np.maximum(x, 0.0)
    f0 = _rhs_kernel(xc, u_s, u_g, pv)
    J = np.empty((18, 18))
    for j in range(18):
        h = 1e-7 * max(abs(xc[j]), 1.0)
        xp = xc.copy()
        xp[j] += h
        J[:, j] = (_rhs_kernel(xp, u_s, u_g, pv) - f0) / h
    return J


def rhs_unchecked(x: np.ndarray, u_s: float, u_g_delayed: float, params: CellParams) -> np.ndarray:
    """Vector field without domain checks (hot path for the integrator)."""
    return _rhs_kernel(np.asarray(x, dtype=float), float(u_s), float(u_g_delayed), params.packed)


def rhs(state, input: InputPair, u_g_delayed: float, params: CellParams) -> np.ndarray:
    """Time derivative of the 18-state model at ``state`` for inputs ``input``.

    The current light input ``input.u_g`` acts only through ``u_g_delayed``.
    """
    x = np.asarray(state, dtype=float)
    if x.shape != (N_STATES,):
        raise ValueError(f"state must have shape ({N_STATES},)")
    if np.any(x < 0):
        bad = [STATE_NAMES[i] for i in np.flatnonzero(x < 0)]
        raise DomainError(f"negative state component(s): {', '.join(bad)}")
    if input.u_s < 0 or input.u_g < 0 or u_g_delayed < 0:
        raise DomainError(f"inputs must be nonnegative, got {input}, delayed u_g={u_g_delayed}")
    return rhs_unchecked(x, input.u_s, u_g_delayed, params)


def output_map(state, params: CellParams) -> np.ndarray:
    """Normalised outputs (growth rate, mature GFP)."""
    x = np.asarray(state, dtype=float)
    lam = growth_rate(x[I_A], x[SL_M], params)
    return np.array([lam / params.y_lambda_bar, x[I_PG_MATURE] / params.y_g_bar])


def output_map_unchecked(x: np.ndarray, params: CellParams) -> np.ndarray:
    a = x[I_A]
    lam = params.gamma_max * a / (params.K_gamma + a) / params.rho * x[SL_M].sum()
    return np.array([lam / params.y_lambda_bar, x[I_PG_MATURE] / params.y_g_bar])
