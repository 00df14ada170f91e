"""Linearisation, exact discretisation and balanced truncation."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .model import InputPair, output_map_unchecked, rhs_unchecked
from .params import CellParams
from .sim import numerical_jacobian

RANK_RTOL = 1e-9


class ReductionError(ValueError):
    """Model unsuitable for balanced truncation (e.g. not Schur stable)."""


@dataclass
class LinearModel:
    """Affine model ``dx = A x + B u + f_star`` (or ``x+ = ...``), ``y = C x + h_star``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    f_star: np.ndarray | None = None
    h_star: np.ndarray | None = None
    discrete: bool = False
    T_s: float | None = None

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.asarray(self.B, dtype=float).reshape(self.A.shape[0], -1)
        self.C = np.asarray(self.C, dtype=float).reshape(-1, self.A.shape[0])
        n, m, p = self.n_x, self.n_u, self.n_y
        if self.A.shape != (n, n):
            raise ValueError("A must be square")
        self.f_star = np.zeros(n) if self.f_star is None else np.asarray(self.f_star, dtype=float).ravel()
        self.h_star = np.zeros(p) if self.h_star is None else np.asarray(self.h_star, dtype=float).ravel()
        if self.f_star.size != n or self.h_star.size != p:
            raise ValueError("offset dimensions do not match the model")
        if self.discrete and not (self.T_s is not None and self.T_s > 0):
            raise ValueError("discrete models need T_s > 0")

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    @property
    def n_y(self) -> int:
        return self.C.shape[0]

    def markov(self, k: int) -> np.ndarray:
        """C A^k B."""
        return self.C @ np.linalg.matrix_power(self.A, k) @ self.B

    def transform(self, T: np.ndarray, T_inv: np.ndarray) -> "LinearModel":
        """State change z = T x (T may be rectangular for truncation)."""
        return LinearModel(T @ self.A @ T_inv, T @ self.B, self.C @ T_inv, T @ self.f_star,
                           self.h_star.copy(), self.discrete, self.T_s)


def linearize_function(f: Callable, h: Callable, x_star, u_star, rel: float = 1e-6,
                       u_lo=None, u_hi=None) -> LinearModel:
    """Central-difference linearisation of ``dx = f(x, u)``, ``y = h(x)``.

    ``u_lo``/``u_hi`` bound the input stencil (one-sided differences at the edges).
    """
    x_star = np.asarray(x_star, dtype=float)
    u_star = np.asarray(u_star, dtype=float)
    A = numerical_jacobian(lambda x: f(x, u_star), x_star, rel)
    B = numerical_jacobian(lambda u: f(x_star, u), u_star, rel, u_lo, u_hi)
    C = numerical_jacobian(h, x_star, rel)
    for M in (A, B, C):
        if not np.all(np.isfinite(M)):
            raise FloatingPointError("non-finite derivative during linearisation")
    f_star = f(x_star, u_star) - A @ x_star - B @ u_star
    h_star = h(x_star) - C @ x_star
    return LinearModel(A, B, C, f_star, h_star)


def linearize(x_star, u_star: InputPair, params: CellParams, basis=None, rel: float = 1e-6) -> LinearModel:
    """Continuous-time linearisation of the cell model.

    The model input is the normalised input pair, or ``basis.forward`` of it
    when a basis is given (the plant is then seen through its inverse).
    """
    u_norm = np.asarray(u_star.normalized(params) if isinstance(u_star, InputPair) else u_star, dtype=float)
    bar = np.array([params.u_s_bar, params.u_g_bar])
    if basis is None:
        to_phys = lambda v: v * bar
        v_star, lo, hi = u_norm, 0.0, None
    else:
        to_phys = lambda v: basis.inverse(v) * bar
        v_star, lo, hi = basis.forward(u_norm), 0.0, 1.0 - 1e-12

    def f(x, v):
        u = to_phys(v)
        return rhs_unchecked(x, u[0], u[1], params)

    return linearize_function(f, lambda x: output_map_unchecked(x, params), x_star, v_star, rel, lo, hi)


def discretize(model: LinearModel, T_s: float) -> LinearModel:
    """Exact zero-order-hold discretisation, affine term included."""
    if model.discrete:
        raise ValueError("model is already discrete")
    if T_s <= 0:
        raise ValueError("T_s must be positive")
    n, m = model.n_x, model.n_u
    M = np.zeros((n + m + 1, n + m + 1))
    M[:n, :n] = model.A
    M[:n, n:n + m] = model.B
    M[:n, -1] = model.f_star
    E = sla.expm(M * T_s)
    return LinearModel(E[:n, :n], E[:n, n:n + m], model.C.copy(), E[:n, -1], model.h_star.copy(),
                       discrete=True, T_s=T_s)


def spectral_radius(A: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(A)))) if A.size else 0.0


def dlyap_smith(A: np.ndarray, Q: np.ndarray, rtol: float = 1e-12, max_iter: int = 200) -> np.ndarray:
    """Solve X = A X A' + Q by squared Smith iteration."""
    X = Q.copy()
    Ak = A.copy()
    for _ in range(max_iter):
        dX = Ak @ X @ Ak.T
        X = X + dX
        Ak = Ak @ Ak
        if np.abs(dX).max() <= rtol * np.abs(X).max():
            return 0.5 * (X + X.T)
    raise ReductionError("Smith iteration did not converge")


def _psd_factor(X: np.ndarray) -> np.ndarray:
    """L with L L' = X for symmetric PSD X (negative roundoff eigenvalues dropped)."""
    w, V = np.linalg.eigh(0.5 * (X + X.T))
    w = np.clip(w, 0.0, None)
    return V * np.sqrt(w)


@dataclass
class BalancedReduction:
    hankel_sv: np.ndarray
    T: np.ndarray
    T_inv: np.ndarray
    balanced: LinearModel
    rank: int
    cumulative_fraction: np.ndarray = field(init=False)

    def __post_init__(self):
        total = self.hankel_sv.sum()
        self.cumulative_fraction = np.cumsum(self.hankel_sv) / total if total > 0 else np.ones_like(self.hankel_sv)
        if self.cumulative_fraction.size:
            self.cumulative_fraction[-1] = 1.0

    def reduced(self, order: int) -> LinearModel:
        if not 1 <= order <= self.rank:
            raise ValueError(f"order must lie in [1, {self.rank}]")
        b = self.balanced
        k = slice(0, order)
        return LinearModel(b.A[k, k], b.B[k], b.C[:, k], b.f_star[k], b.h_star, b.discrete, b.T_s)

    def order_for(self, fraction: float) -> int:
        return int(np.searchsorted(self.cumulative_fraction, fraction - 1e-15) + 1)

    def to_csv(self, header_lines=()) -> str:
        return reduction_csv(self.hankel_sv, self.cumulative_fraction, header_lines)


def reduction_csv(hankel_sv, cumulative, header_lines=()) -> str:
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["order", "hankel_sv", "cumulative_fraction"])
    for i, (s, c) in enumerate(zip(hankel_sv, cumulative), start=1):
        w.writerow([i, f"{s:.17g}", f"{c:.17g}"])
    return buf.getvalue()


def balanced_truncation(model: LinearModel) -> BalancedReduction:
    """Square-root balancing of a Schur-stable discrete model.

    The returned transformation is restricted to the numerical rank of the
    Hankel operator (singular values above 1e-9 times the largest).
    """
    if not model.discrete:
        raise ValueError("balanced truncation expects a discrete model")
    rho = spectral_radius(model.A)
    if rho >= 1:
        raise ReductionError(f"A is not Schur stable (spectral radius {rho:.6g})")
    Wc = dlyap_smith(model.A, model.B @ model.B.T)
    Wo = dlyap_smith(model.A.T, model.C.T @ model.C)
    Lc = _psd_factor(Wc)
    Lo = _psd_factor(Wo)
    U, sv, Vt = np.linalg.svd(Lo.T @ Lc)
    rank = int(np.sum(sv > RANK_RTOL * sv[0])) if sv.size and sv[0] > 0 else 0
    if rank == 0:
        raise ReductionError("Hankel operator is numerically zero")
    s = sv[:rank]
    inv_sqrt = 1.0 / np.sqrt(s)
    T = inv_sqrt[:, None] * (U[:, :rank].T @ Lo.T)
    T_inv = (Lc @ Vt[:rank].T) * inv_sqrt[None, :]
    return BalancedReduction(s, T, T_inv, model.transform(T, T_inv), rank)


def lag(model: LinearModel) -> int:
    """Smallest l with rank [C; CA; ...; CA^(l-1)] = n_x (n_x + 1 if unobservable)."""
    n = model.n_x
    rows = []
    M = model.C
    for ell in range(1, n + 1):
        rows.append(M)
        O = np.vstack(rows)
        sv = np.linalg.svd(O, compute_uv=False)
        if sv.size and sv[0] > 0 and np.sum(sv > RANK_RTOL * sv[0]) == n:
            return ell
        M = M @ model.A
    return n + 1


def worst_case_curve(reductions: list[BalancedReduction], n_orders: int | None = None) -> np.ndarray:
    """Pointwise minimum of cumulative-fraction curves (padded with 1 beyond each rank)."""
    if not reductions:
        raise ValueError("need at least one reduction")
    n = n_orders or max(r.hankel_sv.size for r in reductions)
    curves = np.ones((len(reductions), n))
    for i, r in enumerate(reductions):
        k = min(n, r.cumulative_fraction.size)
        curves[i, :k] = r.cumulative_fraction[:k]
    return curves.min(axis=0)
