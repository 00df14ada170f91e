"""Test-side oracles and fixtures shared across test modules.

Everything here is written independently of the package internals so that
it can serve as a reference: a primal active-set solver for box-constrained
QPs, a model-based MPC, a small LTI plant usable by the closed-loop harness
and a high-precision re-implementation of the cell vector field.
"""
from __future__ import annotations

from dataclasses import dataclass

import mpmath
import numpy as np

# ---------------------------------------------------------------------------
# acceptance bookkeeping

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(criterion: int, ok: bool, detail: str) -> bool:
    ACCEPTANCE[criterion] = (bool(ok), detail)
    print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'} ({detail})")
    return bool(ok)


# ---------------------------------------------------------------------------
# box-constrained QP by primal active sets


def box_qp(H, c, lo, hi, max_iter: int = 500) -> np.ndarray:
    """argmin 1/2 x'Hx + c'x subject to lo <= x <= hi, H positive definite."""
    H = np.asarray(H, dtype=float)
    c = np.asarray(c, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    n = c.size
    x = np.where(np.isfinite(lo) & np.isfinite(hi), 0.5 * (lo + hi), np.clip(0.0, lo, hi))
    fixed = np.zeros(n, dtype=bool)
    for _ in range(max_iter):
        free = ~fixed
        target = x.copy()
        if free.any():
            rhs = -(c[free] + H[np.ix_(free, fixed)] @ x[fixed])
            target[free] = np.linalg.solve(H[np.ix_(free, free)], rhs)
        p = target - x
        # longest feasible step along p
        alpha, block = 1.0, -1
        for i in np.flatnonzero(free):
            if p[i] > 1e-15 and x[i] + p[i] > hi[i]:
                a = (hi[i] - x[i]) / p[i]
            elif p[i] < -1e-15 and x[i] + p[i] < lo[i]:
                a = (lo[i] - x[i]) / p[i]
            else:
                continue
            if a < alpha:
                alpha, block = a, i
        x = x + alpha * p
        if block >= 0:
            x[block] = hi[block] if p[block] > 0 else lo[block]
            fixed[block] = True
            continue
        grad = H @ x + c
        # multiplier sign: at a lower bound the gradient must be >= 0, at an upper bound <= 0
        at_lo = fixed & np.isclose(x, lo)
        viol = np.where(at_lo, -grad, grad)
        viol[~fixed] = -np.inf
        j = int(np.argmax(viol))
        if viol[j] <= 1e-12 * (1 + np.abs(grad).max()):
            return x
        fixed[j] = False
    raise RuntimeError("active-set oracle did not terminate")


# ---------------------------------------------------------------------------
# LTI plants and model-based MPC


def random_stable_lti(rng: np.random.Generator, n: int = 2, m: int = 2, p: int = 2, radius: float = 0.8):
    """Random (A, B, C) with spectral radius ``radius`` and well-conditioned B, C."""
    while True:
        A = rng.standard_normal((n, n))
        A *= radius / np.max(np.abs(np.linalg.eigvals(A)))
        B = rng.standard_normal((n, m))
        C = rng.standard_normal((p, n))
        if np.linalg.cond(B) < 20 and np.linalg.cond(C) < 20:
            return A, B, C


@dataclass(frozen=True)
class _Cfg:
    T_s: float = 1.0


class LTIPlant:
    """x+ = A x + B u, measured y = C x+ (the output at the end of the interval)."""

    def __init__(self, A, B, C, x0=None):
        self.A, self.B, self.C = (np.asarray(M, dtype=float) for M in (A, B, C))
        self.x = np.zeros(self.A.shape[0]) if x0 is None else np.asarray(x0, dtype=float).copy()
        self.params = None
        self.cfg = _Cfg()
        self.k = 0

    @property
    def t(self) -> float:
        return float(self.k)

    def advance(self, u) -> np.ndarray:
        self.x = self.A @ self.x + self.B @ np.asarray(u, dtype=float)
        self.k += 1
        return self.C @ self.x

    def simulate(self, inputs) -> np.ndarray:
        return np.array([self.advance(u) for u in inputs])


def lti_closed_loop(controller, plant: LTIPlant, u_hist, y_hist, reference, steps: int):
    """Drive an LTI plant with a harness-style controller.

    Returns (u_k, x_k, u_{k-1}) per step: the applied input, the state it
    was chosen at and the input before it.
    """
    from hostdeepc.sim import StepContext

    u_hist, y_hist = list(np.atleast_2d(u_hist)), list(np.atleast_2d(y_hist))
    reference = np.asarray(reference, dtype=float)
    out = []
    for k in range(steps):
        ctx = StepContext(k, np.array(u_hist), np.array(y_hist), plant.x.copy(), reference, None, 1.0)
        u = np.asarray(controller(ctx), dtype=float)
        out.append((u, plant.x.copy(), u_hist[-1]))
        u_hist.append(u)
        y_hist.append(plant.advance(u))
    return out


def mpc_first_input(A, B, C, x, u_prev, reference, Q_diag, R_diag, lo, hi) -> np.ndarray:
    """Linear MPC in absolute-input coordinates, solved by the active-set oracle.

    Cost sum_j |y_j - r_j|_Q^2 + |u_j - u_{j-1}|_R^2 with y_j = C x_{j+1}.
    """
    reference = np.asarray(reference, dtype=float)
    N, p = reference.shape
    n, m = B.shape
    Gamma = np.zeros((N * p, N * m))
    free = np.zeros(N * p)
    xk = np.asarray(x, dtype=float)
    for k in range(N):
        xk = A @ xk
        free[k * p:(k + 1) * p] = C @ xk
        for j in range(k + 1):
            Gamma[k * p:(k + 1) * p, j * m:(j + 1) * m] = C @ np.linalg.matrix_power(A, k - j) @ B
    D = np.eye(N * m) - np.eye(N * m, k=-m)
    e = np.zeros(N * m)
    e[:m] = u_prev
    Qb = np.diag(np.tile(Q_diag, N))
    Rb = np.diag(np.tile(R_diag, N))
    H = 2 * (Gamma.T @ Qb @ Gamma + D.T @ Rb @ D)
    c = 2 * (Gamma.T @ Qb @ (free - reference.ravel()) - D.T @ Rb @ e)
    u = box_qp(H, c, np.tile(lo, N), np.tile(hi, N))
    return u[:m]


# ---------------------------------------------------------------------------
# cell vector field in extended precision

GENES = ("t", "m", "q", "z", "g")


def rhs_mp(x, u_s, u_g, params, dps: int = 40):
    """The cell vector field evaluated with mpmath at ``dps`` digits."""
    with mpmath.workdps(dps):
        P = {k: mpmath.mpf(repr(v)) for k, v in vars(params).items() if isinstance(v, float)}
        x = [mpmath.mpf(v) if isinstance(v, mpmath.mpf) else mpmath.mpf(repr(float(v))) for v in x]
        u_s = mpmath.mpf(repr(float(u_s)))
        u_g = mpmath.mpf(repr(float(u_g)))
        m, M, p = x[0:5], x[5:10], x[10:15]
        P_g, s, a = x[15], x[16], x[17]
        gamma = P["gamma_max"] * a / (P["K_gamma"] + a)
        lam = gamma / P["rho"] * sum(M)
        H = (u_g / P["A_g"]) ** P["h_g"]
        alpha = {}
        for g in ("t", "m", "q", "z"):
            alpha[g] = P[f"alpha_max_{g}"] * a / (P[f"theta_{g}"] + a)
        alpha["q"] /= 1 + (p[2] / P["A_q"]) ** P["h_q"]
        alpha["g"] = P["alpha_syn_max"] * a / (P["theta_syn"] + a) * (P["F_b"] + H) / (1 + H)
        dm, dM, dp = [], [], []
        z = p[3]
        for i, g in enumerate(GENES):
            v = gamma / P[f"n_{g}"]
            bind = P[f"k_plus_{g}"] * z * m[i]
            unbind = P[f"k_minus_{g}"] * M[i]
            dm.append(alpha[g] - (lam + P[f"delta_{g}"]) * m[i] - bind + v * M[i] + unbind)
            dM.append(bind - v * M[i] - unbind - lam * M[i])
            dp.append(v * M[i] - lam * p[i])
        dp[3] += sum(gamma / P[f"n_{g}"] * M[i] - P[f"k_plus_{g}"] * z * m[i] + P[f"k_minus_{g}"] * M[i]
                     for i, g in enumerate(GENES))
        dp[4] -= P["mu_g"] * p[4]
        dPg = P["mu_g"] * p[4] - lam * P_g
        imp = p[0] * P["V_t"] * u_s / (P["A_t"] + u_s)
        cat = p[1] * P["V_m"] * s / (P["A_m"] + s)
        ds = imp - cat - lam * s
        da = P["eta_s"] * cat - lam * a - gamma * sum(M)
        return [*dm, *dM, *dp, dPg, ds, da]


def jacobian_mp_forward(x, u_s, u_g, params, rel=mpmath.mpf("1e-18"), dps: int = 50) -> np.ndarray:
    """One-sided differences of the extended-precision vector field."""
    with mpmath.workdps(dps):
        xm = [mpmath.mpf(repr(float(v))) for v in x]
        f0 = rhs_mp(xm, u_s, u_g, params, dps)
        J = np.empty((18, 18))
        for j in range(18):
            h = rel * (1 + abs(xm[j]))
            xp = list(xm)
            xp[j] += h
            f1 = rhs_mp(xp, u_s, u_g, params, dps)
            J[:, j] = [float((b - a) / h) for a, b in zip(f0, f1)]
        return J
