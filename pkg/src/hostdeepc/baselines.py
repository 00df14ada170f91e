"""Reference controllers: decentralised PI and successive-linearisation MPC."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .deepc import DeePCWeights, HillBasis, IdentityBasis, accumulation_matrix
from .params import CellParams
from .qp import QPError, QPProblem, QPSolution, solve_qp
from .reduction import LinearModel, discretize, linearize
from .sim import U_MAX, U_MIN, StepContext

# ---------------------------------------------------------------------------
# PI


@dataclass(frozen=True)
class PIGains:
    K_Ig: float = 1e-6
    K_Pg: float = 1e-5
    K_Is: float = 4e4
    K_Ps: float = 4e3

    def __post_init__(self):
        if not all(np.isfinite(v) for v in (self.K_Ig, self.K_Pg, self.K_Is, self.K_Ps)):
            raise ValueError("PI gains must be finite")


class PIController:
    """Two decoupled PI loops: y_lambda drives u_s, y_g drives u_g.

    ``error_units`` selects how errors and inputs are scaled before the
    gains apply. ``"physical"`` uses 1/min and molecules for the errors and
    molecules / light ratio for the inputs; ``"normalized"`` applies the
    gains to normalised errors and normalised inputs. Integration is the
    rectangle rule at ``T_s``; the integrator is frozen whenever the
    unclipped command would leave the input box (conditional integration).
    """

    name = "pi"

    def __init__(self, gains: PIGains | None = None, params: CellParams | None = None,
                 bias_norm=(0.1, 1.0), u_min=U_MIN, u_max=U_MAX, error_units: str = "physical"):
        if error_units not in ("physical", "normalized"):
            raise ValueError("error_units must be 'physical' or 'normalized'")
        self.gains = gains or PIGains()
        self.params = params or CellParams.default()
        self.error_units = error_units
        self.u_min = np.asarray(u_min, dtype=float)
        self.u_max = np.asarray(u_max, dtype=float)
        # loop order: index 0 -> (y_lambda, u_s), index 1 -> (y_g, u_g)
        self.K_P = np.array([self.gains.K_Ps, self.gains.K_Pg])
        self.K_I = np.array([self.gains.K_Is, self.gains.K_Ig])
        if error_units == "physical":
            self.y_scale = np.array([self.params.y_lambda_bar, self.params.y_g_bar])
            self.u_scale = np.array([self.params.u_s_bar, self.params.u_g_bar])
        else:
            self.y_scale = np.ones(2)
            self.u_scale = np.ones(2)
        self.bias = np.asarray(bias_norm, dtype=float)
        self.integral = np.zeros(2)
        self.last_step_flagged = False

    def reset(self) -> None:
        self.integral = np.zeros(2)

    def step(self, error_norm, T_s: float) -> np.ndarray:
        """Normalised input for normalised output errors r - y."""
        e = np.asarray(error_norm, dtype=float) * self.y_scale
        if not np.all(np.isfinite(e)):
            raise ValueError("errors must be finite")
        trial = self.integral + e * T_s
        u_trial = self.bias + (self.K_P * e + self.K_I * trial) / self.u_scale
        inside = (u_trial >= self.u_min) & (u_trial <= self.u_max)
        self.integral = np.where(inside, trial, self.integral)
        u = self.bias + (self.K_P * e + self.K_I * self.integral) / self.u_scale
        return np.clip(u, self.u_min, self.u_max)

    def __call__(self, ctx: StepContext) -> np.ndarray:
        e = ctx.reference[min(ctx.k, len(ctx.reference) - 1)] - ctx.y_hist[-1]
        return self.step(e, ctx.T_s)


# ---------------------------------------------------------------------------
# SLMPC


def prediction_matrices(model: LinearModel, x0: np.ndarray, N: int):
    """Stacked outputs y_k = C x_{k+1} + h for k = 0..N-1 under inputs v_0..v_{N-1}.

    Returns (Gamma, free) with y = Gamma @ col(v) + free.
    """
    n, m, p = model.n_x, model.n_u, model.n_y
    Gamma = np.zeros((N * p, N * m))
    free = np.zeros(N * p)
    x = np.asarray(x0, dtype=float)
    # impulse blocks C A^j B
    CAjB = []
    CAj = model.C
    for j in range(N):
        CAjB.append(CAj @ model.B)
        CAj = CAj @ model.A
    for k in range(N):
        x = model.A @ x + model.f_star
        free[k * p:(k + 1) * p] = model.C @ x + model.h_star
        for j in range(k + 1):
            Gamma[k * p:(k + 1) * p, j * m:(j + 1) * m] = CAjB[k - j]
    return Gamma, free


def build_tracking_qp(Gamma: np.ndarray, free: np.ndarray, phi_prev, reference,
                      weights: DeePCWeights, phi_min, phi_max) -> QPProblem:
    """Model-based counterpart of the DeePC problem, in (dphi, y)."""
    N = weights.N
    n_u = len(weights.R_diag)
    n_y = len(weights.Q_diag)
    phi_prev = np.asarray(phi_prev, dtype=float).ravel()
    r = np.asarray(reference, dtype=float).ravel()
    Delta = accumulation_matrix(N, n_u).toarray()
    nd, ny = N * n_u, N * n_y
    layout = {"dphi": slice(0, nd), "y": slice(nd, nd + ny)}
    prev_stack = np.tile(phi_prev, N)
    # y - Gamma Delta dphi = Gamma prev_stack + free
    A = np.hstack([-Gamma @ Delta, np.eye(ny)])
    b = Gamma @ prev_stack + free
    Q = np.tile(weights.Q_diag, N)
    R = np.tile(weights.R_diag, N)
    P = sp.diags(np.concatenate([2 * R, 2 * Q]), format="csc")
    q = np.concatenate([np.zeros(nd), -2 * Q * r])
    G = np.vstack([np.hstack([Delta, np.zeros((nd, ny))]), np.hstack([-Delta, np.zeros((nd, ny))])])
    h = np.concatenate([np.tile(phi_max, N) - prev_stack, prev_stack - np.tile(phi_min, N)])
    return QPProblem(P, q, A, b, G, h, layout, constant=float(Q @ (r * r)))


@dataclass
class SLMPCController:
    """Relinearise at (x_t, phi(u_{t-1})) every step and solve a linear MPC problem.

    Uses the true plant state and exact model parameters.
    """

    params: CellParams
    weights: DeePCWeights = field(default_factory=DeePCWeights)
    basis: object = None
    T_s: float = 10.0
    u_min: np.ndarray = field(default_factory=lambda: U_MIN.copy())
    u_max: np.ndarray = field(default_factory=lambda: U_MAX.copy())
    tol: float = 1e-8

    name = "slmpc"

    def __post_init__(self):
        if self.basis is None:
            self.basis = HillBasis.for_params(self.params)
        self.u_min = np.asarray(self.u_min, dtype=float)
        self.u_max = np.asarray(self.u_max, dtype=float)
        self.phi_min = self.basis.forward(self.u_min)
        self.phi_max = self.basis.forward(self.u_max)
        self.last_step_flagged = False
        self.last_solution: QPSolution | None = None

    def plan(self, x, u_prev, reference) -> QPSolution:
        z_prev = self.basis.forward(u_prev)
        cont = linearize(x, u_prev, self.params, basis=self.basis)
        model = discretize(cont, self.T_s)
        Gamma, free = prediction_matrices(model, x, self.weights.N)
        pb = build_tracking_qp(Gamma, free, z_prev, reference, self.weights, self.phi_min, self.phi_max)
        return solve_qp(pb, tol=self.tol)

    def __call__(self, ctx: StepContext) -> np.ndarray:
        u_prev = np.clip(ctx.u_hist[-1], self.u_min, self.u_max)
        try:
            sol = self.plan(ctx.x, u_prev, ctx.future_reference(self.weights.N))
        except (QPError, FloatingPointError, ValueError, np.linalg.LinAlgError):
            sol = None
        self.last_solution = sol
        if sol is None or not sol.ok:
            self.last_step_flagged = True
            return u_prev
        self.last_step_flagged = False
        z = np.clip(self.basis.forward(u_prev) + sol["dphi"][:2], self.phi_min, self.phi_max)
        if isinstance(self.basis, IdentityBasis):
            return np.clip(z, self.u_min, self.u_max)
        return np.clip(self.basis.inverse(np.minimum(z, np.nextafter(1.0, 0.0))), self.u_min, self.u_max)
