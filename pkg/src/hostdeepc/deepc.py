"""Data-enabled predictive control with input basis functions.

Inputs enter the predictor through a static map ``phi`` (identity for raw
DeePC, Hill-type saturations for DeePC/BF); the optimiser works on the
increments ``delta phi`` so that ``phi_prev + Delta @ delta_phi`` is the
planned input sequence, with ``Delta`` the block lower-triangular matrix of
identity blocks.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .params import CellParams
from .qp import QPError, QPProblem, QPSolution, solve_qp
from .sim import U_MAX, U_MIN, StepContext

RANK_RTOL = 1e-9
TIE_BREAK = 1e-12


class PersistencyError(ValueError):
    """Offline data too short or not persistently exciting."""


# ---------------------------------------------------------------------------
# Hankel matrices

def hankel(signal, L: int) -> np.ndarray:
    """Block-Hankel matrix of depth ``L``; column j stacks samples j..j+L-1."""
    w = np.asarray(signal, dtype=float)
    if w.ndim == 1:
        w = w[:, None]
    T, n = w.shape
    if not 1 <= L <= T:
        raise ValueError(f"depth L={L} must satisfy 1 <= L <= T={T}")
    cols = T - L + 1
    idx = np.arange(L)[:, None] + np.arange(cols)[None, :]
    return w[idx].transpose(0, 2, 1).reshape(L * n, cols)


def numerical_rank(M: np.ndarray, rtol: float = RANK_RTOL) -> int:
    sv = np.linalg.svd(np.asarray(M, dtype=float), compute_uv=False)
    if sv.size == 0 or sv[0] == 0:
        return 0
    return int(np.sum(sv > rtol * sv[0]))


def is_persistently_exciting(signal, order: int) -> bool:
    """True iff the depth-``order`` Hankel matrix has full row rank."""
    H = hankel(signal, order)
    return numerical_rank(H) == H.shape[0]


def min_data_length(n_u: int, T_ini: int, N: int, n_x: int) -> int:
    """Fewest samples that can be persistently exciting of order T_ini + N + n_x."""
    for v in (n_u, T_ini, N, n_x):
        if int(v) != v or v < 1:
            raise ValueError("all arguments must be integers >= 1")
    return (n_u + 1) * (T_ini + N + n_x) - 1


class HankelStore:
    """Input/output record with Hankel columns maintained by appending."""

    def __init__(self, depth: int, n_u: int, n_y: int, capacity: int = 256):
        if depth < 1:
            raise ValueError("depth must be >= 1")
        self.L = depth
        self.n_u = n_u
        self.n_y = n_y
        self._u = np.empty((capacity, n_u))
        self._y = np.empty((capacity, n_y))
        self._Hu = np.empty((depth * n_u, capacity))
        self._Hy = np.empty((depth * n_y, capacity))
        self.T = 0

    @property
    def columns(self) -> int:
        return max(self.T - self.L + 1, 0)

    def _grow(self):
        cap = 2 * self._u.shape[0]
        for name in ("_u", "_y"):
            old = getattr(self, name)
            new = np.empty((cap, old.shape[1]))
            new[: self.T] = old[: self.T]
            setattr(self, name, new)
        for name in ("_Hu", "_Hy"):
            old = getattr(self, name)
            new = np.empty((old.shape[0], cap))
            new[:, : self.columns] = old[:, : self.columns]
            setattr(self, name, new)

    def append(self, u, y) -> None:
        if self.T == self._u.shape[0]:
            self._grow()
        self._u[self.T] = u
        self._y[self.T] = y
        self.T += 1
        if self.T >= self.L:
            j = self.T - self.L
            self._Hu[:, j] = self._u[j: self.T].ravel()
            self._Hy[:, j] = self._y[j: self.T].ravel()

    def extend(self, us, ys) -> None:
        for u, y in zip(np.atleast_2d(us), np.atleast_2d(ys)):
            self.append(u, y)

    @property
    def u(self) -> np.ndarray:
        return self._u[: self.T]

    @property
    def y(self) -> np.ndarray:
        return self._y[: self.T]

    @property
    def Hu(self) -> np.ndarray:
        return self._Hu[:, : self.columns]

    @property
    def Hy(self) -> np.ndarray:
        return self._Hy[:, : self.columns]

    def blocks(self, T_ini: int, N: int, transformed: bool = True) -> "HankelBlocks":
        if T_ini + N != self.L:
            raise ValueError(f"T_ini + N = {T_ini + N} does not match depth {self.L}")
        if self.columns < 1:
            raise ValueError("not enough data for a single Hankel column")
        pu, py = T_ini * self.n_u, T_ini * self.n_y
        Hu, Hy = self.Hu, self.Hy
        return HankelBlocks(Hu[:pu], Hu[pu:], Hy[:py], Hy[py:], T_ini, N, transformed)


@dataclass
class HankelBlocks:
    U_p: np.ndarray
    U_f: np.ndarray
    Y_p: np.ndarray
    Y_f: np.ndarray
    T_ini: int
    N: int
    transformed: bool = True

    def __post_init__(self):
        W = self.U_p.shape[1]
        if W < 1 or any(M.shape[1] != W for M in (self.U_f, self.Y_p, self.Y_f)):
            raise ValueError("Hankel blocks must share a positive column count")
        if self.U_p.shape[0] % self.T_ini or self.U_f.shape[0] % self.N:
            raise ValueError("block row counts inconsistent with T_ini and N")

    @property
    def W(self) -> int:
        return self.U_p.shape[1]

    @property
    def n_u(self) -> int:
        return self.U_p.shape[0] // self.T_ini

    @property
    def n_y(self) -> int:
        return self.Y_p.shape[0] // self.T_ini

    @classmethod
    def from_data(cls, u, y, T_ini: int, N: int, transformed: bool = True) -> "HankelBlocks":
        Hu = hankel(u, T_ini + N)
        Hy = hankel(y, T_ini + N)
        n_u = Hu.shape[0] // (T_ini + N)
        n_y = Hy.shape[0] // (T_ini + N)
        return cls(Hu[: T_ini * n_u], Hu[T_ini * n_u:], Hy[: T_ini * n_y], Hy[T_ini * n_y:],
                   T_ini, N, transformed)


# ---------------------------------------------------------------------------
# basis functions

@dataclass(frozen=True)
class BasisParams:
    """Estimated input-nonlinearity parameters (physical units)."""

    A_t: float
    A_g: float
    h_g: float

    def __post_init__(self):
        if not (self.A_t > 0 and self.A_g > 0 and self.h_g > 0):
            raise ValueError("basis parameters must be strictly positive")
        if self.h_g < 1:
            raise ValueError("h_g must be >= 1 for a monotone basis")

    @classmethod
    def from_params(cls, params: CellParams, delta=(0.0, 0.0, 0.0)) -> "BasisParams":
        """Estimates X(1 + d) for (A_t, A_g, h_g) with relative errors ``delta``."""
        d_t, d_g, d_h = delta
        return cls(params.A_t * (1 + d_t), params.A_g * (1 + d_g), params.h_g * (1 + d_h))


def phi(u_s, u_g, bp: BasisParams) -> np.ndarray:
    """Basis map on physical inputs; broadcasts over arrays."""
    u_s = np.asarray(u_s, dtype=float)
    u_g = np.asarray(u_g, dtype=float)
    if np.any(u_s < 0) or np.any(u_g < 0):
        raise ValueError("inputs must be nonnegative")
    # 1 / (1 + c / u) keeps rounding monotone where u / (c + u) does not
    with np.errstate(divide="ignore"):
        inv_s = bp.A_t / u_s
        inv_g = (bp.A_g / u_g) ** bp.h_g
    return np.stack([1.0 / (1.0 + inv_s), 1.0 / (1.0 + inv_g)], axis=-1)


def phi_inverse(z, bp: BasisParams) -> np.ndarray:
    """Inverse basis map; returns physical (u_s, u_g) along the last axis."""
    z = np.asarray(z, dtype=float)
    if np.any(z < 0) or np.any(z >= 1) or not np.all(np.isfinite(z)):
        raise ValueError("basis values must lie in [0, 1)")
    z1, z2 = z[..., 0], z[..., 1]
    return np.stack([bp.A_t * z1 / (1.0 - z1), bp.A_g * (z2 / (1.0 - z2)) ** (1.0 / bp.h_g)], axis=-1)


class IdentityBasis:
    """Raw DeePC: the predictor sees normalised inputs directly."""

    name = "identity"

    def forward(self, u_norm) -> np.ndarray:
        return np.asarray(u_norm, dtype=float).copy()

    def inverse(self, z) -> np.ndarray:
        return np.asarray(z, dtype=float).copy()


class HillBasis:
    """Saturating basis on physical inputs, wrapped for normalised inputs."""

    name = "hill"

    def __init__(self, bp: BasisParams, u_bar):
        self.bp = bp
        self.u_bar = np.asarray(u_bar, dtype=float)

    @classmethod
    def for_params(cls, params: CellParams, bp: BasisParams | None = None) -> "HillBasis":
        return cls(bp or BasisParams.from_params(params), (params.u_s_bar, params.u_g_bar))

    def forward(self, u_norm) -> np.ndarray:
        u = np.asarray(u_norm, dtype=float) * self.u_bar
        return phi(u[..., 0], u[..., 1], self.bp)

    def inverse(self, z) -> np.ndarray:
        return phi_inverse(z, self.bp) / self.u_bar


# ---------------------------------------------------------------------------
# the quadratic program

@dataclass(frozen=True)
class DeePCWeights:
    Q_diag: tuple = (0.1, 1.0)
    R_diag: tuple = (1.0, 10.0)
    rho_g: float = 0.01
    rho_y: float = 10.0
    N: int = 20
    T_ini: int = 5

    def __post_init__(self):
        if min(self.Q_diag) < 0 or min(self.R_diag) < 0:
            raise ValueError("Q and R must be positive semidefinite")
        if self.rho_g < 0 or self.rho_y < 0:
            raise ValueError("rho_g and rho_y must be >= 0")
        if self.N < 1 or self.T_ini < 1:
            raise ValueError("N and T_ini must be >= 1")

    @classmethod
    def raw_defaults(cls, **kw) -> "DeePCWeights":
        """Defaults for DeePC on untransformed inputs."""
        return cls(R_diag=(0.1, 200.0), **kw)

    def Q(self) -> np.ndarray:
        return np.kron(np.eye(self.N), np.diag(self.Q_diag))

    def R(self) -> np.ndarray:
        return np.kron(np.eye(self.N), np.diag(self.R_diag))


def accumulation_matrix(N: int, n_u: int) -> sp.csr_matrix:
    """Block lower-triangular matrix of identity blocks."""
    return sp.kron(sp.csr_matrix(np.tril(np.ones((N, N)))), sp.identity(n_u), format="csr")


def build_qp(blocks: HankelBlocks, phi_ini, y_ini, phi_prev, reference, weights: DeePCWeights,
             phi_min, phi_max, use_slack: bool = True) -> QPProblem:
    """Assemble the regularised Delta-input DeePC problem.

    Layout: ``g`` (W), ``dphi`` (N n_u), ``y`` (N n_y), then ``sigma_y``
    (T_ini n_y) when ``use_slack``, and the 1-norm epigraph variables
    ``t_g`` (W, when rho_g > 0) and ``t_y`` (T_ini n_y, when the slack is
    used and rho_y > 0).
    """
    N, T_ini = weights.N, weights.T_ini
    if blocks.N != N or blocks.T_ini != T_ini:
        raise ValueError("Hankel blocks built for a different (T_ini, N)")
    n_u, n_y, W = blocks.n_u, blocks.n_y, blocks.W
    phi_ini = np.asarray(phi_ini, dtype=float).ravel()
    y_ini = np.asarray(y_ini, dtype=float).ravel()
    phi_prev = np.asarray(phi_prev, dtype=float).ravel()
    r = np.asarray(reference, dtype=float).ravel()
    phi_min = np.asarray(phi_min, dtype=float).ravel()
    phi_max = np.asarray(phi_max, dtype=float).ravel()
    if phi_ini.size != T_ini * n_u or y_ini.size != T_ini * n_y:
        raise ValueError("initial trajectories must have length T_ini")
    if phi_prev.size != n_u or phi_min.size != n_u or phi_max.size != n_u:
        raise ValueError("phi_prev and bounds must have n_u entries")
    if r.size != N * n_y:
        raise ValueError(f"reference must hold N={N} samples of {n_y} outputs")
    if len(weights.Q_diag) != n_y or len(weights.R_diag) != n_u:
        raise ValueError("weight diagonals do not match the data dimensions")
    slack_tol = 1e-9
    if np.any(phi_prev < phi_min - slack_tol) or np.any(phi_prev > phi_max + slack_tol):
        raise ValueError("previous input lies outside the input bounds")

    n_s = T_ini * n_y if use_slack else 0
    n_tg = W if weights.rho_g > 0 else 0
    n_ty = n_s if (use_slack and weights.rho_y > 0) else 0
    sizes = {"g": W, "dphi": N * n_u, "y": N * n_y, "sigma_y": n_s, "t_g": n_tg, "t_y": n_ty}
    layout, start = {}, 0
    for name, size in sizes.items():
        layout[name] = slice(start, start + size)
        start += size
    n = start

    gs, ds, ys, ss = (layout[k].start for k in ("g", "dphi", "y", "sigma_y"))
    pu, py, fu = T_ini * n_u, T_ini * n_y, N * n_u
    Delta = np.tril(np.ones((N, N)))
    A = np.zeros((pu + py + fu + N * n_y, n))
    A[:pu, gs:gs + W] = blocks.U_p
    A[pu:pu + py, gs:gs + W] = blocks.Y_p
    if n_s:
        A[pu:pu + py, ss:ss + n_s] = -np.eye(n_s)
    A[pu + py:pu + py + fu, gs:gs + W] = blocks.U_f
    A[pu + py:pu + py + fu, ds:ds + fu] = -np.kron(Delta, np.eye(n_u))
    A[pu + py + fu:, gs:gs + W] = blocks.Y_f
    A[pu + py + fu:, ys:ys + N * n_y] = -np.eye(N * n_y)
    phi_prev_stack = np.tile(phi_prev, N)
    b = np.concatenate([phi_ini, y_ini, phi_prev_stack, np.zeros(N * n_y)])

    Q = np.tile(weights.Q_diag, N)
    R = np.tile(weights.R_diag, N)
    P_diag = np.zeros(n)
    P_diag[layout["y"]] = 2 * Q
    P_diag[layout["dphi"]] = 2 * R
    if weights.rho_g == 0:
        P_diag[layout["g"]] = 2 * TIE_BREAK
    q = np.zeros(n)
    q[layout["y"]] = -2 * Q * r
    q[layout["t_g"]] = weights.rho_g
    q[layout["t_y"]] = weights.rho_y

    # input box on the accumulated increments: +-Delta dphi
    acc = sp.coo_matrix(accumulation_matrix(N, n_u))
    G_r = [acc.row, fu + acc.row]
    G_c = [ds + acc.col, ds + acc.col]
    G_v = [acc.data, -acc.data]
    h_parts = [np.tile(phi_max, N) - phi_prev_stack, phi_prev_stack - np.tile(phi_min, N)]
    m = 2 * fu

    def epigraph(var_start, t_start, size):
        # v - t <= 0 and -v - t <= 0
        nonlocal m
        k = np.arange(size)
        G_r.extend([m + k, m + k, m + size + k, m + size + k])
        G_c.extend([var_start + k, t_start + k, var_start + k, t_start + k])
        G_v.extend([np.ones(size), -np.ones(size), -np.ones(size), -np.ones(size)])
        h_parts.append(np.zeros(2 * size))
        m += 2 * size

    if n_tg:
        epigraph(gs, layout["t_g"].start, W)
    if n_ty:
        epigraph(ss, layout["t_y"].start, n_s)
    G = sp.csc_matrix((np.concatenate(G_v), (np.concatenate(G_r), np.concatenate(G_c))), shape=(m, n))
    h = np.concatenate(h_parts)

    return QPProblem(sp.diags(P_diag, format="csc"), q, A, b, G, h, layout, constant=float(Q @ (r * r)))


# ---------------------------------------------------------------------------
# receding-horizon controller

@dataclass
class DeePCController:
    """DeePC (raw or with basis functions) with online data appending.

    The controller keeps its own copy of the input/output record. On each
    call it absorbs the pairs that appeared in the harness history since
    the previous call, then plans from the latest ``T_ini`` pairs.
    """

    weights: DeePCWeights = field(default_factory=DeePCWeights)
    basis: object = field(default_factory=IdentityBasis)
    u_min: np.ndarray = field(default_factory=lambda: U_MIN.copy())
    u_max: np.ndarray = field(default_factory=lambda: U_MAX.copy())
    n_x: int = 5
    tol: float = 1e-8
    use_slack: bool = True
    append_online: bool = True
    check_pe: bool = True
    track_rank: bool = False

    def __post_init__(self):
        self.u_min = np.asarray(self.u_min, dtype=float)
        self.u_max = np.asarray(self.u_max, dtype=float)
        self.phi_min = self.basis.forward(self.u_min)
        self.phi_max = self.basis.forward(self.u_max)
        self.store: HankelStore | None = None
        self._absorbed = 0
        self.last_step_flagged = False
        self.last_solution: QPSolution | None = None
        self.rank_deficient_steps: list[int] = []
        self.pe_order = self.weights.T_ini + self.weights.N + self.n_x

    @property
    def name(self) -> str:
        return "deepc-bf" if isinstance(self.basis, HillBasis) else "deepc"

    def initialize(self, u_data, y_data) -> None:
        """Load offline data; checks the length bound and persistency of excitation."""
        u_data = np.atleast_2d(np.asarray(u_data, dtype=float))
        y_data = np.atleast_2d(np.asarray(y_data, dtype=float))
        n_u, n_y = u_data.shape[1], y_data.shape[1]
        w = self.weights
        T_min = min_data_length(n_u, w.T_ini, w.N, self.n_x)
        if self.check_pe:
            if len(u_data) < T_min:
                raise PersistencyError(f"{len(u_data)} samples, at least {T_min} required")
            z = self.basis.forward(u_data)
            if not is_persistently_exciting(z, self.pe_order):
                raise PersistencyError(f"input data is not persistently exciting of order {self.pe_order}")
        self.store = HankelStore(w.T_ini + w.N, n_u, n_y, capacity=max(256, 2 * len(u_data)))
        self.store.extend(self.basis.forward(u_data), y_data)
        self._absorbed = len(u_data)

    def data_rank_ok(self) -> bool:
        """Full row rank of the stored input Hankel matrix of order T_ini + N + n_x."""
        return is_persistently_exciting(self.store.u, self.pe_order)

    def plan(self, u_hist, y_hist, reference) -> QPSolution:
        w = self.weights
        z_hist = self.basis.forward(u_hist[-w.T_ini:])
        blocks = self.store.blocks(w.T_ini, w.N)
        problem = build_qp(blocks, z_hist, y_hist[-w.T_ini:], z_hist[-1], reference, w,
                           self.phi_min, self.phi_max, use_slack=self.use_slack)
        return solve_qp(problem, tol=self.tol, presolve=not self.use_slack or None)

    def __call__(self, ctx: StepContext) -> np.ndarray:
        if self.store is None:
            self.initialize(ctx.u_hist, ctx.y_hist)
        elif self.append_online and len(ctx.u_hist) > self._absorbed:
            new = slice(self._absorbed, len(ctx.u_hist))
            self.store.extend(self.basis.forward(ctx.u_hist[new]), ctx.y_hist[new])
            self._absorbed = len(ctx.u_hist)
        if self.track_rank and not self.data_rank_ok():
            self.rank_deficient_steps.append(ctx.k)

        u_prev = ctx.u_hist[-1]
        try:
            sol = self.plan(ctx.u_hist, ctx.y_hist, ctx.future_reference(self.weights.N))
        except (QPError, ValueError, FloatingPointError, np.linalg.LinAlgError):
            sol = None
        self.last_solution = sol
        if sol is None or not sol.ok:
            self.last_step_flagged = True
            return np.clip(u_prev, self.u_min, self.u_max)
        z_prev = self.basis.forward(u_prev)
        z_next = np.clip(z_prev + sol["dphi"][: len(z_prev)], self.phi_min, self.phi_max)
        self.last_step_flagged = False
        if isinstance(self.basis, HillBasis):
            z_next = np.minimum(z_next, np.nextafter(1.0, 0.0))
        return np.clip(self.basis.inverse(z_next), self.u_min, self.u_max)
