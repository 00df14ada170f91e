"""Convex quadratic programs and a primal-dual interior-point solver.

Problems have the standard form::

    minimise    1/2 x'Px + q'x
    subject to  Ax = b,  Gx <= h

The solver is a Mehrotra predictor-corrector method. Newton systems are
reduced to ``(P + G'DG) dx + A'dy = r`` and then either solved as one dense
KKT system (small problems) or through the Schur complement ``A H^-1 A'``
with a sparse factorisation of ``H`` (problems whose inequalities only
couple a few variables each, such as the DeePC layout).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse import csgraph

OPTIMAL = "optimal"
PRIMAL_INFEASIBLE = "primal_infeasible"
DUAL_INFEASIBLE = "dual_infeasible"
MAX_ITER = "max_iter"
NUMERICAL_ERROR = "numerical_error"


class QPError(RuntimeError):
    """Raised by :meth:`QPSolution.raise_for_status` for non-optimal solves."""


def _as_sparse(M, shape) -> sp.csc_matrix:
    if M is None:
        return sp.csc_matrix(shape)
    return sp.csc_matrix(M, dtype=float)


@dataclass
class QPProblem:
    P: sp.csc_matrix
    q: np.ndarray
    A: sp.csc_matrix
    b: np.ndarray
    G: sp.csc_matrix
    h: np.ndarray
    layout: dict[str, slice] = field(default_factory=dict)
    constant: float = 0.0

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).ravel()
        n = self.q.size
        self.b = np.zeros(0) if self.b is None else np.asarray(self.b, dtype=float).ravel()
        self.h = np.zeros(0) if self.h is None else np.asarray(self.h, dtype=float).ravel()
        self.P = _as_sparse(self.P, (n, n))
        self.A = _as_sparse(self.A, (self.b.size, n))
        self.G = _as_sparse(self.G, (self.h.size, n))
        if self.P.shape != (n, n):
            raise ValueError(f"P has shape {self.P.shape}, expected {(n, n)}")
        if self.A.shape != (self.b.size, n):
            raise ValueError(f"A has shape {self.A.shape}, expected {(self.b.size, n)}")
        if self.G.shape != (self.h.size, n):
            raise ValueError(f"G has shape {self.G.shape}, expected {(self.h.size, n)}")
        for name, sl in self.layout.items():
            if not (0 <= sl.start <= sl.stop <= n):
                raise ValueError(f"layout block {name!r} = {sl} out of range for n = {n}")

    @property
    def n(self) -> int:
        return self.q.size

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ (self.P @ x) + self.q @ x + self.constant)

    def check_convex(self, tol: float = 1e-10) -> None:
        """Raise ValueError unless P is symmetric positive semidefinite (dense check)."""
        Pd = self.P.toarray()
        scale = max(1.0, np.abs(Pd).max(initial=0.0))
        if np.abs(Pd - Pd.T).max(initial=0.0) > tol * scale:
            raise ValueError("P is not symmetric")
        if self.n and np.linalg.eigvalsh(Pd).min() < -tol * scale:
            raise ValueError("P is not positive semidefinite")


@dataclass
class QPSolution:
    x: np.ndarray
    y: np.ndarray  # equality multipliers
    z: np.ndarray  # inequality multipliers
    s: np.ndarray  # inequality slacks
    status: str
    objective: float
    iterations: int
    primal_residual: float
    dual_residual: float
    gap: float
    layout: dict[str, slice] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL

    def __getitem__(self, name: str) -> np.ndarray:
        return self.x[self.layout[name]]

    def raise_for_status(self) -> "QPSolution":
        if not self.ok:
            raise QPError(f"QP solve ended with status {self.status!r}")
        return self


# ---------------------------------------------------------------------------
# linear algebra back ends

class _DenseKKT:
    """LU factorisation of the full (regularised) KKT matrix."""

    def __init__(self, H: np.ndarray, A: np.ndarray, reg: float):
        n, p = H.shape[0], A.shape[0]
        K = np.zeros((n + p, n + p))
        K[:n, :n] = H
        K[:n, n:] = A.T
        K[n:, :n] = A
        self.n = n
        self.K = K.copy()
        K[:n, :n] += reg * np.eye(n)
        K[n:, n:] -= reg * np.eye(p)
        self.lu = sla.lu_factor(K, check_finite=False)

    def solve(self, r1: np.ndarray, r2: np.ndarray):
        rhs = np.concatenate([r1, r2])
        sol = sla.lu_solve(self.lu, rhs, check_finite=False)
        # iterative refinement against the unregularised matrix
        for _ in range(3):
            res = rhs - self.K @ sol
            if np.abs(res).max(initial=0.0) <= 1e-14 * (1.0 + np.abs(rhs).max(initial=0.0)):
                break
            sol += sla.lu_solve(self.lu, res, check_finite=False)
        return sol[: self.n], sol[self.n:]


class _InaccurateSolve(ArithmeticError):
    pass


class _SchurKKT:
    """Sparse factorisation of H and a dense Cholesky of A H^-1 A'."""

    def __init__(self, H: sp.csc_matrix, A_dense: np.ndarray, reg: float):
        n = H.shape[0]
        self.H = H
        self.A = A_dense
        Hr = (H + reg * sp.identity(n, format="csc")).tocsc()
        self.lu = spla.splu(Hr, permc_spec="MMD_AT_PLUS_A")
        if A_dense.shape[0]:
            self.HinvAt = self.lu.solve(np.asfortranarray(A_dense.T))
            S = A_dense @ self.HinvAt
            S = 0.5 * (S + S.T)
            # LU rather than Cholesky: S is PD in exact arithmetic but loses
            # definiteness to roundoff once the barrier weights spread widely
            self.slu = sla.lu_factor(S + reg * np.eye(S.shape[0]), check_finite=False)
        self.reg = reg

    def _solve_once(self, r1, r2):
        Hr1 = self.lu.solve(r1)
        if self.A.shape[0] == 0:
            return Hr1, np.zeros(0)
        dy = sla.lu_solve(self.slu, self.A @ Hr1 - r2, check_finite=False)
        dx = Hr1 - self.HinvAt @ dy
        return dx, dy

    def solve(self, r1, r2):
        dx, dy = self._solve_once(r1, r2)
        scale = 1.0 + max(np.abs(r1).max(initial=0.0), np.abs(r2).max(initial=0.0))
        for _ in range(3):
            e1 = r1 - self.H @ dx - self.A.T @ dy
            e2 = r2 - self.A @ dx
            if max(np.abs(e1).max(initial=0.0), np.abs(e2).max(initial=0.0)) <= 1e-13 * scale:
                break
            ex, ey = self._solve_once(e1, e2)
            dx += ex
            dy += ey
        else:
            e1 = r1 - self.H @ dx - self.A.T @ dy
            e2 = r2 - self.A @ dx
            if max(np.abs(e1).max(initial=0.0), np.abs(e2).max(initial=0.0)) > 1e-9 * scale:
                raise _InaccurateSolve
        return dx, dy


class _BlockStructure:
    """Connected components of the pattern of P + G'G, grouped by size.

    When every component is small, ``P + G'DG`` is block diagonal up to a
    permutation and can be inverted block by block with batched dense
    algebra; each inequality row touches exactly one component.
    """

    def __init__(self, P: sp.csc_matrix, G: sp.csr_matrix):
        n = P.shape[0]
        pat = (abs(P) + abs(G).T @ abs(G)).tocsr()
        ncomp, label = csgraph.connected_components(pat, directed=False)
        self.n = n
        self.max_size = int(np.bincount(label).max()) if n else 0
        Pcoo = P.tocoo()
        G = G.tocsr()
        self.groups = []
        sizes = np.bincount(label, minlength=ncomp)
        nonempty = np.diff(G.indptr) > 0
        row_comp = np.full(G.shape[0], -1)
        row_comp[nonempty] = label[G.indices[G.indptr[:-1][nonempty]]]
        for k in np.unique(sizes):
            comps = np.flatnonzero(sizes == k)
            order = np.argsort(label, kind="stable")
            members = order[np.isin(label[order], comps)].reshape(len(comps), k)
            # local position of each variable inside its block
            pos = np.empty(n, dtype=int)
            slot = np.empty(n, dtype=int)
            pos[members.ravel()] = np.tile(np.arange(k), len(comps))
            slot[members.ravel()] = np.repeat(np.arange(len(comps)), k)
            comp_to_slot = np.full(ncomp, -1)
            comp_to_slot[comps] = np.arange(len(comps))
            P0 = np.zeros((len(comps), k, k))
            in_grp = np.isin(label[Pcoo.row], comps)
            r, c, v = Pcoo.row[in_grp], Pcoo.col[in_grp], Pcoo.data[in_grp]
            np.add.at(P0, (slot[r], pos[r], pos[c]), v)
            rows = np.flatnonzero(np.isin(row_comp, comps))
            Gl = np.zeros((rows.size, k))
            Gsub = G[rows].tocoo()
            Gl[Gsub.row, pos[Gsub.col]] = Gsub.data
            row_slot = comp_to_slot[row_comp[rows]]
            # flattened block entries as a linear map of the row weights d[rows]
            outer = (Gl[:, :, None] * Gl[:, None, :]).reshape(rows.size, k * k)
            tgt = row_slot[:, None] * (k * k) + np.arange(k * k)[None, :]
            D2H = sp.csr_matrix((outer.ravel(), (tgt.ravel(), np.repeat(np.arange(rows.size), k * k))),
                                shape=(len(comps) * k * k, rows.size))
            self.groups.append((members, P0, rows, D2H))
        # CSR pattern of the block-diagonal matrix; block entries are
        # concatenated group by group in row-major order
        r_all = np.concatenate([np.repeat(m, m.shape[1], axis=1).ravel() for m, *_ in self.groups]) \
            if self.groups else np.zeros(0, dtype=int)
        c_all = np.concatenate([np.tile(m, (1, m.shape[1])).ravel() for m, *_ in self.groups]) \
            if self.groups else np.zeros(0, dtype=int)
        self._perm = np.lexsort((c_all, r_all))
        self._indices = c_all[self._perm]
        self._indptr = np.concatenate([[0], np.cumsum(np.bincount(r_all, minlength=n))])

    def to_csr(self, mats) -> sp.csr_matrix:
        data = np.concatenate([M.ravel() for M in mats])[self._perm] if mats else np.zeros(0)
        return sp.csr_matrix((data, self._indices, self._indptr), shape=(self.n, self.n))

    def blocks(self, d: np.ndarray):
        out = []
        for members, P0, rows, D2H in self.groups:
            H = P0 + (D2H @ d[rows]).reshape(P0.shape) if rows.size else P0.copy()
            out.append(H)
        return out


class _BlockKKT:
    """Block-diagonal H with a dense LU of the Schur complement A H^-1 A'."""

    def __init__(self, struct: _BlockStructure, d: np.ndarray, A: np.ndarray, reg: float,
                 cols: np.ndarray | None = None, A_cols: np.ndarray | None = None):
        self.A = A
        Hb = struct.blocks(d)
        Hinv = [np.linalg.inv(H + reg * np.eye(H.shape[1])) for H in Hb]
        self.H = struct.to_csr(Hb)
        self.Hinv = struct.to_csr(Hinv)
        if A.shape[0]:
            self.HinvAt = self.Hinv @ A.T
            # columns of A that are identically zero do not contribute
            if cols is None:
                S = A @ self.HinvAt
            else:
                S = (A[:, cols] if A_cols is None else A_cols) @ self.HinvAt[cols]
            S = 0.5 * (S + S.T)
            self.slu = sla.lu_factor(S + reg * np.eye(S.shape[0]), check_finite=False)

    def H_mul(self, v):
        return self.H @ v

    def _solve_once(self, r1, r2):
        Hr1 = self.Hinv @ r1
        if self.A.shape[0] == 0:
            return Hr1, np.zeros(0)
        dy = sla.lu_solve(self.slu, self.A @ Hr1 - r2, check_finite=False)
        return Hr1 - self.HinvAt @ dy, dy

    def solve(self, r1, r2):
        dx, dy = self._solve_once(r1, r2)
        scale = 1.0 + max(np.abs(r1).max(initial=0.0), np.abs(r2).max(initial=0.0))
        for _ in range(4):
            e1 = r1 - self.H_mul(dx) - self.A.T @ dy
            e2 = r2 - self.A @ dx
            err = max(np.abs(e1).max(initial=0.0), np.abs(e2).max(initial=0.0))
            if err <= 1e-13 * scale:
                return dx, dy
            ex, ey = self._solve_once(e1, e2)
            dx += ex
            dy += ey
        e1 = r1 - self.H_mul(dx) - self.A.T @ dy
        e2 = r2 - self.A @ dx
        if max(np.abs(e1).max(initial=0.0), np.abs(e2).max(initial=0.0)) > 1e-9 * scale:
            raise _InaccurateSolve
        return dx, dy


def _independent_rows(A: np.ndarray, b: np.ndarray, tol: float) -> np.ndarray:
    """Indices of a maximal independent subset of the rows of A (pivoted QR)."""
    if A.shape[0] == 0:
        return np.arange(0)
    _, R, piv = sla.qr(A.T, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    rank = int(np.sum(d > tol * max(d[0], 1e-300))) if d.size else 0
    return np.sort(piv[:rank])


# ---------------------------------------------------------------------------

def solve_qp(problem: QPProblem, tol: float = 1e-8, max_iter: int = 100,
             method: str = "auto", presolve: bool | None = None) -> QPSolution:
    """Solve a convex QP to primal, dual and complementarity residuals below ``tol``.

    ``method`` selects the Newton-system back end: ``"dense"``, ``"schur"``
    ``"block"`` or ``"auto"`` (dense for up to 300 variables plus
    equalities, otherwise block when ``P + G'G`` splits into small blocks,
    otherwise schur).
    ``presolve`` drops linearly dependent equality rows up front; by default
    this happens only when a factorisation breaks down.
    Residuals are measured relative to ``1 + ||data||_inf`` of each block.
    """
    pb = problem
    n = pb.n
    P = pb.P
    q = pb.q
    G = pb.G.tocsr()
    GT = G.T.tocsr()
    h = pb.h
    m = h.size
    A_full = pb.A.toarray()
    b_full = pb.b

    struct = None
    if method == "block" or (method == "auto" and n + b_full.size > 300):
        struct = _BlockStructure(P, G)
        if struct.max_size <= 64:
            method = "block"
        elif method == "block":
            raise ValueError("problem has no small-block structure")
    if method == "auto":
        method = "dense" if n + b_full.size <= 300 else "schur"
    if method not in ("dense", "schur", "block"):
        raise ValueError(f"unknown method {method!r}")

    rows = np.arange(b_full.size)
    if presolve:
        rows = _independent_rows(A_full, b_full, 1e-10)
    A, b = A_full[rows], b_full[rows]
    a_cols = np.flatnonzero(np.any(A_full != 0, axis=0))
    A_c = A[:, a_cols]
    Pd = P.toarray() if method == "dense" else None
    Gd = G.toarray() if method == "dense" else None
    reg = 1e-11

    def to_dense():
        nonlocal method, Pd, Gd
        method, Pd, Gd = "dense", P.toarray(), G.toarray()

    def factor(d):
        if method == "block":
            try:
                with np.errstate(all="raise"):
                    return _BlockKKT(struct, d, A, reg, a_cols, A_c)
            except (np.linalg.LinAlgError, FloatingPointError):
                to_dense()
        if method == "schur":
            H = (P + G.T @ sp.diags(d) @ G).tocsc()
            try:
                with np.errstate(all="raise"):
                    return _SchurKKT(H, A, reg)
            except (np.linalg.LinAlgError, RuntimeError, FloatingPointError):
                to_dense()
        if method == "dense":
            H = Pd + Gd.T @ (d[:, None] * Gd)
            return _DenseKKT(H, A, reg)

    def factor_with_presolve(d):
        nonlocal A, b, rows, A_c
        try:
            return factor(d)
        except (np.linalg.LinAlgError, RuntimeError):
            if rows.size != b_full.size:
                raise
        keep = _independent_rows(A_full, b_full, 1e-10)
        rows, A, b = keep, A_full[keep], b_full[keep]
        A_c = A[:, a_cols]
        return factor(d)

    # initial point: solve the KKT system with unit scaling, then shift s, z inside
    try:
        kkt = factor_with_presolve(np.ones(m))
    except (np.linalg.LinAlgError, RuntimeError):
        return _failed(pb, n, b_full.size, m, NUMERICAL_ERROR, 0)
    try:
        x, _ = kkt.solve(-q + GT @ h, b)
    except _InaccurateSolve:
        to_dense()
        x, _ = factor(np.ones(m)).solve(-q + GT @ h, b)
    s = h - G @ x
    z = s.copy()
    if m:
        alpha_p = -s.min()
        s = s + max(alpha_p + 1.0, 1.0) if alpha_p >= 0 else s
        alpha_d = -z.min()
        z = z + max(alpha_d + 1.0, 1.0) if alpha_d >= 0 else z
        z = np.maximum(z, 1e-2)
        s = np.maximum(s, 1e-2)
    y = np.zeros(b.size)

    q_scale = 1.0 + np.abs(q).max(initial=0.0)
    b_scale = 1.0 + np.abs(b_full).max(initial=0.0)
    h_scale = 1.0 + np.abs(h).max(initial=0.0)

    status = MAX_ITER
    it = 0
    for it in range(1, max_iter + 1):
        Px = P @ x
        r_d = Px + q + A.T @ y + GT @ z
        r_p = A @ x - b
        r_g = G @ x + s - h
        mu = float(s @ z) / m if m else 0.0
        res_p = max(np.abs(A_full @ x - b_full).max(initial=0.0) / b_scale,
                    np.abs(r_g).max(initial=0.0) / h_scale)
        res_d = np.abs(r_d).max(initial=0.0) / q_scale
        if res_p < tol and res_d < tol and mu < tol:
            status = OPTIMAL
            break

        cert = _infeasibility(pb, A, b, x, y, z, q_scale, tol)
        if cert is not None:
            status = cert
            break

        d = z / s if m else np.zeros(0)
        try:
            kkt = factor(d)
        except (np.linalg.LinAlgError, RuntimeError):
            status = NUMERICAL_ERROR
            break

        def newton(kkt, r_sz):
            # ds = -r_g - G dx ; dz = D G dx + (Z r_g - r_sz) / s
            w = (z * r_g - r_sz) / s if m else np.zeros(0)
            dx, dy = kkt.solve(-r_d - GT @ w, -r_p)
            dz = d * (G @ dx) + w
            ds = -r_g - G @ dx
            return dx, dy, dz, ds

        def predictor_corrector(kkt):
            dx, dy, dz, ds = newton(kkt, s * z)
            if m:
                a_aff = _max_step(s, ds, z, dz)
                mu_aff = float((s + a_aff * ds) @ (z + a_aff * dz)) / m
                sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
                dx, dy, dz, ds = newton(kkt, s * z + ds * dz - sigma * mu)
            return dx, dy, dz, ds

        try:
            dx, dy, dz, ds = predictor_corrector(kkt)
        except _InaccurateSolve:
            to_dense()
            dx, dy, dz, ds = predictor_corrector(factor(d))
        alpha = min(1.0, 0.99 * _max_step(s, ds, z, dz)) if m else 1.0
        x = x + alpha * dx
        y = y + alpha * dy
        z = z + alpha * dz
        s = s + alpha * ds
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(z))):
            status = NUMERICAL_ERROR
            break

    y_full = np.zeros(b_full.size)
    y_full[rows] = y
    r_d = P @ x + q + A.T @ y + GT @ z
    return QPSolution(
        x=x, y=y_full, z=z, s=s, status=status,
        objective=pb.objective(x), iterations=it,
        primal_residual=max(np.abs(A_full @ x - b_full).max(initial=0.0),
                            np.maximum(G @ x - h, 0.0).max(initial=0.0)),
        dual_residual=float(np.abs(r_d).max(initial=0.0)),
        gap=float(s @ z) / m if m else 0.0,
        layout=dict(pb.layout),
    )


def _max_step(s, ds, z, dz) -> float:
    a = np.inf
    neg = ds < 0
    if np.any(neg):
        a = min(a, float(np.min(-s[neg] / ds[neg])))
    neg = dz < 0
    if np.any(neg):
        a = min(a, float(np.min(-z[neg] / dz[neg])))
    return min(a, 1.0 / 0.99)


def _infeasibility(pb: QPProblem, A, b, x, y, z, q_scale, tol) -> str | None:
    """Detect Farkas-type certificates in the current iterate."""
    nyz = max(np.abs(y).max(initial=0.0), np.abs(z).max(initial=0.0))
    if nyz > 1e6:
        yy, zz = y / nyz, z / nyz
        if (np.abs(A.T @ yy + pb.G.T @ zz).max(initial=0.0) < 1e-6
                and b @ yy + pb.h @ zz < -1e-6):
            return PRIMAL_INFEASIBLE
    nx = np.abs(x).max(initial=0.0)
    if nx > 1e8:
        dxn = x / nx
        if (np.abs(pb.P @ dxn).max(initial=0.0) < 1e-6 * q_scale
                and np.abs(A @ dxn).max(initial=0.0) < 1e-6
                and (pb.G @ dxn).max(initial=-1.0) < 1e-6
                and pb.q @ dxn < -1e-6):
            return DUAL_INFEASIBLE
    return None


def _failed(pb, n, p, m, status, it) -> QPSolution:
    nan = float("nan")
    return QPSolution(np.full(n, nan), np.full(p, nan), np.full(m, nan), np.full(m, nan),
                      status, nan, it, nan, nan, nan, dict(pb.layout))
