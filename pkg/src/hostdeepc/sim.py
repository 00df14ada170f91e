"""Time integration, steady states, measurement noise and the closed-loop harness."""
from __future__ import annotations

import bisect
import copy
import csv
import io
import warnings
from dataclasses import dataclass
from typing import Callable, Iterable, Protocol

import numpy as np
from scipy.integrate import ode
from scipy.linalg import lu_factor, lu_solve

from .model import (N_STATES, InputPair, _jac_clamped, _rhs_clamped, output_map_unchecked,
                    rhs_unchecked)
from .params import CellParams

# admissible normalised input box
U_MIN = np.array([1e-2, 0.0])
U_MAX = np.array([5.0, 4.0])


class IntegrationError(RuntimeError):
    def __init__(self, message: str, time: float):
        super().__init__(f"{message} (t = {time:g} min)")
        self.time = time


class SteadyStateError(RuntimeError):
    def __init__(self, message: str, state: np.ndarray):
        super().__init__(message)
        self.state = state


class ClosedLoopError(RuntimeError):
    def __init__(self, message: str, trajectory: "Trajectory"):
        super().__init__(message)
        self.trajectory = trajectory


@dataclass(frozen=True)
class SimConfig:
    T_s: float = 10.0
    rtol: float = 1e-8
    atol: float = 1e-10
    max_step: float | None = None  # defaults to T_s / 10
    ss_horizon: float = 1e5
    ss_threshold: float = 1e-9

    def __post_init__(self):
        if self.T_s <= 0 or self.rtol <= 0 or self.atol <= 0:
            raise ValueError("T_s and tolerances must be positive")

    @property
    def hmax(self) -> float:
        return self.T_s / 10 if self.max_step is None else self.max_step


@dataclass(frozen=True)
class NoiseSpec:
    """Output noise v ~ N(0, y * sigma_v).

    ``convention`` says how the second argument is read: ``"std"`` gives a
    standard deviation of ``y * sigma_v`` (constant signal-to-noise ratio),
    ``"variance"`` gives a standard deviation of ``sqrt(y * sigma_v)``.
    """

    sigma_v: float = 0.0
    seed: int = 0
    convention: str = "std"

    def __post_init__(self):
        if self.sigma_v < 0:
            raise ValueError("sigma_v must be >= 0")
        if self.convention not in ("std", "variance"):
            raise ValueError("convention must be 'std' or 'variance'")

    def rng(self, stream=()) -> np.random.Generator:
        """Independent generator for a stream key (an int or a tuple of ints)."""
        key = (stream,) if isinstance(stream, (int, np.integer)) else tuple(stream)
        return np.random.default_rng(np.random.SeedSequence([self.seed, *key]))


def apply_measurement_noise(y, spec: NoiseSpec, rng: np.random.Generator) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if np.any(y < 0):
        raise ValueError("outputs must be nonnegative")
    if spec.sigma_v == 0:
        return y.copy()
    if spec.convention == "std":
        std = y * spec.sigma_v
    else:
        std = np.sqrt(y * spec.sigma_v)
    return y + std * rng.standard_normal(y.shape)


class DelayBuffer:
    """Zero-order-hold history of u_g; ``lookup(t)`` returns u_g(t - tau)."""

    def __init__(self, tau: float, u_g0: float, t0: float = 0.0):
        if tau < 0:
            raise ValueError("tau must be >= 0")
        self.tau = float(tau)
        self.u_g0 = float(u_g0)
        self.now = float(t0)
        self._times: list[float] = [float(t0)]
        self._values: list[float] = [float(u_g0)]

    def push(self, t: float, u_g: float) -> None:
        if t < self._times[-1]:
            raise ValueError("samples must be pushed in time order")
        if t == self._times[-1]:
            self._values[-1] = float(u_g)
        else:
            self._times.append(float(t))
            self._values.append(float(u_g))

    def lookup(self, t: float) -> float:
        i = bisect.bisect_right(self._times, t - self.tau) - 1
        return self.u_g0 if i < 0 else self._values[i]

    def breakpoints(self, t0: float, t1: float) -> list[float]:
        """Times in (t0, t1) where the delayed signal may switch."""
        return [tj + self.tau for tj in self._times if t0 < tj + self.tau < t1]

    def evict(self) -> None:
        # keep the newest sample at or before now - tau and everything after
        i = bisect.bisect_right(self._times, self.now - self.tau) - 1
        if i > 0:
            del self._times[:i]
            del self._values[:i]

    def __len__(self):
        return len(self._times)


def _odeint(x, t0, t1, u_s, u_g, params, cfg):
    """Variable-order BDF (VODE) with a compiled vector field and Jacobian."""
    if t1 <= t0:
        return x
    pv = params.packed
    u_s, u_g = float(u_s), float(u_g)
    solver = ode(lambda t, y: _rhs_clamped(t, y, u_s, u_g, pv),
                 lambda t, y: _jac_clamped(t, y, u_s, u_g, pv))
    solver.set_integrator("vode", method="bdf", rtol=cfg.rtol, atol=cfg.atol,
                          nsteps=500000, max_step=cfg.hmax)
    solver.set_initial_value(x, t0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        out = solver.integrate(t1)
    if not solver.successful():
        raise IntegrationError(f"BDF integration failed (code {solver.get_return_code()})", float(solver.t))
    if not np.all(np.isfinite(out)):
        raise IntegrationError("non-finite state", t1)
    return out


def clamp_nonnegative(x: np.ndarray, atol: float, time: float = float("nan")) -> np.ndarray:
    # negatives beyond the clamp band indicate an integration fault, not roundoff
    tol = max(1e3 * atol, 1e-6)
    if np.any(x < -tol):
        raise IntegrationError(f"state went negative (min {x.min():.3g})", time)
    return np.maximum(x, 0.0)


def integrate_interval(state, input: InputPair, delay: DelayBuffer | None, dt: float,
                       cfg: SimConfig, params: CellParams) -> np.ndarray:
    """Integrate over ``dt`` with ``input`` held constant (ZOH).

    When ``delay`` is given, ``input.u_g`` is recorded at ``delay.now`` and the
    synthetic gene sees the delayed signal; ``delay.now`` advances by ``dt``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.array(state, dtype=float)
    if delay is None:
        x = _odeint(x, 0.0, dt, input.u_s, input.u_g, params, cfg)
        return clamp_nonnegative(x, cfg.atol, dt)
    t0 = delay.now
    t1 = t0 + dt
    delay.push(t0, input.u_g)
    knots = [t0, *delay.breakpoints(t0, t1), t1]
    for a, b in zip(knots[:-1], knots[1:]):
        # autonomous within a segment; local time keeps LSODA's step heuristics scale-free
        x = _odeint(x, 0.0, b - a, input.u_s, delay.lookup(a), params, cfg)
    delay.now = t1
    delay.evict()
    return clamp_nonnegative(x, cfg.atol, t1)


# steady states ----------------------------------------------------------

def normalized_derivative(x, input: InputPair, params: CellParams) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return rhs_unchecked(x, input.u_s, input.u_g, params) / np.maximum(np.abs(x), 1.0)


def numerical_jacobian(fun: Callable[[np.ndarray], np.ndarray], x: np.ndarray, rel: float = 1e-6,
                       lo=None, hi=None) -> np.ndarray:
    """Central-difference Jacobian with per-component step rel * (1 + |x_i|).

    Where the stencil would leave ``[lo, hi]`` the difference becomes one-sided.
    """
    x = np.asarray(x, dtype=float)
    lo = np.full(x.size, -np.inf) if lo is None else np.broadcast_to(lo, x.shape)
    hi = np.full(x.size, np.inf) if hi is None else np.broadcast_to(hi, x.shape)
    f0 = fun(x)
    J = np.empty((f0.size, x.size))
    for i in range(x.size):
        h = rel * (1.0 + abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        if x[i] - h < lo[i]:
            xp[i] += h
            J[:, i] = (fun(xp) - f0) / h
        elif x[i] + h > hi[i]:
            xm[i] -= h
            J[:, i] = (f0 - fun(xm)) / h
        else:
            xp[i] += h
            xm[i] -= h
            J[:, i] = (fun(xp) - fun(xm)) / (2 * h)
    return J


def _newton_polish(x, input, params, threshold, max_iter=20):
    fun = lambda z: rhs_unchecked(z, input.u_s, input.u_g, params)
    for _ in range(max_iter):
        r = normalized_derivative(x, input, params)
        if np.max(np.abs(r)) < threshold:
            return x
        J = numerical_jacobian(fun, x)
        step = lu_solve(lu_factor(J), fun(x))
        x_new = x - step
        if np.any(x_new < 0):
            return None
        x = x_new
    r = normalized_derivative(x, input, params)
    return x if np.max(np.abs(r)) < threshold else None


@dataclass
class SteadyState:
    x: np.ndarray
    settle_time: float
    y: np.ndarray


def steady_state(input: InputPair, x0, cfg: SimConfig, params: CellParams) -> SteadyState:
    """Integrate at constant input until the scaled derivative falls below threshold.

    Once the trajectory is close to equilibrium the remaining distance is
    closed by Newton iterations on the vector field, which reaches the
    threshold far more cheaply than integrating out the slow modes.
    """
    if input.u_s < 0 or input.u_g < 0:
        raise ValueError("inputs must be nonnegative")
    x = np.array(x0, dtype=float)
    t = 0.0
    chunk = 50.0
    while True:
        r = np.max(np.abs(normalized_derivative(x, input, params)))
        if r < cfg.ss_threshold:
            return SteadyState(x, t, output_map_unchecked(x, params))
        if r < 1e-4:
            polished = _newton_polish(x, input, params, cfg.ss_threshold)
            if polished is not None and np.allclose(polished, x, rtol=1e-2, atol=1e-6):
                return SteadyState(polished, t, output_map_unchecked(polished, params))
        if t >= cfg.ss_horizon:
            raise SteadyStateError(f"no steady state within {cfg.ss_horizon:g} min (residual {r:.3g})", x)
        dt = min(chunk, cfg.ss_horizon - t)
        x = clamp_nonnegative(_odeint(x, 0.0, dt, input.u_s, input.u_g, params, cfg), cfg.atol, t + dt)
        t += dt
        chunk = min(chunk * 1.5, 5000.0)


@dataclass
class SweepPoint:
    u_s_norm: float
    u_g_norm: float
    y_lambda: float
    y_g: float
    converged: bool
    settle_time: float
    x: np.ndarray | None = None


def reachability_sweep(grid_s: Iterable[float], grid_g: Iterable[float], cfg: SimConfig,
                       params: CellParams, x0=None) -> list[SweepPoint]:
    """Steady-state outputs over a grid of constant normalised inputs.

    Each row of the grid is continued from the previous point's steady state.
    """
    grid_s = list(grid_s)
    grid_g = list(grid_g)
    if not grid_s or not grid_g:
        raise ValueError("grids must be nonempty")
    for us in grid_s:
        if not U_MIN[0] <= us <= U_MAX[0]:
            raise ValueError(f"u_s/u_s_bar={us} outside [{U_MIN[0]}, {U_MAX[0]}]")
    for ug in grid_g:
        if not U_MIN[1] <= ug <= U_MAX[1]:
            raise ValueError(f"u_g/u_g_bar={ug} outside [{U_MIN[1]}, {U_MAX[1]}]")
    from .model import default_initial_state

    start = default_initial_state() if x0 is None else np.asarray(x0, dtype=float)
    points = []
    row_start = start
    for us in grid_s:
        guess = row_start
        for j, ug in enumerate(grid_g):
            u = InputPair.from_normalized((us, ug), params)
            try:
                ss = steady_state(u, guess, cfg, params)
            except (SteadyStateError, IntegrationError) as exc:
                points.append(SweepPoint(us, ug, float("nan"), float("nan"), False, float("nan")))
                guess = getattr(exc, "state", guess)
                continue
            points.append(SweepPoint(us, ug, float(ss.y[0]), float(ss.y[1]), True, ss.settle_time, ss.x))
            guess = ss.x
            if j == 0:
                row_start = ss.x
    return points


def sweep_to_csv(points: list[SweepPoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["u_s_norm", "u_g_norm", "y_lambda_ss", "y_g_ss", "converged", "settle_time_min"])
    for p in points:
        w.writerow([_fmt(p.u_s_norm), _fmt(p.u_g_norm), _fmt(p.y_lambda), _fmt(p.y_g),
                    int(p.converged), _fmt(p.settle_time)])
    return buf.getvalue()


# inputs ---------------------------------------------------------------------

def random_walk_input(n: int, start, step_fraction: float = 0.05, seed: int = 0,
                      u_min=U_MIN, u_max=U_MAX) -> np.ndarray:
    """Clipped random walk of normalised inputs, uniform steps of +-step_fraction of the range."""
    if n < 1:
        raise ValueError("n must be >= 1")
    u_min = np.asarray(u_min, dtype=float)
    u_max = np.asarray(u_max, dtype=float)
    rng = np.random.default_rng(seed)
    span = (u_max - u_min) * step_fraction
    out = np.empty((n, 2))
    u = np.clip(np.asarray(start, dtype=float), u_min, u_max)
    out[0] = u
    for k in range(1, n):
        u = np.clip(u + span * rng.uniform(-1.0, 1.0, 2), u_min, u_max)
        out[k] = u
    return out


# trajectories -----------------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v)) if np.isfinite(v) else "nan"


@dataclass
class Trajectory:
    """Sampled input/output record.

    Row k holds the normalised input u_k applied on [t_k, t_k + T_s) and the
    measurement y_k taken at the end of that interval, so (u_k, y_k) is one
    input/output pair. ``x`` (optional) is the true state at the end of the
    interval.
    """

    t0: float
    T_s: float
    u: np.ndarray
    y: np.ndarray
    x: np.ndarray | None = None
    flags: np.ndarray | None = None

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float).reshape(-1, 2)
        self.y = np.asarray(self.y, dtype=float).reshape(-1, 2)
        if len(self.u) != len(self.y):
            raise ValueError("u and y must have equal length")
        if self.x is not None:
            self.x = np.asarray(self.x, dtype=float).reshape(-1, N_STATES)
            if len(self.x) != len(self.u):
                raise ValueError("x must have the same length as u")
        if self.flags is None:
            self.flags = np.zeros(len(self.u), dtype=bool)

    def __len__(self):
        return len(self.u)

    @property
    def t(self) -> np.ndarray:
        return self.t0 + self.T_s * np.arange(len(self))

    def to_csv(self, include_state: bool = True, header_lines: Iterable[str] = ()) -> str:
        buf = io.StringIO()
        for line in header_lines:
            buf.write(f"# {line}\n")
        cols = ["k", "t_min", "u_s_norm", "u_g_norm", "y_lambda", "y_g"]
        with_x = include_state and self.x is not None
        if with_x:
            cols += [f"x_{i}" for i in range(N_STATES)]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for k in range(len(self)):
            row = [k, f"{self.t0 + self.T_s * k:.17g}"]
            row += [f"{v:.17g}" for v in (*self.u[k], *self.y[k])]
            if with_x:
                row += [f"{v:.17g}" for v in self.x[k]]
            w.writerow(row)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Trajectory":
        lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
        rows = list(csv.reader(lines))
        header, body = rows[0], np.array(rows[1:], dtype=float)
        t = body[:, 1]
        T_s = float(t[1] - t[0]) if len(t) > 1 else 1.0
        x = body[:, 6:6 + N_STATES] if len(header) >= 6 + N_STATES else None
        return cls(float(t[0]), T_s, body[:, 2:4], body[:, 4:6], x)


# plant + closed loop --------------------------------------------------------

class Plant:
    """The simulated cell: true state, clock and light-input delay line."""

    def __init__(self, x0, params: CellParams, cfg: SimConfig, u0_norm=(0.1, 1.0), t0: float = 0.0):
        self.x = np.array(x0, dtype=float)
        self.params = params
        self.cfg = cfg
        u0 = InputPair.from_normalized(u0_norm, params)
        self.delay = DelayBuffer(params.tau_g, u0.u_g, t0)

    @property
    def t(self) -> float:
        return self.delay.now

    def copy(self) -> "Plant":
        return copy.deepcopy(self)

    def output(self) -> np.ndarray:
        return output_map_unchecked(self.x, self.params)

    def advance(self, u_norm) -> np.ndarray:
        """Apply the normalised input for one sample period and return the true output."""
        u = InputPair.from_normalized(u_norm, self.params)
        self.x = integrate_interval(self.x, u, self.delay, self.cfg.T_s, self.cfg, self.params)
        return self.output()


def run_open_loop(plant: Plant, inputs: np.ndarray, noise: NoiseSpec | None = None,
                  stream=0) -> Trajectory:
    inputs = np.asarray(inputs, dtype=float).reshape(-1, 2)
    rng = noise.rng(stream) if noise is not None else None
    t0 = plant.t
    ys, xs = [], []
    for u in inputs:
        y = plant.advance(u)
        if noise is not None:
            y = apply_measurement_noise(y, noise, rng)
        ys.append(y)
        xs.append(plant.x.copy())
    return Trajectory(t0, plant.cfg.T_s, inputs, np.array(ys), np.array(xs))


@dataclass
class StepContext:
    """What a controller sees at decision time k.

    ``u_hist`` and ``y_hist`` hold all completed input/output pairs (offline
    data included), ``x`` is the true state (only model-based controllers
    may use it), ``reference`` the full reference array of the run.
    """

    k: int
    u_hist: np.ndarray
    y_hist: np.ndarray
    x: np.ndarray
    reference: np.ndarray
    params: CellParams
    T_s: float

    def future_reference(self, N: int) -> np.ndarray:
        idx = np.minimum(np.arange(self.k, self.k + N), len(self.reference) - 1)
        return self.reference[idx]


class Controller(Protocol):
    def __call__(self, ctx: StepContext) -> np.ndarray: ...


def run_closed_loop(controller: Controller, reference: np.ndarray, plant: Plant,
                    history: Trajectory, noise: NoiseSpec | None = None,
                    stream=1) -> Trajectory:
    """Receding-horizon loop: decide u_k, hold it for T_s, measure y_k.

    ``reference[k]`` is the target for y_k. ``history`` supplies the pairs
    recorded before the loop starts (at least one). Controllers may set a
    boolean ``last_step_flagged`` attribute to mark fallback steps.
    """
    reference = np.asarray(reference, dtype=float).reshape(-1, 2)
    if len(history) < 1:
        raise ValueError("closed loop needs at least one prior input/output pair")
    rng = noise.rng(stream) if noise is not None else None
    n = len(reference)
    u_hist = np.vstack([history.u, np.empty((n, 2))])
    y_hist = np.vstack([history.y, np.empty((n, 2))])
    n0 = len(history)
    xs = np.empty((n, N_STATES))
    flags = np.zeros(n, dtype=bool)
    t0 = plant.t
    for k in range(n):
        ctx = StepContext(k, u_hist[:n0 + k], y_hist[:n0 + k], plant.x.copy(), reference,
                          plant.params, plant.cfg.T_s)
        try:
            u = np.asarray(controller(ctx), dtype=float).reshape(-1)
            if u.shape != (2,) or not np.all(np.isfinite(u)):
                raise ValueError(f"controller returned an invalid input {u!r}")
            y = plant.advance(u)
        except Exception as exc:
            partial = Trajectory(t0, plant.cfg.T_s, u_hist[n0:n0 + k], y_hist[n0:n0 + k], xs[:k], flags[:k])
            raise ClosedLoopError(f"closed loop aborted at step {k}: {exc}", partial) from exc
        if noise is not None:
            y = apply_measurement_noise(y, noise, rng)
        u_hist[n0 + k] = u
        y_hist[n0 + k] = y
        xs[k] = plant.x
        flags[k] = bool(getattr(controller, "last_step_flagged", False))
    return Trajectory(t0, plant.cfg.T_s, u_hist[n0:], y_hist[n0:], xs, flags)
