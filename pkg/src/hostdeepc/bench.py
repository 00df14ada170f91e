"""Experiment protocols: reference suites, data collection, robustness runs and cost reports."""
from __future__ import annotations

import csv
import io
import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import __version__
from .baselines import PIController, PIGains, SLMPCController
from .config import ExperimentConfig, provenance_lines
from .deepc import BasisParams, DeePCController, DeePCWeights, HillBasis, IdentityBasis, PersistencyError
from .model import InputPair, default_initial_state, output_map_unchecked
from .params import CellParams
from .reduction import ReductionError, balanced_truncation, discretize, lag, linearize, worst_case_curve
from .sim import (U_MAX, U_MIN, ClosedLoopError, NoiseSpec, Plant, SimConfig, SteadyStateError, SweepPoint,
                  Trajectory, random_walk_input, reachability_sweep, run_closed_loop, run_open_loop,
                  steady_state, sweep_to_csv)

SS_WINDOW = 10  # samples averaged for the steady-state error


def cost(reference, measured, Q_diag=(0.1, 1.0)) -> float:
    """Mean Q-weighted squared tracking error over the response."""
    r = np.asarray(reference, dtype=float)
    y = np.asarray(measured, dtype=float)
    if r.shape != y.shape:
        raise ValueError(f"reference and output lengths differ: {r.shape} vs {y.shape}")
    if len(r) == 0:
        raise ValueError("empty response")
    e = r - y
    return float(np.sum(e * e * np.asarray(Q_diag, dtype=float)) / len(r))


def steady_state_error(reference, output, window: int = SS_WINDOW) -> np.ndarray:
    """Relative error of the mean output over the last ``window`` samples."""
    r = np.asarray(reference, dtype=float)[-1]
    y = np.asarray(output, dtype=float)[-window:].mean(axis=0)
    return np.abs(y - r) / np.maximum(np.abs(r), 1e-12)


# ---------------------------------------------------------------------------
# reachable set and references


def sim_config(config: ExperimentConfig) -> SimConfig:
    return SimConfig(T_s=config.T_s)


def sweep_grids(config: ExperimentConfig) -> tuple[np.ndarray, np.ndarray]:
    """Geometric grid in u_s (the response is saturating), linear in u_g."""
    grid_s = np.geomspace(U_MIN[0], U_MAX[0], config.sweep_n_s)
    grid_g = np.linspace(U_MIN[1], U_MAX[1], config.sweep_n_g)
    return grid_s, grid_g


@lru_cache(maxsize=8)
def _sweep_cached(n_s: int, n_g: int, T_s: float, params: CellParams) -> tuple[SweepPoint, ...]:
    cfg = ExperimentConfig(sweep_n_s=n_s, sweep_n_g=n_g, T_s=T_s)
    grid_s, grid_g = sweep_grids(cfg)
    return tuple(reachability_sweep(grid_s, grid_g, sim_config(cfg), params))


def reachable_set(config: ExperimentConfig, params: CellParams) -> list[SweepPoint]:
    return list(_sweep_cached(config.sweep_n_s, config.sweep_n_g, config.T_s, params))


@dataclass(frozen=True)
class EvalPoint:
    """A step target ``r``; ``u`` is an estimate of the constant input that attains it."""

    index: int
    u: np.ndarray
    r: np.ndarray
    attainable: bool


def _in_polygon(p, poly: np.ndarray) -> bool:
    """Even-odd ray casting; works for non-convex quadrilaterals."""
    x, y = p
    inside = False
    for (x0, y0), (x1, y1) in zip(poly, np.roll(poly, -1, axis=0)):
        if (y0 > y) != (y1 > y) and x < x0 + (y - y0) * (x1 - x0) / (y1 - y0):
            inside = not inside
    return inside


def _bilinear_inverse(r, corners: np.ndarray) -> np.ndarray:
    """Local coordinates (a, b) in [0, 1]^2 of r inside a mapped cell (Newton)."""
    c00, c10, c11, c01 = corners
    ab = np.array([0.5, 0.5])
    for _ in range(30):
        a, b = ab
        F = (1 - a) * (1 - b) * c00 + a * (1 - b) * c10 + a * b * c11 + (1 - a) * b * c01 - r
        J = np.column_stack([(1 - b) * (c10 - c00) + b * (c11 - c01), (1 - a) * (c01 - c00) + a * (c11 - c10)])
        try:
            step = np.linalg.solve(J, F)
        except np.linalg.LinAlgError:
            break
        ab = np.clip(ab - step, 0.0, 1.0)
        if np.abs(step).max() < 1e-12:
            break
    return ab


def _refine_input(u, r, x0, cfg: SimConfig, params: CellParams, max_iter: int = 8) -> np.ndarray:
    """Newton on the steady-state map in (log u_s, u_g); keeps ``u`` if it does not converge."""
    lo = np.array([np.log(U_MIN[0]), U_MIN[1]])
    hi = np.array([np.log(U_MAX[0]), U_MAX[1]])
    x = x0

    def residual(v, x_start):
        ss = steady_state(InputPair.from_normalized((np.exp(v[0]), v[1]), params), x_start, cfg, params)
        return (ss.y - r) / r, ss.x

    v = np.array([np.log(u[0]), u[1]])
    try:
        F, x = residual(v, x)
        for _ in range(max_iter):
            if np.abs(F).max() < 1e-8:
                return np.array([np.exp(v[0]), v[1]])
            J = np.empty((2, 2))
            for j, h in enumerate((1e-5, 1e-5 * max(v[1], 1e-2))):
                e = np.zeros(2)
                e[j] = h
                J[:, j] = (residual(v + e, x)[0] - F) / h
            step = np.linalg.solve(J, -F)
            t = 1.0
            while t > 1e-3:
                v_new = np.clip(v + t * step, lo, hi)
                F_new, x_new = residual(v_new, x)
                if np.abs(F_new).max() < np.abs(F).max():
                    v, F, x = v_new, F_new, x_new
                    break
                t /= 2
            else:
                break
    except (SteadyStateError, np.linalg.LinAlgError):
        pass
    if np.abs(F).max() < 1e-6:
        return np.array([np.exp(v[0]), v[1]])
    return np.asarray(u, dtype=float)


@lru_cache(maxsize=8)
def _evaluation_points(grid: int, q_lo: float, q_hi: float, n_s: int, n_g: int, T_s: float,
                       params: CellParams) -> tuple:
    cfg = ExperimentConfig(grid=grid, quantile_lo=q_lo, quantile_hi=q_hi, sweep_n_s=n_s, sweep_n_g=n_g, T_s=T_s)
    points = reachable_set(cfg, params)
    Y = np.array([[p.y_lambda, p.y_g] for p in points]).reshape(n_s, n_g, 2)
    U = np.array([[p.u_s_norm, p.u_g_norm] for p in points]).reshape(n_s, n_g, 2)
    ok = np.isfinite(Y).all(axis=2)
    if not ok.any():
        raise ValueError("no converged sweep points to build evaluation targets from")
    Yc = Y[ok]
    q = np.linspace(q_lo, q_hi, grid)
    r_lam = np.quantile(Yc[:, 0], q)
    r_g = np.quantile(Yc[:, 1], q)
    cells = [(i, j) for i in range(n_s - 1) for j in range(n_g - 1)
             if ok[i, j] and ok[i + 1, j] and ok[i + 1, j + 1] and ok[i, j + 1]]
    scale = Yc.std(axis=0) + 1e-12
    out = []
    for k, r in enumerate(itertools.product(r_lam, r_g)):
        r = np.array(r)
        u, hit = None, False
        for i, j in cells:
            corners = Y[[i, i + 1, i + 1, i], [j, j, j + 1, j + 1]]
            if _in_polygon(r, corners):
                a, b = _bilinear_inverse(r, corners)
                ls = (1 - a) * np.log(U[i, j, 0]) + a * np.log(U[i + 1, j, 0])
                ug = (1 - b) * U[i, j, 1] + b * U[i, j + 1, 1]
                x0 = points[i * n_g + j].x
                u = _refine_input(np.array([np.exp(ls), ug]), r, x0, sim_config(cfg), params)
                hit = True
                break
        if u is None:
            d = np.where(ok, (((Y - r) / scale) ** 2).sum(axis=2), np.inf)
            u = U[np.unravel_index(np.argmin(d), d.shape)].copy()
        out.append(EvalPoint(k, u, r, hit))
    return tuple(out)


def evaluation_points(config: ExperimentConfig, params: CellParams) -> list[EvalPoint]:
    """grid x grid step targets over the quantile_lo..quantile_hi box of the reachable outputs.

    A target is attainable when it lies in the image of some cell of the
    sweep grid (the computed reachable set, piecewise bilinear between
    sweep points). Its input estimate starts from inverting that cell and
    is then polished by Newton steps on the steady-state map. Unattainable
    targets get the input of the nearest sweep point.
    """
    return list(_evaluation_points(config.grid, config.quantile_lo, config.quantile_hi, config.sweep_n_s,
                                   config.sweep_n_g, config.T_s, params))


def step_references(config: ExperimentConfig, params: CellParams) -> list[np.ndarray]:
    return [np.tile(p.r, (config.ell_s, 1)) for p in evaluation_points(config, params)]


def sinusoid_reference(config: ExperimentConfig, params: CellParams) -> np.ndarray:
    """Both outputs oscillate in phase around the median of the reachable outputs."""
    mid = config.replace(grid=1, quantile_lo=0.5, quantile_hi=1.0)
    centre = evaluation_points(mid, params)[0].r  # median of both reachable outputs
    k = np.arange(config.ell_s)
    wave = 1.0 + config.sin_amplitude * np.sin(2 * np.pi * k / config.sin_period)
    return centre[None, :] * wave[:, None]


def reference_suite(config: ExperimentConfig, params: CellParams) -> list[np.ndarray]:
    if config.reference == "sinusoid":
        return [sinusoid_reference(config, params)]
    return step_references(config, params)


# ---------------------------------------------------------------------------
# data collection


@lru_cache(maxsize=8)
def _rest_state(u_rest: tuple, T_s: float, params: CellParams) -> np.ndarray:
    u = InputPair.from_normalized(u_rest, params)
    return steady_state(u, default_initial_state(), SimConfig(T_s=T_s), params).x


def rest_plant(config: ExperimentConfig, params: CellParams) -> Plant:
    x = _rest_state(tuple(config.u_rest), config.T_s, params)
    return Plant(x.copy(), params, sim_config(config), config.u_rest)


def noise_spec(config: ExperimentConfig, sigma_v: float) -> NoiseSpec:
    return NoiseSpec(sigma_v, config.seed, config.noise_convention)


def collect_data(config: ExperimentConfig, params: CellParams, rep: int = 0,
                 sigma_v: float | None = None) -> tuple[Plant, Trajectory]:
    """Random walk then constant input from the rest state; returns the plant afterwards and the record.

    The random walk is seeded by (seed, rep) only, so every noise level and
    controller sees the same excitation.
    """
    sigma_v = config.sigma_v if sigma_v is None else sigma_v
    plant = rest_plant(config, params)
    parts = []
    if config.n_random_walk:
        ss = np.random.SeedSequence([config.seed, 0, rep])
        parts.append(random_walk_input(config.n_random_walk, config.u_rest, config.rw_step, seed=ss))
    if config.n_constant:
        parts.append(np.tile(config.u_rest, (config.n_constant, 1)))
    data = run_open_loop(plant, np.vstack(parts), noise_spec(config, sigma_v), stream=(1, rep))
    return plant, data


def samples_to_deploy(config: ExperimentConfig, controller: str) -> int:
    if controller == "pi":
        return 0
    return config.n_random_walk + config.n_constant


# ---------------------------------------------------------------------------
# controllers


def make_controller(kind: str, config: ExperimentConfig, params: CellParams, delta=(0.0, 0.0, 0.0)):
    """Fresh controller instance; ``delta`` perturbs the basis estimates (A_t, A_g, h_g)."""
    if kind in ("deepc-bf", "slmpc"):
        weights = DeePCWeights(tuple(config.Q), tuple(config.R_bf), config.rho_g, config.rho_y,
                               config.N, config.T_ini)
        basis = HillBasis.for_params(params, BasisParams.from_params(params, delta))
        if kind == "slmpc":
            return SLMPCController(params, weights, basis, T_s=config.T_s, tol=config.tol)
        return DeePCController(weights, basis, n_x=config.n_x, tol=config.tol)
    if kind == "deepc":
        weights = DeePCWeights(tuple(config.Q), tuple(config.R_raw), config.rho_g, config.rho_y,
                               config.N, config.T_ini)
        return DeePCController(weights, IdentityBasis(), n_x=config.n_x, tol=config.tol)
    if kind == "pi":
        gains = PIGains(config.K_Ig, config.K_Pg, config.K_Is, config.K_Ps)
        return PIController(gains, params, bias_norm=config.u_rest, error_units=config.pi_error_units)
    raise ValueError(f"unknown controller {kind!r}")


# ---------------------------------------------------------------------------
# responses


@dataclass
class ResponseResult:
    controller: str
    label: str
    rep: int
    index: int
    reference: np.ndarray
    cost: float
    ss_error: np.ndarray
    flagged: int
    status: str
    trajectory: Trajectory | None = None
    min_state: float = float("nan")


@dataclass(frozen=True)
class _Task:
    controller: str
    label: str
    rep: int
    index: int
    sigma_v: float
    delta: tuple


def _run_task(task: _Task, config: ExperimentConfig, params: CellParams, plant: Plant,
              history: Trajectory, reference: np.ndarray) -> ResponseResult:
    ctrl = make_controller(task.controller, config, params, task.delta)
    noise = noise_spec(config, task.sigma_v)
    try:
        traj = run_closed_loop(ctrl, reference, plant.copy(), history, noise, stream=(2, task.rep, task.index))
        status = "ok"
    except ClosedLoopError as exc:
        traj, status = exc.trajectory, f"failed: {exc.__cause__ or exc}"
    except PersistencyError as exc:
        traj, status = None, f"failed: {exc}"
    if traj is None or len(traj) < len(reference):
        return ResponseResult(task.controller, task.label, task.rep, task.index, reference[0],
                              float("nan"), np.full(2, np.nan), 0, status.replace("\n", " "), traj)
    y_true = np.array([output_map_unchecked(x, params) for x in traj.x])
    return ResponseResult(task.controller, task.label, task.rep, task.index, reference[0],
                          cost(reference, y_true, config.Q), steady_state_error(reference, y_true),
                          int(traj.flags.sum()), status, traj, float(traj.x.min()))


def _run_batch(args):
    return [_run_task(*a) for a in args]


def run_tasks(tasks: list[_Task], config: ExperimentConfig, params: CellParams,
              references: list[np.ndarray]) -> list[ResponseResult]:
    """Run every task; data collection is shared per (rep, noise level)."""
    starts = {}
    for t in tasks:
        if (t.rep, t.sigma_v) not in starts:
            starts[(t.rep, t.sigma_v)] = collect_data(config, params, t.rep, t.sigma_v)
    jobs = [(t, config, params, *starts[(t.rep, t.sigma_v)], references[t.index]) for t in tasks]
    if config.workers == 1 or len(jobs) == 1:
        return [_run_task(*j) for j in jobs]
    chunks = [jobs[i::config.workers] for i in range(config.workers)]
    with ProcessPoolExecutor(max_workers=config.workers) as pool:
        parts = list(pool.map(_run_batch, chunks))
    out = [r for part in parts for r in part]
    order = {(t.label, t.rep, t.index, t.controller): i for i, t in enumerate(tasks)}
    return sorted(out, key=lambda r: order[(r.label, r.rep, r.index, r.controller)])


# ---------------------------------------------------------------------------
# reports


@dataclass
class CostReport:
    controller: str
    label: str
    costs: np.ndarray
    samples_to_deploy: int
    failures: int = 0
    indices: list = field(default_factory=list)

    def __post_init__(self):
        self.costs = np.asarray(self.costs, dtype=float)
        if np.any(self.costs[np.isfinite(self.costs)] < 0):
            raise ValueError("costs must be nonnegative")

    @property
    def valid(self) -> np.ndarray:
        return self.costs[np.isfinite(self.costs)]

    @property
    def mean(self) -> float:
        return float(self.valid.mean()) if self.valid.size else float("nan")

    @property
    def sd(self) -> float:
        return float(self.valid.std(ddof=1)) if self.valid.size > 1 else 0.0


def build_reports(results: list[ResponseResult], config: ExperimentConfig) -> list[CostReport]:
    groups: dict = {}
    for r in results:
        groups.setdefault((r.controller, r.label), []).append(r)
    reports = []
    for (ctrl, label), rs in groups.items():
        reports.append(CostReport(ctrl, label, [r.cost for r in rs], samples_to_deploy(config, ctrl),
                                  sum(r.status != "ok" for r in rs), [(r.rep, r.index) for r in rs]))
    return reports


def _g(v: float) -> str:
    return repr(float(v)) if np.isfinite(v) else "nan"


RESPONSE_COLUMNS = ["controller", "label", "rep", "index", "r_lambda", "r_g", "cost", "ss_err_lambda",
                    "ss_err_g", "flagged_steps", "min_state", "samples_to_deploy", "status"]


def responses_csv(results: list[ResponseResult], config: ExperimentConfig, header=()) -> str:
    buf = io.StringIO()
    for line in header:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESPONSE_COLUMNS)
    for r in results:
        w.writerow([r.controller, r.label, r.rep, r.index, _g(r.reference[0]), _g(r.reference[1]), _g(r.cost),
                    _g(r.ss_error[0]), _g(r.ss_error[1]), r.flagged, _g(r.min_state),
                    samples_to_deploy(config, r.controller), r.status])
    return buf.getvalue()


def reports_from_csv(text: str) -> list[CostReport]:
    rows = list(csv.DictReader(ln for ln in text.splitlines() if ln and not ln.startswith("#")))
    groups: dict = {}
    for row in rows:
        groups.setdefault((row["controller"], row["label"]), []).append(row)
    return [CostReport(c, l, [float(r["cost"]) for r in rs], int(rs[0]["samples_to_deploy"]),
                       sum(r["status"] != "ok" for r in rs), [(int(r["rep"]), int(r["index"])) for r in rs])
            for (c, l), rs in groups.items()]


def report_csv(reports: list[CostReport], header=()) -> str:
    buf = io.StringIO()
    for line in header:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["controller", "label", "responses", "failures", "mean_cost", "sd_cost", "samples_to_deploy"])
    for r in reports:
        w.writerow([r.controller, r.label, r.costs.size, r.failures, _g(r.mean), _g(r.sd), r.samples_to_deploy])
    return buf.getvalue()


def report_table(reports: list[CostReport]) -> str:
    """Aligned text table, one row per (controller, label)."""
    head = ("controller", "label", "n", "fail", "mean cost", "sd", "samples")
    rows = [(r.controller, r.label, str(r.costs.size), str(r.failures), f"{r.mean:.4g}", f"{r.sd:.4g}",
             str(r.samples_to_deploy)) for r in reports]
    widths = [max(len(x) for x in col) for col in zip(head, *rows)]
    fmt = lambda row: "  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip()
    return "\n".join([fmt(head), fmt(tuple("-" * w for w in widths)), *map(fmt, rows)]) + "\n"


# ---------------------------------------------------------------------------
# experiments


@dataclass
class ExperimentResult:
    files: dict[str, str]
    reports: list[CostReport] = field(default_factory=list)
    results: list[ResponseResult] = field(default_factory=list)
    failures: int = 0
    summary: str = ""


def _header(config: ExperimentConfig, params: CellParams) -> list[str]:
    return provenance_lines(config, params, __version__)


def _suite(config: ExperimentConfig, params: CellParams, groups,
           trajectories: bool = True, with_state: bool = False) -> ExperimentResult:
    """groups: iterable of (controller, label, sigma_v, delta, reps)."""
    refs = reference_suite(config, params)
    tasks = [_Task(c, label, rep, i, s, tuple(d))
             for c, label, s, d, reps in groups for rep in range(reps) for i in range(len(refs))]
    results = run_tasks(tasks, config, params, refs)
    header = _header(config, params)
    reports = build_reports(results, config)
    files = {"responses.csv": responses_csv(results, config, header), "report.csv": report_csv(reports, header)}
    if trajectories:
        for r in results:
            if r.trajectory is not None:
                name = f"traj/{r.controller}_{r.label}_rep{r.rep}_{r.index:02d}.csv"
                files[name] = r.trajectory.to_csv(include_state=with_state, header_lines=header)
    fails = sum(rep.failures for rep in reports)
    return ExperimentResult(files, reports, results, fails, report_table(reports))


def run_sweep(config: ExperimentConfig, params: CellParams) -> ExperimentResult:
    """Reachable set, evaluation points and balanced-truncation energy curves."""
    header = _header(config, params)
    points = reachable_set(config, params)
    files = {"sweep.csv": "".join(f"# {h}\n" for h in header) + sweep_to_csv(points)}
    evals = evaluation_points(config, params)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "u_s_norm", "u_g_norm", "r_lambda", "r_g", "attainable"])
    for p in evals:
        w.writerow([p.index, _g(p.u[0]), _g(p.u[1]), _g(p.r[0]), _g(p.r[1]), int(p.attainable)])
    files["references.csv"] = "".join(f"# {h}\n" for h in header) + buf.getvalue()

    x_rest = _rest_state(tuple(config.u_rest), config.T_s, params)
    nominal = balanced_truncation(discretize(linearize(x_rest, np.asarray(config.u_rest), params), config.T_s))
    local, skipped = [], 0
    for p in points:
        if not p.converged:
            continue
        try:
            m = discretize(linearize(p.x, np.array([p.u_s_norm, p.u_g_norm]), params), config.T_s)
            local.append(balanced_truncation(m))
        except (ReductionError, FloatingPointError):
            skipped += 1
    worst = worst_case_curve(local, nominal.hankel_sv.size) if local else np.full(nominal.hankel_sv.size, np.nan)
    buf = io.StringIO()
    for h in header:
        buf.write(f"# {h}\n")
    buf.write(f"# lag_reduced_5 = {lag(nominal.reduced(min(5, nominal.rank)))}\n")
    buf.write(f"# local_models = {len(local)}, skipped = {skipped}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["order", "hankel_sv", "cumulative_fraction", "worst_case_fraction"])
    for i, (s, c) in enumerate(zip(nominal.hankel_sv, nominal.cumulative_fraction)):
        w.writerow([i + 1, _g(s), _g(c), _g(worst[i])])
    files["reduction.csv"] = buf.getvalue()
    n_ok = sum(p.attainable for p in evals)
    summary = (f"sweep: {sum(p.converged for p in points)}/{len(points)} converged; "
               f"{n_ok}/{len(evals)} evaluation points attainable; "
               f"order for 99%: {nominal.order_for(0.99)}\n")
    return ExperimentResult(files, failures=sum(not p.converged for p in points), summary=summary)


def run_collect(config: ExperimentConfig, params: CellParams) -> ExperimentResult:
    _, data = collect_data(config, params, 0, config.sigma_v)
    files = {"data.csv": data.to_csv(include_state=True, header_lines=_header(config, params))}
    return ExperimentResult(files, summary=f"collected {len(data)} samples\n")


def run_track(config: ExperimentConfig, params: CellParams) -> ExperimentResult:
    label = "sinusoid" if config.reference == "sinusoid" else "steps"
    return _suite(config, params, [(config.controller, label, config.sigma_v, (0.0, 0.0, 0.0), 1)],
                  with_state=True)


def run_robust_noise(config: ExperimentConfig, params: CellParams) -> ExperimentResult:
    groups = [(config.controller, f"sigma_v={s!r}", s, (0.0, 0.0, 0.0), config.repetitions)
              for s in config.sigma_v_levels]
    return _suite(config, params, groups)


def sign_combinations(level: float) -> list[tuple[str, tuple]]:
    """All (+-) combinations of a relative error on (A_t, A_g, h_g)."""
    out = []
    for signs in itertools.product((1, -1), repeat=3):
        tag = "".join("+" if s > 0 else "-" for s in signs)
        out.append((tag, tuple(s * level for s in signs)))
    return out


def run_robust_params(config: ExperimentConfig, params: CellParams) -> ExperimentResult:
    if config.controller != "deepc-bf":
        raise ValueError("basis-parameter uncertainty applies to the deepc-bf controller")
    groups = [(config.controller, "nominal", config.sigma_v, (0.0, 0.0, 0.0), 1)]
    for d in config.delta_levels:
        for tag, delta in sign_combinations(d):
            groups.append((config.controller, f"delta={d!r}:{tag}", config.sigma_v, delta, 1))
    return _suite(config, params, groups)


def run_benchmark(config: ExperimentConfig, params: CellParams) -> ExperimentResult:
    groups = [(c, "benchmark", config.sigma_v, (0.0, 0.0, 0.0), 1) for c in config.controllers]
    return _suite(config, params, groups)


RUNNERS = {
    "sweep": run_sweep,
    "collect-data": run_collect,
    "track": run_track,
    "robust-noise": run_robust_noise,
    "robust-params": run_robust_params,
    "benchmark": run_benchmark,
}


def run_experiment(config: ExperimentConfig, params: CellParams) -> ExperimentResult:
    return RUNNERS[config.kind](config, params)
