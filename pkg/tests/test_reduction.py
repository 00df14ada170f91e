import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from hostdeepc.model import N_STATES, InputPair, rhs_unchecked
from hostdeepc.reduction import (LinearModel, ReductionError, balanced_truncation, discretize, dlyap_smith, lag,
                                 linearize, worst_case_curve)
from hostdeepc.sim import SimConfig, integrate_interval, numerical_jacobian, steady_state

from support import jacobian_mp_forward

U_REST = InputPair(1e3, 1.0)


@pytest.fixture(scope="module")
def lin(params, x_rest):
    return linearize(x_rest, U_REST, params)


# linearisation -------------------------------------------------------------------


def test_equilibrium_of_linear_model_is_operating_point(lin, x_rest, params):
    u = U_REST.normalized(params)
    residual = lin.A @ x_rest + lin.B @ u + lin.f_star
    assert np.max(np.abs(residual) / np.maximum(np.abs(x_rest), 1.0)) < SimConfig().ss_threshold * 10


def test_output_row_for_mature_gfp_is_unit_vector(lin):
    row = lin.C[1]
    assert np.count_nonzero(row) == 1 and row[15] == pytest.approx(1e-4, rel=1e-9)


def test_jacobian_matches_one_sided_oracle_at_equilibrium(params, x_rest):
    J = numerical_jacobian(lambda z: rhs_unchecked(z, 1e3, 1.0, params), x_rest)
    Jo = jacobian_mp_forward(x_rest, 1e3, 1.0, params)
    mask = np.abs(Jo) > 1e-8
    assert np.max(np.abs(J - Jo)[mask] / np.abs(Jo)[mask]) < 1e-4


def test_jacobian_row_scaled_accuracy_off_equilibrium(params, x_rest):
    """Away from equilibrium some rows are dominated by roundoff in f, so the
    error is measured against the largest scaled entry of each row."""
    x = integrate_interval(x_rest, InputPair(4e4, 3.5), None, 30.0, SimConfig(), params)
    J = numerical_jacobian(lambda z: rhs_unchecked(z, 4e4, 3.5, params), x)
    Jo = jacobian_mp_forward(x, 4e4, 3.5, params)
    scale = 1.0 + np.abs(x)
    err = np.abs(J - Jo) * scale
    ref = np.max(np.abs(Jo) * scale, axis=1, keepdims=True)
    assert np.max(err / ref) < 1e-4


def test_linear_model_checks_dimensions():
    with pytest.raises(ValueError):
        LinearModel(np.eye(2), np.ones((2, 1)), np.ones((1, 2)), f_star=np.ones(3))
    with pytest.raises(ValueError):
        LinearModel(np.eye(2), np.ones((2, 1)), np.ones((1, 2)), discrete=True)


# discretisation ----------------------------------------------------------------


def test_discretize_zero_dynamics():
    B = np.array([[1.0, 2.0], [3.0, 4.0]])
    d = discretize(LinearModel(np.zeros((2, 2)), B, np.eye(2)), 10.0)
    assert np.allclose(d.A, np.eye(2)) and np.allclose(d.B, 10 * B)
    assert d.discrete and d.T_s == 10.0


def test_discretize_scalar():
    d = discretize(LinearModel([[-0.3]], [[2.0]], [[1.0]], f_star=[0.5]), 2.0)
    assert d.A[0, 0] == pytest.approx(np.exp(-0.6), rel=1e-14)
    assert d.B[0, 0] == pytest.approx(2.0 * (1 - np.exp(-0.6)) / 0.3, rel=1e-13)
    assert d.f_star[0] == pytest.approx(0.5 * (1 - np.exp(-0.6)) / 0.3, rel=1e-13)


def test_discretize_rejects_discrete_input():
    d = discretize(LinearModel([[-1.0]], [[1.0]], [[1.0]]), 1.0)
    with pytest.raises(ValueError):
        discretize(d, 1.0)


def test_discrete_step_matches_linear_ode():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((4, 4)) * 0.2 - 0.3 * np.eye(4)
    m = LinearModel(A, rng.standard_normal((4, 2)), rng.standard_normal((1, 4)), f_star=rng.standard_normal(4))
    d = discretize(m, 3.0)
    x0, u = rng.standard_normal(4), rng.standard_normal(2)
    sol = solve_ivp(lambda t, x: m.A @ x + m.B @ u + m.f_star, (0, 3.0), x0, method="DOP853",
                    rtol=1e-13, atol=1e-14)
    assert np.allclose(d.A @ x0 + d.B @ u + d.f_star, sol.y[:, -1], rtol=0, atol=1e-9)


def test_linearization_is_first_order_accurate(params, x_rest, lin):
    """One-step prediction error of the discretised model shrinks quadratically."""
    d = discretize(lin, 10.0)
    u = U_REST.normalized(params)
    direction = np.random.default_rng(2).uniform(-1, 1, N_STATES) * x_rest
    cfg = SimConfig(rtol=1e-11, atol=1e-12)
    errs = []
    for eps in (0.04, 0.02, 0.01):
        x0 = x_rest + eps * direction
        x1 = integrate_interval(x0, U_REST, None, 10.0, cfg, params)
        pred = d.A @ x0 + d.B @ u + d.f_star
        errs.append(np.max(np.abs(x1 - pred) / np.maximum(x_rest, 1.0)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.9), orders


# balanced truncation ---------------------------------------------------------------


def test_smith_iteration_solves_lyapunov():
    rng = np.random.default_rng(1)
    A = rng.standard_normal((5, 5))
    A *= 0.9 / np.max(np.abs(np.linalg.eigvals(A)))
    Q = np.eye(5)
    X = dlyap_smith(A, Q)
    assert np.allclose(X, A @ X @ A.T + Q, atol=1e-10)
    assert np.allclose(X, sla.solve_discrete_lyapunov(A, Q), rtol=1e-9)


def test_diagonal_system_analytic_singular_values():
    a = np.array([0.5, -0.8])
    b = np.array([1.0, 0.3])
    c = np.array([0.7, 2.0])
    m = LinearModel(np.diag(a), b[:, None], c[None, :], discrete=True, T_s=1.0)
    # Gramians of a diagonal system: W_ij = b_i b_j / (1 - a_i a_j)
    Wc = np.outer(b, b) / (1 - np.outer(a, a))
    Wo = np.outer(c, c) / (1 - np.outer(a, a))
    expected = np.sqrt(np.sort(np.linalg.eigvals(Wc @ Wo).real)[::-1])
    red = balanced_truncation(m)
    assert np.allclose(red.hankel_sv, expected, rtol=1e-10)
    assert np.allclose(red.T @ red.T_inv, np.eye(2), atol=1e-10)


def test_balanced_model_has_equal_diagonal_gramians():
    rng = np.random.default_rng(5)
    A = rng.standard_normal((6, 6))
    A *= 0.7 / np.max(np.abs(np.linalg.eigvals(A)))
    m = LinearModel(A, rng.standard_normal((6, 2)), rng.standard_normal((2, 6)), discrete=True, T_s=1.0)
    red = balanced_truncation(m)
    b = red.balanced
    Wc = sla.solve_discrete_lyapunov(b.A, b.B @ b.B.T)
    Wo = sla.solve_discrete_lyapunov(b.A.T, b.C.T @ b.C)
    assert np.allclose(Wc, np.diag(red.hankel_sv), atol=1e-9 * red.hankel_sv[0])
    assert np.allclose(Wo, np.diag(red.hankel_sv), atol=1e-9 * red.hankel_sv[0])
    assert np.all(np.diff(red.hankel_sv) <= 0)
    assert np.all(np.diff(red.cumulative_fraction) >= 0) and red.cumulative_fraction[-1] == 1.0
    for k in range(20):
        assert np.allclose(b.markov(k), m.markov(k), atol=1e-8)
    assert red.reduced(3).n_x == 3
    with pytest.raises(ValueError):
        red.reduced(7)
    assert red.to_csv().splitlines()[0] == "order,hankel_sv,cumulative_fraction"


def test_unstable_model_rejected():
    m = LinearModel([[1.1]], [[1.0]], [[1.0]], discrete=True, T_s=1.0)
    with pytest.raises(ReductionError):
        balanced_truncation(m)
    with pytest.raises(ValueError):
        balanced_truncation(LinearModel([[-1.0]], [[1.0]], [[1.0]]))


def test_uncontrollable_mode_restricts_rank():
    m = LinearModel(np.diag([0.5, 0.3]), [[1.0], [0.0]], [[1.0, 1.0]], discrete=True, T_s=1.0)
    red = balanced_truncation(m)
    assert red.rank == 1 and red.T.shape == (1, 2)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_hankel_values_invariant_under_similarity(seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((4, 4))
    A *= 0.8 / np.max(np.abs(np.linalg.eigvals(A)))
    m = LinearModel(A, rng.standard_normal((4, 2)), rng.standard_normal((2, 4)), discrete=True, T_s=1.0)
    T = rng.standard_normal((4, 4)) + 3 * np.eye(4)
    if np.linalg.cond(T) > 1e3:
        return
    sv = balanced_truncation(m).hankel_sv
    sv_t = balanced_truncation(m.transform(T, np.linalg.inv(T))).hankel_sv
    assert np.allclose(sv, sv_t, rtol=1e-8, atol=1e-8 * sv[0])


def test_worst_case_curve_is_pointwise_minimum():
    rng = np.random.default_rng(9)
    reds = []
    for n in (3, 5):
        A = np.diag(rng.uniform(0.1, 0.9, n))
        reds.append(balanced_truncation(LinearModel(A, np.ones((n, 1)), np.ones((1, n)), discrete=True, T_s=1.0)))
    curve = worst_case_curve(reds)
    assert curve.size == 5 and curve[-1] == 1.0
    assert np.all(curve <= reds[0].cumulative_fraction.tolist() + [1, 1])
    with pytest.raises(ValueError):
        worst_case_curve([])


# lag -------------------------------------------------------------------------------


def test_lag_examples():
    assert lag(LinearModel(np.diag([0.1, 0.2, 0.3]), np.ones((3, 1)), np.eye(3), discrete=True, T_s=1.0)) == 1
    companion = np.array([[0, 1, 0], [0, 0, 1], [0.1, -0.2, 0.3]])
    chain = LinearModel(companion, [[0], [0], [1]], [[1, 0, 0]], discrete=True, T_s=1.0)
    assert lag(chain) == 3
    unobservable = LinearModel(np.diag([0.5, 0.2]), np.ones((2, 1)), [[1.0, 0.0]], discrete=True, T_s=1.0)
    assert lag(unobservable) == 3


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 6))
def test_lag_never_increases_when_outputs_added(seed, n):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n)) * 0.3
    C = rng.standard_normal((1, n))
    base = LinearModel(A, np.ones((n, 1)), C, discrete=True, T_s=1.0)
    more = LinearModel(A, np.ones((n, 1)), np.vstack([C, rng.standard_normal((1, n))]), discrete=True, T_s=1.0)
    assert lag(more) <= lag(base)


def test_lag_of_reduced_cell_model(params):
    u = InputPair.from_normalized((1.0, 2.0), params)
    ss = steady_state(u, np.full(N_STATES, 10.0), SimConfig(), params)
    d = discretize(linearize(ss.x, u, params), 10.0)
    red = balanced_truncation(d)
    reduced = red.reduced(5)
    ell = lag(reduced)
    print(f"lag of the 5-state reduction at mid-range inputs: {ell}")
    assert 1 <= ell <= 6
