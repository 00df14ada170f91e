import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hostdeepc.model import (I_A, I_PG_MATURE, N_STATES, SL_M, CellState, DomainError, InputPair,
                             elongation_and_translation_rates, energy_drain, growth_rate,
                             host_transcription_rates, light_activation, output_map, rhs, rhs_unchecked,
                             synthetic_transcription_rate)
from hostdeepc.params import CellParams, ParameterError, parse_keyvalue

from support import rhs_mp

positive = st.floats(min_value=0.0, max_value=1e7, allow_nan=False)


# parameters ---------------------------------------------------------------


def test_default_parameter_file_loads_and_round_trips(params):
    again = CellParams.from_text(params.to_text())
    assert again == params
    assert again.digest() == params.digest()
    assert params.u_g_bar == params.A_g


def test_parameter_file_rejects_unknown_and_missing_keys(params):
    text = params.to_text()
    with pytest.raises(ParameterError, match="unknown"):
        CellParams.from_text(text + "gamma_maks = 1\n")
    with pytest.raises(ParameterError, match="missing"):
        CellParams.from_text("\n".join(text.splitlines()[1:]))
    with pytest.raises(ParameterError, match="duplicate"):
        parse_keyvalue("a = 1\na = 2\n")
    with pytest.raises(ParameterError):
        parse_keyvalue("just words\n")


@pytest.mark.parametrize("field, value", [("rho", -1.0), ("h_g", 0.5), ("F_b", 1.0), ("tau_g", -1.0),
                                          ("A_t", float("nan"))])
def test_invalid_parameter_values_rejected(params, field, value):
    with pytest.raises(ParameterError):
        params.replace(**{field: value})


# rate laws -------------------------------------------------------------------


def test_host_transcription_zero_energy(params):
    rates = host_transcription_rates(0.0, 123.0, params)
    assert all(v == 0.0 for v in rates.values())


def test_host_transcription_half_saturation(params):
    rates = host_transcription_rates(params.theta_t, 0.0, params)
    assert rates["t"] == pytest.approx(params.alpha_max_t / 2, rel=1e-15)


def test_housekeeping_autorepression_quarter(params):
    p = params.replace(h_q=2.0)
    rates = host_transcription_rates(p.theta_q, p.A_q, p)
    assert rates["q"] == pytest.approx(p.alpha_max_q / 4, rel=1e-14)


def test_host_transcription_rates_bounded(params):
    for a in (0.0, 1.0, 1e3, 1e9):
        rates = host_transcription_rates(a, 1e5, params)
        for x, v in rates.items():
            assert 0.0 <= v <= getattr(params, f"alpha_max_{x}")


@pytest.mark.parametrize("call", [
    lambda p: host_transcription_rates(-1.0, 0.0, p),
    lambda p: host_transcription_rates(1.0, -1.0, p),
    lambda p: synthetic_transcription_rate(-1.0, 0.0, p),
    lambda p: synthetic_transcription_rate(1.0, -0.1, p),
    lambda p: elongation_and_translation_rates(-1.0, p),
    lambda p: growth_rate(1.0, [-1.0, 0, 0, 0, 0], p),
])
def test_rate_laws_reject_negative_arguments(params, call):
    with pytest.raises(DomainError):
        call(params)


def test_synthetic_transcription_dark_state_baseline(params):
    assert synthetic_transcription_rate(np.inf, 0.0, params) == pytest.approx(params.alpha_syn_max * params.F_b)


@pytest.mark.parametrize("h_g", [1.0, 2.0, 3.7])
def test_synthetic_transcription_half_activation(params, h_g):
    p = params.replace(h_g=h_g)
    value = synthetic_transcription_rate(np.inf, p.A_g, p)
    assert value == pytest.approx(p.alpha_syn_max * (p.F_b + 1) / 2, rel=1e-14)


def test_synthetic_transcription_saturated_light_half_energy(params):
    value = synthetic_transcription_rate(params.theta_syn, np.inf, params)
    assert value == pytest.approx(params.alpha_syn_max / 2, rel=1e-14)


def test_elongation_rates(params):
    gamma, v = elongation_and_translation_rates(params.K_gamma, params)
    assert gamma == pytest.approx(params.gamma_max / 2)
    gamma0, v0 = elongation_and_translation_rates(0.0, params)
    assert gamma0 == 0.0 and all(x == 0.0 for x in v0.values())
    doubled = params.replace(n_g=2 * params.n_g)
    _, v2 = elongation_and_translation_rates(100.0, doubled)
    _, v1 = elongation_and_translation_rates(100.0, params)
    assert v2["g"] == pytest.approx(v1["g"] / 2, rel=1e-15)


def test_growth_rate_examples(params):
    assert growth_rate(100.0, np.zeros(5), params) == 0.0
    M = np.full(5, params.rho / params.gamma_max / 5)
    assert growth_rate(params.K_gamma, M, params) == pytest.approx(0.5, rel=1e-14)
    M = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    assert growth_rate(50.0, 2 * M, params) == pytest.approx(2 * growth_rate(50.0, M, params), rel=1e-15)
    assert growth_rate(50.0, dict(zip("tmqzg", M)), params) == growth_rate(50.0, M, params)


@settings(max_examples=200, deadline=None)
@given(a1=positive, a2=positive, p_q=positive, u_g=st.floats(0, 10), M=st.lists(positive, min_size=5, max_size=5))
def test_rates_nondecreasing_in_energy(params, a1, a2, p_q, u_g, M):
    lo, hi = sorted((a1, a2))
    r_lo, r_hi = host_transcription_rates(lo, p_q, params), host_transcription_rates(hi, p_q, params)
    assert all(r_lo[x] <= r_hi[x] * (1 + 1e-15) for x in r_lo)
    assert synthetic_transcription_rate(lo, u_g, params) <= synthetic_transcription_rate(hi, u_g, params) * (1 + 1e-15)
    assert elongation_and_translation_rates(lo, params)[0] <= elongation_and_translation_rates(hi, params)[0]
    assert growth_rate(lo, M, params) <= growth_rate(hi, M, params) * (1 + 1e-15)


@settings(max_examples=200, deadline=None)
@given(a=positive, q1=positive, q2=positive)
def test_housekeeping_rate_nonincreasing_in_p_q(params, a, q1, q2):
    lo, hi = sorted((q1, q2))
    assert host_transcription_rates(a, hi, params)["q"] <= host_transcription_rates(a, lo, params)["q"]


@settings(max_examples=100, deadline=None)
@given(u1=st.floats(0, 100), u2=st.floats(0, 100))
def test_light_activation_monotone_and_bounded(params, u1, u2):
    lo, hi = sorted((u1, u2))
    assert params.F_b <= light_activation(lo, params) <= light_activation(hi, params) <= 1.0


# vector field -----------------------------------------------------------------


def test_origin_is_absorbing(params):
    d = rhs(CellState.zeros(), InputPair(0.0, 0.0), 0.0, params)
    assert np.array_equal(d, np.zeros(N_STATES))


def test_rhs_domain_checks(params, x_rest):
    bad = x_rest.copy()
    bad[3] = -1.0
    with pytest.raises(DomainError, match="m_z"):
        rhs(bad, InputPair(1e3, 1.0), 1.0, params)
    with pytest.raises(DomainError):
        rhs(x_rest, InputPair(-1.0, 1.0), 1.0, params)
    with pytest.raises(ValueError):
        rhs(x_rest[:5], InputPair(1.0, 1.0), 1.0, params)


def test_rhs_matches_extended_precision_reference(params):
    rng = np.random.default_rng(3)
    for _ in range(10):
        x = 10 ** rng.uniform(0, 5, N_STATES)
        u_s, u_g = 10 ** rng.uniform(2, 4.7), rng.uniform(0, 4)
        ref = np.array([float(v) for v in rhs_mp(x, u_s, u_g, params)])
        got = rhs_unchecked(x, u_s, u_g, params)
        scale = np.maximum(np.abs(ref), 1e-12 * np.abs(ref).max())
        assert np.max(np.abs(got - ref) / scale) < 1e-11


def _random_boundary_states(rng, n):
    for _ in range(n):
        x = 10 ** rng.uniform(-2, 6, N_STATES)
        zero = rng.random(N_STATES) < rng.uniform(0.05, 0.6)
        zero[rng.integers(N_STATES)] = True
        x[zero] = 0.0
        yield x, zero, 10 ** rng.uniform(1, 4.7), rng.uniform(0, 4)


def test_quasi_positivity(params):
    rng = np.random.default_rng(0)
    for x, zero, u_s, u_g in _random_boundary_states(rng, 1000):
        d = rhs(x, InputPair(u_s, u_g), u_g, params)
        assert np.all(d[zero] >= 0.0), np.flatnonzero(zero & (d < 0))


def test_energy_drain_identity(params):
    rng = np.random.default_rng(1)
    for _ in range(1000):
        x = 10 ** rng.uniform(-2, 6, N_STATES)
        lam = growth_rate(x[I_A], x[SL_M], params)
        assert energy_drain(x, params) == pytest.approx(params.rho * lam, rel=1e-12)
        # the same drain appears in the energy equation
        d = rhs_unchecked(x, 0.0, 0.0, params)
        s = x[16]
        catabolised = x[11] * params.V_m * s / (params.A_m + s)
        expected = params.eta_s * catabolised - lam * x[I_A] - energy_drain(x, params)
        assert d[I_A] == pytest.approx(expected, rel=1e-9, abs=1e-9 * abs(params.eta_s * catabolised))


def test_output_map_normalisation(params):
    x = np.zeros(N_STATES)
    x[I_PG_MATURE] = 1e4
    assert output_map(x, params)[1] == 1.0
    # lambda = 1e-2 / min gives y_lambda = 1
    x[I_A] = params.K_gamma
    x[SL_M] = 0.0
    x[5] = 1e-2 * params.rho * 2 / params.gamma_max
    assert output_map(x, params)[0] == pytest.approx(1.0, rel=1e-14)
    assert np.array_equal(output_map(np.zeros(N_STATES), params), np.zeros(2))


def test_rhs_is_deterministic(params, x_rest):
    a = rhs_unchecked(x_rest, 1e3, 1.0, params)
    b = rhs_unchecked(x_rest.copy(), 1e3, 1.0, params)
    assert a.tobytes() == b.tobytes()


def test_cell_state_views(x_rest):
    s = CellState(x_rest)
    assert s.p_z == x_rest[13] and s.P_g == x_rest[15] and s.a == x_rest[17]
    assert list(s.M) == ["t", "m", "q", "z", "g"]
    assert "P_g=" in repr(s)
    with pytest.raises(ValueError):
        CellState(np.zeros(3))
