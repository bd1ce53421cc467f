import dataclasses
import json
import math
from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from gpbose.asymptotics import (
    DEFAULT_ANSATZ,
    PRINTED_FREE_ENERGY_CROSSOVER,
    Monomial,
    Parameter,
    Posynomial,
    Rate,
    SideConditionError,
    SystemParams,
    bump_cutoff,
    combine_regimes,
    crossover,
    default_search_grid,
    dyson_quantities,
    ensemble_tolerance,
    error_budget,
    gamma_b,
    j_profile,
    lower_bound_parameters,
    main_formula,
    mono,
    optimal_b,
    pc_is_zero,
    reduced_scattering_length,
    regime_budgets,
    search_ansatz,
    smoothstep_nu,
    upper_bound_budget,
    upper_relative_scaling,
)
from gpbose.ideal_gas import critical_beta

# --------------------------------------------------------------------------
# hand exponent arithmetic at L = 1: a_N = N^-1, rho = N, beta = B N^-2/3.
# Each quantity is an (n, b) pair: the exponents of N and of B.


def hand(n, b=0):
    return (F(n), F(b))


def hmul(*xs):
    return (sum(x[0] for x in xs), sum(x[1] for x in xs))


def hpow(x, q):
    return (x[0] * F(q), x[1] * F(q))


A_N = hand(-1)
RHO = hand(1)
BETA = hand(F(-2, 3), 1)
X = hmul(A_N, hpow(RHO, 2), hpow(BETA, F(5, 2)))


def n_at(x, r):
    """N exponent after B = N^r."""
    return x[0] + x[1] * F(r)


@pytest.fixture(scope="module")
def budgets():
    return regime_budgets()


@pytest.fixture(scope="module")
def moderate(budgets):
    return budgets[0]


@pytest.fixture(scope="module")
def cold(budgets):
    return budgets[1]


# --------------------------------------------------------------------------
# exponent engine

def test_x_scales_as_n_to_minus_two_thirds():
    assert X == (F(-2, 3), F(5, 2))


def test_rate_order_is_lexicographic():
    assert Rate(0, 1) > Rate(0) > Rate(0, -1)
    assert Rate(F(1, 100), -5) > Rate(0, 7)
    assert Rate(1) == 1 and Rate(F(1, 2)) == F(1, 2)


def test_rate_arithmetic():
    r = Rate(F(1, 3), 2)
    assert r + r == Rate(F(2, 3), 4)
    assert r * 3 == Rate(1, 6)
    assert r - r == Rate(0)
    assert r.at(F(1, 100)) == pytest.approx(1 / 3 + 0.02)


def test_unknown_atom_rejected():
    with pytest.raises(KeyError):
        Monomial.make(T=1)


fractions = st.fractions(min_value=-3, max_value=3, max_denominator=60)


@settings(max_examples=100, deadline=None)
@given(a=fractions, c=fractions, a2=fractions, c2=fractions)
def test_monomial_product_adds_exponents(a, c, a2, c2):
    m = Monomial.make(N=a, B=c) * Monomial.make(N=a2, B=c2)
    assert m.n_exp == a + a2 and m.b_exp == c + c2


@settings(max_examples=100, deadline=None)
@given(a=fractions, c=fractions, q=fractions)
def test_monomial_power_scales_exponents(a, c, q):
    m = Monomial.make(N=a, B=c) ** q
    assert m.n_exp == a * q and m.b_exp == c * q


@settings(max_examples=100, deadline=None)
@given(a=fractions, a2=fractions, c=fractions, c2=fractions)
def test_order_matches_numeric_growth(a, a2, c, c2):
    m1, m2 = Monomial.make(N=a, B=c), Monomial.make(N=a2, B=c2)
    if a == a2:
        return
    env = lambda n: {"N": n, "B": 1.0, "L": 1.0, "a": 1.0, "r0": 1.0}
    growth = lambda m: math.log(m.evaluate(env(1e12), 0.0)) - math.log(m.evaluate(env(1e6), 0.0))
    assert (m1.sort_key() < m2.sort_key()) == (growth(m1) < growth(m2))


def test_posynomial_dominant_and_zero():
    p = mono(N=F(1, 3)) + mono(N=F(1, 2), B=-1)
    assert p.dominant().n_exp == F(1, 2)
    assert p.dominant(r=1).n_exp == F(1, 3)
    assert Posynomial().is_zero
    with pytest.raises(ValueError):
        Posynomial().dominant()


def test_delta_dependent_power():
    m = mono(N=F(-2, 3), B=F(5, 2)) ** Rate(F(2, 403), -1)
    t = m.dominant()
    assert t.n_exp == Rate(F(-4, 1209), F(2, 3))
    assert t.b_exp == Rate(F(5, 403), F(-5, 2))


# --------------------------------------------------------------------------
# main formula

def test_main_formula_hot_limit():
    p = SystemParams(200, 1.0, 1.0, 0.01 * critical_beta(200))
    mf = main_formula(p, "grand")
    full = 8 * math.pi * p.a_N * p.volume * p.rho**2
    assert mf.interaction == pytest.approx(full, rel=1e-3)
    assert mf.total == pytest.approx(mf.F0 + mf.interaction, rel=1e-14)


def test_main_formula_cold_limit():
    p = SystemParams(200, 1.0, 1.0, 50.0)
    mf = main_formula(p, "canonical")
    assert mf.rho0 == pytest.approx(p.rho, rel=1e-10)
    assert mf.interaction == pytest.approx(4 * math.pi * p.a_N * p.volume * p.rho**2, rel=1e-9)


def test_main_formula_ensembles_agree():
    p = SystemParams(1000, 1.0, 1.0, 2 * critical_beta(1000))
    c, g = main_formula(p, "canonical"), main_formula(p, "grand")
    assert abs(c.total - g.total) <= ensemble_tolerance(p)


def test_main_formula_rejects_unknown_ensemble():
    with pytest.raises(ValueError):
        main_formula(SystemParams(10, 1.0, 1.0, 1.0), "micro")


def test_system_params_scaling():
    p = SystemParams(1000, 2.0, 1.5, 0.3)
    assert p.a_N * p.N / p.L == pytest.approx(p.a_v, rel=1e-15)
    assert SystemParams.from_B(1000, 2.0, 1.5, p.B).beta == pytest.approx(0.3, rel=1e-14)
    with pytest.raises(ValueError):
        SystemParams(0, 1.0, 1.0, 1.0)


# --------------------------------------------------------------------------
# upper bound

def test_optimal_b_closed_form():
    N = 1000
    p = SystemParams(N, 1.0, 1.0, critical_beta(N))
    a, rho = 1 / N, float(N)
    closed = (a / (N * a * rho + 1 / p.beta)) ** (1 / 3)
    budget = upper_bound_budget(p)
    assert budget.b_opt == pytest.approx(closed, rel=1e-12)
    assert optimal_b(p) == budget.b_opt


def test_upper_bound_exponent_is_minus_one_third():
    p = SystemParams(1000, 1.0, 1.0, critical_beta(1000))
    assert upper_bound_budget(p).exponent == F(-1, 3)


def test_upper_relative_scaling_oracle():
    # b^3 = a_N/(N a_N rho + 1/beta) and N a_N rho = N dominates 1/beta = N^2/3 B^-1
    b = hpow(hmul(A_N, hpow(hand(1), -1)), F(1, 3))
    expected = {
        "a^2/b": hmul(A_N, hpow(b, -1)),
        "volume^2 b^2": hmul(hpow(RHO, 2), A_N, hpow(b, 2)),
        "(a b)^2 rho^3": hmul(A_N, hpow(b, 2), RHO),
        "b^2/beta": hmul(hpow(b, 2), hpow(BETA, -1)),
    }
    got = upper_relative_scaling()
    for k, (n, bb) in expected.items():
        m = got[k].dominant()
        assert (m.n_exp, m.b_exp) == (n, bb), k
    assert max(n for n, _ in expected.values()) == F(-1, 3)


def test_upper_bound_b_term_decays_in_B():
    # the B-dependent relative correction carries B^-1/3, so it fades as beta grows
    small = upper_bound_budget(SystemParams.from_B(1000, 1.0, 1.0, 1.0))
    large = upper_bound_budget(SystemParams.from_B(1000, 1.0, 1.0, 1e3))
    assert small.scaling["B term"].dominant().b_exp == F(-1, 3)
    assert large.relative_error["B term"] == pytest.approx(small.relative_error["B term"] / 10, rel=1e-10)
    assert large.dominant == "a_N (N rho)^1/3"


def test_upper_bound_precondition_failure():
    with pytest.raises(SideConditionError) as e:
        upper_bound_budget(SystemParams(2, 1.0, 50.0, 1.0))
    assert e.value.name in ("jastrow_volume", "core_inside_b")


# --------------------------------------------------------------------------
# lower-bound parameters

def test_moderate_prescribed_parameters(moderate):
    ps = moderate.parameters
    pc = hmul(hpow(BETA, F(-1, 2)), hpow(X, F(81, 403)))
    R = hmul(hpow(RHO, F(-1, 3)), hpow(X, F(3, 403)))
    assert pc == (F(241, 1209), F(1, 403))
    for name, h in (("p_c", pc), ("R", R)):
        m = ps.sym(name).dominant()
        assert (m.n_exp, m.b_exp) == h
        assert ps[name].source == "prescribed"
    for name in ("kappa", "s", "b", "phi"):
        assert ps[name].source == "ansatz"


def test_moderate_side_conditions_pass(moderate):
    assert moderate.parameters.failed() == []


def test_bad_ansatz_fails_side_condition():
    p = SystemParams.from_B(10_000, 1.0, 1.0, 1.0)
    bad = dataclasses.replace(DEFAULT_ANSATZ, kappa=Rate(F(-1, 403)))
    with pytest.raises(SideConditionError) as e:
        lower_bound_parameters(p, "moderate", ansatz=bad)
    assert e.value.name == "kappa_small"


def test_cold_kappa_exponent(cold):
    m = cold.parameters.sym("kappa").dominant()
    assert m.n_exp == F(-3 + 1, 17) and m.b_exp == 0


def test_cold_radius_exponent(cold):
    small = hmul(hpow(A_N, 3), RHO)
    m = cold.parameters.sym("R").dominant()
    assert (m.n_exp, m.b_exp) == hmul(A_N, hpow(small, F(-5, 17)))


def test_pc_zero_branch():
    p = SystemParams.from_B(10_000, 1.0, 1.0, 1.0)
    X_val = p.a_N * p.rho**2 * p.beta**2.5
    mu0 = -2 * X_val ** (162 / 403) / p.beta
    assert pc_is_zero(p, mu0)
    ps = lower_bound_parameters(p, "moderate", mu0=mu0, check=False)
    assert ps.value("p_c") == 0.0 and ps.sym("p_c").is_zero
    assert not pc_is_zero(p, -0.5 * X_val ** (162 / 403) / p.beta)


def test_unknown_regime():
    with pytest.raises(ValueError):
        lower_bound_parameters(SystemParams(100, 1.0, 1.0, 1.0), "warm")


# --------------------------------------------------------------------------
# error budgets

def test_moderate_dominant_rate(moderate):
    kappa = hpow(X, F(2, 403))  # delta-free part of the kappa ansatz
    best, m = moderate.dominant()
    assert m.n_exp.value == kappa[0] == F(-4, 1209)
    assert m.b_exp.value == kappa[1] == F(5, 403)
    assert moderate.dominant_rate() == Rate(F(-4, 1209), F(2, 3))
    assert moderate.verdict()


def test_cold_dominant_rate_at_half_power(cold):
    # with B = N^(1/2) the bracket is led by kappa = (a_N^3 rho)^(1/17)
    kappa = hpow(hmul(hpow(A_N, 3), RHO), F(1, 17))
    assert cold.dominant_rate(F(1, 2)) == kappa[0] == F(-2, 17)
    assert cold.verdict(F(1, 2))


def test_cold_budget_fails_at_fixed_B(cold):
    assert not cold.verdict()


def test_report_format(moderate):
    rep = json.loads(moderate.to_json())
    assert rep["regime"] == "moderate"
    assert {"params", "terms", "dominant", "verdict"} <= set(rep)
    assert {"name", "value", "source"} <= set(rep["params"][0])
    assert {"label", "group", "n_exp", "b_exp", "log_pow"} <= set(rep["terms"][0])


def test_phi_zero_removes_phi_terms(moderate):
    ps = moderate.parameters
    entries = dict(ps.entries)
    entries["phi"] = Parameter("phi", Posynomial(), 0.0, "default")
    bud = error_budget(dataclasses.replace(ps, entries=entries))
    tagged = [t for t in bud.scaling_terms() if t.coefficient == "phi"]
    assert tagged and all(t.vanishes for t in tagged)
    assert [t for t in bud.scaling_terms() if t.group == "Z2"][0].vanishes


def test_search_reproduces_default_ansatz():
    p = SystemParams.from_B(10_000, 1.0, 1.0, 1.0)
    res = search_ansatz(p, default_search_grid(), workers=1)
    assert res.ansatz == DEFAULT_ANSATZ
    assert res.rate == Rate(F(-4, 1209), F(2, 3))
    assert 0 < res.feasible <= res.evaluated


# --------------------------------------------------------------------------
# combining the regimes

def test_crossover_of_two_lines():
    up = [(Rate(-1), Rate(1))]
    down = [(Rate(0), Rate(-1))]
    assert crossover(up, down) == F(1, 2)


def test_free_energy_crossover_and_alpha(budgets):
    comb = combine_regimes(*budgets)
    # moderate kappa piece N^(-4/1209) B^(5/403) against the cold piece
    # kappa |Lambda| beta^-5/2 / N = N^(28/51) B^(-5/2)
    mod = hpow(X, F(2, 403))
    cold_piece = hmul(hpow(hmul(hpow(A_N, 3), RHO), F(1, 17)), hpow(BETA, F(-5, 2)), hand(-1))
    assert cold_piece == (F(28, 51), F(-5, 2))
    r = (cold_piece[0] - mod[0]) / (mod[1] - cold_piece[1])
    assert comb.free_energy_crossover == r == F(7568, 34425)
    assert comb.alpha.value == -n_at(mod, r) == F(4, 6885)
    assert comb.moderate_at_crossover.value == comb.cold_at_crossover.value


def test_one_pdm_crossover_and_sigma(budgets):
    comb = combine_regimes(*budgets)
    mod = hpow(X, F(2, 403))
    r2 = -(mod[0] / 8) / (mod[1] / 8 + F(3, 4))
    assert comb.one_pdm_crossover == r2 == F(4, 7269)
    assert comb.sigma.value == F(4, 6885) / 4 == F(1, 6885)


def test_slack_weakens_alpha(budgets):
    comb = combine_regimes(*budgets)
    assert comb.alpha.delta_coef < 0
    assert comb.alpha.at(F(1, 1000)) > comb.alpha.at(F(1, 100))


def test_printed_free_energy_crossover_constant():
    assert PRINTED_FREE_ENERGY_CROSSOVER == F(7568, 103275)


# --------------------------------------------------------------------------
# Dyson quantities

def test_j_profile_values():
    assert j_profile(0.1) == pytest.approx(20.412, rel=1e-14)
    assert j_profile(1.0) == 0.0
    assert np.all(j_profile(np.array([1.5, 3.0])) == 0.0)
    assert j_profile(0.0) == 24.0


def test_smoothstep_profile():
    q = np.linspace(0, 3, 301)
    nu = smoothstep_nu(q)
    assert np.all(nu[q <= 1] == 0) and np.all(nu[q >= 2] == 1)
    assert np.all(np.diff(nu) >= 0)


def test_reduced_scattering_length_limit():
    a = reduced_scattering_length(1.0, 0.1, 0.2, 1e-9, 1.0)
    assert a == pytest.approx(0.9 * 0.8, rel=1e-12)
    with pytest.raises(SideConditionError):
        reduced_scattering_length(1.0, 0.1, 0.2, 0.2, 1.0)


def test_dyson_quantities(moderate):
    ps = moderate.parameters
    dq = dyson_quantities(ps, lam=0.5)
    assert dq.kappa_prime > 0
    assert dq.a_prime < ps.params.a_N
    assert dq.eps_p(0.0) == pytest.approx(0.5 - dq.mu)
    assert dq.j_values[0.1] == pytest.approx(20.412)
    q = np.array([1e3, 1e4])
    assert np.allclose(dq.eps_p(q), dq.kappa_prime * q * q - dq.mu)


def test_dyson_rejects_negative_kappa_prime(moderate):
    ps = moderate.parameters
    entries = dict(ps.entries)
    entries["kappa"] = dataclasses.replace(entries["kappa"], value=-1.0)
    with pytest.raises(SideConditionError):
        dyson_quantities(dataclasses.replace(ps, entries=entries))


# --------------------------------------------------------------------------
# gamma_b

def test_bump_cutoff_shape():
    assert bump_cutoff(0.0) == pytest.approx(1.0, abs=1e-12)
    assert bump_cutoff(1.0) == 0.0 and bump_cutoff(3.0) == 0.0
    r = np.linspace(0, 1, 201)
    assert np.all(np.diff(bump_cutoff(r)) <= 1e-12)


@pytest.mark.parametrize("k", [0.5, 3.0, 7.0, 12.0])
def test_bump_cutoff_transform_nonnegative(k):
    val = quad(lambda r: bump_cutoff(r) * np.sinc(k * r / math.pi) * r * r, 0, 1, limit=200)[0]
    assert val >= -1e-10


@pytest.fixture(scope="module")
def condensed():
    return SystemParams.from_B(1000, 1.0, 1.0, 1.0)


def test_gamma_b_without_cutoff(condensed):
    g = gamma_b(condensed, 0.2, 2.0, eta=None)
    assert g.gamma_b <= g.rho_omega <= g.rho * (1 + 1e-12)


def test_gamma_b_approaches_rho_omega(condensed):
    gaps = [abs(gamma_b(condensed, R, 0.4).gamma_b - gamma_b(condensed, R, 0.4).rho_omega)
            for R in (0.2, 0.1, 0.05)]
    assert gaps[0] > gaps[1] > gaps[2]


@pytest.mark.parametrize("p_c", [0.0, 15.0, 30.0])
def test_gamma_b_chain_and_thermal_bound(condensed, p_c):
    g = gamma_b(condensed, 0.1, 0.4, p_c=p_c)
    assert g.gamma_b <= g.rho_omega <= g.rho * (1 + 1e-12)
    scale = p_c / condensed.beta + 1 / (condensed.beta * condensed.L)
    assert g.rho_omega >= g.rho_th_gc - g.fitted_constant * scale - 1e-12
    assert math.isfinite(g.fitted_constant) and g.fitted_constant >= 0


def test_gamma_b_domain(condensed):
    with pytest.raises(ValueError):
        gamma_b(condensed, 0.8, 0.4)
    with pytest.raises(ValueError):
        gamma_b(condensed, 0.1, 0.8)
