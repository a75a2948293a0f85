import math

import numpy as np
import pytest
from hypothesis import given, settings as hsettings
from hypothesis import strategies as st

from errors import ConfigurationError, DomainError, UnsupportedOrderError
from ladder_renewal import LadderKind, exact_ladder_pmf, renewal_table
from limit_theory import (LimitModel, PsiTable, a_20_closed, a_20_quadrature, a_generic_quadrature,
                          exact_psi_table_20, exponential_limit_sf, field_joint_laplace, field_marginal_laplace,
                          field_second_moment, hitting_asymptotic, kac_from_zero, kac_moment_value, limit_model_for,
                          load_psi_table, ordered_visit_limit, prediction_table, resolve_rate)
from walk_models import get_law

positive = st.floats(min_value=0.05, max_value=3.0, allow_nan=False)


@pytest.mark.parametrize("u,v,expected", [(1, 1, 2.0), (0.25, 0.75, 0.5), (0, 3, 0.0)])
def test_a_closed(u, v, expected):
    assert a_20_closed(u, v) == expected


@pytest.mark.parametrize("u,v", [(1.0, 1.0), (0.5, 1.5), (2.0, 2.0), (0.2, 1.8)])
def test_a_quadrature_matches_closed_form(u, v):
    assert a_20_quadrature(u, v) == pytest.approx(a_20_closed(u, v), abs=1e-6)


def test_a_quadrature_domain():
    with pytest.raises(DomainError):
        a_20_quadrature(0.0, 1.0)


@hsettings(max_examples=30, deadline=None)
@given(positive, positive)
def test_a_quadrature_is_symmetric(u, v):
    assert a_20_quadrature(u, v) == pytest.approx(a_20_quadrature(v, u), abs=1e-7)


@pytest.fixture(scope="module")
def psi20():
    return exact_psi_table_20(a_max=6.0, step=0.01)


def test_generic_quadrature_reproduces_closed_form(psi20):
    assert a_generic_quadrature(1.0, 1.0, psi20) == pytest.approx(2.0, abs=1e-3)
    assert a_generic_quadrature(0.5, 1.5, psi20) == pytest.approx(1.0, abs=1e-3)


def test_generic_quadrature_is_homogeneous(psi20):
    once = a_generic_quadrature(0.4, 0.7, psi20)
    twice = a_generic_quadrature(0.8, 1.4, psi20)
    assert twice == pytest.approx(2.0 * once, rel=2e-3)


def test_generic_quadrature_zero_table():
    grid = np.linspace(0.0, 4.0, 41)
    table = PsiTable(grid, grid.copy(), np.zeros((41, 41)), alpha=1.5)
    assert a_generic_quadrature(1.0, 2.0, table) == 0.0
    assert a_generic_quadrature(0.0, 2.0, table) == 0.0


def test_generic_quadrature_reports_needed_range():
    grid = np.linspace(0.0, 1.0, 11)
    table = PsiTable(grid, grid.copy(), np.full((11, 11), 0.3), alpha=1.5)
    with pytest.raises(DomainError, match="need a up to"):
        a_generic_quadrature(1.0, 1.0, table)


def test_psi_table_rejects_negative_values():
    grid = np.linspace(0.0, 1.0, 3)
    with pytest.raises(ConfigurationError):
        PsiTable(grid, grid.copy(), -np.ones((3, 3)), alpha=2.0)


def test_load_psi_table(tmp_path):
    path = tmp_path / "psi.csv"
    lines = ["a,b,psi"] + [f"{a},{b},{a * b}" for a in (0.0, 0.5, 1.0) for b in (0.0, 1.0)]
    path.write_text("\n".join(lines) + "\n")
    table = load_psi_table(path, alpha=1.5)
    assert table.values.shape == (3, 2)
    assert float(table(0.5, 1.0)) == pytest.approx(0.5)


def test_model_for_laws(simple, wide4):
    model = limit_model_for(wide4)
    assert model.c_const * model.a(1.0, 1.0) == pytest.approx(1.0)
    assert resolve_rate(model) == pytest.approx(2.0)
    assert resolve_rate(limit_model_for(simple)) == pytest.approx(0.5)
    heavy = limit_model_for(get_law("powertail-1.5"))
    with pytest.raises(ConfigurationError):
        heavy.c_const


def test_exponential_sf():
    assert exponential_limit_sf(0.0, 0.5) == 1.0
    assert exponential_limit_sf(2.0, 0.5) == pytest.approx(math.exp(-1.0))
    with pytest.raises(DomainError):
        exponential_limit_sf(1.0, 0.0)


def test_kac_values():
    assert kac_moment_value(1.0, [1.0]) == pytest.approx(2.0)
    assert kac_moment_value(1.0, [1.0, 1.0]) == pytest.approx(8.0)
    assert kac_moment_value(1.0, [0.5, 1.0]) == pytest.approx(3.0)
    with pytest.raises(UnsupportedOrderError):
        kac_moment_value(1.0, [1.0] * 9)
    with pytest.raises(DomainError):
        kac_moment_value(1.0, [])


@pytest.mark.parametrize("m", range(1, 9))
def test_kac_at_the_top_level(m):
    assert kac_moment_value(1.0, [1.0] * m) == pytest.approx(math.factorial(m) * 2 ** m)


def test_prediction_table_schema():
    predictions = [{"u_list": u_list, "m": len(u_list), "prediction": kac_moment_value(1.0, u_list)}
                   for u_list in ([1.0], [0.5, 1.0])]
    header, rows = prediction_table(predictions)
    assert header == ["u_list", "m", "prediction"]
    assert rows == [["1", 1, pytest.approx(2.0)], ["0.5 1", 2, pytest.approx(3.0)]]


@hsettings(max_examples=25, deadline=None)
@given(positive, st.lists(positive, min_size=1, max_size=4))
def test_kac_is_permutation_invariant(u0, u_list):
    assert kac_moment_value(u0, u_list) == pytest.approx(kac_moment_value(u0, list(reversed(u_list))))


def test_kac_from_zero_simple(simple):
    N = 40
    h_plus = renewal_table(exact_ladder_pmf(simple, LadderKind.STRICT_ASCENDING), 2 * N)
    assert kac_from_zero([1.0], a_20_closed, h_plus, N, N**2) == pytest.approx(1.0)
    assert kac_from_zero([1.0, 1.0], a_20_closed, h_plus, N, N**2) == pytest.approx(4.0 * N)


def test_ordered_visit_limit():
    assert ordered_visit_limit(1.0, [0.5, 1.0]) == pytest.approx(1.0 * 1.0)
    with pytest.raises(DomainError):
        ordered_visit_limit(1.0, [])


def test_hitting_asymptotic_conventions(simple):
    N = 100
    h_plus = renewal_table(exact_ladder_pmf(simple, LadderKind.STRICT_ASCENDING), N)
    h_minus = renewal_table(exact_ladder_pmf(simple, LadderKind.WEAK_DESCENDING), 5)
    prediction = hitting_asymptotic(1, N, 2.0, h_plus, h_minus, N**2, 0.5, sigma2=1.0, mean_chi_plus=1.0)
    assert prediction.u_form == pytest.approx(1.0 / N)
    assert prediction.ladder_lt == pytest.approx(1.0 / N)
    assert prediction.ladder_le == pytest.approx(2.0 / N)
    assert prediction.variance_lt == pytest.approx(1.0 / N)
    with pytest.raises(DomainError):
        hitting_asymptotic(9, N, 2.0, h_plus, h_minus, N**2, 0.5)


def test_marginal_laplace():
    assert field_marginal_laplace(1.0, 1.0) == pytest.approx(math.exp(-1.0 / 3.0))
    assert field_marginal_laplace(1.0, 1.0) == pytest.approx(0.716531, abs=1e-6)
    # lambda -> infinity leaves the atom at zero
    assert field_marginal_laplace(1.0, 1e9) == pytest.approx(math.exp(-0.5), rel=1e-6)
    with pytest.raises(DomainError):
        field_marginal_laplace(0.0, 1.0)


def test_marginal_laplace_is_compound_poisson():
    # Poisson(1/(2u)) jumps, each exponential with mean 2u
    u, lam = 0.7, 1.3
    rate, mean = 1.0 / (2 * u), 2 * u
    compound = math.exp(rate * (1.0 / (1.0 + lam * mean) - 1.0))
    assert field_marginal_laplace(u, lam) == pytest.approx(compound)


@pytest.mark.parametrize("u", [0.25, 0.5, 1.0, 2.0])
def test_marginal_laplace_is_completely_monotone(u):
    step = 0.1
    values = field_marginal_laplace(u, np.arange(0.0, 6.0, step))
    for k in range(1, 6):
        differences = (-1) ** k * np.diff(values, n=k)
        assert differences.min() >= -1e-12, f"order {k}"


def test_joint_laplace_reduces_to_marginal():
    assert field_joint_laplace([0.8], [1.5]) == pytest.approx(float(field_marginal_laplace(0.8, 1.5)))
    assert field_joint_laplace([0.5, 1.0], [1.0, 0.0]) == pytest.approx(float(field_marginal_laplace(0.5, 1.0)))
    assert field_joint_laplace([0.5, 1.0], [0.0, 1.0]) == pytest.approx(float(field_marginal_laplace(1.0, 1.0)))
    with pytest.raises(DomainError):
        field_joint_laplace([0.5], [1.0, 2.0])


def test_joint_laplace_matches_second_moment():
    # d^2/dl1 dl2 at 0 gives E[l(u1) l(u2)]
    u1, u2, h = 0.5, 1.0, 1e-3
    f = lambda a, b: field_joint_laplace([u1, u2], [a, b])
    mixed = (f(h, h) - f(h, 0.0) - f(0.0, h) + f(0.0, 0.0)) / h**2
    assert mixed == pytest.approx(field_second_moment(u1, u2), rel=1e-2)
    assert field_second_moment(u1, u2) == pytest.approx(3.0)


def test_limit_model_is_frozen():
    model = LimitModel(alpha=2.0, beta=0.0, a=a_20_closed, sigma2=1.0)
    with pytest.raises(Exception):
        model.alpha = 1.5
