from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from saddlekit.units import (DIMENSIONLESS, Dimension, DimensionError, Quantity, UnitSyntaxError,
                             UnitVector, UnknownUnitError, dim_div, dim_mul, dim_pow, format_unit,
                             parse_unit)

# base order: m, kg, s, K, obj
N = Dimension.of(1, 1, -2, 0, 0)
W = Dimension.of(2, 1, -3, 0, 0)
MU = Dimension.of(-1, 1, -1, 0, 0)

small = st.fractions(min_value=-6, max_value=6, max_denominator=6)
dims = st.tuples(small, small, small, small, small).map(Dimension)
ratios = st.fractions(min_value=-4, max_value=4, max_denominator=4)


def test_watt_from_newton_meter_per_second():
    assert dim_div(dim_mul(N, parse_unit("m")), parse_unit("s")) == W
    assert parse_unit("W") == W


def test_identity_and_self_quotient():
    assert dim_mul(W, DIMENSIONLESS) == W
    assert dim_div(W, W) == DIMENSIONLESS
    assert dim_pow(W, 0) == DIMENSIONLESS


def test_viscosity_times_inverse_is_dimensionless():
    assert dim_mul(MU, parse_unit("m^2/(N*s)")).is_dimensionless


def test_residual_units():
    assert dim_div(W, parse_unit("m/s")) == N
    assert dim_div(W, parse_unit("N/m^2")) == parse_unit("m^3/s")


def test_half_power_of_control_parameters():
    alpha, beta = parse_unit("obj*m^3/W^2"), parse_unit("obj/(K^2*m^3)")
    # hand: alpha*beta = obj^2 / (W^2 K^2)
    assert dim_pow(dim_mul(alpha, beta), Fraction(1, 2)) == parse_unit("obj/(W*K)")
    assert dim_pow(parse_unit("m^2"), Fraction(1, 2)) == parse_unit("m")


def test_parse_examples():
    assert parse_unit("N*s/m^2").exponents == tuple(map(Fraction, (-1, 1, -1, 0, 0)))
    assert parse_unit("obj") == Dimension.of(0, 0, 0, 0, 1)
    assert parse_unit(format_unit(W)) == W
    assert parse_unit("kg^(1/2)") == Dimension.of(0, Fraction(1, 2), 0, 0, 0)
    assert parse_unit("1/s") == Dimension.of(0, 0, -1, 0, 0)


def test_lowest_terms():
    d = Dimension.of(Fraction(2, 4), 0, 0, 0, 0)
    assert d.exponents[0].numerator == 1 and d.exponents[0].denominator == 2
    assert Dimension.of(Fraction(1, -2), 0, 0, 0, 0).exponents[0].denominator == 2


def test_syntax_error_reports_position():
    with pytest.raises(UnitSyntaxError) as exc:
        parse_unit("N*s/$")
    assert exc.value.position == 4
    with pytest.raises(UnitSyntaxError):
        parse_unit("m^")
    with pytest.raises(UnitSyntaxError):
        parse_unit("(m")


def test_unknown_symbol():
    with pytest.raises(UnknownUnitError):
        parse_unit("furlong/s")


def test_unit_vector_dual():
    V = UnitVector.parse("m/s", "N/m^2")
    assert len(V) == 2
    dual = V.dual(parse_unit("obj"))
    assert dual[0] == parse_unit("obj*s/m") and dual[1] == parse_unit("obj*m^2/N")


def test_quantity_arithmetic():
    q = Quantity.parse("2 N*s/m^2")
    assert q.value == 2 and q.dim == MU
    assert (q * q).dim == MU ** 2
    assert (1 / q).value == 0.5
    assert (q ** 2).sqrt().dim == MU
    with pytest.raises(DimensionError):
        q + Quantity(1.0)


@given(dims, dims, dims)
def test_group_axioms(a, b, c):
    assert dim_mul(dim_mul(a, b), c) == dim_mul(a, dim_mul(b, c))
    assert dim_mul(a, b) == dim_mul(b, a)
    assert dim_mul(a, DIMENSIONLESS) == a
    assert dim_mul(a, dim_pow(a, -1)) == DIMENSIONLESS


@given(dims, dims, ratios)
def test_power_distributes(a, b, r):
    assert dim_pow(dim_mul(a, b), r) == dim_mul(dim_pow(a, r), dim_pow(b, r))


@settings(max_examples=1000)
@given(dims)
def test_format_parse_round_trip(d):
    assert parse_unit(format_unit(d)) == d
