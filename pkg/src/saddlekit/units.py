"""Exact physical-dimension algebra.

A :class:`Dimension` is a vector of rational exponents over the base units
``m, kg, s, K, obj``, where ``obj`` is the (opaque) unit in which the value
of an optimal-control objective is measured.  Derived symbols ``N``, ``J``
and ``W`` are accepted by :func:`parse_unit` and expanded to base exponents.

Grammar accepted by :func:`parse_unit`::

    expr   := term (('*' | '/') term)*        (left associative)
    term   := factor ('^' exponent)?
    factor := SYMBOL | '1' | '(' expr ')'
    exponent := ['-'] INT | '(' ['-'] INT ['/' INT] ')'

Examples: ``"N*s/m^2"``, ``"obj*m^3/W^2"``, ``"W/(m*K)"``, ``"m^(1/2)"``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence, Union

__all__ = [
    "BASE_SYMBOLS",
    "Dimension",
    "DimensionError",
    "Quantity",
    "UnitSyntaxError",
    "UnitVector",
    "UnknownUnitError",
    "dim_div",
    "dim_mul",
    "dim_pow",
    "format_unit",
    "parse_unit",
]

BASE_SYMBOLS: tuple[str, ...] = ("m", "kg", "s", "K", "obj")

Rational = Union[int, Fraction]


class DimensionError(ValueError):
    """Two quantities that must share a dimension do not."""


class UnitSyntaxError(ValueError):
    def __init__(self, message: str, text: str, position: int):
        super().__init__(f"{message} at position {position} in {text!r}")
        self.text = text
        self.position = position


class UnknownUnitError(UnitSyntaxError):
    pass


def _as_fraction(r: Rational | float | str) -> Fraction:
    if isinstance(r, float):
        f = Fraction(r).limit_denominator(1 << 20)
        if float(f) != r:
            raise ValueError(f"exponent {r!r} is not a small rational")
        return f
    return Fraction(r)


@dataclass(frozen=True)
class Dimension:
    """Physical dimension as exact rational exponents over ``BASE_SYMBOLS``."""

    exponents: tuple[Fraction, ...] = (Fraction(0),) * len(BASE_SYMBOLS)

    def __post_init__(self):
        exps = tuple(_as_fraction(e) for e in self.exponents)
        if len(exps) != len(BASE_SYMBOLS):
            raise ValueError(
                f"expected {len(BASE_SYMBOLS)} exponents, got {len(exps)}")
        object.__setattr__(self, "exponents", exps)

    @classmethod
    def of(cls, *exponents: Rational) -> "Dimension":
        return cls(tuple(exponents))

    @classmethod
    def base(cls, symbol: str) -> "Dimension":
        exps = [0] * len(BASE_SYMBOLS)
        exps[BASE_SYMBOLS.index(symbol)] = 1
        return cls(tuple(exps))

    @property
    def is_dimensionless(self) -> bool:
        return not any(self.exponents)

    def __mul__(self, other: "Dimension") -> "Dimension":
        if not isinstance(other, Dimension):
            return NotImplemented
        return Dimension(tuple(a + b for a, b in zip(self.exponents, other.exponents)))

    def __truediv__(self, other: "Dimension") -> "Dimension":
        if not isinstance(other, Dimension):
            return NotImplemented
        return Dimension(tuple(a - b for a, b in zip(self.exponents, other.exponents)))

    def __pow__(self, r: Rational | float) -> "Dimension":
        r = _as_fraction(r)
        return Dimension(tuple(e * r for e in self.exponents))

    def sqrt(self) -> "Dimension":
        return self ** Fraction(1, 2)

    def inv(self) -> "Dimension":
        return self ** -1

    def __str__(self) -> str:
        return format_unit(self)

    def __repr__(self) -> str:
        return f"Dimension({format_unit(self)!r})"


DIMENSIONLESS = Dimension()


def dim_mul(a: Dimension, b: Dimension) -> Dimension:
    return a * b


def dim_div(a: Dimension, b: Dimension) -> Dimension:
    return a / b


def dim_pow(a: Dimension, r: Rational | float) -> Dimension:
    return a ** r


def _derived() -> dict[str, Dimension]:
    m, kg, s, K, obj = (Dimension.base(sym) for sym in BASE_SYMBOLS)
    N = kg * m / s ** 2
    J = N * m
    W = J / s
    return {"m": m, "kg": kg, "s": s, "K": K, "obj": obj, "N": N, "J": J, "W": W}


SYMBOLS: dict[str, Dimension] = _derived()

_TOKEN = re.compile(r"\s*(?:(?P<sym>[A-Za-z_]+)|(?P<int>\d+)|(?P<op>[*/^()·-]))")


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        mo = _TOKEN.match(text, pos)
        if mo is None:
            raise UnitSyntaxError(f"unexpected character {text[pos]!r}", text, pos)
        kind = mo.lastgroup
        tokens.append((kind, mo.group(kind), mo.start(kind)))
        pos = mo.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self, value: str | None = None, kind: str | None = None):
        tok = self.tokens[self.i]
        if (value is not None and tok[1] != value) or (kind is not None and tok[0] != kind):
            want = repr(value) if value is not None else kind
            got = repr(tok[1]) if tok[0] != "end" else "end of input"
            raise UnitSyntaxError(f"expected {want}, got {got}", self.text, tok[2])
        self.i += 1
        return tok

    def parse(self) -> Dimension:
        d = self.expr()
        self.take(kind="end")
        return d

    def expr(self) -> Dimension:
        d = self.term()
        while self.peek()[1] in ("*", "/", "·"):
            op = self.take()[1]
            rhs = self.term()
            d = d / rhs if op == "/" else d * rhs
        return d

    def term(self) -> Dimension:
        d = self.factor()
        if self.peek()[1] == "^":
            self.take("^")
            d = d ** self.exponent()
        return d

    def factor(self) -> Dimension:
        kind, value, pos = self.peek()
        if kind == "sym":
            self.take()
            if value not in SYMBOLS:
                raise UnknownUnitError(f"unknown unit symbol {value!r}", self.text, pos)
            return SYMBOLS[value]
        if kind == "int" and value == "1":
            self.take()
            return DIMENSIONLESS
        if value == "(":
            self.take("(")
            d = self.expr()
            self.take(")")
            return d
        got = repr(value) if kind != "end" else "end of input"
        raise UnitSyntaxError(f"expected unit symbol, got {got}", self.text, pos)

    def signed_int(self) -> int:
        sign = 1
        if self.peek()[1] == "-":
            self.take("-")
            sign = -1
        return sign * int(self.take(kind="int")[1])

    def exponent(self) -> Fraction:
        if self.peek()[1] == "(":
            self.take("(")
            num = self.signed_int()
            den = 1
            if self.peek()[1] == "/":
                self.take("/")
                den = int(self.take(kind="int")[1])
                if den == 0:
                    raise UnitSyntaxError("zero denominator", self.text, self.tokens[self.i - 1][2])
            self.take(")")
            return Fraction(num, den)
        return Fraction(self.signed_int())


def parse_unit(text: str) -> Dimension:
    """Parse a unit expression such as ``"N*s/m^2"`` into a :class:`Dimension`."""
    return _Parser(text).parse()


def _power(symbol: str, e: Fraction) -> str:
    if e == 1:
        return symbol
    if e.denominator == 1:
        return f"{symbol}^{e.numerator}"
    return f"{symbol}^({e.numerator}/{e.denominator})"


def format_unit(d: Dimension) -> str:
    """Canonical base-unit string; ``parse_unit(format_unit(d)) == d``."""
    num = [_power(s, e) for s, e in zip(BASE_SYMBOLS, d.exponents) if e > 0]
    den = [_power(s, -e) for s, e in zip(BASE_SYMBOLS, d.exponents) if e < 0]
    out = "*".join(num) if num else "1"
    if den:
        out += "/" + (den[0] if len(den) == 1 else "(" + "*".join(den) + ")")
    return out


@dataclass(frozen=True)
class UnitVector:
    """Field-wise units of a (possibly product) space."""

    entries: tuple[Dimension, ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))

    @classmethod
    def parse(cls, *texts: str) -> "UnitVector":
        return cls(tuple(parse_unit(t) for t in texts))

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, i: int) -> Dimension:
        return self.entries[i]

    def __iter__(self):
        return iter(self.entries)

    def dual(self, lagrangian: Dimension) -> "UnitVector":
        """Units of the dual space: ``lagrangian / unit`` field by field."""
        return UnitVector(tuple(lagrangian / e for e in self.entries))

    def __str__(self) -> str:
        return "(" + ", ".join(format_unit(e) for e in self.entries) + ")"


@dataclass(frozen=True)
class Quantity:
    """A real scalar carrying a :class:`Dimension`."""

    value: float
    dim: Dimension = DIMENSIONLESS

    @classmethod
    def parse(cls, text: str) -> "Quantity":
        """Parse ``"1e-2 N*s/m^2"`` (value, whitespace, unit expression)."""
        parts = text.strip().split(None, 1)
        if not parts:
            raise UnitSyntaxError("empty quantity", text, 0)
        try:
            value = float(parts[0])
        except ValueError:
            raise UnitSyntaxError(f"invalid number {parts[0]!r}", text, 0) from None
        dim = parse_unit(parts[1]) if len(parts) > 1 else DIMENSIONLESS
        return cls(value, dim)

    def _lift(self, other) -> "Quantity":
        if isinstance(other, Quantity):
            return other
        return Quantity(float(other))

    def __mul__(self, other):
        o = self._lift(other)
        return Quantity(self.value * o.value, self.dim * o.dim)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._lift(other)
        return Quantity(self.value / o.value, self.dim / o.dim)

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def __pow__(self, r: Rational | float):
        return Quantity(self.value ** float(r), self.dim ** r)

    def sqrt(self) -> "Quantity":
        return Quantity(math.sqrt(self.value), self.dim.sqrt())

    def __add__(self, other):
        o = self._lift(other)
        require_same(self.dim, o.dim, "sum of quantities")
        return Quantity(self.value + o.value, self.dim)

    def __neg__(self):
        return Quantity(-self.value, self.dim)

    def __float__(self) -> float:
        return float(self.value)

    def __str__(self) -> str:
        return f"{self.value:g} {format_unit(self.dim)}"


def require_same(a: Dimension, b: Dimension, what: str = "terms") -> Dimension:
    if a != b:
        raise DimensionError(f"{what}: {format_unit(a)} vs {format_unit(b)}")
    return a


def product(dims: Iterable[Dimension]) -> Dimension:
    out = DIMENSIONLESS
    for d in dims:
        out = out * d
    return out


def diff(a: Dimension, b: Dimension) -> Dimension:
    """The factor by which ``a`` exceeds ``b``; dimensionless iff equal."""
    return a / b


def as_dimension(x: Dimension | str | Sequence[Rational]) -> Dimension:
    if isinstance(x, Dimension):
        return x
    if isinstance(x, str):
        return parse_unit(x)
    return Dimension(tuple(x))
