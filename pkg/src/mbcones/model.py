"""Domain model for multiple Mellin-Barnes integrands and the on-disk JSON format.

An integrand is a product of gamma factors Gamma(form(z))^power, rational pole
factors form(z)^exponent (exponent < 0), parameter powers p^<e,z>, and a
constant prefactor that may depend on the dimensional-regularization parameter
eps.  Linear forms have integer coefficients on the contour variables and an
affine offset r0 + r1*eps with exact rational r0, r1.
"""

from __future__ import annotations

import ast
import cmath
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.special import loggamma

Rational = Fraction


class SpecError(ValueError):
    """Raised for malformed or inconsistent integrand descriptions."""


class PoleEvaluationError(ArithmeticError):
    """Raised when the integrand is evaluated at a pole."""


def parse_rational(text) -> Fraction:
    if isinstance(text, int):
        return Fraction(text)
    if isinstance(text, Fraction):
        return text
    if not isinstance(text, str):
        raise SpecError(f"expected rational string, got {text!r}")
    try:
        return Fraction(text.strip())
    except (ValueError, ZeroDivisionError) as exc:
        raise SpecError(f"bad rational literal {text!r}") from exc


def format_rational(q: Fraction) -> str:
    return str(q.numerator) if q.denominator == 1 else f"{q.numerator}/{q.denominator}"


@dataclass(frozen=True)
class EpsAffine:
    """Value const_part + eps_part * eps with exact rational parts."""

    const_part: Fraction = Fraction(0)
    eps_part: Fraction = Fraction(0)

    def __post_init__(self):
        object.__setattr__(self, "const_part", Fraction(self.const_part))
        object.__setattr__(self, "eps_part", Fraction(self.eps_part))

    def __add__(self, other: "EpsAffine") -> "EpsAffine":
        if isinstance(other, (int, Fraction)):
            other = EpsAffine(other)
        return EpsAffine(self.const_part + other.const_part, self.eps_part + other.eps_part)

    __radd__ = __add__

    def __neg__(self) -> "EpsAffine":
        return EpsAffine(-self.const_part, -self.eps_part)

    def __sub__(self, other) -> "EpsAffine":
        if isinstance(other, (int, Fraction)):
            other = EpsAffine(other)
        return self + (-other)

    def __mul__(self, k) -> "EpsAffine":
        k = Fraction(k)
        return EpsAffine(self.const_part * k, self.eps_part * k)

    __rmul__ = __mul__

    def value(self, eps) -> Fraction | float:
        if isinstance(eps, Fraction) or isinstance(eps, int):
            return self.const_part + self.eps_part * Fraction(eps)
        return float(self.const_part) + float(self.eps_part) * eps

    def is_zero(self) -> bool:
        return not self.const_part and not self.eps_part

    def nonpositive_integer(self) -> int | None:
        """If the value is a fixed non-positive integer for all eps, return -value."""
        if self.eps_part:
            return None
        if self.const_part.denominator != 1 or self.const_part > 0:
            return None
        return -int(self.const_part)

    def __str__(self):
        if self.eps_part == 0:
            return format_rational(self.const_part)
        if self.eps_part == 1:
            eps = "eps"
        elif self.eps_part == -1:
            eps = "-eps"
        else:
            eps = f"{format_rational(self.eps_part)}*eps"
        if self.const_part == 0:
            return eps
        joiner = "" if eps.startswith("-") else "+"
        return f"{format_rational(self.const_part)}{joiner}{eps}"


ZERO_EPS = EpsAffine()


@dataclass(frozen=True)
class LinearForm:
    """Integer-coefficient form <coeffs, z> + offset, offset affine in eps."""

    coeffs: tuple[int, ...]
    offset: EpsAffine = ZERO_EPS

    def __post_init__(self):
        object.__setattr__(self, "coeffs", tuple(int(c) for c in self.coeffs))

    @property
    def dimension(self) -> int:
        return len(self.coeffs)

    def is_zero_form(self) -> bool:
        return all(c == 0 for c in self.coeffs)

    def dot_coeffs(self, vec: Sequence) -> Fraction:
        return sum((Fraction(c) * Fraction(v) for c, v in zip(self.coeffs, vec)), Fraction(0))

    def at_rational(self, point: Sequence[Fraction]) -> EpsAffine:
        return EpsAffine(self.dot_coeffs(point)) + self.offset

    def at_affine(self, point: Sequence[EpsAffine]) -> EpsAffine:
        total = self.offset
        for c, p in zip(self.coeffs, point):
            total = total + p * Fraction(c)
        return total

    def at_complex(self, z, eps: float):
        value = complex(self.offset.value(float(eps) if eps is not None else 0.0))
        for c, zi in zip(self.coeffs, z):
            if c:
                value = value + c * zi
        return value

    def at_complex_arrays(self, z_arrays, eps: float):
        value = complex(self.offset.value(float(eps) if eps is not None else 0.0))
        total = None
        for c, zi in zip(self.coeffs, z_arrays):
            if c:
                total = c * zi if total is None else total + c * zi
        if total is None:
            return value
        return total + value

    def __str__(self):
        names = ["z%d" % (i + 1) for i in range(len(self.coeffs))]
        parts = []
        for c, n in zip(self.coeffs, names):
            if c == 0:
                continue
            if c == 1:
                parts.append(f"+{n}")
            elif c == -1:
                parts.append(f"-{n}")
            else:
                parts.append(f"{c:+d}*{n}")
        if not self.offset.is_zero() or not parts:
            parts.append(f"+({self.offset})")
        s = "".join(parts)
        return s[1:] if s.startswith("+") else s


@dataclass(frozen=True)
class GammaFactor:
    """Gamma(form)^power; power>0 numerator multiplicity, power<0 denominator."""

    form: LinearForm
    power: int = 1

    def __post_init__(self):
        if self.power == 0:
            raise SpecError("gamma factor with zero power")
        if self.form.is_zero_form():
            raise SpecError("gamma factor with identically constant argument")


@dataclass(frozen=True)
class MonomialFactor:
    """Rational pole factor form^exponent with exponent <= -1."""

    form: LinearForm
    exponent: int = -1

    def __post_init__(self):
        if self.exponent > -1:
            raise SpecError("monomial factors must have exponent <= -1")
        if self.form.is_zero_form():
            raise SpecError("monomial factor with identically constant argument")


@dataclass(frozen=True)
class ParameterFactor:
    """Factor name^<exponent_coeffs, z>."""

    name: str
    exponent_coeffs: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "exponent_coeffs", tuple(int(c) for c in self.exponent_coeffs))


@dataclass(frozen=True)
class PoleFactor:
    """Unified view of a pole-producing factor of the integrand.

    ``order`` is the pole multiplicity of each singular hyperplane
    (gamma power, or -exponent for a monomial).  ``shifts`` is ``None`` for the
    infinite tower form(z) = -n, n >= 0, or ``(0,)`` for a single hyperplane.
    """

    form: LinearForm
    order: int
    kind: str          # "gamma" | "monomial"
    source_index: int  # index into spec.gammas / spec.monomials

    @property
    def single_line(self) -> bool:
        return self.kind == "monomial"

    def line_level(self, n: int) -> EpsAffine:
        # hyperplane form(z) = -n  <=>  <coeffs,z> = -n - offset
        return EpsAffine(Fraction(-n)) - self.form.offset


_ALLOWED_FUNCS = {
    "sin": cmath.sin,
    "cos": cmath.cos,
    "tan": cmath.tan,
    "exp": cmath.exp,
    "log": cmath.log,
    "sqrt": cmath.sqrt,
}


def _const_gamma(z):
    z = complex(z)
    return cmath.exp(loggamma(z))


_ALLOWED_FUNCS["gamma"] = _const_gamma

_ALLOWED_NAMES = {"pi": complex(math.pi), "i": 1j, "e": complex(math.e)}


def compile_constant(expr: str) -> Callable[[float], complex]:
    """Compile a small arithmetic expression over eps, pi, i and a few functions.

    Only literals, + - * / ** and whitelisted names/calls are accepted.
    """
    try:
        tree = ast.parse(expr, mode="eval")
    except SyntaxError as exc:
        raise SpecError(f"bad constant expression {expr!r}: {exc}") from exc

    def ev(node, eps):
        if isinstance(node, ast.Expression):
            return ev(node.body, eps)
        if isinstance(node, ast.Constant):
            if isinstance(node.value, (int, float, complex)):
                return complex(node.value)
            raise SpecError(f"bad literal in constant expression: {node.value!r}")
        if isinstance(node, ast.Name):
            if node.id == "eps":
                return complex(eps)
            if node.id in _ALLOWED_NAMES:
                return _ALLOWED_NAMES[node.id]
            raise SpecError(f"unknown name {node.id!r} in constant expression")
        if isinstance(node, ast.BinOp):
            a, b = ev(node.left, eps), ev(node.right, eps)
            if isinstance(node.op, ast.Add):
                return a + b
            if isinstance(node.op, ast.Sub):
                return a - b
            if isinstance(node.op, ast.Mult):
                return a * b
            if isinstance(node.op, ast.Div):
                return a / b
            if isinstance(node.op, ast.Pow):
                return a**b
            raise SpecError("unsupported operator in constant expression")
        if isinstance(node, ast.UnaryOp):
            v = ev(node.operand, eps)
            if isinstance(node.op, ast.USub):
                return -v
            if isinstance(node.op, ast.UAdd):
                return v
            raise SpecError("unsupported unary operator in constant expression")
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _ALLOWED_FUNCS:
                raise SpecError("unsupported function in constant expression")
            if node.keywords or len(node.args) != 1:
                raise SpecError("constant-expression functions take one argument")
            return _ALLOWED_FUNCS[node.func.id](ev(node.args[0], eps))
        raise SpecError(f"unsupported syntax in constant expression: {ast.dump(node)}")

    # validate once so malformed expressions fail at parse time
    ev(tree, 0.1234)

    def fn(eps: float) -> complex:
        return ev(tree, eps)

    fn.expression = expr  # type: ignore[attr-defined]
    return fn


@dataclass(frozen=True)
class MBSpec:
    """A fully validated Mellin-Barnes integrand description."""

    dimension: int
    variables: tuple[str, ...]
    constant_expr: str
    parameters: tuple[ParameterFactor, ...]
    gammas: tuple[GammaFactor, ...]
    monomials: tuple[MonomialFactor, ...]
    base_point: tuple[Fraction, ...]
    epsilon: Fraction | None = None
    constant: Callable[[float], complex] = field(compare=False, repr=False, default=None)

    @property
    def working_eps(self) -> Fraction:
        return self.epsilon if self.epsilon is not None else Fraction(0)

    @property
    def parameter_names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.parameters)

    def pole_factors(self) -> tuple[PoleFactor, ...]:
        """Pole-producing factors: numerator gammas and monomials, spec order."""
        out = []
        for i, g in enumerate(self.gammas):
            if g.power > 0:
                out.append(PoleFactor(g.form, g.power, "gamma", i))
        for i, m in enumerate(self.monomials):
            out.append(PoleFactor(m.form, -m.exponent, "monomial", i))
        return tuple(out)

    def denominator_gammas(self) -> tuple[GammaFactor, ...]:
        return tuple(g for g in self.gammas if g.power < 0)


def _expect_keys(obj: Mapping, allowed: set[str], context: str):
    unknown = set(obj) - allowed
    if unknown:
        raise SpecError(f"unknown field(s) {sorted(unknown)} in {context}")


def spec_from_dict(doc: Mapping) -> MBSpec:
    _expect_keys(
        doc,
        {"dimension", "variables", "constant", "parameters", "gammas", "monomials", "base_point", "epsilon"},
        "spec document",
    )
    try:
        dim = int(doc["dimension"])
    except (KeyError, TypeError, ValueError) as exc:
        raise SpecError("missing or bad 'dimension'") from exc
    if dim < 1:
        raise SpecError("dimension must be >= 1")

    variables = tuple(doc.get("variables") or [f"z{i+1}" for i in range(dim)])
    if len(variables) != dim:
        raise SpecError("variables length does not match dimension")

    constant_expr = str(doc.get("constant", "1"))
    constant = compile_constant(constant_expr)

    parameters = []
    seen = set()
    for p in doc.get("parameters", []):
        _expect_keys(p, {"name", "exponent"}, "parameter")
        name = p["name"]
        if name in seen:
            raise SpecError(f"duplicate parameter name {name!r}")
        seen.add(name)
        exps = [int(e) for e in p["exponent"]]
        if len(exps) != dim:
            raise SpecError(f"parameter {name!r}: exponent length != dimension")
        parameters.append(ParameterFactor(name, tuple(exps)))

    def read_form(obj, context) -> LinearForm:
        coeffs = [int(c) for c in obj["coeffs"]]
        if len(coeffs) != dim:
            raise SpecError(f"{context}: coeffs length != dimension")
        offset = EpsAffine(parse_rational(obj.get("const", "0")), parse_rational(obj.get("eps", "0")))
        form = LinearForm(tuple(coeffs), offset)
        if form.is_zero_form():
            raise SpecError(f"{context}: zero linear form")
        return form

    gammas = []
    for g in doc.get("gammas", []):
        _expect_keys(g, {"coeffs", "const", "eps", "power"}, "gamma factor")
        gammas.append(GammaFactor(read_form(g, "gamma factor"), int(g.get("power", 1))))

    monomials = []
    for m in doc.get("monomials", []):
        _expect_keys(m, {"coeffs", "const", "eps", "exponent"}, "monomial factor")
        monomials.append(MonomialFactor(read_form(m, "monomial factor"), int(m.get("exponent", -1))))

    base = doc.get("base_point")
    if base is None or len(base) != dim:
        raise SpecError("base_point missing or wrong length")
    base_point = tuple(parse_rational(b) for b in base)

    epsilon = doc.get("epsilon")
    epsilon = None if epsilon is None else parse_rational(epsilon)

    spec = MBSpec(
        dimension=dim,
        variables=variables,
        constant_expr=constant_expr,
        parameters=tuple(parameters),
        gammas=tuple(gammas),
        monomials=tuple(monomials),
        base_point=base_point,
        epsilon=epsilon,
        constant=constant,
    )
    _validate_contour(spec)
    return spec


def _validate_contour(spec: MBSpec):
    eps = spec.working_eps
    for pf in spec.pole_factors():
        v = pf.form.at_rational(spec.base_point).value(eps)
        if pf.kind == "monomial":
            if v == 0:
                raise SpecError(f"contour lies on the pole hyperplane of {pf.form}")
        else:
            if v.denominator == 1 and v <= 0:
                raise SpecError(f"contour hits a pole of Gamma({pf.form})")


def parse_spec(text: str) -> MBSpec:
    """Parse and validate the JSON spec format; see the README for the schema."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecError(f"JSON syntax error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise SpecError("spec document must be a JSON object")
    return spec_from_dict(doc)


def load_spec(path) -> MBSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_spec(fh.read())


def serialize(spec: MBSpec) -> str:
    """Inverse of parse_spec (field-for-field round trip)."""

    def form_dict(form: LinearForm, extra: dict) -> dict:
        d = {
            "coeffs": list(form.coeffs),
            "const": format_rational(form.offset.const_part),
            "eps": format_rational(form.offset.eps_part),
        }
        d.update(extra)
        return d

    doc = {
        "dimension": spec.dimension,
        "variables": list(spec.variables),
        "constant": spec.constant_expr,
        "parameters": [{"name": p.name, "exponent": list(p.exponent_coeffs)} for p in spec.parameters],
        "gammas": [form_dict(g.form, {"power": g.power}) for g in spec.gammas],
        "monomials": [form_dict(m.form, {"exponent": m.exponent}) for m in spec.monomials],
        "base_point": [format_rational(b) for b in spec.base_point],
        "epsilon": None if spec.epsilon is None else format_rational(spec.epsilon),
    }
    return json.dumps(doc, indent=2)


def evaluate_integrand(spec: MBSpec, z: Sequence[complex], params: Mapping[str, complex], eps: float | None = None) -> complex:
    """Pointwise value of the integrand at contour point z (principal branches)."""
    value = evaluate_integrand_arrays(spec, [np.asarray(zi, dtype=complex) for zi in z], params, eps)
    value = complex(value)
    if not (math.isfinite(value.real) and math.isfinite(value.imag)):
        raise PoleEvaluationError("integrand evaluated at a pole")
    return value


def evaluate_integrand_arrays(spec: MBSpec, z_arrays, params: Mapping[str, complex], eps: float | None = None):
    """Vectorized integrand evaluation via complex log-gamma, summed in log space."""
    if eps is None:
        eps = float(spec.working_eps)
    for p in spec.parameters:
        if p.name not in params:
            raise SpecError(f"unbound parameter {p.name!r}")
    log_total = None

    def acc(term):
        nonlocal log_total
        log_total = term if log_total is None else log_total + term

    for p in spec.parameters:
        exps = p.exponent_coeffs
        lin = None
        for c, zi in zip(exps, z_arrays):
            if c:
                lin = c * zi if lin is None else lin + c * zi
        if lin is not None:
            acc(np.log(complex(params[p.name])) * lin)
    for g in spec.gammas:
        arg = g.form.at_complex_arrays(z_arrays, eps)
        acc(g.power * loggamma(arg))
    for m in spec.monomials:
        arg = m.form.at_complex_arrays(z_arrays, eps)
        acc(m.exponent * np.log(arg))
    const = spec.constant(eps)
    if log_total is None:
        return const * np.ones(())
    return const * np.exp(log_total)
