"""Residues of the integrand at pole intersections.

Pipeline: shift the point to the origin, rewrite every singular gamma factor
with the generalized reflection identity so the divisor becomes an explicit
product of linear forms, classify it (axis-aligned vs oblique), obtain a
transformation-law certificate A.f = (w1^i, w2^j[, w3^k]) by exact polynomial
linear algebra, and read the residue off a truncated Taylor jet of the
analytic numerator multiplied by det A.  Signs come from the orientation rule
(2D), the group/variable matching (3D), and an overall (-1)^dim for closing
the contours.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from ._poly import Poly, det3, solve_linear
from .model import EpsAffine, MBSpec, SpecError
from .geometry import (
    Cone,
    GeometryError,
    IndexedFamily,
    orientation_partition,
    pole_index,
    primitive,
)
from .special import PolygammaPoleError, log_gamma, polygamma


class UndecidableResidueError(ArithmeticError):
    """Raised for spurious families, mirroring the sign ambiguity."""


class TransformationError(ArithmeticError):
    pass


# ---------------------------------------------------------------------------
# truncated multivariate Taylor jets


class JetSeries:
    """Dense truncated Taylor series: coeffs[k1,...,kn] of w1^k1...wn^kn."""

    __slots__ = ("orders", "coeffs")

    def __init__(self, orders: tuple[int, ...], coeffs=None):
        self.orders = tuple(int(o) for o in orders)
        shape = tuple(o + 1 for o in self.orders)
        if coeffs is None:
            self.coeffs = np.zeros(shape, dtype=complex)
        else:
            self.coeffs = np.asarray(coeffs, dtype=complex).reshape(shape)

    @classmethod
    def constant(cls, orders, value=1.0) -> "JetSeries":
        jet = cls(orders)
        jet.coeffs[(0,) * len(orders)] = value
        return jet

    def copy(self) -> "JetSeries":
        out = JetSeries(self.orders)
        out.coeffs = self.coeffs.copy()
        return out

    def __add__(self, other: "JetSeries") -> "JetSeries":
        out = self.copy()
        out.coeffs += other.coeffs
        return out

    def scale(self, c) -> "JetSeries":
        out = self.copy()
        out.coeffs *= c
        return out

    def mul(self, other: "JetSeries") -> "JetSeries":
        out = JetSeries(self.orders)
        it = np.ndindex(*self.coeffs.shape)
        for idx in it:
            c = self.coeffs[idx]
            if c == 0:
                continue
            slices = tuple(
                slice(0, o + 1 - i) for o, i in zip(self.orders, idx)
            )
            target = tuple(slice(i, o + 1) for o, i in zip(self.orders, idx))
            out.coeffs[target] += c * other.coeffs[slices]
        return out

    def exp(self) -> "JetSeries":
        zero = (0,) * len(self.orders)
        c0 = self.coeffs[zero]
        rest = self.copy()
        rest.coeffs[zero] = 0.0
        total = JetSeries.constant(self.orders)
        term = JetSeries.constant(self.orders)
        max_total = sum(self.orders)
        for k in range(1, max_total + 1):
            term = term.mul(rest).scale(1.0 / k)
            total = total + term
        return total.scale(cmath.exp(c0))

    def coefficient(self, idx: tuple[int, ...]) -> complex:
        return complex(self.coeffs[tuple(idx)])

    def derivative_value(self, idx: tuple[int, ...]) -> complex:
        scale = 1.0
        for k in idx:
            scale *= math.factorial(k)
        return self.coefficient(idx) * scale


def poly_to_jet(poly: Poly, orders: tuple[int, ...]) -> JetSeries:
    jet = JetSeries(orders)
    for mono, c in poly.coeffs.items():
        if all(m <= o for m, o in zip(mono, orders)):
            jet.coeffs[tuple(mono)] += float(c)
    return jet


def _linear_jet(orders, coeffs, const=0.0) -> JetSeries:
    jet = JetSeries(orders)
    zero = (0,) * len(orders)
    jet.coeffs[zero] = const
    for i, c in enumerate(coeffs):
        if c and orders[i] >= 1:
            idx = tuple(1 if j == i else 0 for j in range(len(orders)))
            jet.coeffs[idx] = c
    return jet


# ---------------------------------------------------------------------------
# local forms


@dataclass(frozen=True)
class LocalForm:
    """The 2-form at a singular point: divisor times analytic numerator."""

    spec: MBSpec = field(compare=False, repr=False)
    point: tuple[EpsAffine, ...] = ()
    divisor: tuple[tuple[tuple[int, ...], int], ...] = ()  # (primitive form, order)
    const_scale: Fraction = Fraction(1)
    gamma_entries: tuple[tuple[EpsAffine, tuple[int, ...], int], ...] = ()
    poly_factors: tuple[tuple[EpsAffine, tuple[int, ...], int], ...] = ()
    param_powers: tuple[tuple[str, EpsAffine, tuple[int, ...]], ...] = ()

    @property
    def dimension(self) -> int:
        return len(self.point)

    def divisor_order(self) -> int:
        return sum(o for _, o in self.divisor)


def localize_point(spec: MBSpec, point: Sequence[EpsAffine]) -> LocalForm:
    """Shift ``point`` to the origin and split the integrand into divisor/numerator."""
    point = tuple(point)
    divisor: dict[tuple[int, ...], int] = {}
    const_scale = Fraction(1)
    gamma_entries = []
    poly_factors = []
    param_powers = []

    def normalized(coeffs) -> tuple[tuple[int, ...], int]:
        prim = primitive(coeffs)
        g = next(c // p for c, p in zip(coeffs, prim) if p != 0)
        return prim, int(g)

    for g in spec.gammas:
        val = g.form.at_affine(point)
        k = val.nonpositive_integer()
        q = g.power
        if k is None:
            gamma_entries.append((val, g.form.coeffs, q))
            continue
        prim, s = normalized(g.form.coeffs)
        if q > 0:
            # Gamma(-k + l)^q = [(-1)^k Gamma(1+l)Gamma(1-l) / (l Gamma(k+1-l))]^q
            divisor[prim] = divisor.get(prim, 0) + q
            const_scale *= Fraction((-1) ** (k * q), s**q)
            gamma_entries.append((EpsAffine(Fraction(1)), g.form.coeffs, q))
            gamma_entries.append((EpsAffine(Fraction(1)), tuple(-c for c in g.form.coeffs), q))
            gamma_entries.append((EpsAffine(Fraction(k + 1)), tuple(-c for c in g.form.coeffs), -q))
        else:
            # reciprocal gamma at a pole argument: an analytic zero
            m = -q
            poly_factors.append((EpsAffine(Fraction(0)), g.form.coeffs, m))
            const_scale *= Fraction((-1) ** (k * m))
            gamma_entries.append((EpsAffine(Fraction(k + 1)), tuple(-c for c in g.form.coeffs), m))
            gamma_entries.append((EpsAffine(Fraction(1)), g.form.coeffs, -m))
            gamma_entries.append((EpsAffine(Fraction(1)), tuple(-c for c in g.form.coeffs), -m))
    for mfac in spec.monomials:
        val = mfac.form.at_affine(point)
        e = -mfac.exponent
        if val.is_zero():
            prim, s = normalized(mfac.form.coeffs)
            divisor[prim] = divisor.get(prim, 0) + e
            const_scale *= Fraction(1, s**e)
        else:
            poly_factors.append((val, mfac.form.coeffs, mfac.exponent))
    for p in spec.parameters:
        exp_val = EpsAffine(
            sum((Fraction(c) * pt.const_part for c, pt in zip(p.exponent_coeffs, point)), Fraction(0)),
            sum((Fraction(c) * pt.eps_part for c, pt in zip(p.exponent_coeffs, point)), Fraction(0)),
        )
        param_powers.append((p.name, exp_val, p.exponent_coeffs))
    return LocalForm(
        spec=spec,
        point=point,
        divisor=tuple(sorted(divisor.items())),
        const_scale=const_scale,
        gamma_entries=tuple(gamma_entries),
        poly_factors=tuple(poly_factors),
        param_powers=tuple(param_powers),
    )


def localize(spec: MBSpec, family: IndexedFamily, idx: Sequence[int]) -> LocalForm:
    """Local form at the family member with index vector idx (componentwise >= 0)."""
    if family.spurious:
        raise UndecidableResidueError(
            "residues at spurious singularities are undecidable"
        )
    return localize_point(spec, family.point_at(tuple(idx)))


def classify_local(lf: LocalForm) -> str:
    """'cauchy' when every divisor form is axis-aligned, else 'oblique'."""
    for coeffs, _ in lf.divisor:
        if sum(1 for c in coeffs if c) != 1:
            return "oblique"
    return "cauchy"


def local_jet(
    lf: LocalForm,
    orders: tuple[int, ...],
    params: Mapping[str, complex] | None = None,
    eps: float | None = None,
) -> JetSeries:
    """Truncated Taylor jet of the analytic numerator at the origin."""
    spec = lf.spec
    params = params or {}
    if eps is None:
        eps = float(spec.working_eps)
    n = lf.dimension
    orders = tuple(orders)
    log_jet = JetSeries(orders)
    max_total = sum(orders)
    const = complex(spec.constant(eps)) * float(lf.const_scale)

    for name, exp_val, lin in lf.param_powers:
        value = complex(params[name]) if name in params else None
        if value is None:
            raise SpecError(f"unbound parameter {name!r}")
        lnv = cmath.log(value)
        const *= cmath.exp(lnv * complex(exp_val.value(eps)))
        log_jet = log_jet + _linear_jet(orders, [lnv * c for c in lin])

    lin_pow_cache: dict[tuple, list[JetSeries]] = {}

    def lin_powers(lin):
        key = tuple(lin)
        if key not in lin_pow_cache:
            base = _linear_jet(orders, lin)
            powers = [JetSeries.constant(orders)]
            for _ in range(max_total):
                powers.append(powers[-1].mul(base))
            lin_pow_cache[key] = powers
        return lin_pow_cache[key]

    for offset, lin, power in lf.gamma_entries:
        a = complex(offset.value(eps))
        if abs(a.imag) < 1e-12 and abs(a.real - round(a.real)) < 1e-12 and round(a.real) <= 0:
            raise PolygammaPoleError(
                f"numerator gamma argument {a} hit a pole; localization is inconsistent"
            )
        powers = lin_powers(lin)
        log_jet.coeffs[(0,) * n] += power * log_gamma(a)
        for j in range(1, max_total + 1):
            psi = polygamma(j - 1, a) / math.factorial(j)
            log_jet = log_jet + powers[j].scale(power * psi)

    jet = log_jet.exp().scale(const)

    for val, lin, power in lf.poly_factors:
        v = complex(val.value(eps))
        if val.is_zero():
            # pure monomial zero (w-linear)^power
            base = _linear_jet(orders, lin)
            for _ in range(power):
                jet = jet.mul(base)
            continue
        # (v + l(w))^power for integer power, via the binomial series in l/v
        powers = lin_powers(lin)
        factor = JetSeries(orders)
        for j in range(0, max_total + 1):
            coef = 1.0
            for t in range(j):
                coef *= (power - t) / (t + 1)
            factor = factor + powers[j].scale(coef * v ** (power - j))
        jet = jet.mul(factor)
    return jet


# ---------------------------------------------------------------------------
# transformation law


@dataclass(frozen=True)
class TransformationCertificate:
    f_groups: tuple[Poly, ...]
    g_exponents: tuple[int, ...]
    matrix: tuple[tuple[Poly, ...], ...]
    det: Poly
    orientation_sign: int = 1

    def verify(self) -> bool:
        n = len(self.f_groups)
        for v in range(n):
            total = Poly(self.f_groups[0].nvars)
            for j in range(n):
                total = total + self.matrix[v][j] * self.f_groups[j]
            target = Poly.variable(total.nvars, v) ** self.g_exponents[v]
            if total != target:
                return False
        return True


def _monomials_of_degree(nvars: int, degree: int):
    if nvars == 1:
        yield (degree,)
        return
    for first in range(degree + 1):
        for rest in _monomials_of_degree(nvars - 1, degree - first):
            yield (first,) + rest


def _solve_row(f_groups: Sequence[Poly], var: int, power: int):
    """Polynomials (A_j) with sum A_j f_j = w_var^power, homogeneous ansatz."""
    nvars = f_groups[0].nvars
    unknowns = []  # (group index, monomial)
    for j, f in enumerate(f_groups):
        d = power - f.total_degree()
        if d < 0:
            continue
        for mono in _monomials_of_degree(nvars, d):
            unknowns.append((j, mono))
    if not unknowns:
        return None
    rows_idx = list(_monomials_of_degree(nvars, power))
    row_pos = {m: i for i, m in enumerate(rows_idx)}
    mat = [[Fraction(0)] * len(unknowns) for _ in rows_idx]
    for col, (j, mono) in enumerate(unknowns):
        for fmono, c in f_groups[j].coeffs.items():
            target = tuple(a + b for a, b in zip(mono, fmono))
            mat[row_pos[target]][col] = c
    rhs = [Fraction(0)] * len(rows_idx)
    target_mono = tuple(power if i == var else 0 for i in range(nvars))
    rhs[row_pos[target_mono]] = Fraction(1)
    sol = solve_linear(mat, rhs)
    if sol is None:
        return None
    out = [Poly(nvars) for _ in f_groups]
    for c, (j, mono) in zip(sol, unknowns):
        if c:
            out[j] = out[j] + Poly(nvars, {mono: c})
    return out


def solve_transformation(lf: LocalForm, groups: Sequence[DivisorGroup]) -> TransformationCertificate:
    """Find minimal exponents and a polynomial matrix A with A.f = (w_v^{i_v}).

    For one-form-per-group divisors (the n-fold case) the orientation sign is
    sign(det of the form gradients), which makes the residue independent of
    the group order; grouped 2D divisors are already oriented by the l-line
    rule and keep sign +1.
    """
    nvars = lf.dimension
    groups = list(groups)
    if len(groups) != nvars:
        raise TransformationError("need one divisor group per variable")
    _check_common_zero(groups, nvars)
    polys = [g.poly for g in groups]
    total = lf.divisor_order()
    bound = 4 * max(total, 1)
    rows = []
    exponents = []
    for v in range(nvars):
        found = None
        for power in range(1, bound + 1):
            sol = _solve_row(polys, v, power)
            if sol is not None:
                found = (power, sol)
                break
        if found is None:
            raise TransformationError(
                f"no certificate for variable {v} within degree bound {bound}"
            )
        exponents.append(found[0])
        rows.append(tuple(found[1]))
    sign = 1
    if nvars == 3:
        if any(len(g.forms) != 1 for g in groups):
            raise TransformationError(
                "3D transformation law expects one divisor form per group"
            )
        mat = [list(g.forms[0]) for g in groups]
        det = (
            mat[0][0] * (mat[1][1] * mat[2][2] - mat[1][2] * mat[2][1])
            - mat[0][1] * (mat[1][0] * mat[2][2] - mat[1][2] * mat[2][0])
            + mat[0][2] * (mat[1][0] * mat[2][1] - mat[1][1] * mat[2][0])
        )
        # sign(det of argument gradients): includes the (-1)^3 contour-closing
        # sign (the all-positive orthant has gradients (-1,0,0),... det < 0)
        sign = 1 if det > 0 else -1
    cert = TransformationCertificate(
        tuple(polys),
        tuple(exponents),
        tuple(rows),
        det3([list(r) for r in rows]),
        sign,
    )
    if not cert.verify():
        raise TransformationError("certificate identity A.f = g failed exact verification")
    return cert


@dataclass(frozen=True)
class DivisorGroup:
    """Product of primitive linear divisor forms, kept with its factor list."""

    poly: Poly
    forms: tuple[tuple[int, ...], ...]

    @classmethod
    def from_forms(cls, nvars: int, forms_orders) -> "DivisorGroup":
        poly = Poly.constant(nvars, 1)
        factors = []
        for coeffs, order in forms_orders:
            lin = Poly.linear(coeffs)
            for _ in range(order):
                poly = poly * lin
            factors.append(tuple(coeffs))
        return cls(poly, tuple(factors))


def _check_common_zero(groups: Sequence[DivisorGroup], nvars: int):
    """The group products must vanish only at the origin: every pick of one
    linear factor per group has to be linearly independent."""
    import itertools as it

    for pick in it.product(*[g.forms for g in groups]):
        mat = [list(p) for p in pick]
        if nvars == 2:
            det = mat[0][0] * mat[1][1] - mat[0][1] * mat[1][0]
        else:
            det = (
                mat[0][0] * (mat[1][1] * mat[2][2] - mat[1][2] * mat[2][1])
                - mat[0][1] * (mat[1][0] * mat[2][2] - mat[1][2] * mat[2][0])
                + mat[0][2] * (mat[1][0] * mat[2][1] - mat[1][1] * mat[2][0])
            )
        if det == 0:
            raise TransformationError("divisor groups share a common zero line")


# ---------------------------------------------------------------------------
# residues


_CERT_CACHE: dict = {}


def _group_forms(spec, cone, family, lf) -> list[DivisorGroup]:
    """Divisor groups in transformation-law order (orientation or matching)."""
    nvars = lf.dimension
    # map each divisor primitive form to the factor indices contributing it
    contributors: dict[tuple[int, ...], set[int]] = {}
    for fi in family.divisor_orders:
        pf = spec.pole_factors()[fi]
        contributors.setdefault(primitive(pf.form.coeffs), set()).add(fi)
    order_of = dict(lf.divisor)
    if nvars == 2:
        f1_idx, f2_idx = orientation_partition(cone, family)
        side_of = {fi: 0 for fi in f1_idx}
        side_of.update({fi: 1 for fi in f2_idx})
        group_forms: list[list] = [[], []]
        for prim, order in lf.divisor:
            sides = {side_of[fi] for fi in contributors[prim]}
            if len(sides) != 1:
                raise TransformationError(
                    "parallel divisor factors fall on both sides of the l-line"
                )
            group_forms[sides.pop()].append((prim, order))
        if not group_forms[0] or not group_forms[1]:
            raise UndecidableResidueError("all divisor lines on one side of the l-line")
        return [DivisorGroup.from_forms(nvars, g) for g in group_forms]
    # 3D: one group per primitive form, ordered by a form/variable matching
    prims = [prim for prim, _ in lf.divisor]
    if len(prims) != nvars:
        raise TransformationError("3D residues need exactly three distinct divisor forms")
    import itertools as it

    for perm in it.permutations(range(nvars)):
        if all(prims[perm[v]][v] != 0 for v in range(nvars)):
            ordered = [prims[perm[v]] for v in range(nvars)]
            return [
                DivisorGroup.from_forms(nvars, [(p, order_of[p])]) for p in ordered
            ]
    raise TransformationError("no form/variable matching for the 3D divisor")


def certificate_for(spec, cone, family) -> TransformationCertificate:
    key = (spec, cone.id, cone.canonical_key(), family.id)
    cert = _CERT_CACHE.get(key)
    if cert is None:
        lf = localize(spec, family, (0,) * family.arity)
        groups = _group_forms(spec, cone, family, lf)
        cert = solve_transformation(lf, groups)
        _CERT_CACHE[key] = cert
    return cert


def residue_from_certificate(
    lf: LocalForm,
    cert: TransformationCertificate,
    params: Mapping[str, complex],
    eps: float | None = None,
) -> complex:
    orders = tuple(e - 1 for e in cert.g_exponents)
    jet = local_jet(lf, orders, params, eps)
    jet = jet.mul(poly_to_jet(cert.det, orders))
    value = jet.coefficient(orders)
    return cert.orientation_sign * value


def residue_at(
    spec: MBSpec,
    cone: Cone,
    family: IndexedFamily,
    idx: Sequence[int],
    params: Mapping[str, complex],
    eps: float | None = None,
) -> complex:
    """Residue of the integrand form at one member of a pole family."""
    if family.spurious:
        raise UndecidableResidueError(
            "residues at spurious singularities are undecidable"
        )
    cert = certificate_for(spec, cone, family)
    lf = localize(spec, family, idx)
    return residue_from_certificate(lf, cert, params, eps)
