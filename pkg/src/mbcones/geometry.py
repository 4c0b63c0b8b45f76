"""Singular geometry: fundamental polytope, cones, and pole families.

The pole set of the integrand is a finite collection of "towers" of parallel
hyperplanes form(z) = -n.  Relative to the base point each tower splits into
an infinite part receding in a fixed rational direction and at most finitely
many leftover hyperplanes on the near side.  Cones are enumerated from the
circular order of the recession directions: every pair of angularly
consecutive directions spanning less than a half turn yields one cone, whose
two facets are the weakest pole-free half-spaces in those directions.  Pole
families inside a cone are recovered exactly: intersection points are sampled
in a window, grouped by divisor signature, fitted to lattice polyhedra and
decomposed into unimodular quadrant families, then verified symbolically so
the result does not depend on the window.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Sequence

from .model import (
    EpsAffine,
    LinearForm,
    MBSpec,
    PoleFactor,
    SpecError,
    ZERO_EPS,
)


class GeometryError(ValueError):
    pass


# ---------------------------------------------------------------------------
# small exact helpers


def _gcd_vec(v: Iterable[int]) -> int:
    g = 0
    for x in v:
        g = math.gcd(g, abs(int(x)))
    return g


def primitive(v: Sequence[int]) -> tuple[int, ...]:
    g = _gcd_vec(v)
    if g == 0:
        raise GeometryError("zero vector has no primitive form")
    return tuple(int(x) // g for x in v)


def _angle_class(v: tuple[int, int]) -> int:
    x, y = v
    if x > 0 and y >= 0:
        return 0
    if x <= 0 and y > 0:
        return 1
    if x < 0 and y <= 0:
        return 2
    return 3


def _ccw_less(a: tuple[int, int], b: tuple[int, int]) -> bool:
    """Exact strict comparison of direction angles in [0, 2*pi)."""
    ca, cb = _angle_class(a), _angle_class(b)
    if ca != cb:
        return ca < cb
    cross = a[0] * b[1] - a[1] * b[0]
    return cross > 0


def sort_directions(dirs: Iterable[tuple[int, int]]) -> list[tuple[int, int]]:
    out = list(dirs)
    # insertion sort with the exact comparator (tiny lists)
    for i in range(1, len(out)):
        j = i
        while j > 0 and _ccw_less(out[j], out[j - 1]):
            out[j], out[j - 1] = out[j - 1], out[j]
            j -= 1
    return out


def _solve2(a1, c1: EpsAffine, a2, c2: EpsAffine) -> tuple[EpsAffine, EpsAffine] | None:
    """Solve a1.z = c1, a2.z = c2 for z with EpsAffine right-hand sides."""
    det = a1[0] * a2[1] - a1[1] * a2[0]
    if det == 0:
        return None
    inv = Fraction(1, det)
    x = (c1 * a2[1] - c2 * a1[1]) * inv
    y = (c2 * a1[0] - c1 * a2[0]) * inv
    return (x, y)


def _solve3(rows, rhs: Sequence[EpsAffine]) -> tuple[EpsAffine, ...] | None:
    """Solve a 3x3 integer system with EpsAffine right-hand sides (Cramer)."""

    def det3i(m):
        return (
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        )

    d = det3i(rows)
    if d == 0:
        return None
    out = []
    for col in range(3):
        total = ZERO_EPS
        # Laplace expansion along the replaced column
        for i in range(3):
            minor = [
                [rows[r][c] for c in range(3) if c != col]
                for r in range(3)
                if r != i
            ]
            md = minor[0][0] * minor[1][1] - minor[0][1] * minor[1][0]
            sign = (-1) ** (i + col)
            total = total + rhs[i] * Fraction(sign * md)
        out.append(total * Fraction(1, d))
    return tuple(out)


# ---------------------------------------------------------------------------
# public domain types


@dataclass(frozen=True)
class HalfSpace:
    """Constraint Re(form(z)) > 0 ("greater") or < 0 ("less") at the working eps.

    Cone membership treats the boundary as included; the fundamental polytope
    is the open chamber.
    """

    form: LinearForm
    sense: str  # "greater" | "less"

    def __post_init__(self):
        if self.sense not in ("greater", "less"):
            raise GeometryError(f"bad sense {self.sense!r}")
        if self.form.is_zero_form():
            raise GeometryError("half-space with zero form")

    def value_at(self, point: Sequence[EpsAffine], eps: Fraction) -> Fraction:
        return self.form.at_affine(point).value(eps)

    def satisfied(self, point: Sequence[EpsAffine], eps: Fraction, weak: bool = True) -> bool:
        v = self.value_at(point, eps)
        if self.sense == "greater":
            return v >= 0 if weak else v > 0
        return v <= 0 if weak else v < 0

    def canonical(self, eps: Fraction) -> tuple:
        """Sign-normalized key for set comparisons (leading coefficient > 0)."""
        coeffs = self.form.coeffs
        lead = next(c for c in coeffs if c != 0)
        if lead > 0:
            flip = 1
            sense = self.sense
        else:
            flip = -1
            sense = "less" if self.sense == "greater" else "greater"
        off = self.form.offset * flip
        return (tuple(c * flip for c in coeffs), off.const_part, off.eps_part, sense)

    def __str__(self):
        op = ">" if self.sense == "greater" else "<"
        return f"Re({self.form}) {op} 0"


@dataclass(frozen=True)
class DeltaVector:
    components: tuple[Fraction, ...]
    classification: str  # degenerate | nondegenerate | semi_degenerate
    alpha: Fraction | None = None  # onefold only


@dataclass(frozen=True)
class IndexedFamily:
    """Pole points offset + matrix @ k for integer k >= 0 componentwise."""

    id: int
    offset: tuple[EpsAffine, ...]
    matrix: tuple[tuple[int, ...], ...]  # columns, possibly empty (arity 0)
    divisor_orders: dict  # pole-factor index -> order of vanishing
    spurious: bool = False

    @property
    def arity(self) -> int:
        return len(self.matrix)

    def point_at(self, idx: Sequence[int]) -> tuple[EpsAffine, ...]:
        if len(idx) != self.arity:
            raise GeometryError(f"index vector must have length {self.arity}")
        if any(i < 0 for i in idx):
            raise GeometryError("index vector must be componentwise >= 0")
        point = list(self.offset)
        for col, k in zip(self.matrix, idx):
            if k:
                point = [p + EpsAffine(Fraction(c * k)) for p, c in zip(point, col)]
        return tuple(point)

    def describe(self) -> str:
        names = "mnp"
        dims = len(self.offset)
        parts = []
        for d in range(dims):
            expr = str(self.offset[d])
            for j, col in enumerate(self.matrix):
                c = col[d]
                if c == 1:
                    expr += f"+{names[j]}"
                elif c == -1:
                    expr += f"-{names[j]}"
                elif c:
                    expr += f"{c:+d}{names[j]}"
            parts.append(expr)
        return "(" + ", ".join(parts) + ")"


@dataclass(frozen=True)
class Cone:
    """A compatible residue cone with its defining facets and l-line data."""

    id: int
    constraints: tuple[HalfSpace, ...]
    generating_factors: tuple[int, ...]  # pole-factor indices defining the facets
    sector: tuple[tuple[int, ...], ...]  # recession directions of the facets
    vertex: tuple[EpsAffine, ...]
    base_point: tuple[Fraction, ...]
    eps: Fraction
    l_direction: tuple[int, ...] | None = None  # 2D only
    east: bool | None = None  # 2D only: cone on the right of the l-direction

    @property
    def dimension(self) -> int:
        return len(self.base_point)

    def contains(self, point: Sequence[EpsAffine], weak: bool = True) -> bool:
        return all(h.satisfied(point, self.eps, weak=weak) for h in self.constraints)

    def canonical_key(self) -> tuple:
        return tuple(sorted(h.canonical(self.eps) for h in self.constraints))

    def line_side(self, form: LinearForm, level: EpsAffine) -> int:
        """Which side of the l-line the hyperplane form(z) = level crosses.

        Returns +1 for the arrow side (positive parameter along the oriented
        l-line through the base point), -1 for the other side.
        """
        if self.l_direction is None:
            raise GeometryError("l-line data is only available in dimension 2")
        denom = sum(a * d for a, d in zip(form.coeffs, self.l_direction))
        if denom == 0:
            raise GeometryError("hyperplane parallel to the l-line")
        # crossing parameter t = (level - form(base)) / <coeffs, d>
        v = form.at_rational(self.base_point).value(self.eps)
        num = level.value(self.eps) - v
        if num == 0:
            raise GeometryError("hyperplane passes through the base point")
        sign = 1 if num > 0 else -1
        return sign if denom > 0 else -sign

    def generating_gammas(self, spec: MBSpec) -> tuple[int, ...]:
        """Indices into spec.gammas for the facet-defining gamma factors."""
        out = []
        for fi in self.generating_factors:
            pf = spec.pole_factors()[fi]
            if pf.kind == "gamma":
                out.append(pf.source_index)
        return tuple(out)


# ---------------------------------------------------------------------------
# bundles


@dataclass(frozen=True)
class Bundle:
    """One pole tower split relative to the base point.

    The infinite part is the hyperplanes form = -n for n >= n_start (empty for
    monomials); near_lines lists the leftover levels -n with n < n_start that
    sit on the other side of the base point.
    """

    factor_index: int
    factor: PoleFactor
    value_at_base: Fraction
    n_start: int | None          # None when there is no infinite part
    near_ns: tuple[int, ...]     # finite shifts on the near side
    direction: tuple[int, ...] | None  # recession direction of the infinite part

    def hull_constraint(self) -> tuple[tuple[int, ...], EpsAffine]:
        """Infinite part hull {<coeffs,z> <= c}, normalized to primitive coeffs."""
        if self.n_start is None:
            raise GeometryError("monomial bundles have no infinite hull")
        a = self.factor.form.coeffs
        g = _gcd_vec(a)
        c = (EpsAffine(Fraction(-self.n_start)) - self.factor.form.offset) * Fraction(1, g)
        return primitive(a), c


def build_bundles(spec: MBSpec) -> list[Bundle]:
    eps = spec.working_eps
    bundles = []
    for i, pf in enumerate(spec.pole_factors()):
        v = pf.form.at_rational(spec.base_point).value(eps)
        if pf.kind == "monomial":
            bundles.append(Bundle(i, pf, v, None, (0,), None))
            continue
        if v > 0:
            n_start, near = 0, ()
        else:
            # levels -n with -n > v lie on the near side
            n_hi = int(math.floor(-v))  # v irrational-in-eps never integer here
            if Fraction(-v) == n_hi and v == -n_hi:
                raise GeometryError("base point on a pole hyperplane")
            n_start, near = n_hi + 1, tuple(range(0, n_hi + 1))
        direction = primitive([-c for c in pf.form.coeffs])
        bundles.append(Bundle(i, pf, v, n_start, near, direction))
    return bundles


# ---------------------------------------------------------------------------
# fundamental polytope and the delta vector


def fundamental_polytope(spec: MBSpec, prune: bool = True) -> list[HalfSpace]:
    """Open chamber of the base point in the singular-hyperplane arrangement.

    One or two half-spaces per pole factor (nearest hyperplane on each side);
    redundant constraints are pruned so the binding set remains.
    """
    eps = spec.working_eps
    out: list[HalfSpace] = []
    for pf in spec.pole_factors():
        v = pf.form.at_rational(spec.base_point).value(eps)
        if pf.kind == "monomial":
            sense = "greater" if v > 0 else "less"
            out.append(HalfSpace(pf.form, sense))
            continue
        if v > 0:
            out.append(HalfSpace(pf.form, "greater"))
        else:
            n_hi = int(math.floor(-v))
            # -(n_hi+1) < value < -n_hi
            upper = LinearForm(pf.form.coeffs, pf.form.offset + Fraction(n_hi))
            lower = LinearForm(pf.form.coeffs, pf.form.offset + Fraction(n_hi + 1))
            out.append(HalfSpace(upper, "less"))
            out.append(HalfSpace(lower, "greater"))
    uniq: dict[tuple, HalfSpace] = {}
    for h in out:
        uniq.setdefault(h.canonical(eps), h)
    constraints = list(uniq.values())
    if not prune or spec.dimension > 3:
        return constraints
    return _prune_redundant(constraints, spec)


def _prune_redundant(constraints: list[HalfSpace], spec: MBSpec) -> list[HalfSpace]:
    """Drop half-spaces implied by the rest (LP via scipy, floats are fine here)."""
    import numpy as np
    from scipy.optimize import linprog

    eps = float(spec.working_eps)
    mats = []
    for h in constraints:
        # coeffs.z + offset < 0  ->  coeffs.z <= -offset
        a = np.array(h.form.coeffs, dtype=float)
        b = -float(h.form.offset.value(eps))
        if h.sense == "greater":
            a, b = -a, -b
        mats.append((a, b))
    keep = []
    for i, (ai, bi) in enumerate(mats):
        others = [m for j, m in enumerate(mats) if j != i]
        A = np.array([a for a, _ in others])
        b = np.array([bb for _, bb in others])
        res = linprog(-ai, A_ub=A, b_ub=b, bounds=[(None, None)] * len(ai), method="highs")
        if res.status == 3:  # unbounded: certainly not implied
            keep.append(i)
            continue
        if not res.success:
            keep.append(i)
            continue
        if -res.fun > bi + 1e-9:
            keep.append(i)
    return [constraints[i] for i in keep]


def delta_vector(spec: MBSpec) -> DeltaVector:
    """Componentwise sum of signed gamma coefficients, with the 1D alpha."""
    comps = [Fraction(0)] * spec.dimension
    for g in spec.gammas:
        for i, c in enumerate(g.form.coeffs):
            comps[i] += g.power * c
    alpha = None
    if spec.dimension == 1:
        alpha = sum((Fraction(g.power * abs(g.form.coeffs[0])) for g in spec.gammas), Fraction(0))
    if all(c == 0 for c in comps):
        cls = "degenerate"
    else:
        cls = "nondegenerate"
        for g in spec.gammas:
            cross_zero = True
            # proportionality test of g.form.coeffs against comps
            base = None
            for ci, di in zip(g.form.coeffs, comps):
                if ci == 0 and di == 0:
                    continue
                if di == 0 or ci == 0:
                    cross_zero = False
                    break
                r = Fraction(ci) / di
                if base is None:
                    base = r
                elif r != base:
                    cross_zero = False
                    break
            if cross_zero and base is not None:
                cls = "semi_degenerate"
                break
    return DeltaVector(tuple(comps), cls, alpha)


# ---------------------------------------------------------------------------
# cone enumeration


def _facet_constraint(
    spec: MBSpec,
    bundles: list[Bundle],
    direction: tuple[int, ...],
) -> tuple[HalfSpace, int]:
    """Weakest pole-free half-space whose hyperplanes are normal to direction.

    Candidates are the infinite hulls of bundles receding along ``direction``
    and single pole hyperplanes (near-side or monomial) parallel to them that
    exclude the base point.  Returns the half-space and the owning factor.
    """
    eps = spec.working_eps
    a_hat = primitive([-c for c in direction])
    best: tuple[Fraction, EpsAffine, int] | None = None
    for b in bundles:
        coeffs = b.factor.form.coeffs
        g = _gcd_vec(coeffs)
        prim = primitive(coeffs)
        candidates: list[EpsAffine] = []
        if b.direction == tuple(direction) and b.n_start is not None:
            _, c = b.hull_constraint()
            candidates.append(c)
        if prim == a_hat or prim == tuple(-x for x in a_hat):
            sgn = 1 if prim == a_hat else -1
            gamma_val = sum(
                (Fraction(c) * p for c, p in zip(a_hat, spec.base_point)), Fraction(0)
            )
            # single-hyperplane candidates: near-side leftovers and monomials
            for n in b.near_ns:
                # hyperplane <coeffs,z> = -n - offset  ->  <a_hat,z> = c_line
                c_line = (EpsAffine(Fraction(-n)) - b.factor.form.offset) * Fraction(sgn, g)
                if c_line.value(eps) < gamma_val:
                    candidates.append(c_line)
        for c in candidates:
            val = c.value(eps)
            if best is None or val > best[0]:
                best = (val, c, b.factor_index)
    if best is None:
        raise GeometryError(f"no pole hyperplanes normal to direction {direction}")
    _, c, factor_index = best
    form = LinearForm(a_hat, -c)
    return HalfSpace(form, "less"), factor_index


def _pick_l_direction(spec: MBSpec, r1, r2) -> tuple[int, ...]:
    """Rational direction separating the two facet bundles, parallel to no line."""
    forms = [pf.form.coeffs for pf in spec.pole_factors()]
    for m, n in [(1, 1), (2, 1), (1, 2), (3, 1), (1, 3), (3, 2), (2, 3), (4, 1), (1, 4), (5, 2), (2, 5)]:
        d = tuple(m * a - n * b for a, b in zip(r1, r2))
        if all(x == 0 for x in d):
            continue
        if sum(a * b for a, b in zip(r1, d)) <= 0:
            continue
        if sum(a * b for a, b in zip(r2, d)) >= 0:
            continue
        if any(sum(a * b for a, b in zip(f, d)) == 0 for f in forms):
            continue
        return d
    raise GeometryError("could not find a generic l-line direction")


def _cone_east(spec: MBSpec, vertex, r1, r2, d) -> bool:
    eps = spec.working_eps
    for depth in (1, 3, 7):
        p = [
            v + EpsAffine(Fraction(depth * (a + b)))
            for v, a, b in zip(vertex, r1, r2)
        ]
        px = p[0].value(eps) - spec.base_point[0]
        py = p[1].value(eps) - spec.base_point[1]
        cross = Fraction(d[0]) * py - Fraction(d[1]) * px
        if cross != 0:
            return cross < 0
    raise GeometryError("degenerate cone interior point")


@lru_cache(maxsize=32)
def enumerate_cones(spec: MBSpec) -> tuple[Cone, ...]:
    """All compatible residue cones, in circular order of their facet directions."""
    if spec.dimension == 1:
        raise GeometryError("cone enumeration applies to dimension >= 2; use the onefold API")
    if spec.dimension not in (2, 3):
        raise GeometryError("cone enumeration supports dimensions 2 and 3")
    bundles = build_bundles(spec)
    infinite = [b for b in bundles if b.direction is not None]
    if not infinite:
        raise GeometryError("no pole towers; nothing to resum")
    if spec.dimension == 2:
        return _enumerate_cones_2d(spec, bundles, infinite)
    return _enumerate_cones_3d(spec, bundles, infinite)


def _enumerate_cones_2d(spec, bundles, infinite) -> tuple[Cone, ...]:
    dirs = sort_directions({b.direction for b in infinite})
    cones = []
    cone_id = 1
    for i, r1 in enumerate(dirs):
        r2 = dirs[(i + 1) % len(dirs)]
        if r1 == r2:
            continue
        cross = r1[0] * r2[1] - r1[1] * r2[0]
        if cross <= 0:  # angular gap of a half turn or more
            continue
        h1, f1 = _facet_constraint(spec, bundles, r1)
        h2, f2 = _facet_constraint(spec, bundles, r2)
        vertex = _solve2(
            h1.form.coeffs, -h1.form.offset, h2.form.coeffs, -h2.form.offset
        )
        if vertex is None:
            raise GeometryError("facet normals unexpectedly parallel")
        d = _pick_l_direction(spec, r1, r2)
        east = _cone_east(spec, vertex, r1, r2, d)
        cones.append(
            Cone(
                id=cone_id,
                constraints=(h1, h2),
                generating_factors=(f1, f2),
                sector=(r1, r2),
                vertex=vertex,
                base_point=spec.base_point,
                eps=spec.working_eps,
                l_direction=d,
                east=east,
            )
        )
        cone_id += 1
    if not cones:
        raise GeometryError("no compatible cone found")
    return tuple(cones)


def _in_cone_span(target, gens) -> bool:
    """target in the strictly positive span of three 3D generators?"""
    mat = [[gens[j][i] for j in range(3)] for i in range(3)]
    det = (
        mat[0][0] * (mat[1][1] * mat[2][2] - mat[1][2] * mat[2][1])
        - mat[0][1] * (mat[1][0] * mat[2][2] - mat[1][2] * mat[2][0])
        + mat[0][2] * (mat[1][0] * mat[2][1] - mat[1][1] * mat[2][0])
    )
    if det == 0:
        return False
    lam = []
    for col in range(3):
        m2 = [list(row) for row in mat]
        for r in range(3):
            m2[r][col] = target[r]
        d2 = (
            m2[0][0] * (m2[1][1] * m2[2][2] - m2[1][2] * m2[2][1])
            - m2[0][1] * (m2[1][0] * m2[2][2] - m2[1][2] * m2[2][0])
            + m2[0][2] * (m2[1][0] * m2[2][1] - m2[1][1] * m2[2][0])
        )
        lam.append(Fraction(d2, det))
    if any(l < 0 for l in lam):
        return False
    return sum(1 for l in lam if l > 0) >= 2  # interior-ish: not an edge itself


def _enumerate_cones_3d(spec, bundles, infinite) -> tuple[Cone, ...]:
    dirs = sorted({b.direction for b in infinite})
    cones = []
    seen = set()
    cone_id = 1
    for tri in itertools.combinations(dirs, 3):
        mat = [[tri[j][i] for j in range(3)] for i in range(3)]
        det = (
            mat[0][0] * (mat[1][1] * mat[2][2] - mat[1][2] * mat[2][1])
            - mat[0][1] * (mat[1][0] * mat[2][2] - mat[1][2] * mat[2][0])
            + mat[0][2] * (mat[1][0] * mat[2][1] - mat[1][1] * mat[2][0])
        )
        if det == 0:
            continue
        if any(_in_cone_span(r, tri) for r in dirs if r not in tri):
            continue
        parts = [_facet_constraint(spec, bundles, r) for r in tri]
        constraints = tuple(h for h, _ in parts)
        key = tuple(sorted(h.canonical(spec.working_eps) for h in constraints))
        if key in seen:
            continue
        seen.add(key)
        vertex = _solve3(
            [list(h.form.coeffs) for h in constraints],
            [-h.form.offset for h in constraints],
        )
        if vertex is None:
            continue
        cones.append(
            Cone(
                id=cone_id,
                constraints=constraints,
                generating_factors=tuple(f for _, f in parts),
                sector=tri,
                vertex=vertex,
                base_point=spec.base_point,
                eps=spec.working_eps,
            )
        )
        cone_id += 1
    if not cones:
        raise GeometryError("no compatible cone found")
    return tuple(cones)


# ---------------------------------------------------------------------------
# pole families inside a cone
#
# Window sampling + exact lattice reconstruction.  All point coordinates and
# constraint offsets stay exact (EpsAffine / Fraction); the window only decides
# which points are *seen*, and every emitted family is re-verified symbolically.

_WINDOW = 21          # half width of the sampling box around the cone vertex
_WINDOW_3D = 11       # 3D windows grow cubically; families there are simple
_STABILITY = Fraction(3, 5)  # inner-window fraction for boundedness detection


def _factor_lines(spec: MBSpec, pf: PoleFactor, lo: Sequence[Fraction], hi: Sequence[Fraction]):
    """Shift indices n whose hyperplane form = -n meets the coordinate box."""
    eps = spec.working_eps
    # bound |<coeffs,z>| over the box, then n in [-offset - bound, -offset + bound]
    bound = Fraction(0)
    for c, a, b in zip(pf.form.coeffs, lo, hi):
        bound += abs(Fraction(c)) * max(abs(a), abs(b))
    off = pf.form.offset.value(eps)
    n_min = max(0, math.floor(-off - bound - 1))
    n_max = math.ceil(-off + bound + 1)
    if pf.kind == "monomial":
        return [0] if n_min <= 0 <= n_max else []
    return list(range(int(n_min), int(n_max) + 1))


def _window_points(spec: MBSpec, cone: Cone, width: int):
    """Exact intersection points of singular hyperplanes inside cone and box.

    Works per factor combination: the shift vector n maps affinely to the
    intersection point, so candidate shifts are prefiltered with floats on the
    rectangular window and confirmed exactly.
    """
    import numpy as np

    eps = spec.working_eps
    eps_f = float(eps)
    dim = spec.dimension
    center = [v.value(eps) for v in cone.vertex]
    lo = [c - width for c in center]
    hi = [c + width for c in center]
    factors = spec.pole_factors()
    shift_ranges = [_factor_lines(spec, pf, lo, hi) for pf in factors]
    points: dict[tuple, tuple] = {}
    for combo in itertools.combinations(range(len(factors)), dim):
        mats = [list(factors[i].form.coeffs) for i in combo]
        det = mats[0][0] * mats[1][1] - mats[0][1] * mats[1][0] if dim == 2 else None
        if dim == 3:
            m = mats
            det = (
                m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
            )
        if det == 0:
            continue
        ranges = [shift_ranges[i] for i in combo]
        if any(not r for r in ranges):
            continue
        # float prefilter on the window box (with one unit of slack)
        inv = np.linalg.inv(np.array(mats, dtype=float))
        offs = np.array(
            [float(factors[i].form.offset.value(eps_f)) for i in combo]
        )
        grids = np.meshgrid(*[np.array(r, dtype=float) for r in ranges], indexing="ij")
        rhs = np.stack([-g - o for g, o in zip(grids, offs)], axis=-1)
        z = rhs @ inv.T
        mask = np.ones(z.shape[:-1], dtype=bool)
        for d in range(dim):
            mask &= (z[..., d] >= float(lo[d]) - 1.0) & (z[..., d] <= float(hi[d]) + 1.0)
        for h in cone.constraints:
            val = sum(h.form.coeffs[d] * z[..., d] for d in range(dim)) + float(
                h.form.offset.value(eps_f)
            )
            mask &= (val >= -1.0) if h.sense == "greater" else (val <= 1.0)
        idxs = np.argwhere(mask)
        for multi in idxs:
            sel_ns = [ranges[j][multi[j]] for j in range(dim)]
            rhs_exact = [
                EpsAffine(Fraction(-n)) - factors[i].form.offset
                for n, i in zip(sel_ns, combo)
            ]
            if dim == 2:
                p = _solve2(mats[0], rhs_exact[0], mats[1], rhs_exact[1])
            else:
                p = _solve3(mats, rhs_exact)
            if p is None:
                continue
            vals = [x.value(eps) for x in p]
            if any(v < a or v > b for v, a, b in zip(vals, lo, hi)):
                continue
            if not cone.contains(p):
                continue
            key = tuple((x.const_part, x.eps_part) for x in p)
            points.setdefault(key, p)
    return list(points.values())


def pole_index(pf: PoleFactor, val: EpsAffine) -> int | None:
    """Shift n with val == -n on the factor's pole set, else None."""
    if pf.kind == "monomial":
        return 0 if val.is_zero() else None
    return val.nonpositive_integer()


def _signature(spec: MBSpec, point) -> tuple:
    sig = []
    for fi, pf in enumerate(spec.pole_factors()):
        val = pf.form.at_affine(point)
        if pole_index(pf, val) is not None:
            sig.append((fi, pf.order))
    for g in spec.denominator_gammas():
        val = g.form.at_affine(point)
        if val.nonpositive_integer() is not None:
            raise GeometryError(
                "denominator gamma vanishing on a cone point is not supported here"
            )
    return tuple(sig)


def _difference_lattice(points) -> tuple[list[tuple[int, ...]], Fraction]:
    """HNF-style basis of the lattice generated by point differences.

    Returns integer basis vectors together with the common denominator scale:
    actual lattice vectors are basis / scale.
    """
    base = points[0]
    diffs = []
    denom = 1
    for p in points[1:]:
        d = []
        for a, b in zip(p, base):
            delta = a - b
            if delta.eps_part != 0:
                raise GeometryError("points of one family differ by an eps-dependent shift")
            d.append(delta.const_part)
            denom = denom * delta.const_part.denominator // math.gcd(denom, delta.const_part.denominator)
        diffs.append(d)
    scale = Fraction(denom)
    ints = [[int(x * scale) for x in d] for d in diffs]
    basis = _hnf_basis(ints)
    return basis, scale


def _hnf_basis(vectors: list[list[int]]) -> list[tuple[int, ...]]:
    """Triangular basis of the integer lattice generated by the vectors."""
    rest = [list(v) for v in vectors if any(v)]
    if not rest:
        return []
    dim = len(rest[0])
    basis: list[tuple[int, ...]] = []
    for col in range(dim):
        nz = [v for v in rest if v[col] != 0]
        carry = [v for v in rest if v[col] == 0 and any(v)]
        if not nz:
            rest = carry
            continue
        while len(nz) > 1:
            nz.sort(key=lambda v: abs(v[col]))
            piv = nz[0]
            nxt = [piv]
            for v in nz[1:]:
                q = v[col] // piv[col]
                if q:
                    for i in range(dim):
                        v[i] -= q * piv[i]
                if v[col] != 0:
                    nxt.append(v)
                elif any(v):
                    carry.append(v)
            nz = nxt
        basis.append(tuple(nz[0]))
        rest = carry
    return basis


def _candidate_normals(spec: MBSpec, cone: Cone):
    seen = []
    for pf in spec.pole_factors():
        for sgn in (1, -1):
            u = tuple(sgn * c for c in pf.form.coeffs)
            if u not in seen:
                seen.append(u)
    for h in cone.constraints:
        for sgn in (1, -1):
            u = tuple(sgn * c for c in h.form.coeffs)
            if u not in seen:
                seen.append(u)
    return seen


def _region_from_group(spec, cone, group, width):
    """Bounding constraints {u.z <= c} of a signature group, window-stable ones only."""
    eps = spec.working_eps
    center = [v.value(eps) for v in cone.vertex]
    inner = Fraction(width) * _STABILITY
    normals = _candidate_normals(spec, cone)
    constraints = []
    for u in normals:
        vals = []
        inner_vals = []
        for p in group:
            val = sum((Fraction(c) * x.value(eps) for c, x in zip(u, p)), Fraction(0))
            vals.append(val)
            if all(abs(x.value(eps) - c0) <= inner for x, c0 in zip(p, center)):
                inner_vals.append(val)
        if not inner_vals:
            continue
        if max(vals) == max(inner_vals):
            # exact EpsAffine bound: recover it from a maximizing point
            best = max(range(len(group)), key=lambda i: vals[i])
            c_aff = ZERO_EPS
            for c, x in zip(u, group[best]):
                c_aff = c_aff + x * Fraction(c)
            constraints.append((u, c_aff))
    # dedupe keeping the tightest bound per normal
    byu: dict[tuple, EpsAffine] = {}
    for u, c in constraints:
        cur = byu.get(u)
        if cur is None or c.value(eps) < cur.value(eps):
            byu[u] = c
    return list(byu.items())


def _region_vertices(region, eps, dim):
    verts = []
    if dim == 2:
        for (u1, c1), (u2, c2) in itertools.combinations(region, 2):
            p = _solve2(u1, c1, u2, c2)
            if p is None:
                continue
            ok = all(
                sum((Fraction(c) * x.value(eps) for c, x in zip(u, p)), Fraction(0))
                <= cc.value(eps)
                for u, cc in region
            )
            if ok and not any(
                all((a - b).is_zero() for a, b in zip(p, q)) for q in verts
            ):
                verts.append(p)
    else:
        for rows in itertools.combinations(region, 3):
            p = _solve3([list(u) for u, _ in rows], [c for _, c in rows])
            if p is None:
                continue
            ok = all(
                sum((Fraction(c) * x.value(eps) for c, x in zip(u, p)), Fraction(0))
                <= cc.value(eps)
                for u, cc in region
            )
            if ok and not any(
                all((a - b).is_zero() for a, b in zip(p, q)) for q in verts
            ):
                verts.append(p)
    return verts


def _tangent_rays_2d(region, vertex, eps):
    """Extreme rays of the feasible cone at a vertex of a 2D region."""
    tight = []
    for u, c in region:
        val = sum((Fraction(ci) * x.value(eps) for ci, x in zip(u, vertex)), Fraction(0))
        if val == c.value(eps):
            tight.append(u)
    rays = []
    for u in tight:
        for e in ((-u[1], u[0]), (u[1], -u[0])):
            if all(t[0] * e[0] + t[1] * e[1] <= 0 for t in tight):
                if primitive(e) not in rays:
                    rays.append(primitive(e))
    return rays


def _tangent_rays_3d(region, vertex, eps):
    tight = []
    for u, c in region:
        val = sum((Fraction(ci) * x.value(eps) for ci, x in zip(u, vertex)), Fraction(0))
        if val == c.value(eps):
            tight.append(u)
    rays = []
    for u1, u2 in itertools.combinations(tight, 2):
        e = (
            u1[1] * u2[2] - u1[2] * u2[1],
            u1[2] * u2[0] - u1[0] * u2[2],
            u1[0] * u2[1] - u1[1] * u2[0],
        )
        if not any(e):
            continue
        for cand in (e, tuple(-x for x in e)):
            if all(sum(t[i] * cand[i] for i in range(3)) <= 0 for t in tight):
                p = primitive(cand)
                if p not in rays:
                    rays.append(p)
    return rays


def _unimodular_split_2d(g1, g2):
    """Split the lattice cone spanned by integer g1,g2 into unimodular pieces."""
    det = g1[0] * g2[1] - g1[1] * g2[0]
    if det < 0:
        g1, g2 = g2, g1
        det = -det
    if det == 0:
        raise GeometryError("degenerate lattice cone")
    if det == 1:
        return [(g1, g2)]
    mid = primitive((g1[0] + g2[0], g1[1] + g2[1]))
    cones = []
    for part in (_unimodular_split_2d(g1, mid), _unimodular_split_2d(mid, g2)):
        cones.extend(part)
    if len(cones) > 16:
        raise GeometryError("lattice cone subdivision did not terminate")
    return cones


class _GroupDecomposer:
    """Decomposes one signature group of window points into lattice families."""

    def __init__(self, spec, cone, width):
        self.spec = spec
        self.cone = cone
        self.eps = spec.working_eps
        self.width = width

    def decompose(self, group, divisor, depth=0):
        if not group:
            return []
        if depth > 6:
            raise GeometryError("family decomposition recursion exceeded")
        basis, scale = _difference_lattice(group)
        rank = len(basis)
        if rank == 0:
            return [(group[0], ())]
        region = _region_from_group(self.spec, self.cone, group, self.width)
        if rank == 1:
            return self._checked(self._rays(group, basis[0], scale), divisor)
        verts = _region_vertices(region, self.eps, self.spec.dimension)
        if self.spec.dimension == 2 and rank == 2:
            if len(verts) == 1:
                return self._checked(
                    self._vertex_cone_2d(group, verts[0], region, scale), divisor
                )
            return self._slice(group, region, divisor, depth)
        if self.spec.dimension == 3:
            if rank == 3 and len(verts) == 1:
                return self._checked(
                    self._vertex_cone_3d(group, verts[0], region), divisor
                )
            return self._slice(group, region, divisor, depth)
        raise GeometryError("unsupported group structure")

    def _checked(self, fams, divisor):
        for offset, matrix in fams:
            if not _verify_family(self.spec, self.cone, offset, matrix, divisor):
                raise GeometryError("candidate family failed symbolic verification")
        return fams

    # ---- helpers -----------------------------------------------------
    def _rays(self, group, step_int, scale):
        step = [Fraction(s) / scale for s in step_int]
        key = lambda p: sum(
            (x.value(self.eps) * Fraction(s) for x, s in zip(p, step)), Fraction(0)
        )
        pts = sorted(group, key=key)
        start = pts[0]
        # orient the step from the minimal point into the group
        if len(pts) > 1:
            d0 = [(a - b).const_part for a, b in zip(pts[1], pts[0])]
            if any(Fraction(s) * x < 0 for s, x in zip(step, d0) if x):
                step = [-s for s in step]
        col = self._integer_step(step)
        return [(start, (col,))]

    def _integer_step(self, step):
        col = []
        for s in step:
            if Fraction(s).denominator != 1:
                raise GeometryError("non-integer family step")
            col.append(int(s))
        return tuple(col)

    def _vertex_cone_2d(self, group, vertex, region, scale):
        rays = _tangent_rays_2d(region, vertex, self.eps)
        if len(rays) != 2:
            raise GeometryError(f"expected 2 tangent rays, found {rays}")
        # express rays as minimal lattice steps (scale by the difference lattice)
        g1 = self._lattice_ray(rays[0], group, vertex)
        g2 = self._lattice_ray(rays[1], group, vertex)
        pieces = _unimodular_split_2d(g1, g2)
        # first piece keeps both boundary rays; each later piece shares its
        # first generator ray with the previous piece, so it starts one step
        # along the second generator to keep the union disjoint.
        out = []
        for j, (a, b) in enumerate(pieces):
            if j == 0:
                out.append((vertex, (a, b)))
            else:
                off = tuple(x + EpsAffine(Fraction(s)) for x, s in zip(vertex, b))
                out.append((off, (a, b)))
        return out

    def _vertex_cone_3d(self, group, vertex, region):
        rays = _tangent_rays_3d(region, vertex, self.eps)
        if len(rays) != 3:
            raise GeometryError(f"expected 3 tangent rays, found {rays}")
        gens = [self._lattice_ray(r, group, vertex) for r in rays]
        det = (
            gens[0][0] * (gens[1][1] * gens[2][2] - gens[1][2] * gens[2][1])
            - gens[0][1] * (gens[1][0] * gens[2][2] - gens[1][2] * gens[2][0])
            + gens[0][2] * (gens[1][0] * gens[2][1] - gens[1][1] * gens[2][0])
        )
        if abs(det) != 1:
            raise GeometryError("non-unimodular 3D family cone")
        return [(vertex, tuple(gens))]

    def _lattice_ray(self, ray, group, vertex):
        """Smallest multiple of ``ray`` stepping between group lattice points."""
        for mult in range(1, 9):
            cand = tuple(mult * r for r in ray)
            target = [v + EpsAffine(Fraction(c)) for v, c in zip(vertex, cand)]
            for p in group:
                if all((a - b).is_zero() for a, b in zip(p, target)):
                    return cand
        raise GeometryError(f"no lattice step along ray {ray}")

    def _slice(self, group, region, divisor, depth):
        """Split on the minimal level of a catalog functional (spec factor order)."""
        for pf in self.spec.pole_factors():
            for sgn in (1, -1):
                u = tuple(sgn * c for c in pf.form.coeffs)
                vals = {}
                for p in group:
                    v = sum(
                        (Fraction(c) * x.value(self.eps) for c, x in zip(u, p)),
                        Fraction(0),
                    )
                    vals.setdefault(v, []).append(p)
                levels = sorted(vals)
                if len(levels) < 2:
                    continue
                # bounded below within the window?
                inner = [
                    v
                    for v, pts in vals.items()
                    for p in pts
                    if self._inner(p)
                ]
                if not inner or min(inner) != levels[0]:
                    continue
                head = vals[levels[0]]
                rest = [p for v in levels[1:] for p in vals[v]]
                try:
                    fams_head = self.decompose(head, divisor, depth + 1)
                    fams_rest = self.decompose(rest, divisor, depth + 1)
                except GeometryError:
                    continue
                return fams_head + fams_rest
        raise GeometryError("could not slice signature group into lattice families")

    def _inner(self, p):
        center = [v.value(self.eps) for v in self.cone.vertex]
        lim = Fraction(self.width) * _STABILITY
        return all(abs(x.value(self.eps) - c) <= lim for x, c in zip(p, center))


def _verify_family(spec, cone, offset, matrix, divisor):
    """Symbolic check: signature and cone membership hold for every index >= 0."""
    eps = spec.working_eps
    for h in cone.constraints:
        v0 = h.form.at_affine(offset).value(eps)
        ok0 = v0 >= 0 if h.sense == "greater" else v0 <= 0
        if not ok0:
            return False
        for col in matrix:
            slope = h.form.dot_coeffs(col)
            if (h.sense == "greater" and slope < 0) or (h.sense == "less" and slope > 0):
                return False
    for fi, pf in enumerate(spec.pole_factors()):
        val = pf.form.at_affine(offset)
        slopes = [pf.form.dot_coeffs(col) for col in matrix]
        vanishes = fi in divisor
        if vanishes:
            if pole_index(pf, val) is None:
                return False
            if any(s.denominator != 1 for s in slopes):
                return False
            if any(s > 0 for s in slopes):
                return False  # the pole index must not run out
            if pf.kind == "monomial" and any(s != 0 for s in slopes):
                return False
        elif val.eps_part == 0:
            # value stays eps-free along the family; make sure it never lands
            # on the factor's pole set for any admissible index vector
            if pf.kind == "monomial":
                if _affine_hits(val.const_part, slopes, {Fraction(0)}):
                    return False
            elif val.const_part.denominator == 1 and all(s.denominator == 1 for s in slopes):
                if val.const_part <= 0 or any(s < 0 for s in slopes):
                    return False
    return True


def _affine_hits(c0: Fraction, slopes, targets) -> bool:
    """Can c0 + sum(s_i * k_i) hit one of targets with integer k >= 0?"""
    if all(s == 0 for s in slopes):
        return c0 in targets
    if all(s >= 0 for s in slopes) and all(c0 > t for t in targets):
        return False
    if all(s <= 0 for s in slopes) and all(c0 < t for t in targets):
        return False
    bound = 41
    grids = [range(bound if s else 1) for s in slopes]
    for combo in itertools.product(*grids):
        v = c0 + sum(s * k for s, k in zip(slopes, combo))
        if v in targets:
            return True
    return False


_FAMILY_CACHE: dict = {}


def intersection_families(spec: MBSpec, cone: Cone) -> tuple[IndexedFamily, ...]:
    """Maximal pole families inside the cone, spurious ones flagged."""
    key = (spec, cone.id, cone.canonical_key())
    cached = _FAMILY_CACHE.get(key)
    if cached is not None:
        return cached
    width = _WINDOW if spec.dimension == 2 else _WINDOW_3D
    points = _window_points(spec, cone, width)
    groups: dict[tuple, list] = {}
    for p in points:
        groups.setdefault(_signature(spec, p), []).append(p)
    decomposer = _GroupDecomposer(spec, cone, width)
    raw = []
    for sig in sorted(groups, key=lambda s: tuple(s)):
        divisor = dict(sig)
        for offset, matrix in decomposer.decompose(groups[sig], divisor):
            raw.append((offset, matrix, divisor))
    # deterministic order: by distance of offset from base point, then shape
    eps = spec.working_eps

    def sort_key(item):
        offset, matrix, divisor = item
        dist = sum(
            abs(x.value(eps) - Fraction(b)) for x, b in zip(offset, spec.base_point)
        )
        return (len(matrix), dist, tuple(str(x) for x in offset), matrix)

    raw.sort(key=sort_key)
    fams = []
    for i, (offset, matrix, divisor) in enumerate(raw, start=1):
        fam = IndexedFamily(i, tuple(offset), tuple(matrix), divisor, False)
        spurious = detect_spurious(cone, fam) if spec.dimension == 2 else False
        fams.append(IndexedFamily(i, tuple(offset), tuple(matrix), divisor, spurious))
    result = tuple(fams)
    _coverage_check(spec, cone, result, points)
    _FAMILY_CACHE[key] = result
    return result


def _coverage_check(spec, cone, fams, points):
    """Every window point belongs to exactly one family."""
    eps = spec.working_eps
    claimed: dict[tuple, int] = {}
    for fam in fams:
        cols = fam.matrix
        # solve for index vector of each point: use float prefilter + exact check
        for p in points:
            diff = [a - b for a, b in zip(p, fam.offset)]
            if any(d.eps_part != 0 for d in diff):
                continue
            idx = _solve_indices([d.const_part for d in diff], cols)
            if idx is None:
                continue
            key = tuple((x.const_part, x.eps_part) for x in p)
            prev = claimed.get(key)
            if prev is not None and prev != fam.id:
                raise GeometryError("families overlap inside the cone")
            claimed[key] = fam.id
    missing = []
    for p in points:
        key = tuple((x.const_part, x.eps_part) for x in p)
        if key not in claimed:
            missing.append(p)
    if missing:
        raise GeometryError(f"{len(missing)} window points not covered by any family")


def _solve_indices(diff: list[Fraction], cols) -> tuple[int, ...] | None:
    if not cols:
        return () if all(d == 0 for d in diff) else None
    from ._poly import solve_linear

    rows = [[Fraction(col[i]) for col in cols] for i in range(len(diff))]
    sol = solve_linear(rows, diff)
    if sol is None:
        return None
    # solution must be unique here (independent columns) and integral >= 0
    idx = []
    for s in sol:
        if s.denominator != 1 or s < 0:
            return None
        idx.append(int(s))
    # re-check (solve_linear zero-fills free vars; verify exact match)
    for i in range(len(diff)):
        total = sum(Fraction(col[i]) * k for col, k in zip(cols, idx))
        if total != diff[i]:
            return None
    return tuple(idx)


def family_line_levels(spec: MBSpec, family: IndexedFamily) -> dict:
    """For each divisor factor: (K0, slopes) with pole index K(k) = K0 + slopes.k."""
    out = {}
    for fi, order in family.divisor_orders.items():
        pf = spec.pole_factors()[fi]
        val = pf.form.at_affine(family.offset)
        k0 = pole_index(pf, val)
        if k0 is None:
            raise GeometryError("family offset is not a pole of its divisor factor")
        slopes = []
        for col in family.matrix:
            s = pf.form.dot_coeffs(col)
            if s.denominator != 1:
                raise GeometryError("non-integer pole index slope")
            slopes.append(-int(s))
        out[fi] = (k0, tuple(slopes))
    return out


def detect_spurious(cone: Cone, family: IndexedFamily) -> bool:
    """True iff all divisor hyperplanes cross the l-line on one side."""
    if cone.l_direction is None:
        raise GeometryError("spurious detection requires 2D l-line data")
    spec = _SPEC_OF_CONE.get(id(cone))
    if spec is None:
        raise GeometryError("cone is not attached to a spec")
    sides = _divisor_sides(spec, cone, family)
    values = set(sides.values())
    return len(values) == 1


def _divisor_sides(spec: MBSpec, cone: Cone, family: IndexedFamily) -> dict:
    levels = family_line_levels(spec, family)
    sides = {}
    for fi, (k0, slopes) in levels.items():
        pf = spec.pole_factors()[fi]
        side0 = cone.line_side(pf.form, EpsAffine(Fraction(-k0)))
        # constancy along the family: check a deep index too
        deep = [7 * (j + 1) for j in range(family.arity)]
        k_deep = k0 + sum(s * d for s, d in zip(slopes, deep))
        side1 = cone.line_side(pf.form, EpsAffine(Fraction(-k_deep)))
        if side0 != side1:
            raise GeometryError("divisor side flips within a family")
        sides[fi] = side0
    return sides


def orientation_partition(cone: Cone, family: IndexedFamily) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Split the divisor factors into the two transformation-law groups.

    East cones: factors crossing the l-line on the arrow side form the second
    group; west cones the converse.
    """
    spec = _SPEC_OF_CONE.get(id(cone))
    if spec is None:
        raise GeometryError("cone is not attached to a spec")
    if family.spurious:
        raise GeometryError("orientation is undecidable for a spurious family")
    sides = _divisor_sides(spec, cone, family)
    f1, f2 = [], []
    for fi, side in sorted(sides.items()):
        arrow = side > 0
        second = arrow if cone.east else not arrow
        (f2 if second else f1).append(fi)
    return tuple(f1), tuple(f2)


# cones need their spec for side computations; enumerate_cones returns frozen
# objects, so keep the association out-of-band.
_SPEC_OF_CONE: dict[int, MBSpec] = {}


def cones_for(spec: MBSpec) -> tuple[Cone, ...]:
    """enumerate_cones plus registration for side/orientation queries."""
    cones = enumerate_cones(spec)
    for c in cones:
        _SPEC_OF_CONE[id(c)] = spec
    return cones
