"""Exact multivariate polynomials over Fraction, plus a small rational linear solver.

Used for the transformation-law certificates (polynomial matrix A with A.f = g,
verified as an exact identity) and for the gamma-ratio rational functions that
feed the ratio-test machinery.  Monomials are dicts keyed by exponent tuples;
everything stays in exact rational arithmetic.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Iterable, Mapping

import numpy as np


class Poly:
    """Polynomial in ``nvars`` variables with Fraction coefficients."""

    __slots__ = ("nvars", "coeffs")

    def __init__(self, nvars: int, coeffs: Mapping[tuple, Fraction] | None = None):
        self.nvars = nvars
        self.coeffs: dict[tuple, Fraction] = {}
        if coeffs:
            for mono, c in coeffs.items():
                c = Fraction(c)
                if c:
                    self.coeffs[tuple(mono)] = c

    # -- constructors -------------------------------------------------
    @classmethod
    def constant(cls, nvars: int, value) -> "Poly":
        value = Fraction(value)
        return cls(nvars, {(0,) * nvars: value} if value else {})

    @classmethod
    def variable(cls, nvars: int, idx: int) -> "Poly":
        mono = tuple(1 if i == idx else 0 for i in range(nvars))
        return cls(nvars, {mono: Fraction(1)})

    @classmethod
    def linear(cls, coeffs: Iterable, const=0) -> "Poly":
        coeffs = list(coeffs)
        n = len(coeffs)
        data: dict[tuple, Fraction] = {}
        for i, a in enumerate(coeffs):
            a = Fraction(a)
            if a:
                data[tuple(1 if j == i else 0 for j in range(n))] = a
        c = Fraction(const)
        if c:
            data[(0,) * n] = c
        return cls(n, data)

    # -- basics --------------------------------------------------------
    def is_zero(self) -> bool:
        return not self.coeffs

    def total_degree(self) -> int:
        if not self.coeffs:
            return -1
        return max(sum(m) for m in self.coeffs)

    def copy(self) -> "Poly":
        return Poly(self.nvars, dict(self.coeffs))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Poly):
            return NotImplemented
        return self.nvars == other.nvars and self.coeffs == other.coeffs

    def __hash__(self):
        return hash((self.nvars, frozenset(self.coeffs.items())))

    def __add__(self, other) -> "Poly":
        other = self._coerce(other)
        out = dict(self.coeffs)
        for m, c in other.coeffs.items():
            s = out.get(m, Fraction(0)) + c
            if s:
                out[m] = s
            else:
                out.pop(m, None)
        return Poly(self.nvars, out)

    def __neg__(self) -> "Poly":
        return Poly(self.nvars, {m: -c for m, c in self.coeffs.items()})

    def __sub__(self, other) -> "Poly":
        return self + (-self._coerce(other))

    def __mul__(self, other) -> "Poly":
        if isinstance(other, (int, Fraction)):
            if not other:
                return Poly(self.nvars)
            return Poly(self.nvars, {m: c * other for m, c in self.coeffs.items()})
        other = self._coerce(other)
        out: dict[tuple, Fraction] = {}
        for m1, c1 in self.coeffs.items():
            for m2, c2 in other.coeffs.items():
                m = tuple(a + b for a, b in zip(m1, m2))
                s = out.get(m, Fraction(0)) + c1 * c2
                if s:
                    out[m] = s
                else:
                    out.pop(m, None)
        return Poly(self.nvars, out)

    __rmul__ = __mul__

    def __pow__(self, k: int) -> "Poly":
        if k < 0:
            raise ValueError("negative power of a polynomial")
        out = Poly.constant(self.nvars, 1)
        base = self
        while k:
            if k & 1:
                out = out * base
            base = base * base
            k >>= 1
        return out

    def _coerce(self, other) -> "Poly":
        if isinstance(other, Poly):
            if other.nvars != self.nvars:
                raise ValueError("variable-count mismatch")
            return other
        return Poly.constant(self.nvars, other)

    # -- structure -----------------------------------------------------
    def homogeneous_part(self, degree: int) -> "Poly":
        return Poly(self.nvars, {m: c for m, c in self.coeffs.items() if sum(m) == degree})

    def leading_part(self) -> "Poly":
        return self.homogeneous_part(self.total_degree())

    def shift(self, step: Iterable) -> "Poly":
        """Substitute x_i -> x_i + step_i."""
        step = [Fraction(s) for s in step]
        out = Poly(self.nvars)
        for mono, c in self.coeffs.items():
            term = Poly.constant(self.nvars, c)
            for i, e in enumerate(mono):
                if e:
                    lin = Poly.linear(
                        [1 if j == i else 0 for j in range(self.nvars)], step[i]
                    )
                    term = term * lin**e
            out = out + term
        return out

    # -- evaluation ------------------------------------------------------
    def eval_exact(self, point: Iterable) -> Fraction:
        point = [Fraction(p) for p in point]
        total = Fraction(0)
        for mono, c in self.coeffs.items():
            v = c
            for x, e in zip(point, mono):
                v *= x**e
            total += v
        return total

    def eval_float(self, *arrays):
        """Evaluate on numpy arrays (broadcast), returning a float array."""
        arrays = [np.asarray(a, dtype=float) for a in arrays]
        total = np.zeros(np.broadcast(*arrays).shape if arrays else ())
        for mono, c in self.coeffs.items():
            term = np.full_like(total, float(c))
            for arr, e in zip(arrays, mono):
                if e:
                    term = term * arr**e
            total = total + term
        return total

    def __repr__(self):
        if not self.coeffs:
            return "0"
        names = "xyzw"[: self.nvars] if self.nvars <= 4 else [f"x{i}" for i in range(self.nvars)]
        parts = []
        for mono in sorted(self.coeffs, key=lambda m: (sum(m), m), reverse=True):
            c = self.coeffs[mono]
            factors = [str(c)] if c != 1 or not any(mono) else []
            for n, e in zip(names, mono):
                if e == 1:
                    factors.append(str(n))
                elif e > 1:
                    factors.append(f"{n}^{e}")
            parts.append("*".join(factors))
        return " + ".join(parts)


def solve_linear(rows: list[list[Fraction]], rhs: list[Fraction]) -> list[Fraction] | None:
    """Solve A x = b exactly; returns one solution or None if inconsistent.

    Free variables are set to zero.  Plain fraction-pivot Gaussian elimination;
    the systems here are small (certificate ansatz coefficients).
    """
    m = len(rows)
    if m == 0:
        return []
    n = len(rows[0])
    a = [[Fraction(x) for x in row] + [Fraction(b)] for row, b in zip(rows, rhs)]
    piv_cols = []
    r = 0
    for col in range(n):
        piv = next((i for i in range(r, m) if a[i][col]), None)
        if piv is None:
            continue
        a[r], a[piv] = a[piv], a[r]
        pv = a[r][col]
        a[r] = [x / pv for x in a[r]]
        for i in range(m):
            if i != r and a[i][col]:
                f = a[i][col]
                a[i] = [x - f * y for x, y in zip(a[i], a[r])]
        piv_cols.append(col)
        r += 1
        if r == m:
            break
    for i in range(r, m):
        if a[i][n]:
            return None
    x = [Fraction(0)] * n
    for i, col in enumerate(piv_cols):
        x[col] = a[i][n]
    return x


def det3(mat: list[list[Poly]]) -> Poly:
    """Determinant of a matrix of polynomials, size 1..3 (Laplace)."""
    n = len(mat)
    if n == 1:
        return mat[0][0]
    if n == 2:
        return mat[0][0] * mat[1][1] - mat[0][1] * mat[1][0]
    if n == 3:
        return (
            mat[0][0] * (mat[1][1] * mat[2][2] - mat[1][2] * mat[2][1])
            - mat[0][1] * (mat[1][0] * mat[2][2] - mat[1][2] * mat[2][0])
            + mat[0][2] * (mat[1][0] * mat[2][1] - mat[1][1] * mat[2][0])
        )
    raise ValueError("only sizes 1..3 supported")
