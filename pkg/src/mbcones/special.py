"""High-accuracy polygamma and gamma helpers for residue coefficients.

psi^(k) is computed by upward recurrence into the asymptotic regime followed by
the Bernoulli asymptotic series; arguments left of the imaginary axis go
through the cotangent reflection so negative non-integer reals are fine.
Target accuracy is ~1e-13 relative, which the jet arithmetic needs to hit the
published digits of the reference values.
"""

from __future__ import annotations

import cmath
import math
from fractions import Fraction
from functools import lru_cache

from scipy.special import loggamma as _loggamma

EULER_GAMMA = 0.577215664901532860606512090082

# B_2, B_4, ..., B_32
_BERNOULLI = [
    Fraction(1, 6),
    Fraction(-1, 30),
    Fraction(1, 42),
    Fraction(-1, 30),
    Fraction(5, 66),
    Fraction(-691, 2730),
    Fraction(7, 6),
    Fraction(-3617, 510),
    Fraction(43867, 798),
    Fraction(-174611, 330),
    Fraction(854513, 138),
    Fraction(-236364091, 2730),
    Fraction(8553103, 6),
    Fraction(-23749461029, 870),
    Fraction(8615841276005, 14322),
    Fraction(-7709321041217, 510),
]

_ASYMPTOTIC_RE = 18.0


class PolygammaPoleError(ArithmeticError):
    pass


def _is_nonpositive_int(z: complex, tol: float = 1e-12) -> bool:
    if abs(z.imag) > tol:
        return False
    r = round(z.real)
    return r <= 0 and abs(z.real - r) < tol


def _polygamma_asymptotic(k: int, z: complex) -> complex:
    # psi^{(k)}(z) ~ (-1)^{k-1} [ (k-1)!/z^k + k!/(2 z^{k+1})
    #                + sum_j B_{2j} (2j+k-1)! / ((2j)! z^{2j+k}) ]
    if k == 0:
        total = cmath.log(z) - 1.0 / (2.0 * z)
        z2 = 1.0 / (z * z)
        term = z2
        for j, b in enumerate(_BERNOULLI, start=1):
            total -= float(b) / (2 * j) * term
            term *= z2
        return total
    total = math.factorial(k - 1) / z**k + math.factorial(k) / (2.0 * z ** (k + 1))
    zpow = z ** (k + 2)
    for j, b in enumerate(_BERNOULLI, start=1):
        num = float(b) * math.factorial(2 * j + k - 1) / math.factorial(2 * j)
        total += num / zpow
        zpow *= z * z
    return (-1) ** (k - 1) * total


def _cot_derivative_coeffs(k: int) -> list[Fraction]:
    """Coefficients of d^k/du^k cot(u) as a polynomial in c = cot(u).

    Uses cot' = -(1 + cot^2) repeatedly; returns the coefficient list in c.
    """
    coeffs = [Fraction(0), Fraction(1)]  # cot itself
    for _ in range(k):
        # derivative of sum a_i c^i  ->  sum i*a_i c^{i-1} * (-(1+c^2))
        nxt = [Fraction(0)] * (len(coeffs) + 1)
        for i, a in enumerate(coeffs):
            if i == 0 or not a:
                continue
            nxt[i - 1] -= i * a
            nxt[i + 1] -= i * a
        coeffs = nxt
    return coeffs


@lru_cache(maxsize=64)
def _cot_coeffs_cached(k: int) -> tuple:
    return tuple(_cot_derivative_coeffs(k))


def _cot_derivative(k: int, u: complex) -> complex:
    """d^k/du^k cot(u); exponential series off the real axis avoids cancellation."""
    if abs(u.imag) > 0.25:
        # cot u = -i - 2i sum r^n (Im u < 0, r = e^{-2iu}); mirrored above axis
        if u.imag < 0:
            r = cmath.exp(-2j * u)
            base, rot = 1j, -2j
        else:
            r = cmath.exp(2j * u)
            base, rot = -1j, 2j
        total = base if k == 0 else 0.0 + 0.0j
        rn = 1.0 + 0.0j
        for n in range(1, 400):
            rn *= r
            term = 2 * base * (rot * n) ** k * rn
            total += term
            if abs(rn) < 1e-22:
                break
        return total
    c = 1.0 / cmath.tan(u)
    poly = _cot_coeffs_cached(k)
    return sum(float(b) * c**i for i, b in enumerate(poly) if b)


def polygamma(k: int, a) -> complex:
    """psi^{(k)}(a) for complex a away from the non-positive integers."""
    if k < 0:
        raise ValueError("polygamma order must be >= 0")
    z = complex(a)
    if _is_nonpositive_int(z):
        raise PolygammaPoleError(f"polygamma pole at {a}")
    if z.real < 0.5 and abs(z.imag) > 0.08:
        # psi^{(k)}(z) = (-1)^k psi^{(k)}(1-z) - pi^{k+1} * cot^{(k)}(pi z)
        # (off-axis only; on-axis the upward recurrence below is stabler)
        w = 1.0 - z
        refl = (-1) ** k * polygamma(k, w)
        return refl - math.pi ** (k + 1) * _cot_derivative(k, math.pi * z)
    shift = 0.0 + 0.0j
    sign = (-1) ** k * math.factorial(k)
    while z.real < _ASYMPTOTIC_RE and abs(z.imag) < _ASYMPTOTIC_RE:
        # psi^{(k)}(z) = psi^{(k)}(z+1) - (-1)^k k! z^{-k-1}
        shift -= sign * z ** (-k - 1)
        z += 1.0
    return _polygamma_asymptotic(k, z) + shift


def digamma(a) -> complex:
    return polygamma(0, a)


def log_gamma(z) -> complex:
    val = _loggamma(complex(z))
    return complex(val)


def gamma_fn(z) -> complex:
    return cmath.exp(log_gamma(z))


def zeta_value(n: int) -> float:
    """zeta(n) for small integer n >= 2, via psi^{(n-1)}(1)."""
    return float(((-1) ** n * polygamma(n - 1, 1.0) / math.factorial(n - 1)).real)
