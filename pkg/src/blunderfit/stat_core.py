"""Normal-law tail machinery used by the exclusion rules.

The probability integral psi(z) is the probability that a standard normal
deviate falls inside (-z, z).  Everything else here inverts it:

* ``kappa_limit(n)``: the limit exceeded by one residual out of ``n`` on
  average, ``[1 - psi(kappa)] * n = 1``.
* ``k_gamma_exact(n, gamma)``: the limit exceeded by the largest of ``n``
  residuals with probability ``gamma``, ``1 - psi(k)**n = gamma``.
* ``k_gamma_approx(n, gamma)``: the first-order version ``[1 - psi(k)] * n = gamma``.

Tail probabilities are carried alongside ``psi`` (see :class:`Probability`)
so that limits for large ``n`` keep full relative precision.
"""

from __future__ import annotations

import math
from functools import lru_cache

from scipy.optimize import brentq

__all__ = [
    "Probability",
    "prob_integral",
    "prob_integral_series",
    "prob_integral_tail",
    "inv_prob_integral",
    "kappa_limit",
    "k_gamma_exact",
    "k_gamma_approx",
    "poisson_excess_prob",
]

_SQRT2 = math.sqrt(2.0)
_TWO_OVER_SQRT_PI = 2.0 / math.sqrt(math.pi)
# erfc(40 / sqrt 2) underflows to 0, so [0, 40] brackets every positive tail
_Z_MAX = 40.0


class Probability(float):
    """A probability in [0, 1] that also remembers its complement.

    ``float(p)`` is the probability itself; ``p.tail`` is ``1 - p`` computed
    without cancellation.  Near 1 a double cannot resolve the complement
    (``psi(7)`` differs from 1 by 2.6e-12, barely 10**4 ulps), so the
    inverse works from ``tail`` whenever it is available.
    """

    __slots__ = ("tail",)

    def __new__(cls, value, tail=None):
        value = float(value)
        if tail is None:
            tail = 1.0 - value
        tail = float(tail)
        if not (0.0 <= value <= 1.0) or not (0.0 <= tail <= 1.0):
            raise ValueError(f"probability out of [0, 1]: {value!r}")
        obj = super().__new__(cls, value)
        obj.tail = tail
        return obj

    @classmethod
    def from_tail(cls, tail):
        return cls(1.0 - float(tail), tail)

    def __repr__(self):
        return f"Probability({float(self)!r}, tail={self.tail!r})"

    def __reduce__(self):
        return (Probability, (float(self), self.tail))


def _check_z(z):
    z = float(z)
    if not math.isfinite(z) or z < 0.0:
        raise ValueError(f"z must be finite and >= 0, got {z!r}")
    return z


def prob_integral(z) -> Probability:
    """Probability integral psi(z) = sqrt(2/pi) * int_0^z exp(-t^2/2) dt.

    Parameters
    ----------
    z : float
        Non-negative, finite argument in units of standard deviation.

    Returns
    -------
    Probability
        ``psi(z)`` with its complement ``erfc(z / sqrt 2)`` attached.
    """
    z = _check_z(z)
    x = z / _SQRT2
    if x < 0.5:
        value = math.erf(x)
        return Probability(value, 1.0 - value)
    return Probability.from_tail(math.erfc(x))


def prob_integral_tail(z) -> float:
    """Two-sided normal tail ``1 - psi(z)``, accurate in relative terms."""
    return prob_integral(z).tail


def prob_integral_series(z) -> float:
    """psi(z) from the everywhere-positive series of the error function.

    erf(x) = 2/sqrt(pi) * exp(-x^2) * sum_k 2^k x^(2k+1) / (1*3*...*(2k+1))

    All terms are positive, so there is no cancellation; it serves as an
    independent cross-check of :func:`prob_integral`.
    """
    z = _check_z(z)
    x = z / _SQRT2
    if x == 0.0:
        return 0.0
    x2 = x * x
    term = x
    total = x
    k = 0
    while True:
        k += 1
        term *= 2.0 * x2 / (2 * k + 1)
        total += term
        if term <= 1e-17 * total:
            break
    return min(1.0, _TWO_OVER_SQRT_PI * math.exp(-x2) * total)


def _tail_of(p):
    if isinstance(p, Probability):
        return float(p), p.tail
    p = float(p)
    return p, 1.0 - p


def inv_prob_integral(p) -> float:
    """Return ``z >= 0`` with ``psi(z) = p``.

    The root is found by Brent's method on the tail equation
    ``erfc(z / sqrt 2) = 1 - p``, which is bracketed on ``[0, 40]`` because
    the tail is strictly decreasing.

    Raises
    ------
    ValueError
        If ``p`` lies outside ``[0, 1)``.
    """
    value, tail = _tail_of(p)
    if math.isnan(value) or value < 0.0 or value >= 1.0 or tail <= 0.0:
        raise ValueError(f"p must satisfy 0 <= p < 1, got {value!r}")
    if value == 0.0:
        return 0.0

    if tail > 0.5:
        # small z: erf is the well-conditioned side
        def f(z):
            return math.erf(z / _SQRT2) - value
    else:
        def f(z):
            return tail - math.erfc(z / _SQRT2)

    z = brentq(f, 0.0, _Z_MAX, xtol=1e-300, rtol=4 * 2.220446049250313e-16, maxiter=500)
    return float(z)


def _check_n(n, minimum):
    if isinstance(n, bool) or int(n) != n:
        raise ValueError(f"n must be an integer, got {n!r}")
    n = int(n)
    if n < minimum:
        raise ValueError(f"n must be >= {minimum}, got {n}")
    return n


@lru_cache(maxsize=4096)
def _kappa(n):
    return inv_prob_integral(Probability.from_tail(1.0 / n))


def kappa_limit(n) -> float:
    """Limit exceeded, on average, by exactly one of ``n`` normal residuals.

    Solves ``[1 - psi(kappa)] * n = 1``.  ``n = 1`` would give ``kappa = 0``
    and flag every equation, so it is rejected.
    """
    return _kappa(_check_n(n, 2))


def _check_gamma(gamma, upper):
    gamma = float(gamma)
    if not (0.0 < gamma < upper):
        raise ValueError(f"gamma must lie in (0, {upper}), got {gamma!r}")
    return gamma


@lru_cache(maxsize=4096)
def _k_gamma_exact(n, gamma):
    # 1 - (1 - gamma)**(1/n), without cancellation for large n
    tail = -math.expm1(math.log1p(-gamma) / n)
    return inv_prob_integral(Probability.from_tail(tail))


def k_gamma_exact(n, gamma) -> float:
    """Limit for the largest of ``n`` residuals at false-alarm level ``gamma``.

    Root of ``1 - psi(k)**n = gamma``.
    """
    return _k_gamma_exact(_check_n(n, 1), _check_gamma(gamma, 1.0))


@lru_cache(maxsize=4096)
def _k_gamma_approx(n, gamma):
    return inv_prob_integral(Probability.from_tail(gamma / n))


def k_gamma_approx(n, gamma) -> float:
    """First-order variant of :func:`k_gamma_exact`: ``[1 - psi(k)] * n = gamma``.

    Never smaller than the exact limit; the two agree when ``gamma / n`` is small.
    """
    n = _check_n(n, 1)
    return _k_gamma_approx(n, _check_gamma(gamma, float(n)))


def poisson_excess_prob(l_min) -> float:
    """P(L >= l_min) for L ~ Poisson(1), i.e. sum_{i >= l_min} e^-1 / i!."""
    l_min = _check_n(l_min, 0)
    head = 0.0
    term = math.exp(-1.0)
    for i in range(l_min):
        head += term
        term /= i + 1
    return max(0.0, 1.0 - head)
