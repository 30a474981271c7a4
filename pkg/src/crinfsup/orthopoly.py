"""Legendre and Jacobi kernels, closed-form weighted integrals and
fractional trace seminorms of polynomials on the interval [-1, 1].

Polynomials are stored as Legendre coefficient vectors (:class:`Poly1D`).
All evaluations use the three-term recurrence; every "exact" integral is a
Gauss-Legendre rule with enough points for the polynomial integrand.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import comb

import numpy as np
from numpy.polynomial import legendre as npleg

from .errors import ValidationError, VertexMismatch, WeightedSeminormUndefined

ENDPOINT_TOL = 1e-10


# ---------------------------------------------------------------------------
# Recurrences
# ---------------------------------------------------------------------------


def legendre_table(kmax: int, x) -> tuple[np.ndarray, np.ndarray]:
    """Values and derivatives of L_0..L_kmax at the points ``x``.

    Returns two arrays of shape ``(kmax + 1,) + shape(x)``.
    """
    if kmax < 0:
        raise ValidationError(f"degree must be non-negative, got {kmax}")
    x = np.asarray(x, dtype=float)
    val = np.empty((kmax + 1,) + x.shape)
    der = np.empty_like(val)
    val[0] = 1.0
    der[0] = 0.0
    if kmax >= 1:
        val[1] = x
        der[1] = 1.0
    for n in range(1, kmax):
        val[n + 1] = ((2 * n + 1) * x * val[n] - n * val[n - 1]) / (n + 1)
        # L'_{n+1} = L'_{n-1} + (2n+1) L_n holds everywhere, including x = +-1.
        der[n + 1] = der[n - 1] + (2 * n + 1) * val[n]
    return val, der


def legendre_eval(k: int, x):
    """Value and first derivative of the Legendre polynomial of degree ``k``."""
    val, der = legendre_table(k, x)
    if np.ndim(x) == 0:
        return float(val[k]), float(der[k])
    return val[k], der[k]


def jacobi_eval(n: int, a: float, b: float, x):
    """Value and derivative of the Jacobi polynomial P_n^{(a,b)} at ``x``.

    Uses the standard three-term recurrence; the derivative uses
    d/dx P_n^{(a,b)} = (n + a + b + 1)/2 * P_{n-1}^{(a+1,b+1)}.
    """
    if n < 0:
        raise ValidationError(f"degree must be non-negative, got {n}")
    x = np.asarray(x, dtype=float)
    value = _jacobi_value(n, a, b, x)
    if n == 0:
        deriv = np.zeros_like(x)
    else:
        deriv = 0.5 * (n + a + b + 1) * _jacobi_value(n - 1, a + 1, b + 1, x)
    if value.ndim == 0:
        return float(value), float(deriv)
    return value, deriv


def _jacobi_value(n: int, a: float, b: float, x: np.ndarray) -> np.ndarray:
    p_prev = np.ones_like(x)
    if n == 0:
        return p_prev
    p = 0.5 * (a - b) + 0.5 * (a + b + 2) * x
    for m in range(1, n):
        c = 2 * m + a + b
        a1 = 2 * (m + 1) * (m + a + b + 1) * c
        a2 = (c + 1) * (a * a - b * b)
        a3 = c * (c + 1) * (c + 2)
        a4 = 2 * (m + a) * (m + b) * (c + 2)
        p_prev, p = p, ((a2 + a3 * x) * p - a4 * p_prev) / a1
    return p


def jacobi33_eval(n: int, x):
    """Value of the symmetric Jacobi polynomial P_n^{(3,3)} at ``x``."""
    return jacobi_eval(n, 3.0, 3.0, x)[0]


@lru_cache(maxsize=None)
def gauss_legendre(npts: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [-1, 1] (cached, read-only)."""
    x, w = npleg.leggauss(max(int(npts), 1))
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def points_for_degree(degree: int) -> int:
    """Number of Gauss points integrating polynomials of ``degree`` exactly."""
    return max(1, -(-(degree + 2) // 2))


# ---------------------------------------------------------------------------
# Polynomials in the Legendre basis
# ---------------------------------------------------------------------------


class Poly1D:
    """Univariate polynomial stored by its Legendre coefficients.

    Trailing zero coefficients are stripped so that ``degree`` is the index
    of the last nonzero coefficient (the zero polynomial has degree 0).
    """

    __slots__ = ("coef",)

    def __init__(self, coef):
        c = np.array(coef, dtype=float).ravel()
        if c.size == 0:
            c = np.zeros(1)
        nz = np.flatnonzero(c)
        c = c[: nz[-1] + 1] if nz.size else c[:1] * 0.0
        c.setflags(write=False)
        self.coef = c

    @classmethod
    def legendre(cls, k: int) -> "Poly1D":
        c = np.zeros(k + 1)
        c[k] = 1.0
        return cls(c)

    @classmethod
    def from_monomial(cls, mono) -> "Poly1D":
        return cls(npleg.poly2leg(np.asarray(mono, dtype=float)))

    @classmethod
    def interpolate(cls, func, degree: int) -> "Poly1D":
        """Exact Legendre expansion of a polynomial of at most ``degree``
        given as a callable, via Gauss quadrature."""
        x, w = gauss_legendre(degree + 1)
        vals, _ = legendre_table(degree, x)
        fx = np.asarray(func(x), dtype=float)
        norms = (2.0 * np.arange(degree + 1) + 1.0) / 2.0
        return cls(norms * (vals @ (w * fx)))

    @property
    def degree(self) -> int:
        return self.coef.size - 1

    def is_zero(self) -> bool:
        return not np.any(self.coef)

    def __call__(self, x):
        val, _ = legendre_table(self.degree, x)
        out = np.tensordot(self.coef, val, axes=1)
        return float(out) if np.ndim(x) == 0 else out

    def deriv(self) -> "Poly1D":
        if self.degree == 0:
            return Poly1D([0.0])
        return Poly1D(npleg.legder(self.coef))

    def reflect(self) -> "Poly1D":
        """The polynomial s -> p(-s)."""
        sign = (-1.0) ** np.arange(self.coef.size)
        return Poly1D(self.coef * sign)

    def __add__(self, other):
        other = _as_poly(other)
        return Poly1D(npleg.legadd(self.coef, other.coef))

    __radd__ = __add__

    def __sub__(self, other):
        other = _as_poly(other)
        return Poly1D(npleg.legsub(self.coef, other.coef))

    def __rsub__(self, other):
        return _as_poly(other) - self

    def __neg__(self):
        return Poly1D(-self.coef)

    def __mul__(self, other):
        if np.isscalar(other):
            return Poly1D(self.coef * float(other))
        return Poly1D(npleg.legmul(self.coef, _as_poly(other).coef))

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return Poly1D(self.coef / float(scalar))

    def integral(self) -> float:
        """Integral over [-1, 1]; only the constant coefficient contributes."""
        return 2.0 * float(self.coef[0])

    def l2_norm_sq(self) -> float:
        k = np.arange(self.coef.size)
        return float(np.sum(self.coef**2 * 2.0 / (2 * k + 1)))

    def max_coef(self) -> float:
        return float(np.max(np.abs(self.coef)))

    def __repr__(self) -> str:
        return f"Poly1D(degree={self.degree}, coef={self.coef.tolist()})"


def _as_poly(p) -> Poly1D:
    if isinstance(p, Poly1D):
        return p
    if np.isscalar(p):
        return Poly1D([float(p)])
    raise TypeError(f"cannot combine Poly1D with {type(p).__name__}")


def times_one_plus(p: Poly1D) -> Poly1D:
    """(1 + t) p(t) using (t+1)L_k = (k+1)/(2k+1) L_{k+1} + L_k + k/(2k+1) L_{k-1}."""
    c = p.coef
    n = c.size
    out = np.zeros(n + 1)
    for k in range(n):
        out[k + 1] += c[k] * (k + 1) / (2 * k + 1)
        out[k] += c[k]
        if k >= 1:
            out[k - 1] += c[k] * k / (2 * k + 1)
    return Poly1D(out)


def divide_by_one_plus(p: Poly1D) -> Poly1D:
    """Exact quotient p(t)/(1 + t), requiring p(-1) = 0.

    Back-substitution from the top coefficient in the Legendre basis.
    """
    if abs(p(-1.0)) > ENDPOINT_TOL * max(p.max_coef(), 1e-300) and not p.is_zero():
        raise WeightedSeminormUndefined(f"polynomial does not vanish at -1 (value {p(-1.0):.3e})")
    f = p.coef
    n = f.size - 1
    if n == 0:
        return Poly1D([0.0])
    g = np.zeros(n + 1)  # g[n] stays 0
    # coefficient of L_m in (1+t) g: g[m-1] m/(2m-1) + g[m] + g[m+1] (m+1)/(2m+3)
    for m in range(n, 0, -1):
        rest = f[m] - g[m] - (g[m + 1] * (m + 1) / (2 * m + 3) if m + 1 <= n else 0.0)
        g[m - 1] = rest * (2 * m - 1) / m
    return Poly1D(g[:n])


def divide_by_one_minus(p: Poly1D) -> Poly1D:
    """Exact quotient p(t)/(1 - t), requiring p(1) = 0."""
    if abs(p(1.0)) > ENDPOINT_TOL * max(p.max_coef(), 1e-300) and not p.is_zero():
        raise WeightedSeminormUndefined(f"polynomial does not vanish at +1 (value {p(1.0):.3e})")
    return divide_by_one_plus(p.reflect()).reflect()


# ---------------------------------------------------------------------------
# Special polynomials for the modified edge bubble
# ---------------------------------------------------------------------------


def _check_odd_at_least_5(k: int) -> None:
    if k < 5 or k % 2 == 0:
        raise ValidationError(f"degree must be odd and at least 5, got {k}")


def bubble_scale(k: int) -> float:
    """Normalising factor (-1)^(k-1) binom(k, 3) of the endpoint bubbles."""
    return (-1.0) ** (k - 1) * comb(k, 3)


@lru_cache(maxsize=None)
def psi_bubble_poly(k: int, sign: str) -> Poly1D:
    """Endpoint bubble of degree ``k`` as a polynomial.

    The '-' bubble vanishes at both endpoints with unit slope at -1 and zero
    slope at +1; the '+' bubble is its odd reflection s -> -psi(-s).
    """
    _check_odd_at_least_5(k)
    if sign not in ("+", "-"):
        raise ValidationError(f"sign must be '+' or '-', got {sign!r}")
    scale = bubble_scale(k)

    def minus(x):
        return (1 + x) * (1 - x) ** 2 / 4.0 * jacobi33_eval(k - 3, x) / scale

    p = Poly1D.interpolate(minus, k)
    if sign == "+":
        p = -p.reflect()
    return p


def psi_bubble(k: int, sign: str, x):
    """Value of the endpoint bubble of degree ``k`` at ``x``."""
    return psi_bubble_poly(k, sign)(x)


@lru_cache(maxsize=None)
def phi_tilde_poly(k: int) -> Poly1D:
    """L_{k-1} corrected by endpoint bubbles so that its slopes at +-1 vanish."""
    _check_odd_at_least_5(k)
    _, dl_minus = legendre_eval(k - 1, -1.0)
    _, dl_plus = legendre_eval(k - 1, 1.0)
    return Poly1D.legendre(k - 1) - dl_minus * psi_bubble_poly(k, "-") - dl_plus * psi_bubble_poly(k, "+")


def phi_tilde(k: int, x):
    """Value of the slope-corrected Legendre polynomial of degree ``k - 1``."""
    return phi_tilde_poly(k)(x)


# ---------------------------------------------------------------------------
# Weighted integrals
# ---------------------------------------------------------------------------


def weighted_l2_integral(k: int) -> float:
    """Integral of (t + 1) L_k(t)^2 over [-1, 1] by Gauss quadrature."""
    if k < 0:
        raise ValidationError(f"degree must be non-negative, got {k}")
    x, w = gauss_legendre(points_for_degree(2 * k + 1))
    val, _ = legendre_eval(k, x)
    return float(np.sum(w * (x + 1) * val**2))


def weighted_h1_integral(k: int) -> float:
    """Integral of (t + 1) L_k'(t)^2 over [-1, 1] by Gauss quadrature."""
    if k < 0:
        raise ValidationError(f"degree must be non-negative, got {k}")
    x, w = gauss_legendre(points_for_degree(2 * k - 1))
    _, der = legendre_eval(k, x)
    return float(np.sum(w * (x + 1) * der**2))


# ---------------------------------------------------------------------------
# Fractional seminorms
# ---------------------------------------------------------------------------


def _times_x_first(q: np.ndarray) -> np.ndarray:
    """Multiply a bivariate Legendre array by x (first variable)."""
    n = q.shape[0]
    out = np.zeros((n + 1, q.shape[1]))
    for i in range(n):
        out[i + 1] += q[i] * (i + 1) / (2 * i + 1)
        if i >= 1:
            out[i - 1] += q[i] * i / (2 * i + 1)
    return out


def difference_quotient(p: Poly1D) -> np.ndarray:
    """Bivariate Legendre coefficients C of (p(x) - p(y))/(x - y).

    The quotient equals sum_ij C[i, j] L_i(x) L_j(y). It is built with the
    recurrence (n+1) Q_{n+1} = (2n+1) (x Q_n + L_n(y)) - n Q_{n-1} for the
    quotients Q_n of the Legendre polynomials, so no division is performed.
    """
    d = p.degree
    size = max(d, 1)
    total = np.zeros((size, size))
    q_prev = np.zeros((size + 1, size + 1))  # Q_0 = 0
    q_cur = np.zeros((size + 1, size + 1))
    q_cur[0, 0] = 1.0  # Q_1 = 1
    if d >= 1:
        total += p.coef[1] * q_cur[:size, :size]
    for n in range(1, d):
        nxt = (2 * n + 1) * _times_x_first(q_cur)[: size + 1]
        nxt[0, n] += 2 * n + 1  # L_n(y)
        nxt -= n * q_prev
        nxt /= n + 1
        q_prev, q_cur = q_cur, nxt
        total += p.coef[n + 1] * q_cur[:size, :size]
    return total


def h12_seminorm_sq(p: Poly1D) -> float:
    """Squared H^{1/2} seminorm: double integral of the squared difference quotient.

    Evaluated by a tensor Gauss-Legendre rule exact for the squared quotient.
    """
    if p.degree == 0:
        return 0.0
    coef = difference_quotient(p)
    n = coef.shape[0] - 1
    x, w = gauss_legendre(points_for_degree(2 * n))
    vals, _ = legendre_table(n, x)
    grid = vals.T @ coef @ vals  # grid[a, b] = quotient at (x_a, x_b)
    return float(w @ grid**2 @ w)


def h12_norm_sq(p: Poly1D) -> float:
    """Full squared H^{1/2} norm: L2 part plus seminorm part."""
    return p.l2_norm_sq() + h12_seminorm_sq(p)


def legendre_h12_seminorm_sq(k: int) -> float:
    """Squared H^{1/2} seminorm of L_k (equals four times the harmonic number)."""
    if k < 0:
        raise ValidationError(f"degree must be non-negative, got {k}")
    return h12_seminorm_sq(Poly1D.legendre(k))


def _weighted_sq(p: Poly1D, quotient: Poly1D, plus: bool) -> float:
    """Integral of p^2 / (1 +- s) as the integral of p times the exact quotient."""
    d = p.degree + quotient.degree
    x, w = gauss_legendre(points_for_degree(d))
    return float(np.sum(w * p(x) * quotient(x)))


def weighted_seminorm_left_sq(p: Poly1D) -> float:
    """Integral of p(s)^2/(1 + s); requires p(-1) = 0."""
    return _weighted_sq(p, divide_by_one_plus(p), True)


def weighted_seminorm_right_sq(p: Poly1D) -> float:
    """Integral of p(s)^2/(1 - s); requires p(1) = 0."""
    return _weighted_sq(p, divide_by_one_minus(p), False)


@dataclass(frozen=True)
class IntervalHalfNorms:
    """Fractional seminorms of a polynomial on [-1, 1].

    ``seminorm_left`` and ``seminorm_right`` are ``None`` when the polynomial
    does not vanish at the corresponding endpoint; ``seminorm_00`` is then
    ``None`` as well.
    """

    seminorm_h12: float
    seminorm_left: float | None
    seminorm_right: float | None
    seminorm_00: float | None


def interval_half_norms(p: Poly1D, strict: bool = False) -> IntervalHalfNorms:
    """All fractional seminorms of ``p``.

    With ``strict=True`` an undefined weighted seminorm raises
    :class:`WeightedSeminormUndefined` instead of being reported as ``None``.
    """
    h12 = np.sqrt(h12_seminorm_sq(p))
    try:
        left = np.sqrt(weighted_seminorm_left_sq(p))
    except WeightedSeminormUndefined:
        if strict:
            raise
        left = None
    try:
        right = np.sqrt(weighted_seminorm_right_sq(p))
    except WeightedSeminormUndefined:
        if strict:
            raise
        right = None
    both = None if left is None or right is None else float(np.hypot(left, right))
    return IntervalHalfNorms(
        float(h12),
        None if left is None else float(left),
        None if right is None else float(right),
        both,
    )


def trace_differences(traces) -> list[Poly1D]:
    """d_i(s) = v_{i-1}(s) - v_{i+1}(-s) for three edge traces (indices mod 3).

    Edge i runs from vertex i+1 (s = -1) to vertex i-1 (s = +1), so d_i
    vanishes at -1 exactly when the traces agree at vertex i.
    """
    v = list(traces)
    if len(v) != 3:
        raise ValidationError("exactly three traces are required")
    return [v[(i - 1) % 3] - v[(i + 1) % 3].reflect() for i in range(3)]


def boundary_triple_norm(traces, tol: float = ENDPOINT_TOL) -> float:
    """Norm of a triangle boundary function given by its three edge traces.

    Sums the full H^{1/2} norms of the traces and the weighted seminorms
    of the vertex-difference polynomials d_i.
    """
    v = [_as_poly(t) for t in traces]
    total = sum(h12_norm_sq(t) for t in v)
    for i, d in enumerate(trace_differences(v)):
        scale = max(max(t.max_coef() for t in v), 1.0)
        if abs(d(-1.0)) > tol * scale:
            raise VertexMismatch(f"traces disagree at vertex {i} by {d(-1.0):.3e}")
        if d.is_zero():
            continue
        # remove the admissible round-off at -1 before dividing
        d = d - d(-1.0)
        total += weighted_seminorm_left_sq(d)
    return float(np.sqrt(total))


# ---------------------------------------------------------------------------
# Recursions for the closed forms
# ---------------------------------------------------------------------------


def h12_recursion_sequence(kmax: int) -> np.ndarray:
    """I_0..I_kmax from I_k = (2k-1)/k I_{k-1} - (k-1)/k I_{k-2}, I_1 = 4, I_2 = 6."""
    seq = np.zeros(max(kmax, 2) + 1)
    seq[1], seq[2] = 4.0, 6.0
    for k in range(3, kmax + 1):
        seq[k] = (2 * k - 1) / k * seq[k - 1] - (k - 1) / k * seq[k - 2]
    return seq[: kmax + 1]


def harmonic_closed_form(k: int) -> float:
    """4 * (1 + 1/2 + ... + 1/k)."""
    return 4.0 * sum(1.0 / m for m in range(1, k + 1))


def weighted_sum_recursion_sequence(kmax: int) -> np.ndarray:
    """J_1..J_kmax (index 0 unused) from J_k = 2/k^2 + ((k-1)/k)^2 J_{k-1}, J_1 = 2."""
    seq = np.zeros(kmax + 1)
    if kmax >= 1:
        seq[1] = 2.0
    for k in range(2, kmax + 1):
        seq[k] = 2.0 / k**2 + ((k - 1) / k) ** 2 * seq[k - 1]
    return seq
