"""Generating measures and their high-precision quadrature.

A measure is an analytic density of constant sign on an interval plus
finitely many signed mass points outside it. Supported densities are
pullbacks of Chebyshev (first/second kind) and Jacobi weights under the
affine map onto the interval, optionally modulated by the modulus of a
real polynomial. Gaussian rules are built from the three-term recurrence
(closed form for Jacobi, Stieltjes for modulated weights): float64
eigenvalue seeds are polished by Newton at working precision and weights
come from the Christoffel function, so the continuous part integrates
polynomials up to degree 2n-1 exactly. Mass points enter rules verbatim
as exact nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
import scipy.special
from mpmath import mp, mpf, mpc, pi, sqrt, cos, sin, gamma

from .errors import (
    ConfigurationError,
    DegreeError,
    EvaluationError,
    PrecisionError,
    ProximityError,
)
from .polynomials import Polynomial, zeros
from .precision import working

CHEBYSHEV1 = "chebyshev1"  # (1-u^2)^(-1/2)
CHEBYSHEV2 = "chebyshev2"  # (1-u^2)^(+1/2)
LEGENDRE = "legendre"
JACOBI = "jacobi"
JACOBI_POLY = "jacobi_poly"

_WEIGHT_KINDS = (CHEBYSHEV1, CHEBYSHEV2, LEGENDRE, JACOBI, JACOBI_POLY)


@dataclass(frozen=True)
class Interval:
    lo: mpf
    hi: mpf

    def __post_init__(self):
        lo, hi = mpf(self.lo), mpf(self.hi)
        if not (mp.isfinite(lo) and mp.isfinite(hi)):
            raise ConfigurationError("interval endpoints must be finite")
        if not lo < hi:
            raise ConfigurationError(f"interval requires lo < hi, got [{lo}, {hi}]")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def length(self) -> mpf:
        return self.hi - self.lo

    @property
    def midpoint(self) -> mpf:
        return (self.hi + self.lo) / 2

    def contains(self, x) -> bool:
        return self.lo <= mpf(x) <= self.hi

    def distance_to(self, z) -> mpf:
        """Distance from a complex point to the closed interval."""
        z = mpc(z)
        x = z.real
        if x < self.lo:
            dx = self.lo - x
        elif x > self.hi:
            dx = x - self.hi
        else:
            dx = mpf(0)
        return sqrt(dx * dx + z.imag * z.imag)

    def disjoint_from(self, other: "Interval") -> bool:
        return self.hi < other.lo or other.hi < self.lo

    def is_left_of(self, other: "Interval") -> bool:
        if not self.disjoint_from(other):
            raise ConfigurationError("left/right undefined for overlapping intervals")
        return self.hi < other.lo


@dataclass(frozen=True)
class MassPoint:
    location: mpf
    mass: mpf

    def __post_init__(self):
        object.__setattr__(self, "location", mpf(self.location))
        object.__setattr__(self, "mass", mpf(self.mass))
        if self.mass == 0:
            raise ConfigurationError("mass point must carry nonzero mass")


@dataclass(frozen=True)
class Measure:
    """Signed analytic weight on an interval plus finitely many atoms.

    ``sign`` is the constant sign of the measure. For ``jacobi_poly`` the
    density is sign * |poly(x)| * jacobi part, so the sign flag stays
    authoritative regardless of the modulating polynomial's sign.
    """

    interval: Interval
    kind: str = CHEBYSHEV1
    alpha: mpf = mpf(-0.5)
    beta: mpf = mpf(-0.5)
    poly: Polynomial | None = None
    sign: int = 1
    mass_points: tuple = ()
    delta_clear: mpf | None = None

    def __post_init__(self):
        if self.kind not in _WEIGHT_KINDS:
            raise ConfigurationError(f"unsupported weight descriptor {self.kind!r}")
        if self.sign not in (1, -1):
            raise ConfigurationError("sign flag must be +1 or -1")
        alpha, beta = _jacobi_exponents(self.kind, self.alpha, self.beta)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)
        if alpha <= -1 or beta <= -1:
            raise ConfigurationError("jacobi exponents must exceed -1")
        if self.kind == JACOBI_POLY:
            if self.poly is None:
                raise ConfigurationError("jacobi_poly weight requires a modulating polynomial")
            if not self.poly.is_real(mpf(0)):
                raise ConfigurationError("modulating polynomial must have real coefficients")
            _check_nonvanishing(self.poly, self.interval)
        elif self.poly is not None:
            raise ConfigurationError(f"weight {self.kind!r} does not take a polynomial")
        dc = self.delta_clear
        if dc is None:
            dc = self.interval.length * mpf("1e-3")
        object.__setattr__(self, "delta_clear", mpf(dc))
        pts = tuple(self.mass_points)
        for p in pts:
            if self.interval.distance_to(p.location) == 0:
                raise ConfigurationError(
                    f"mass point at {p.location} lies on the continuous interval"
                )
            if (p.mass > 0) != (self.sign > 0):
                raise ConfigurationError(
                    f"mass point at {p.location} has sign opposite to the measure"
                )
        object.__setattr__(self, "mass_points", pts)

    @property
    def hull(self) -> Interval:
        lo, hi = self.interval.lo, self.interval.hi
        for p in self.mass_points:
            lo = min(lo, p.location)
            hi = max(hi, p.location)
        return Interval(lo, hi)

    def support_distance(self, z) -> mpf:
        d = self.interval.distance_to(z)
        for p in self.mass_points:
            d = min(d, abs(mpc(z) - p.location))
        return d

    def with_mass_point(self, point: MassPoint) -> "Measure":
        return Measure(
            self.interval, self.kind, self.alpha, self.beta, self.poly,
            self.sign, self.mass_points + (point,), self.delta_clear,
        )


def _jacobi_exponents(kind, alpha, beta):
    if kind == CHEBYSHEV1:
        return mpf(-1) / 2, mpf(-1) / 2
    if kind == CHEBYSHEV2:
        return mpf(1) / 2, mpf(1) / 2
    if kind == LEGENDRE:
        return mpf(0), mpf(0)
    return mpf(alpha), mpf(beta)


def _check_nonvanishing(poly: Polynomial, interval: Interval):
    clearance = interval.length * mpf("1e-6")
    for root in zeros(poly):
        if interval.distance_to(root) <= clearance:
            raise ConfigurationError(
                f"modulating polynomial vanishes near the interval (root {mp.nstr(root, 8)})"
            )


@dataclass(frozen=True)
class QuadratureRule:
    measure: Measure
    nodes: tuple
    weights: tuple
    precision_bits: int
    n_continuous: int

    @property
    def exactness_degree(self) -> int:
        return 2 * self.n_continuous - 1

    def support_distance(self, z) -> mpf:
        return self.measure.support_distance(z)


# ---------------------------------------------------------------------------
# recurrence coefficients
# ---------------------------------------------------------------------------


def _jacobi_monic_recurrence(n: int, alpha, beta):
    """Monic three-term coefficients (a_j, b_j), j=0..n-1, for the Jacobi
    weight (1-u)^alpha (1+u)^beta on [-1, 1]; b_0 is the total mass."""
    a = []
    b = []
    ab = alpha + beta
    b0 = mpf(2) ** (ab + 1) * gamma(alpha + 1) * gamma(beta + 1) / gamma(ab + 2)
    for j in range(n):
        if j == 0:
            a.append((beta - alpha) / (ab + 2))
            b.append(b0)
            continue
        two = 2 * j + ab
        a.append((beta * beta - alpha * alpha) / (two * (two + 2)))
        if j == 1:
            b.append(4 * (alpha + 1) * (beta + 1) / ((ab + 2) ** 2 * (ab + 3)))
        else:
            b.append(
                4 * j * (j + alpha) * (j + beta) * (j + ab)
                / (two**2 * (two + 1) * (two - 1))
            )
    return a, b


def _stieltjes_recurrence(n: int, alpha, beta, modulus_at: Callable, extra_degree: int):
    """Monic recurrence for |r(u)| * jacobi via the Stieltjes procedure.

    Inner products are computed with a base Gauss-Jacobi rule large enough
    to integrate the polynomial integrands exactly.
    """
    n_base = n + extra_degree // 2 + 4
    u, w = _gauss_base(n_base, alpha, beta)
    wmod = [w[i] * modulus_at(u[i]) for i in range(len(u))]
    p_prev = [mpf(0)] * len(u)
    p_cur = [mpf(1)] * len(u)
    a = []
    b = []
    norm_prev = None
    for j in range(n):
        norm = mp.fsum(wmod[i] * p_cur[i] * p_cur[i] for i in range(len(u)))
        if norm <= 0:
            raise PrecisionError(
                "recurrence breakdown (lost positivity); increase precision_bits"
            )
        xmean = mp.fsum(wmod[i] * u[i] * p_cur[i] * p_cur[i] for i in range(len(u)))
        a.append(xmean / norm)
        b.append(norm if j == 0 else norm / norm_prev)
        p_prev, p_cur = p_cur, [
            (u[i] - a[j]) * p_cur[i] - (b[j] if j > 0 else mpf(0)) * p_prev[i]
            for i in range(len(u))
        ]
        norm_prev = norm
    return a, b


def _gauss_base(n: int, alpha, beta):
    a, b = _jacobi_monic_recurrence(n, alpha, beta)
    seeds = scipy.special.roots_jacobi(n, float(alpha), float(beta))[0]
    return _nodes_weights(n, a, b, [float(s) for s in seeds])


def _eval_monic(x, a, b, n):
    """Monic orthogonal polynomial p_n(x) and derivative via recurrence."""
    p_prev, p_cur = mpf(0), mpf(1)
    d_prev, d_cur = mpf(0), mpf(0)
    for j in range(n):
        bj = b[j] if j > 0 else mpf(0)
        p_next = (x - a[j]) * p_cur - bj * p_prev
        d_next = p_cur + (x - a[j]) * d_cur - bj * d_prev
        p_prev, p_cur = p_cur, p_next
        d_prev, d_cur = d_cur, d_next
    return p_cur, d_cur


def _nodes_weights(n: int, a, b, seeds):
    """Newton-refined Gauss nodes and Christoffel weights from a monic
    recurrence; seeds are float64 approximations of the nodes."""
    nodes = []
    for s in seeds:
        x = mpf(s)
        for _ in range(80):
            p, d = _eval_monic(x, a, b, n)
            if d == 0:
                raise PrecisionError("Newton breakdown in Gauss-node refinement")
            step = p / d
            x = x - step
            if abs(step) <= mpf(2) ** (-mp.prec + 4) * (1 + abs(x)):
                break
        nodes.append(x)
    nodes.sort()
    sqrt_b = [sqrt(bj) for bj in b]
    weights = []
    for x in nodes:
        # orthonormal values p~_0..p~_{n-1}; weight = 1/sum of squares
        q_prev = mpf(0)
        q_cur = 1 / sqrt_b[0]
        total = q_cur * q_cur
        for j in range(n - 1):
            q_next = ((x - a[j]) * q_cur - (sqrt_b[j] if j > 0 else mpf(0)) * q_prev) / sqrt_b[j + 1]
            q_prev, q_cur = q_cur, q_next
            total += q_cur * q_cur
        weights.append(1 / total)
    return nodes, weights


def _stieltjes_float_seeds(n, alpha, beta, modulus_float, extra_degree):
    n_base = n + extra_degree // 2 + 4
    u, w = scipy.special.roots_jacobi(n_base, float(alpha), float(beta))
    wm = w * modulus_float(u)
    a = np.zeros(n)
    bsq = np.zeros(max(n - 1, 0))
    p_prev = np.zeros_like(u)
    p_cur = np.ones_like(u)
    norm_prev = None
    for j in range(n):
        norm = np.sum(wm * p_cur * p_cur)
        a[j] = np.sum(wm * u * p_cur * p_cur) / norm
        if j > 0:
            bsq[j - 1] = norm / norm_prev
        bj = bsq[j - 1] if j > 0 else 0.0
        p_prev, p_cur = p_cur, (u - a[j]) * p_cur - bj * p_prev
        norm_prev = norm
    return scipy.linalg.eigh_tridiagonal(a, np.sqrt(bsq))[0]


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------


def build_quadrature(measure: Measure, n_nodes: int, precision_bits: int) -> QuadratureRule:
    """Gaussian rule for the continuous part plus the atoms as exact nodes."""
    if n_nodes < 2:
        raise ConfigurationError("n_nodes must be >= 2")
    if precision_bits < 64:
        raise ConfigurationError("precision_bits must be >= 64")
    with working(precision_bits):
        iv = measure.interval
        half = iv.length / 2
        mid = iv.midpoint
        if measure.kind == CHEBYSHEV1:
            u = [cos((2 * j - 1) * pi / (2 * n_nodes)) for j in range(1, n_nodes + 1)]
            u.reverse()
            w = [pi / n_nodes] * n_nodes
        elif measure.kind == CHEBYSHEV2:
            u = [cos(j * pi / (n_nodes + 1)) for j in range(1, n_nodes + 1)]
            u.reverse()
            w = [pi / (n_nodes + 1) * sin(j * pi / (n_nodes + 1)) ** 2 for j in range(1, n_nodes + 1)]
            w.reverse()
        elif measure.kind == JACOBI_POLY:
            poly_u = _modulating_in_u(measure)
            deg = measure.poly.degree

            def modulus_at(uu):
                return abs(poly_u(uu).real)

            a, b = _stieltjes_recurrence(n_nodes, measure.alpha, measure.beta, modulus_at, deg)
            pf = measure.poly
            seeds = _stieltjes_float_seeds(
                n_nodes, measure.alpha, measure.beta,
                lambda uu: np.abs(np.array([complex(pf(mid + half * mpf(t))).real for t in uu])),
                deg,
            )
            u, w = _nodes_weights(n_nodes, a, b, [float(s) for s in seeds])
        else:
            a, b = _jacobi_monic_recurrence(n_nodes, measure.alpha, measure.beta)
            seeds = scipy.special.roots_jacobi(n_nodes, float(measure.alpha), float(measure.beta))[0]
            u, w = _nodes_weights(n_nodes, a, b, [float(s) for s in seeds])
        nodes = [mid + half * uu for uu in u]
        weights = [measure.sign * ww for ww in w]
        for p in measure.mass_points:
            nodes.append(p.location)
            weights.append(p.mass)
        return QuadratureRule(measure, tuple(nodes), tuple(weights), precision_bits, n_nodes)


def _modulating_in_u(measure: Measure):
    iv = measure.interval

    def poly_u(uu):
        x = iv.midpoint + iv.length / 2 * uu
        return measure.poly(x)

    return poly_u


def integrate(rule: QuadratureRule, f: Callable):
    """sum of w_j f(x_j) at rule precision."""
    with working(rule.precision_bits):
        total = mpc(0)
        for x, w in zip(rule.nodes, rule.weights):
            v = mpc(f(x))
            if not mp.isfinite(v.real) or not mp.isfinite(v.imag):
                raise EvaluationError(f"integrand not finite at node {mp.nstr(x, 12)}")
            total += w * v
        if total.imag == 0:
            return total.real
        return total


def cauchy_transform(rule: QuadratureRule, z):
    """Integral of 1/(z - t) dmeasure(t), for z at least delta_clear off
    the support."""
    with working(rule.precision_bits):
        z = mpc(z)
        dist = rule.support_distance(z)
        if dist < rule.measure.delta_clear:
            raise ProximityError(
                f"point {mp.nstr(z, 8)} within {mp.nstr(dist, 4)} of the support; "
                f"clearance is {mp.nstr(rule.measure.delta_clear, 4)}"
            )
        total = mp.fsum((w / (z - x) for x, w in zip(rule.nodes, rule.weights)), absolute=False)
        total = mpc(total)
        if z.imag == 0 and total.imag == 0:
            return total.real
        return total


def moments(rule: QuadratureRule, max_degree: int):
    """Power moments (integral of x^j) for j = 0..max_degree."""
    if max_degree > rule.exactness_degree:
        raise DegreeError(
            f"max_degree {max_degree} exceeds exactness bound {rule.exactness_degree}"
        )
    with working(rule.precision_bits):
        out = []
        powers = [mpf(1)] * len(rule.nodes)
        for j in range(max_degree + 1):
            out.append(mp.fsum(w * p for w, p in zip(rule.weights, powers)))
            if j < max_degree:
                powers = [p * x for p, x in zip(powers, rule.nodes)]
        return out


def chebyshev_moments(rule: QuadratureRule, max_degree: int, interval: Interval):
    """Integrals of T_j((2x-lo-hi)/(hi-lo)) for j = 0..max_degree.

    Unlike power moments these stay well-scaled at high degree; no
    exactness guard because callers size rules explicitly.
    """
    with working(rule.precision_bits):
        mid = interval.midpoint
        half = interval.length / 2
        us = [(x - mid) / half for x in rule.nodes]
        t_prev = [mpf(1)] * len(us)
        t_cur = list(us)
        out = [mp.fsum(rule.weights)]
        if max_degree >= 1:
            out.append(mp.fsum(w * t for w, t in zip(rule.weights, t_cur)))
        for _ in range(2, max_degree + 1):
            t_prev, t_cur = t_cur, [2 * u * b - a for u, a, b in zip(us, t_prev, t_cur)]
            out.append(mp.fsum(w * t for w, t in zip(rule.weights, t_cur)))
        return out
