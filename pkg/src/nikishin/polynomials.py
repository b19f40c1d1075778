"""Polynomials in monomial or Chebyshev-on-interval bases.

Moment solves beyond degree ~30 are hopeless in the monomial basis, so
every solver works with Chebyshev coefficients on a fixed interval and
converts to monomials only at I/O boundaries. A polynomial here is a
coefficient sequence tagged with its basis; "monic" always refers to the
leading coefficient in the monomial sense (coefficient of x^degree).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from mpmath import mp, mpf, mpc

from .errors import RootRefinementError
from .precision import working, decimal_digits, to_decimal

MONOMIAL = "monomial"
CHEBYSHEV = "chebyshev"


def cheb_leading_scale(degree: int, lo, hi):
    """Leading x-coefficient of T_degree((2x-lo-hi)/(hi-lo))."""
    if degree == 0:
        return mpf(1)
    return mpf(2) ** (degree - 1) * (mpf(2) / (mpf(hi) - mpf(lo))) ** degree


@dataclass(frozen=True)
class Polynomial:
    """Coefficient sequence in ascending basis order with exact degree.

    ``interval`` is the (lo, hi) pair of the Chebyshev basis and None for
    monomials. Trailing zero coefficients are trimmed on construction so
    ``degree == len(coeffs) - 1`` always holds.
    """

    basis: str
    coeffs: tuple
    interval: tuple | None = None

    def __post_init__(self):
        if self.basis not in (MONOMIAL, CHEBYSHEV):
            raise ValueError(f"unknown basis {self.basis!r}")
        if self.basis == CHEBYSHEV and self.interval is None:
            raise ValueError("chebyshev basis requires an interval")
        coeffs = [mpc(c) for c in self.coeffs]
        while len(coeffs) > 1 and coeffs[-1] == 0:
            coeffs.pop()
        object.__setattr__(self, "coeffs", tuple(coeffs))

    # -- construction -------------------------------------------------

    @classmethod
    def one(cls) -> "Polynomial":
        return cls(MONOMIAL, (mpc(1),))

    @classmethod
    def from_monomial(cls, coeffs: Sequence) -> "Polynomial":
        return cls(MONOMIAL, tuple(mpc(c) for c in coeffs))

    @classmethod
    def from_roots(cls, roots: Sequence) -> "Polynomial":
        """Monic monomial polynomial with the given roots."""
        coeffs = [mpc(1)]
        for r in roots:
            r = mpc(r)
            coeffs = [mpc(0)] + coeffs
            for i in range(len(coeffs) - 1):
                coeffs[i] -= r * coeffs[i + 1]
        return cls(MONOMIAL, tuple(coeffs))

    # -- basic queries -------------------------------------------------

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    @property
    def is_zero(self) -> bool:
        return self.degree == 0 and self.coeffs[0] == 0

    def is_real(self, tol=None) -> bool:
        t = mpf(0) if tol is None else mpf(tol)
        scale = max([abs(c) for c in self.coeffs] + [mpf(1)])
        return all(abs(c.imag) <= t * scale for c in self.coeffs)

    def leading_coefficient(self):
        """Coefficient of x^degree (monomial sense, any basis)."""
        c = self.coeffs[-1]
        if self.basis == MONOMIAL:
            return c
        lo, hi = self.interval
        return c * cheb_leading_scale(self.degree, lo, hi)

    @property
    def is_monic(self) -> bool:
        return abs(self.leading_coefficient() - 1) < mpf(2) ** (-mp.prec // 2)

    def monic(self) -> "Polynomial":
        lead = self.leading_coefficient()
        if lead == 0:
            raise ValueError("zero polynomial cannot be made monic")
        return Polynomial(self.basis, tuple(c / lead for c in self.coeffs), self.interval)

    # -- evaluation -----------------------------------------------------

    def __call__(self, z):
        if self.basis == MONOMIAL:
            acc = mpc(0)
            for c in reversed(self.coeffs):
                acc = acc * z + c
            return acc
        lo, hi = self.interval
        u = (2 * mpc(z) - lo - hi) / (mpf(hi) - mpf(lo))
        b1 = mpc(0)
        b2 = mpc(0)
        for c in reversed(self.coeffs[1:]):
            b1, b2 = 2 * u * b1 - b2 + c, b1
        return u * b1 - b2 + self.coeffs[0]

    def eval_many(self, points):
        return [self(z) for z in points]

    def derivative(self) -> "Polynomial":
        p = self.to_monomial()
        if p.degree == 0:
            return Polynomial(MONOMIAL, (mpc(0),))
        return Polynomial(MONOMIAL, tuple((i + 1) * p.coeffs[i + 1] for i in range(p.degree)))

    # -- basis conversion ------------------------------------------------

    def to_monomial(self) -> "Polynomial":
        if self.basis == MONOMIAL:
            return self
        lo, hi = self.interval
        half = (mpf(hi) - mpf(lo)) / 2
        mid = (mpf(hi) + mpf(lo)) / 2
        # T_j in the u variable, then compose u = (x - mid)/half.
        tm1 = [mpc(1)]
        t = [mpc(0), mpc(1)]
        out = [mpc(0)] * (self.degree + 1)
        out[0] += self.coeffs[0]
        for j in range(1, self.degree + 1):
            for i, c in enumerate(t):
                out[i] += self.coeffs[j] * c
            if j < self.degree:
                nxt = [mpc(0)] * (j + 2)
                for i, c in enumerate(t):
                    nxt[i + 1] += 2 * c
                for i, c in enumerate(tm1):
                    nxt[i] -= c
                tm1, t = t, nxt
        # out holds coefficients in u; substitute u = (x - mid)/half.
        res = [mpc(0)]
        upow = [mpc(1)]
        for j, c in enumerate(out):
            if j > 0:
                new = [mpc(0)] * (len(upow) + 1)
                for i, a in enumerate(upow):
                    new[i] += a * (-mid / half)
                    new[i + 1] += a / half
                upow = new
            while len(res) < len(upow):
                res.append(mpc(0))
            for i, a in enumerate(upow):
                res[i] += c * a
        return Polynomial(MONOMIAL, tuple(res))

    def to_chebyshev(self, interval) -> "Polynomial":
        lo, hi = interval
        if self.basis == CHEBYSHEV and self.interval == (lo, hi):
            return self
        mono = self.to_monomial()
        mid = (mpf(hi) + mpf(lo)) / 2
        half = (mpf(hi) - mpf(lo)) / 2
        # Chebyshev representation of x^r built by repeated multiplication
        # by x = mid + half*u, where u*T_j = (T_{j+1} + T_{|j-1|})/2.
        rep = [mpc(1)]
        out = [mpc(0)] * (mono.degree + 1)
        out[0] += mono.coeffs[0]
        for r in range(1, mono.degree + 1):
            new = [mpc(0)] * (len(rep) + 1)
            for j, c in enumerate(rep):
                new[j] += mid * c
                new[j + 1] += half * c / 2
                if j == 0:
                    new[1] += half * c / 2
                else:
                    new[j - 1] += half * c / 2
            rep = new
            for j, c in enumerate(rep):
                out[j] += mono.coeffs[r] * c
        return Polynomial(CHEBYSHEV, tuple(out), (mpf(lo), mpf(hi)))

    # -- arithmetic -------------------------------------------------------

    def __mul__(self, other: "Polynomial") -> "Polynomial":
        if self.basis == MONOMIAL and other.basis == MONOMIAL:
            out = [mpc(0)] * (self.degree + other.degree + 1)
            for i, a in enumerate(self.coeffs):
                for j, b in enumerate(other.coeffs):
                    out[i + j] += a * b
            return Polynomial(MONOMIAL, tuple(out))
        interval = self.interval or other.interval
        a = self.to_chebyshev(interval)
        b = other.to_chebyshev(interval)
        out = [mpc(0)] * (a.degree + b.degree + 1)
        for i, ca in enumerate(a.coeffs):
            for j, cb in enumerate(b.coeffs):
                out[i + j] += ca * cb / 2
                out[abs(i - j)] += ca * cb / 2
        return Polynomial(CHEBYSHEV, tuple(out), interval)

    def __add__(self, other: "Polynomial") -> "Polynomial":
        if self.basis == other.basis and self.interval == other.interval:
            n = max(self.degree, other.degree) + 1
            out = [mpc(0)] * n
            for i, c in enumerate(self.coeffs):
                out[i] += c
            for i, c in enumerate(other.coeffs):
                out[i] += c
            return Polynomial(self.basis, tuple(out), self.interval)
        return self.to_monomial() + other.to_monomial()

    def __sub__(self, other: "Polynomial") -> "Polynomial":
        return self + other.scale(-1)

    def scale(self, factor) -> "Polynomial":
        return Polynomial(self.basis, tuple(mpc(factor) * c for c in self.coeffs), self.interval)

    # -- serialization ------------------------------------------------------

    def to_json(self, bits: int) -> dict:
        rec = {
            "basis": self.basis,
            "degree": self.degree,
            "coefficients": [[to_decimal(c.real, bits), to_decimal(c.imag, bits)] for c in self.coeffs],
        }
        if self.interval is not None:
            rec["interval"] = [to_decimal(self.interval[0], bits), to_decimal(self.interval[1], bits)]
        return rec

    @classmethod
    def from_json(cls, rec: dict, bits: int) -> "Polynomial":
        with working(bits):
            coeffs = tuple(mpc(mpf(re), mpf(im)) for re, im in rec["coefficients"])
            interval = None
            if rec.get("interval") is not None:
                interval = (mpf(rec["interval"][0]), mpf(rec["interval"][1]))
        return cls(rec["basis"], coeffs, interval)

    def __repr__(self):
        digits = min(8, decimal_digits(mp.prec))
        cs = ", ".join(mp.nstr(c, digits) for c in self.coeffs[: min(6, len(self.coeffs))])
        tail = ", ..." if len(self.coeffs) > 6 else ""
        return f"Polynomial({self.basis}, deg={self.degree}, [{cs}{tail}])"


def poly_product(polys: Sequence[Polynomial]) -> Polynomial:
    out = Polynomial.one()
    for p in polys:
        out = out * p
    return out


# ---------------------------------------------------------------------------
# root finding
# ---------------------------------------------------------------------------


def _float_seeds(poly: Polynomial):
    cs = np.array([complex(c) for c in poly.coeffs])
    scale = np.max(np.abs(cs))
    if not np.isfinite(scale) or scale == 0:
        raise RootRefinementError("cannot seed roots: degenerate float coefficients")
    cs = cs / scale
    if poly.basis == CHEBYSHEV:
        roots_u = np.polynomial.chebyshev.chebroots(cs)
        lo, hi = float(poly.interval[0]), float(poly.interval[1])
        return [complex(r) * (hi - lo) / 2 + (hi + lo) / 2 for r in roots_u]
    return [complex(r) for r in np.roots(cs[::-1])]


def zeros(poly: Polynomial, tol_root=None, max_newton: int = 60):
    """All roots with multiplicity, sorted by (re, im).

    Float seeds come from the companion/colleague matrix; each is polished
    by Newton at full working precision. Clusters that stall (multiple
    roots) fall back to mpmath's simultaneous iteration with extra
    precision. Raises RootRefinementError with the worst residual if a
    root cannot be certified.
    """
    if poly.degree < 1:
        raise ValueError("zeros() requires degree >= 1")
    if tol_root is None:
        tol_root = mpf(2) ** (-(mp.prec * 3) // 4)
    seeds = _float_seeds(poly)
    deriv = poly.derivative()
    deriv2 = deriv.derivative()
    scale = max(abs(c) for c in poly.coeffs)
    tiny_step = mpf(2) ** (-mp.prec + 8)
    roots = []
    for s in seeds:
        x = mpc(s)
        ok = False
        for _ in range(max_newton):
            f = poly(x)
            if abs(f) <= tol_root * scale:
                ok = True
                break
            d = deriv(x)
            if d == 0:
                break
            step = f / d
            x = x - step
            if abs(step) <= tiny_step * (1 + abs(x)):
                ok = abs(poly(x)) <= tol_root * scale
                break
        if not ok:
            # multiplicity-robust Newton on f/f' (simple zeros there)
            for _ in range(max_newton):
                f = poly(x)
                d = deriv(x)
                dd = deriv2(x)
                denom = d * d - f * dd
                if denom == 0:
                    break
                step = f * d / denom
                x = x - step
                if abs(step) <= tiny_step * (1 + abs(x)):
                    break
            ok = abs(poly(x)) <= tol_root * scale
        if not ok:
            raise RootRefinementError(
                f"root residual {mp.nstr(abs(poly(x)), 5)} above tolerance near {mp.nstr(x, 8)}"
            )
        roots.append(x)
    return sorted(roots, key=lambda r: (mpf(r.real), mpf(r.imag)))


def cluster_roots(roots, tol):
    """Group near-identical roots into (representative, multiplicity) pairs."""
    tol = mpf(tol)
    clusters: list[list] = []
    for r in roots:
        for cl in clusters:
            if abs(r - cl[0]) <= tol:
                cl.append(r)
                break
        else:
            clusters.append([r])
    out = []
    for cl in clusters:
        rep = sum(cl) / len(cl)
        out.append((rep, len(cl)))
    return out
