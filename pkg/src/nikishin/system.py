"""Nikishin systems, perturbed systems, and nested Cauchy transforms.

The system s_1 = sigma_1, s_2 = <sigma_1, sigma_2>, ... is realized
through chain evaluators: the transform of <sigma_a, ..., sigma_b> at a
point is the quadrature sum of the next-deeper chain's transform over
sigma_a's nodes. Chain values at every rule's node set are cached, so a
whole ladder of moment solves reuses one pass of nested quadrature.

A perturbed system multiplies the k-th generator by p_k/q_k whose roots
and poles stay clear of every hull. With polynomial perturbations all
moment integrands remain polynomial and the Gaussian rules are exact;
with rational ones the integrand is analytic and node-doubling verifies
convergence.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from mpmath import mp, mpf, mpc

from .errors import (
    ConfigurationError,
    PrecisionError,
    ProximityError,
    StructuralError,
)
from .measures import Interval, Measure, QuadratureRule, build_quadrature, chebyshev_moments
from .polynomials import Polynomial, cluster_roots, zeros
from .precision import default_precision_bits, tolerance, working

DEFAULT_MAX_DEGREE = 72


def node_budget(max_degree: int) -> int:
    # inner rules sized 2*(max polynomial degree + 8): integrands are
    # polynomial x smooth kernel, oversampling buys certified digits
    return 2 * (max_degree + 8)


class NikishinSystem:
    """Ordered generating measures with disjoint consecutive hulls."""

    def __init__(self, measures: Sequence[Measure], precision_bits: int | None = None,
                 max_degree: int = DEFAULT_MAX_DEGREE):
        measures = tuple(measures)
        if not measures:
            raise ConfigurationError("a Nikishin system needs at least one measure")
        self.measures = measures
        self.m = len(measures)
        self.precision_bits = precision_bits or default_precision_bits()
        self.max_degree = max_degree
        self.hulls = tuple(meas.hull for meas in measures)
        self.intervals = tuple(meas.interval for meas in measures)
        for k in range(self.m - 1):
            if not self.hulls[k].disjoint_from(self.hulls[k + 1]):
                raise ConfigurationError(
                    f"hulls of measures {k + 1} and {k + 2} intersect: "
                    f"[{self.hulls[k].lo}, {self.hulls[k].hi}] vs "
                    f"[{self.hulls[k + 1].lo}, {self.hulls[k + 1].hi}]"
                )
        self.basis_interval = self.hulls[0]
        self._rules: dict = {}
        self._chain_nodes: dict = {}
        self._s_cheb: dict = {}

    # -- rules ---------------------------------------------------------

    def rule(self, k: int, mult: int = 1) -> QuadratureRule:
        """Quadrature for sigma_k (1-based); mult scales the node count."""
        key = (k, mult)
        if key not in self._rules:
            n = node_budget(self.max_degree) * mult
            self._rules[key] = build_quadrature(self.measures[k - 1], n, self.precision_bits)
        return self._rules[key]

    # -- plain chains ----------------------------------------------------

    def chain_hat(self, chain: tuple, z, mult: int = 1):
        """Cauchy transform of <sigma_chain[0], ..., sigma_chain[-1]> at z."""
        with working(self.precision_bits):
            first, rest = chain[0], chain[1:]
            rule = self.rule(first, mult)
            meas = self.measures[first - 1]
            if meas.support_distance(z) < meas.delta_clear:
                raise ProximityError(
                    f"chain transform evaluated within delta_clear of supp sigma_{first}"
                )
            dens = self.chain_values_at_nodes(rest, first, mult) if rest else None
            return _cauchy_sum(rule, dens, z)

    def chain_values_at_nodes(self, chain: tuple, target: int, mult: int = 1):
        """Transform of the chain at every node of sigma_target's rule."""
        key = (chain, target, mult)
        if key in self._chain_nodes:
            return self._chain_nodes[key]
        with working(self.precision_bits):
            first, rest = chain[0], chain[1:]
            rule = self.rule(first, mult)
            meas = self.measures[first - 1]
            target_rule = self.rule(target, mult)
            for x in target_rule.nodes:
                if meas.support_distance(x) < meas.delta_clear:
                    raise StructuralError(
                        f"nodes of sigma_{target} reach into supp sigma_{first}; "
                        "hull separation assumption violated"
                    )
            dens = self.chain_values_at_nodes(rest, first, mult) if rest else None
            vals = [_cauchy_sum(rule, dens, x) for x in target_rule.nodes]
        self._chain_nodes[key] = vals
        return vals

    # -- the measures s_k -------------------------------------------------

    def s_density_at_sigma1(self, k: int, mult: int = 1):
        """Density of s_k relative to sigma_1 at sigma_1's nodes (k >= 2)."""
        return self.chain_values_at_nodes(tuple(range(2, k + 1)), 1, mult)

    def s_integrate(self, k: int, f, mult: int = 1):
        """Integral of f against s_k = <sigma_1, ..., sigma_k>."""
        if not 1 <= k <= self.m:
            raise ConfigurationError(f"level k={k} outside 1..{self.m}")
        with working(self.precision_bits):
            rule = self.rule(1, mult)
            dens = self.s_density_at_sigma1(k, mult) if k >= 2 else None
            total = mpc(0)
            for i, (x, w) in enumerate(zip(rule.nodes, rule.weights)):
                g = dens[i] if dens is not None else mpf(1)
                total += w * g * mpc(f(x))
            return total.real if total.imag == 0 else total

    def s_cheb_moments(self, k: int, max_degree: int):
        """Integrals of T_j on the basis interval against s_k, j=0..max."""
        key = (k, max_degree)
        for (kk, md), vals in self._s_cheb.items():
            if kk == k and md >= max_degree:
                return vals[: max_degree + 1]
        with working(self.precision_bits):
            rule = self.rule(1)
            dens = self.s_density_at_sigma1(k) if k >= 2 else None
            vals = _weighted_cheb_moments(rule, dens, None, max_degree, self.basis_interval)
        self._s_cheb[key] = vals
        return vals

    def chain_power_moments(self, chain: tuple, max_degree: int):
        """Power moments of the nested measure <sigma_chain...>."""
        with working(self.precision_bits):
            first, rest = chain[0], chain[1:]
            rule = self.rule(first)
            dens = self.chain_values_at_nodes(rest, first) if rest else None
            out = []
            powers = [mpf(1)] * len(rule.nodes)
            for j in range(max_degree + 1):
                total = mpc(0)
                for i, (x, w) in enumerate(zip(rule.nodes, rule.weights)):
                    g = dens[i] if dens is not None else mpf(1)
                    total += w * g * powers[i]
                out.append(total)
                if j < max_degree:
                    powers = [p * x for p, x in zip(powers, rule.nodes)]
            return out


def build_system(measures: Sequence[Measure], precision_bits: int | None = None,
                 max_degree: int = DEFAULT_MAX_DEGREE) -> NikishinSystem:
    return NikishinSystem(measures, precision_bits, max_degree)


def _cauchy_sum(rule: QuadratureRule, dens, z):
    total = mpc(0)
    if dens is None:
        for x, w in zip(rule.nodes, rule.weights):
            total += w / (z - x)
    else:
        for i, (x, w) in enumerate(zip(rule.nodes, rule.weights)):
            total += w * dens[i] / (z - x)
    if mpc(z).imag == 0 and total.imag == 0:
        return total.real
    return total


def _weighted_cheb_moments(rule, dens, factor_vals, max_degree, interval: Interval):
    mid = interval.midpoint
    half = interval.length / 2
    us = [(x - mid) / half for x in rule.nodes]
    eff = []
    for i, w in enumerate(rule.weights):
        g = w
        if dens is not None:
            g = g * dens[i]
        if factor_vals is not None:
            g = g * factor_vals[i]
        eff.append(g)
    t_prev = [mpf(1)] * len(us)
    t_cur = list(us)
    out = [_dot(eff, t_prev)]
    if max_degree >= 1:
        out.append(_dot(eff, t_cur))
    for _ in range(2, max_degree + 1):
        t_prev, t_cur = t_cur, [2 * u * b - a for u, a, b in zip(us, t_prev, t_cur)]
        out.append(_dot(eff, t_cur))
    return out


def _dot(a, b):
    total = mpc(0)
    for x, y in zip(a, b):
        total += x * y
    return total


# ---------------------------------------------------------------------------
# index classes
# ---------------------------------------------------------------------------


def in_weak_class(n: Sequence[int]) -> bool:
    """Membership in the class where n_k <= n_j + 1 for all j < k."""
    return in_index_class(n, [0] * len(n))


def in_index_class(n: Sequence[int], degrees: Sequence[int]) -> bool:
    """Membership in the perturbation-tightened class: for j < k,
    n_k + sum(degrees[j+1..k]) <= n_j + 1."""
    n = list(n)
    if any(v < 0 for v in n):
        return False
    m = len(n)
    for j in range(m):
        acc = 0
        for k in range(j + 1, m):
            acc += degrees[k]
            if n[k] + acc > n[j] + 1:
                return False
    return True


def perturbation_degrees(polys: Sequence[Polynomial]) -> list[int]:
    return [p.degree for p in polys]


def check_index_class(n: Sequence[int], polys: Sequence[Polynomial] | None) -> bool:
    """True iff n lies in the index class associated with the given
    perturbing polynomials (all-trivial polys give the plain class)."""
    if polys is None:
        return in_weak_class(n)
    return in_index_class(n, perturbation_degrees(polys))


# ---------------------------------------------------------------------------
# rational perturbations
# ---------------------------------------------------------------------------


ROOT_MATCH_RTOL = mpf("1e-30")


@dataclass(frozen=True)
class RationalPerturbation:
    """Monic perturbing polynomials p_k and denominators q_k per level."""

    numerators: tuple
    denominators: tuple

    def __post_init__(self):
        nums = tuple(self.numerators)
        dens = tuple(self.denominators)
        if len(nums) != len(dens):
            raise ConfigurationError("need one numerator and one denominator per level")
        for name, polys in (("numerator", nums), ("denominator", dens)):
            for k, p in enumerate(polys, start=1):
                if p.is_zero:
                    raise ConfigurationError(f"{name} {k} is the zero polynomial")
                if abs(p.leading_coefficient() - 1) > mpf(2) ** (-mp.prec // 2):
                    raise ConfigurationError(f"{name} {k} must be monic")
        object.__setattr__(self, "numerators", nums)
        object.__setattr__(self, "denominators", dens)

    @classmethod
    def trivial(cls, m: int) -> "RationalPerturbation":
        one = Polynomial.one()
        return cls((one,) * m, (one,) * m)

    @classmethod
    def polynomial(cls, numerators: Sequence[Polynomial]) -> "RationalPerturbation":
        one = Polynomial.one()
        return cls(tuple(numerators), (one,) * len(tuple(numerators)))

    @property
    def m(self) -> int:
        return len(self.numerators)

    @property
    def is_rational(self) -> bool:
        return any(q.degree > 0 for q in self.denominators)

    @property
    def real_flag(self) -> bool:
        tol = mpf(2) ** (-mp.prec // 2)
        return all(p.is_real(tol) for p in self.numerators) and all(
            q.is_real(tol) for q in self.denominators
        )

    @property
    def is_trivial(self) -> bool:
        return all(p.degree == 0 for p in self.numerators) and not self.is_rational

    def class_degrees(self) -> list[int]:
        """Degrees deg(p_k q_k) governing index-class membership."""
        return [p.degree + q.degree for p, q in zip(self.numerators, self.denominators)]

    def deg_p(self, j0: int, j1: int) -> int:
        """deg(p_j0 ... p_j1), empty product for j0 > j1 (1-based)."""
        return sum(p.degree for p in self.numerators[j0 - 1:j1])

    def roots_of_p(self, k: int):
        return _poly_roots_with_multiplicity(self.numerators[k - 1])

    def roots_of_q(self, k: int):
        return _poly_roots_with_multiplicity(self.denominators[k - 1])

    def suffix_roots(self, k: int):
        """Distinct roots of p_k p_{k+1} ... p_m with multiplicities."""
        allroots = []
        for j in range(k, self.m + 1):
            for r, mult in self.roots_of_p(j):
                allroots.extend([r] * mult)
        scale = mpf(1) + max([abs(r) for r in allroots] or [mpf(0)])
        return cluster_roots(allroots, ROOT_MATCH_RTOL * scale)

    def validate_against(self, system: NikishinSystem):
        for which, polys in (("p", self.numerators), ("q", self.denominators)):
            for k, poly in enumerate(polys, start=1):
                if poly.degree == 0:
                    continue
                for r in zeros(poly):
                    for j, hull in enumerate(system.hulls, start=1):
                        clear = system.measures[j - 1].delta_clear
                        if hull.distance_to(r) < clear:
                            raise ConfigurationError(
                                f"root {mp.nstr(r, 8)} of {which}_{k} lies within "
                                f"delta_clear of hull {j}"
                            )
        for k in range(1, self.m + 1):
            proots = [r for r, _ in self.roots_of_p(k)]
            qroots = [r for r, _ in self.roots_of_q(k)]
            scale = mpf(1) + max([abs(r) for r in proots + qroots] or [mpf(0)])
            for rp in proots:
                for rq in qroots:
                    if abs(rp - rq) <= ROOT_MATCH_RTOL * scale:
                        raise ConfigurationError(
                            f"p_{k} and q_{k} share the root {mp.nstr(rp, 8)}"
                        )


def _poly_roots_with_multiplicity(poly: Polynomial):
    if poly.degree == 0:
        return []
    rs = zeros(poly)
    scale = mpf(1) + max(abs(r) for r in rs)
    return cluster_roots(rs, ROOT_MATCH_RTOL * scale)


class PerturbedSystem:
    """A Nikishin system whose k-th generator carries the factor p_k/q_k."""

    def __init__(self, system: NikishinSystem, perturbation: RationalPerturbation):
        if perturbation.m != system.m:
            raise ConfigurationError(
                f"perturbation has {perturbation.m} levels, system has {system.m}"
            )
        perturbation.validate_against(system)
        self.system = system
        self.perturbation = perturbation
        self.m = system.m
        self.precision_bits = system.precision_bits
        self._factor_nodes: dict = {}
        self._chain_nodes: dict = {}
        self._stilde_cheb: dict = {}
        self._verified_mult: int | None = None

    # -- level factors at nodes ------------------------------------------

    def factor_values(self, k: int, mult: int = 1):
        key = (k, mult)
        if key not in self._factor_nodes:
            with working(self.precision_bits):
                rule = self.system.rule(k, mult)
                p = self.perturbation.numerators[k - 1]
                q = self.perturbation.denominators[k - 1]
                vals = []
                for x in rule.nodes:
                    v = p(x)
                    if q.degree > 0:
                        v = v / q(x)
                    vals.append(v)
            self._factor_nodes[key] = vals
        return self._factor_nodes[key]

    # -- perturbed chains ---------------------------------------------------

    def chain_values_at_nodes(self, a: int, b: int, target: int, mult: int = 1):
        """Transform of <p_a sigma_a, ..., p_b sigma_b> (with q factors) at
        the nodes of sigma_target's rule."""
        key = (a, b, target, mult)
        if key in self._chain_nodes:
            return self._chain_nodes[key]
        with working(self.precision_bits):
            rule = self.system.rule(a, mult)
            target_rule = self.system.rule(target, mult)
            fac = self.factor_values(a, mult)
            dens = self.chain_values_at_nodes(a + 1, b, a, mult) if a < b else None
            vals = []
            for x in target_rule.nodes:
                total = mpc(0)
                for i, (t, w) in enumerate(zip(rule.nodes, rule.weights)):
                    g = w * fac[i]
                    if dens is not None:
                        g = g * dens[i]
                    total += g / (x - t)
                vals.append(total)
        self._chain_nodes[key] = vals
        return vals

    def _quadrature_mult(self) -> int:
        """Node multiplier certified by doubling (rational case only)."""
        if not self.perturbation.is_rational:
            return 1
        if self._verified_mult is not None:
            return self._verified_mult
        tol = tolerance(self.precision_bits, 24)
        with working(self.precision_bits):
            for mult in (1, 2):
                lo = self._stilde_probe(mult)
                hi = self._stilde_probe(2 * mult)
                scale = max(abs(v) for v in lo) + mpf(1)
                if max(abs(x - y) for x, y in zip(lo, hi)) <= tol * scale:
                    self._verified_mult = 2 * mult
                    return self._verified_mult
        raise PrecisionError(
            "rational-perturbation quadrature did not converge under node "
            "doubling; increase the node budget or move q roots away from hulls"
        )

    def _stilde_probe(self, mult: int):
        probe = []
        for k in range(1, self.m + 1):
            probe.extend(self._stilde_cheb_raw(k, 8, mult))
        return probe

    def _stilde_cheb_raw(self, k: int, max_degree: int, mult: int):
        rule = self.system.rule(1, mult)
        fac = self.factor_values(1, mult)
        dens = self.chain_values_at_nodes(2, k, 1, mult) if k >= 2 else None
        return _weighted_cheb_moments(rule, dens, fac, max_degree, self.system.basis_interval)

    def stilde_cheb_moments(self, k: int, max_degree: int):
        """Chebyshev moments of the perturbed measure stilde_k."""
        for (kk, md, _), vals in self._stilde_cheb.items():
            if kk == k and md >= max_degree:
                return vals[: max_degree + 1]
        mult = self._quadrature_mult()
        with working(self.precision_bits):
            vals = self._stilde_cheb_raw(k, max_degree, mult)
        self._stilde_cheb[(k, max_degree, mult)] = vals
        return vals

    def stilde_power_moments(self, k: int, max_degree: int):
        mult = self._quadrature_mult()
        with working(self.precision_bits):
            rule = self.system.rule(1, mult)
            fac = self.factor_values(1, mult)
            dens = self.chain_values_at_nodes(2, k, 1, mult) if k >= 2 else None
            out = []
            powers = [mpf(1)] * len(rule.nodes)
            for j in range(max_degree + 1):
                total = mpc(0)
                for i, (x, w) in enumerate(zip(rule.nodes, rule.weights)):
                    g = w * fac[i]
                    if dens is not None:
                        g = g * dens[i]
                    total += g * powers[i]
                out.append(total)
                if j < max_degree:
                    powers = [p * x for p, x in zip(powers, rule.nodes)]
            return out

    def in_class(self, n: Sequence[int]) -> bool:
        return in_index_class(n, self.perturbation.class_degrees())


# ---------------------------------------------------------------------------
# measure decomposition (perturbed system in terms of the plain one)
# ---------------------------------------------------------------------------


def _divided_difference_poly(h: Polynomial, mu) -> Polynomial:
    """The polynomial h*(x) = integral of (h(t) - h(x))/(x - t) dmu(t),
    expressed through the power moments mu of the measure."""
    hm = h.to_monomial()
    if hm.degree == 0:
        return Polynomial.from_monomial([mpc(0)])
    out = [mpc(0)] * hm.degree
    for r in range(1, hm.degree + 1):
        c = hm.coeffs[r]
        if c == 0:
            continue
        # (t^r - x^r)/(x - t) = -(t^{r-1} + t^{r-2} x + ... + x^{r-1})
        for i in range(r):
            out[r - 1 - i] -= c * mu[i]
    return Polynomial.from_monomial(out)


def lemma1_decompose(system: NikishinSystem, polys: Sequence[Polynomial], k: int):
    """Coefficient polynomials (l_k1, ..., l_kk) expressing the perturbed
    measure stilde_k as sum_j (p_1...p_j) l_kj s_j.

    Degrees obey deg l_kj <= deg(p_{j+1}...p_k) - 1 and l_kk = 1; the
    divided-difference polynomials are built from power moments of the
    nested inner measures, not per-point quadrature.
    """
    polys = list(polys)
    if len(polys) != system.m:
        raise ConfigurationError("need one perturbing polynomial per measure")
    if not 1 <= k <= system.m:
        raise ConfigurationError(f"level k={k} outside 1..{system.m}")

    def decompose(a: int, b: int):
        if a == b:
            return [Polynomial.one()]
        inner = decompose(a + 1, b)
        l_a = Polynomial.from_monomial([mpc(0)])
        for j in range(a + 1, b + 1):
            h_j = inner[j - (a + 1)]
            g_j = poly_prod(polys[a:j]) * h_j
            if g_j.to_monomial().degree == 0:
                continue
            chain = tuple(range(a + 1, j + 1))
            mu = system.chain_power_moments(chain, max(g_j.to_monomial().degree - 1, 0))
            l_a = l_a + _divided_difference_poly(g_j, mu)
        return [l_a] + inner

    with working(system.precision_bits):
        return decompose(1, k)


def poly_prod(polys: Sequence[Polynomial]) -> Polynomial:
    out = Polynomial.one()
    for p in polys:
        out = out * p
    return out


def verify_lemma1(system: NikishinSystem, polys: Sequence[Polynomial], k: int,
                  test_degrees: Sequence[int]) -> mpf:
    """Max relative residual of the decomposition identity against the
    monomial battery x^nu, nu in test_degrees."""
    pert = PerturbedSystem(system, RationalPerturbation.polynomial(polys))
    ls = lemma1_decompose(system, polys, k)
    with working(system.precision_bits):
        maxdeg = max(test_degrees)
        lhs = pert.stilde_power_moments(k, maxdeg)
        worst = mpf(0)
        for nu in test_degrees:
            rhs = mpc(0)
            scale = abs(lhs[nu])
            for j in range(1, k + 1):
                integrand = poly_prod(polys[:j]) * ls[j - 1]

                def f(x, q=integrand, n=nu):
                    return q(x) * x**n

                term = system.s_integrate(j, f)
                rhs += term
                scale += abs(term)
            worst = max(worst, abs(lhs[nu] - rhs) / max(scale, mpf(1)))
        return worst
