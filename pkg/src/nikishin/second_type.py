"""Second-type functions, induced polynomials, and their constants.

Psi_{n,0} is a polynomial; Psi_{n,k} integrates the previous level
against sigma_k with the Cauchy kernel, optionally carrying a rational
factor per level (the perturbed families). Values of each level at every
rule's nodes are cached, so a family costs one nested pass.

The induced polynomial at level k collects the zeros of Psi_{n,k-1}
inside the k-th hull: an argument-principle count on a stadium contour
certifies the number before a sign-scan plus bisection locates them.
Normalization constants come from the cancellation-free form of the
defining integral (Q_{n,k-1}^2 H / (Q Q) collapses to Q Psi / Q), which
has constant sign on the support.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

from mpmath import mp, mpf, mpc, factorial, arg, sqrt

from .errors import (
    ConfigurationError,
    ProximityError,
    StructuralError,
    UnsupportedConfigurationError,
)
from .mop import MultiIndex, solve_perturbed_mop
from .polynomials import Polynomial
from .system import NikishinSystem, PerturbedSystem, poly_prod
from .precision import working


def tol_check(bits: int) -> mpf:
    """Identity-check tolerance: three orders of headroom above the
    accumulated quadrature error of triple nesting at 256 bits."""
    return max(mpf("1e-15"), mpf(2) ** (-bits + 100))


class SecondTypeEvaluator:
    """Iterated Cauchy transforms of a base polynomial.

    ``factors[k-1]`` (if given) multiplies the level-k measure inside the
    recursion; None means the plain transform. ``mult`` scales quadrature
    node counts (rational factors are analytic rather than polynomial, so
    callers pass the node multiplier certified by their system).
    """

    def __init__(self, system: NikishinSystem, base: Polynomial,
                 factors: Sequence[Callable | None] | None = None, mult: int = 1):
        self.system = system
        self.base = base
        self.factors = list(factors) if factors is not None else [None] * system.m
        if len(self.factors) != system.m:
            raise ConfigurationError("need one factor slot per measure")
        self.mult = mult
        self._at_nodes: dict = {}

    def values_at_nodes(self, k: int, target: int):
        """Psi_{n,k} at the nodes of sigma_target's rule."""
        key = (k, target)
        if key in self._at_nodes:
            return self._at_nodes[key]
        rule_t = self.system.rule(target, self.mult)
        if k == 0:
            vals = [self.base(x) for x in rule_t.nodes]
        else:
            vals = [self._psi_raw(k, x) for x in rule_t.nodes]
        self._at_nodes[key] = vals
        return vals

    def _psi_raw(self, k: int, z):
        rule = self.system.rule(k, self.mult)
        inner = self.values_at_nodes(k - 1, k)
        fac = self.factors[k - 1]
        total = mpc(0)
        for i, (x, w) in enumerate(zip(rule.nodes, rule.weights)):
            g = w * inner[i]
            if fac is not None:
                g = g * fac(x)
            total += g / (z - x)
        return total

    def psi(self, k: int, z):
        """Psi_{n,k}(z); k = 0 returns the base polynomial."""
        if not 0 <= k <= self.system.m:
            raise ConfigurationError(f"level {k} outside 0..{self.system.m}")
        with working(self.system.precision_bits):
            if k == 0:
                return self.base(z)
            meas = self.system.measures[k - 1]
            if meas.support_distance(z) < meas.delta_clear:
                raise ProximityError(
                    f"Psi level {k} evaluated within delta_clear of supp sigma_{k}"
                )
            return self._psi_raw(k, z)

    def psi_derivative(self, k: int, z, order: int):
        """d^order/dz^order of Psi_{n,k} via the differentiated kernel."""
        if k == 0:
            p = self.base
            for _ in range(order):
                p = p.derivative()
            return p(z)
        with working(self.system.precision_bits):
            meas = self.system.measures[k - 1]
            if meas.support_distance(z) < meas.delta_clear:
                raise ProximityError("derivative evaluated too close to the support")
            rule = self.system.rule(k, self.mult)
            inner = self.values_at_nodes(k - 1, k)
            fac = self.factors[k - 1]
            total = mpc(0)
            for i, (x, w) in enumerate(zip(rule.nodes, rule.weights)):
                g = w * inner[i]
                if fac is not None:
                    g = g * fac(x)
                total += g / (z - x) ** (order + 1)
            return (-1) ** order * factorial(order) * total

    def real_on_axis(self) -> bool:
        tolbit = mpf(2) ** (-mp.prec // 2)
        if not self.base.is_real(tolbit):
            return False
        probe = self.system.basis_interval.hi + 7
        for k in range(1, self.system.m + 1):
            fac = self.factors[k - 1]
            if fac is not None and abs(mpc(fac(probe)).imag) > tolbit * (1 + abs(fac(probe))):
                return False
        return True


def plain_family(system: NikishinSystem, q_n: Polynomial) -> SecondTypeEvaluator:
    return SecondTypeEvaluator(system, q_n)


def tilde_family(perturbed: PerturbedSystem, q_tilde: Polynomial) -> SecondTypeEvaluator:
    """Perturbed second-type family: level k carries p_k (or p_k/q_k)."""
    factors = []
    for k in range(1, perturbed.m + 1):
        p = perturbed.perturbation.numerators[k - 1]
        q = perturbed.perturbation.denominators[k - 1]
        if p.degree == 0 and q.degree == 0:
            factors.append(None)
        elif q.degree == 0:
            factors.append(p)
        else:
            factors.append(lambda x, p=p, q=q: p(x) / q(x))
    mult = perturbed._quadrature_mult() if perturbed.perturbation.is_rational else 1
    return SecondTypeEvaluator(perturbed.system, q_tilde, factors, mult)


def r_family(perturbed: PerturbedSystem, q_tilde: Polynomial) -> SecondTypeEvaluator:
    """Transforms of R_n = Qtilde * p_1...p_m against the plain measures."""
    if perturbed.perturbation.is_rational:
        raise ConfigurationError("the R-family is defined for polynomial perturbations")
    r0 = q_tilde
    for p in perturbed.perturbation.numerators:
        r0 = r0 * p
    return SecondTypeEvaluator(perturbed.system, r0)


def verify_r_relation(perturbed: PerturbedSystem, q_tilde: Polynomial,
                      n: MultiIndex | Sequence[int], z_samples) -> mpf:
    """Max relative gap of R_{n,k}(z) = (p_{k+1}...p_m)(z) PsiTilde_{n,k}(z),
    valid when n_j >= deg(p_{j+1}...p_m) for j < m."""
    n = n if isinstance(n, MultiIndex) else MultiIndex(tuple(n))
    pert = perturbed.perturbation
    for j in range(1, perturbed.m):
        if n[j - 1] < pert.deg_p(j + 1, perturbed.m):
            raise ConfigurationError(
                f"hypothesis n_{j} >= deg(p_{j + 1}...p_m) fails for {n.entries}"
            )
    rfam = r_family(perturbed, q_tilde)
    tfam = tilde_family(perturbed, q_tilde)
    with working(perturbed.precision_bits):
        worst = mpf(0)
        for k in range(perturbed.m + 1):
            suffix = poly_prod(pert.numerators[k:])
            for z in z_samples:
                lhs = rfam.psi(k, z)
                rhs = suffix(z) * tfam.psi(k, z)
                scale = max(abs(lhs), abs(rhs), mpf("1e-30"))
                worst = max(worst, abs(lhs - rhs) / scale)
        return worst


# ---------------------------------------------------------------------------
# zero counting and location
# ---------------------------------------------------------------------------


def stadium_points(lo, hi, clearance, n_straight: int, n_arc: int):
    """Counterclockwise contour at uniform distance around [lo, hi]."""
    pts = []
    c = mpf(clearance)
    for i in range(n_straight):
        t = mpf(i) / n_straight
        pts.append(mpc(lo + (hi - lo) * t, -c))
    for i in range(n_arc):
        th = -mp.pi / 2 + mp.pi * mpf(i) / n_arc
        pts.append(hi + c * mp.exp(mpc(0, 1) * th))
    for i in range(n_straight):
        t = mpf(i) / n_straight
        pts.append(mpc(hi - (hi - lo) * t, c))
    for i in range(n_arc):
        th = mp.pi / 2 + mp.pi * mpf(i) / n_arc
        pts.append(lo + c * mp.exp(mpc(0, 1) * th))
    return pts


def count_zeros_on_contour(f: Callable, points, max_refine: int = 12) -> int:
    """Winding number of f along the closed polyline, with adaptive
    insertion keeping each argument step below pi/2."""
    vals = [mpc(f(z)) for z in points]
    total = mpf(0)
    npts = len(points)
    for i in range(npts):
        z0, z1 = points[i], points[(i + 1) % npts]
        v0, v1 = vals[i], vals[(i + 1) % npts]
        total += _arg_step(f, z0, z1, v0, v1, max_refine)
    winding = total / (2 * mp.pi)
    count = int(mp.nint(winding))
    if abs(winding - count) > mpf("0.25"):
        raise StructuralError(
            f"argument-principle count did not stabilize (winding {mp.nstr(winding, 8)})"
        )
    return count


def _arg_step(f, z0, z1, v0, v1, depth: int):
    if v0 == 0 or v1 == 0:
        raise StructuralError("zero on the counting contour")
    d = arg(v1 / v0)
    if abs(d) < mp.pi / 2:
        return d
    if depth == 0:
        raise StructuralError("argument tracking failed; contour too coarse")
    zm = (z0 + z1) / 2
    vm = mpc(f(zm))
    return _arg_step(f, z0, zm, v0, vm, depth - 1) + _arg_step(f, zm, z1, vm, v1, depth - 1)


def _refine_bracket(f, a, b, fa, fb, bits: int):
    """Bisection then secant for a sign-changing real bracket."""
    for _ in range(12):
        m_ = (a + b) / 2
        fm = f(m_)
        if fm == 0:
            return m_
        if (fa > 0) != (fm > 0):
            b, fb = m_, fm
        else:
            a, fa = m_, fm
    x0, x1, f0, f1 = a, b, fa, fb
    tol = mpf(2) ** (-bits + 24) * (1 + abs(x1))
    for _ in range(80):
        if f1 == f0:
            break
        x2 = x1 - f1 * (x1 - x0) / (f1 - f0)
        if not a <= x2 <= b:
            x2 = (x0 + x1) / 2
        f2 = f(x2)
        x0, f0, x1, f1 = x1, f1, x2, f2
        if abs(x1 - x0) <= tol:
            break
    return x1


def real_zeros_on_hull(f: Callable, hull, expected: int, bits: int):
    """All real zeros of a real-valued f on the hull, certified to number
    ``expected`` by the caller's contour count; the sign-scan grid doubles
    until every zero is bracketed."""
    grid_n = max(8 * expected, 32)
    for _ in range(4):
        pts = [hull.midpoint + hull.length / 2 * mp.cos(mp.pi * j / grid_n)
               for j in range(grid_n, -1, -1)]
        vals = [f(x) for x in pts]
        brackets = [
            (pts[i], pts[i + 1], vals[i], vals[i + 1])
            for i in range(grid_n)
            if (vals[i] > 0) != (vals[i + 1] > 0)
        ]
        if len(brackets) == expected:
            return sorted(_refine_bracket(f, a, b, fa, fb, bits) for a, b, fa, fb in brackets)
        grid_n *= 2
    raise StructuralError(
        f"sign scan found {len(brackets)} of {expected} zeros; "
        "escalate precision or node counts"
    )


# ---------------------------------------------------------------------------
# induced polynomials and constants
# ---------------------------------------------------------------------------


@dataclass
class InducedFamily:
    """Monic polynomials carrying the zeros of Psi_{n,k-1} on the k-th
    hull, plus the ratio functions H, signs, and normalization constants.

    Index k runs 1..m; Q(0, .) and Q(m+1, .) are identically one. For the
    tilde variant the level weight includes the perturbing factor."""

    system: NikishinSystem
    n: MultiIndex
    evaluator: SecondTypeEvaluator
    counts: list = field(default_factory=list)      # N_{n,k}, k=1..m
    roots: list = field(default_factory=list)       # per level list of real zeros
    polys: list = field(default_factory=list)       # Q_{n,k} as Polynomial
    eps: list = field(default_factory=list)         # signs, 1-based padding at 0
    K: list = field(default_factory=list)           # K_{n,0}=1, ..., K_{n,m}
    kappa: list = field(default_factory=list)

    def Q(self, k: int, z):
        """Induced monic polynomial value via its root product."""
        if k == 0 or k == self.system.m + 1:
            return mpc(1)
        out = mpc(1)
        for r in self.roots[k - 1]:
            out *= z - r
        return out

    def H(self, k: int, z):
        """Q_{n,k-1} Psi_{n,k-1} / Q_{n,k} at z (1 <= k <= m+1)."""
        return self.Q(k - 1, z) * self.evaluator.psi(k - 1, z) / self.Q(k, z)

    def h(self, k: int, z):
        return self.K[k - 1] ** 2 * self.H(k, z)

    def limit_probe(self, k: int, z):
        """eps_{n,k} h_{n,k+1}(z): converges to ((z-b_k)(z-a_k))^(-1/2)."""
        return self.eps[k] * self.h(k + 1, z)


def induced_family(system: NikishinSystem, n: MultiIndex | Sequence[int],
                   evaluator: SecondTypeEvaluator,
                   weight_factors: Sequence[Callable | None] | None = None) -> InducedFamily:
    """Build the induced family for a (possibly perturbed) second-type
    evaluator whose values are real on the axis."""
    n = n if isinstance(n, MultiIndex) else MultiIndex(tuple(n))
    if not evaluator.real_on_axis():
        raise UnsupportedConfigurationError(
            "induced polynomials need real coefficients and real factors"
        )
    fam = InducedFamily(system, n, evaluator)
    bits = system.precision_bits
    factors = list(weight_factors) if weight_factors is not None else [None] * system.m
    with working(bits):
        for k in range(1, system.m + 1):
            count = sum(n.entries[k - 1:])
            fam.counts.append(count)
            hull = system.hulls[k - 1]
            if k == 1:
                base = evaluator.base
                if base.degree != count:
                    raise StructuralError(
                        f"level-1 degree {base.degree} differs from N_1 = {count}"
                    )
                from .polynomials import zeros as poly_zeros

                rts = poly_zeros(base)
                for r in rts:
                    if abs(r.imag) > mpf(2) ** (-bits // 4) or not hull.lo < r.real < hull.hi:
                        raise StructuralError(
                            f"zero {mp.nstr(r, 8)} of the level-1 polynomial left the hull"
                        )
                fam.roots.append([r.real for r in rts])
            else:
                if count > 0:
                    clearance = _stadium_clearance(system, k)
                    contour = stadium_points(hull.lo, hull.hi, clearance,
                                             max(8 * count, 32), max(2 * count, 16))
                    got = count_zeros_on_contour(lambda z: evaluator.psi(k - 1, z), contour)
                    if got != count:
                        raise StructuralError(
                            f"contour count {got} != N_(n,{k}) = {count}; escalate precision"
                        )
                    rts = real_zeros_on_hull(
                        lambda x: mpc(evaluator.psi(k - 1, x)).real, hull, count, bits
                    )
                else:
                    rts = []
                fam.roots.append(list(rts))
            fam.polys.append(Polynomial.from_roots(fam.roots[-1]))
        # signs and normalization constants
        fam.eps = [0]
        fam.K = [mpf(1)]
        fam.kappa = [mpf(0)]
        for k in range(1, system.m + 1):
            eps_k = _measure_sign(fam, k, factors[k - 1])
            fam.eps.append(eps_k)
            integral = _k_integral(fam, k, factors[k - 1])
            signed = eps_k * integral
            if not signed > 0:
                raise StructuralError(
                    f"normalization integral at level {k} lost positivity"
                )
            K_k = 1 / sqrt(signed)
            fam.K.append(K_k)
            fam.kappa.append(K_k / fam.K[k - 1])
    return fam


def _stadium_clearance(system: NikishinSystem, k: int):
    hull = system.hulls[k - 1]
    c = hull.length / 4
    for j in range(1, system.m + 1):
        if j != k:
            gap = min(abs(hull.lo - system.hulls[j - 1].hi),
                      abs(system.hulls[j - 1].lo - hull.hi))
            c = min(c, gap / 3)
    return c


def _measure_sign(fam: InducedFamily, k: int, factor) -> int:
    """Sign of H_{n,k} fac_k dsigma_k / (Q_{n,k-1} Q_{n,k+1}) on the
    support, probed away from the zeros of Q_{n,k} and checked constant."""
    system = fam.system
    meas = system.measures[k - 1]
    iv = meas.interval
    roots = fam.roots[k - 1]
    pts = sorted(
        (iv.lo + iv.length * mpf(2 * j + 1) / 32 for j in range(16)),
        key=lambda x: -min([abs(x - r) for r in roots] or [mpf(1)]),
    )
    signs = []
    for x in pts[:5]:
        v = fam.H(k, x)
        if factor is not None:
            v = v * factor(x)
        v = v * meas.sign / (fam.Q(k - 1, x) * fam.Q(k + 1, x))
        v = mpc(v).real
        if v != 0:
            signs.append(1 if v > 0 else -1)
    if not signs or any(s != signs[0] for s in signs):
        raise StructuralError(f"sign of the level-{k} varying measure is not constant")
    return signs[0]


def _k_integral(fam: InducedFamily, k: int, factor):
    """Integral of Q_{n,k}^2 H_{n,k} fac_k dsigma_k / (Q_{n,k-1} Q_{n,k+1})
    in its cancellation-free form Q_{n,k} Psi_{n,k-1} fac_k / Q_{n,k+1}."""
    system = fam.system
    rule = system.rule(k, fam.evaluator.mult)
    inner = fam.evaluator.values_at_nodes(k - 1, k)
    total = mpc(0)
    for i, (x, w) in enumerate(zip(rule.nodes, rule.weights)):
        g = w * fam.Q(k, x) * inner[i] / fam.Q(k + 1, x)
        if factor is not None:
            g = g * factor(x)
        total += g
    return total.real


def tilde_induced(perturbed: PerturbedSystem, q_tilde: Polynomial,
                  n: MultiIndex | Sequence[int]) -> InducedFamily:
    """Induced family of the perturbed system (real coefficients only)."""
    if not perturbed.perturbation.real_flag:
        raise UnsupportedConfigurationError(
            "tilde induced polynomials are defined for real-coefficient "
            "perturbations only"
        )
    ev = tilde_family(perturbed, q_tilde)
    return induced_family(perturbed.system, n, ev, ev.factors)


def plain_induced(system: NikishinSystem, q_n: Polynomial,
                  n: MultiIndex | Sequence[int]) -> InducedFamily:
    return induced_family(system, n, plain_family(system, q_n))


# ---------------------------------------------------------------------------
# identity checks
# ---------------------------------------------------------------------------


def verify_h_recursion(fam: InducedFamily, z_samples) -> mpf:
    """Max relative gap of H_{n,k+1}(z) against the integral of
    Q_{n,k}^2 H_{n,k} / ((z-x) Q_{n,k-1} Q_{n,k+1}) dsigma_k."""
    system = fam.system
    with working(system.precision_bits):
        worst = mpf(0)
        for k in range(1, system.m + 1):
            rule = system.rule(k, fam.evaluator.mult)
            inner = fam.evaluator.values_at_nodes(k - 1, k)
            for z in z_samples:
                lhs = fam.H(k + 1, z)
                total = mpc(0)
                for i, (x, w) in enumerate(zip(rule.nodes, rule.weights)):
                    total += w * fam.Q(k, x) * inner[i] / ((z - x) * fam.Q(k + 1, x))
                scale = max(abs(lhs), abs(total), mpf("1e-30"))
                worst = max(worst, abs(lhs - total) / scale)
        return worst


def varying_orthogonality_residual(fam: InducedFamily,
                                   weight_factors: Sequence[Callable | None] | None = None) -> mpf:
    """Scaled residuals of the varying-measure orthogonality: x^nu against
    Psi_{n,k-1} fac_k dsigma_k / Q_{n,k+1} vanishes for nu < N_{n,k}."""
    system = fam.system
    factors = list(weight_factors) if weight_factors is not None else [None] * system.m
    with working(system.precision_bits):
        worst = mpf(0)
        for k in range(1, system.m + 1):
            rule = system.rule(k, fam.evaluator.mult)
            inner = fam.evaluator.values_at_nodes(k - 1, k)
            base = []
            for i, (x, w) in enumerate(zip(rule.nodes, rule.weights)):
                g = w * inner[i] / fam.Q(k + 1, x)
                if factors[k - 1] is not None:
                    g = g * factors[k - 1](x)
                base.append(g)
            powers = [mpf(1)] * len(base)
            for nu in range(fam.counts[k - 1]):
                acc = mpc(0)
                scale = mpf(0)
                for g, p in zip(base, powers):
                    term = g * p
                    acc += term
                    scale += abs(term)
                worst = max(worst, abs(acc) / max(scale, mpf("1e-30")))
                powers = [p * x for p, x in zip(powers, rule.nodes)]
        return worst


def psi_chain_orthogonality(fam: InducedFamily, perturbed: PerturbedSystem | None = None) -> mpf:
    """Residuals of: Psi_{n,k-1} t^nu integrated against the nested
    measure <sigma_k, ..., sigma_{k+r}> vanishes for nu < n_{k+r} (with
    the perturbing factors in the perturbed variant)."""
    system = fam.system
    n = fam.n
    with working(system.precision_bits):
        worst = mpf(0)
        for k in range(1, system.m + 1):
            rule = system.rule(k, fam.evaluator.mult)
            inner = fam.evaluator.values_at_nodes(k - 1, k)
            fack = None
            if perturbed is not None:
                fack = _pert_factor(perturbed, k)
            for r in range(0, system.m - k + 1):
                if r == 0:
                    dens = None
                elif perturbed is None:
                    dens = system.chain_values_at_nodes(tuple(range(k + 1, k + r + 1)), k)
                else:
                    dens = perturbed.chain_values_at_nodes(k + 1, k + r, k, fam.evaluator.mult)
                powers = [mpf(1)] * len(inner)
                for nu in range(n[k + r - 1]):
                    acc = mpc(0)
                    scale = mpf(0)
                    for i, (x, w) in enumerate(zip(rule.nodes, rule.weights)):
                        g = w * inner[i] * powers[i]
                        if fack is not None:
                            g = g * fack(x)
                        if dens is not None:
                            g = g * dens[i]
                        acc += g
                        scale += abs(g)
                    worst = max(worst, abs(acc) / max(scale, mpf("1e-30")))
                    powers = [p * x for p, x in zip(powers, rule.nodes)]
        return worst


def _pert_factor(perturbed: PerturbedSystem, k: int):
    p = perturbed.perturbation.numerators[k - 1]
    q = perturbed.perturbation.denominators[k - 1]
    if p.degree == 0 and q.degree == 0:
        return None
    if q.degree == 0:
        return p
    return lambda x: p(x) / q(x)


def verify_eq13(perturbed: PerturbedSystem, q_tilde: Polynomial,
                n: MultiIndex | Sequence[int], k: int, z_samples) -> mpf:
    """Max relative residual of the alternating-transform identity
    linking R_{n,k} to the functions Phi_{n,l} through the reversed
    nested measures."""
    if not 2 <= k <= perturbed.m:
        raise ConfigurationError("identity defined for 2 <= k <= m")
    system = perturbed.system
    rfam = r_family(perturbed, q_tilde)
    with working(perturbed.precision_bits):
        r0 = rfam.base
        rule1 = system.rule(1)
        r0_at_1 = [r0(x) for x in rule1.nodes]
        worst = mpf(0)
        for z in z_samples:
            lhs = rfam.psi(k, z)
            rhs = mpc(0)
            scale = abs(lhs)
            for l in range(1, k + 1):
                dens = system.s_density_at_sigma1(l) if l >= 2 else None
                phi_l = mpc(0)
                for i, (x, w) in enumerate(zip(rule1.nodes, rule1.weights)):
                    g = w * r0_at_1[i] / (z - x)
                    if dens is not None:
                        g = g * dens[i]
                    phi_l += g
                if l == k:
                    term = (-1) ** (k - 1) * phi_l
                else:
                    theta = system.chain_hat(tuple(range(k, l, -1)), z)
                    term = (-1) ** (l - 1) * theta * phi_l
                rhs += term
                scale += abs(term)
            worst = max(worst, abs(lhs - rhs) / max(scale, mpf("1e-30")))
        return worst


def lemma4_residuals(perturbed: PerturbedSystem, q_tilde: Polynomial,
                     n: MultiIndex | Sequence[int], q_n0: Polynomial,
                     max_order: int = 2) -> mpf:
    """Vanishing conditions recovering the lost orthogonality: the ratio
    R_n / Q_{n_0} has zeros at the roots of p_1...p_m to their
    multiplicity, and R_{n,k-1} vanishes at roots of p_k...p_m. Returns
    the max scaled violation over derivative orders < min(tau, max_order+1).
    """
    pert = perturbed.perturbation
    system = perturbed.system
    rfam = r_family(perturbed, q_tilde)
    with working(perturbed.precision_bits):
        worst = mpf(0)
        # level 1: Cauchy-integral Taylor coefficients of R_n/Q_{n_0}
        hull = system.hulls[0]
        for z1, tau in pert.suffix_roots(1):
            radius = hull.distance_to(z1) / 2
            npts = 64
            coeffs = [mpc(0)] * min(tau, max_order + 1)
            sup = mpf(0)
            for j in range(npts):
                w = z1 + radius * mp.exp(mpc(0, 2) * mp.pi * j / npts)
                val = rfam.base(w) / q_n0(w)
                sup = max(sup, abs(val))
                for i in range(len(coeffs)):
                    coeffs[i] += val * mp.exp(mpc(0, -2) * mp.pi * i * j / npts) / npts
            for i, c in enumerate(coeffs):
                worst = max(worst, abs(c) / max(sup, mpf("1e-30")))
        # levels k >= 2: differentiated transforms at the suffix roots
        for k in range(2, system.m + 1):
            for zk, tau in pert.suffix_roots(k):
                for i in range(min(tau, max_order + 1)):
                    rule = system.rule(k - 1)
                    inner = rfam.values_at_nodes(k - 2, k - 1)
                    acc = mpc(0)
                    scale = mpf(0)
                    for idx, (x, w) in enumerate(zip(rule.nodes, rule.weights)):
                        g = w * inner[idx] / (zk - x) ** (i + 1)
                        acc += g
                        scale += abs(g)
                    worst = max(worst, abs(acc) / max(scale, mpf("1e-30")))
        return worst
