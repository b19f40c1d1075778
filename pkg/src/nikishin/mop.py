"""Monic multiple orthogonal polynomials and their perturbed relatives.

Solves run entirely in the Chebyshev basis on the hull of sigma_1; the
moment matrices come from cached Chebyshev moments of the (perturbed)
measures via the product identity T_a T_b = (T_{a+b} + T_{|a-b|})/2.
The perturbed solver looks for the smallest-degree nontrivial solution:
columns of the full constraint matrix are eliminated left to right and
the first numerically dependent column yields the degree.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

from mpmath import mp, mpf, mpc

from .errors import (
    ConfigurationError,
    IndexLadderError,
    PrecisionError,
    StructuralError,
)
from .measures import Interval
from .polynomials import CHEBYSHEV, Polynomial, cheb_leading_scale
from .system import (
    NikishinSystem,
    PerturbedSystem,
    RationalPerturbation,
    in_index_class,
    in_weak_class,
    poly_prod,
)
from .precision import tolerance, working


@dataclass(frozen=True)
class MultiIndex:
    entries: tuple

    def __post_init__(self):
        entries = tuple(int(v) for v in self.entries)
        if any(v < 0 for v in entries):
            raise ConfigurationError(f"multi-index entries must be >= 0, got {entries}")
        object.__setattr__(self, "entries", entries)

    @property
    def norm(self) -> int:
        return sum(self.entries)

    @property
    def m(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    def incremented(self, l: int) -> "MultiIndex":
        """The index with entry l (1-based) raised by one."""
        e = list(self.entries)
        e[l - 1] += 1
        return MultiIndex(tuple(e))

    def shifted(self, deltas: Sequence[int]) -> "MultiIndex":
        e = [a + b for a, b in zip(self.entries, deltas)]
        if any(v < 0 for v in e):
            raise IndexLadderError(
                f"auxiliary index {tuple(e)} has a negative component"
            )
        return MultiIndex(tuple(e))


def tol_orth(bits: int) -> mpf:
    return mpf(2) ** (-bits // 2 + 8)


# ---------------------------------------------------------------------------
# linear algebra helpers (partial-pivot LU with iterative refinement)
# ---------------------------------------------------------------------------


def _lu_factor(a):
    n = len(a)
    lu = [row[:] for row in a]
    perm = list(range(n))
    for col in range(n):
        piv, pval = col, abs(lu[col][col])
        for r in range(col + 1, n):
            if abs(lu[r][col]) > pval:
                piv, pval = r, abs(lu[r][col])
        if pval == 0:
            raise PrecisionError("singular moment matrix")
        if piv != col:
            lu[col], lu[piv] = lu[piv], lu[col]
            perm[col], perm[piv] = perm[piv], perm[col]
        inv = 1 / lu[col][col]
        for r in range(col + 1, n):
            f = lu[r][col] * inv
            lu[r][col] = f
            if f != 0:
                row_r, row_c = lu[r], lu[col]
                for c in range(col + 1, n):
                    row_r[c] -= f * row_c[c]
    diag = [abs(lu[i][i]) for i in range(n)]
    log2cond = float(mp.log(max(diag) / min(diag), 2)) if n else 0.0
    return lu, perm, log2cond


def _lu_solve(lu, perm, b):
    n = len(lu)
    y = [b[perm[i]] for i in range(n)]
    for i in range(n):
        acc = y[i]
        row = lu[i]
        for j in range(i):
            acc -= row[j] * y[j]
        y[i] = acc
    for i in range(n - 1, -1, -1):
        acc = y[i]
        row = lu[i]
        for j in range(i + 1, n):
            acc -= row[j] * y[j]
        y[i] = acc / row[i]
    return y


def solve_refined(a, b, refinements: int = 2, equilibrate: bool = False):
    """Partial-pivot LU followed by iterative refinement at doubled
    precision; returns (solution, rough log2 condition estimate)."""
    if equilibrate:
        a2, b2 = [], []
        for row, rhs in zip(a, b):
            s = max(abs(x) for x in row) or mpf(1)
            a2.append([x / s for x in row])
            b2.append(rhs / s)
        a, b = a2, b2
    lu, perm, log2cond = _lu_factor(a)
    x = _lu_solve(lu, perm, b)
    n = len(a)
    for _ in range(refinements):
        with mp.extraprec(mp.prec):
            r = []
            for i in range(n):
                acc = mpc(b[i])
                row = a[i]
                for j in range(n):
                    acc -= row[j] * x[j]
                r.append(acc)
        dx = _lu_solve(lu, perm, r)
        x = [xi + di for xi, di in zip(x, dx)]
    return x, log2cond


# -- precision escalation on ill-conditioned moment systems ----------------

_INITIAL_COND_SLOPE = 6.0  # log2(cond) per unit of |n|, refined per system


def _round_bits(bits: float) -> int:
    return ((int(bits) + 127) // 128) * 128


def _base_system(provider):
    return provider.system if isinstance(provider, PerturbedSystem) else provider


def _provider_at(provider, bits: int):
    """The same (perturbed) system rebuilt at a higher precision; cached."""
    if bits <= provider.precision_bits:
        return provider
    cache = provider.__dict__.setdefault("_escalations", {})
    if bits not in cache:
        if isinstance(provider, PerturbedSystem):
            cache[bits] = PerturbedSystem(_provider_at(provider.system, bits),
                                          provider.perturbation)
        else:
            cache[bits] = NikishinSystem(provider.measures, bits, provider.max_degree)
    return cache[bits]


def _predicted_bits(provider, norm: int) -> int:
    base = provider.precision_bits
    slope = _base_system(provider).__dict__.get("_cond_slope", _INITIAL_COND_SLOPE)
    return max(base, _round_bits(slope * norm + base // 2 + 96))


def _record_cond(provider, norm: int, log2cond: float):
    if norm <= 0:
        return
    system = _base_system(provider)
    seen = system.__dict__.get("_cond_slope", 0.0)
    system.__dict__["_cond_slope"] = max(seen, log2cond / norm + 0.5)


# ---------------------------------------------------------------------------
# constraint rows
# ---------------------------------------------------------------------------


def _moment_arrays(provider, n: MultiIndex, degree: int):
    """Chebyshev moment arrays per level, long enough for all products."""
    need = degree + max(n.entries) + 2
    if isinstance(provider, PerturbedSystem):
        return [provider.stilde_cheb_moments(k, need) for k in range(1, provider.m + 1)]
    return [provider.s_cheb_moments(k, need) for k in range(1, provider.m + 1)]


def _constraint_matrix(moms, n: MultiIndex, ncols: int):
    """Rows: level k, test polynomial T_nu (nu < n_k); columns: T_i."""
    rows = []
    for k, n_k in enumerate(n.entries):
        mk = moms[k]
        for nu in range(n_k):
            rows.append([(mk[nu + i] + mk[abs(nu - i)]) / 2 for i in range(ncols)])
    return rows


def _scaled_residual(rows, coeffs):
    worst = mpf(0)
    for row in rows:
        acc = mpc(0)
        scale = mpf(0)
        for rj, cj in zip(row, coeffs):
            term = rj * cj
            acc += term
            scale += abs(term)
        worst = max(worst, abs(acc) / max(scale, mpf(1) * mpf("1e-30")))
    return worst


# ---------------------------------------------------------------------------
# solvers
# ---------------------------------------------------------------------------


def solve_mop(system: NikishinSystem, n: MultiIndex | Sequence[int]) -> Polynomial:
    """The monic polynomial of degree |n| orthogonal to x^nu against each
    s_k for nu < n_k. Requires n in the weakly admissible index class."""
    n = n if isinstance(n, MultiIndex) else MultiIndex(tuple(n))
    if n.m != system.m:
        raise ConfigurationError(f"index has {n.m} entries, system has {system.m} measures")
    if not in_weak_class(n.entries):
        raise ConfigurationError(f"index {n.entries} outside the admissible class")
    cache = system.__dict__.setdefault("_mop_cache", {})
    if n.entries in cache:
        return cache[n.entries]
    if n.norm > system.max_degree:
        raise ConfigurationError(
            f"|n|={n.norm} exceeds the system's degree budget {system.max_degree}"
        )
    poly = _solve_with_escalation(system, n, _solve_full_degree)
    with working(system.precision_bits):
        res = orthogonality_residual(system, poly, n)
        if res > tol_orth(system.precision_bits):
            raise PrecisionError(
                f"orthogonality residual {mp.nstr(res, 5)} at {system.precision_bits} bits; "
                "increase precision_bits"
            )
    cache[n.entries] = poly
    return poly


def _solve_with_escalation(provider, n: MultiIndex, kernel):
    """Run a moment-solve kernel, doubling precision until the condition
    estimate leaves enough headroom for the target forward accuracy."""
    base = provider.precision_bits
    bits = _predicted_bits(provider, n.norm)
    for _ in range(4):
        prov = _provider_at(provider, bits)
        with working(bits):
            poly, log2cond = kernel(prov, n)
        _record_cond(provider, n.norm, log2cond)
        if bits - log2cond >= base // 2 + 64:
            return poly
        bits = _round_bits(log2cond + base // 2 + 128)
    raise PrecisionError(
        f"moment system for {n.entries} stayed ill-conditioned up to {bits} bits"
    )


def _solve_full_degree(provider, n: MultiIndex):
    system = _base_system(provider)
    d = n.norm
    interval = system.basis_interval
    if d == 0:
        return Polynomial(CHEBYSHEV, (mpc(1),), (interval.lo, interval.hi)), 0.0
    moms = _moment_arrays(provider, n, d)
    rows = _constraint_matrix(moms, n, d + 1)
    lead = 1 / cheb_leading_scale(d, interval.lo, interval.hi)
    a = [row[:d] for row in rows]
    b = [-row[d] * lead for row in rows]
    x, log2cond = solve_refined(a, b, equilibrate=True)
    return Polynomial(CHEBYSHEV, tuple(x) + (lead,), (interval.lo, interval.hi)), log2cond


def orthogonality_residual(provider, poly: Polynomial, n: MultiIndex | Sequence[int]) -> mpf:
    """Max scaled violation of the defining orthogonality relations."""
    n = n if isinstance(n, MultiIndex) else MultiIndex(tuple(n))
    system = provider.system if isinstance(provider, PerturbedSystem) else provider
    with working(system.precision_bits):
        p = poly.to_chebyshev((system.basis_interval.lo, system.basis_interval.hi))
        moms = _moment_arrays(provider, n, p.degree)
        rows = _constraint_matrix(moms, n, p.degree + 1)
        if not rows:
            return mpf(0)
        return _scaled_residual(rows, list(p.coeffs))


def solve_perturbed_mop(perturbed: PerturbedSystem, n: MultiIndex | Sequence[int]) -> Polynomial:
    """Smallest-degree monic nontrivial solution of the perturbed
    orthogonality relations; degree |n| is attempted first and lowered on
    rank deficiency."""
    n = n if isinstance(n, MultiIndex) else MultiIndex(tuple(n))
    if n.m != perturbed.m:
        raise ConfigurationError("index size does not match the system")
    if not perturbed.in_class(n.entries):
        warnings.warn(
            f"index {n.entries} outside the perturbed admissible class; "
            "degree and structure guarantees do not apply",
            stacklevel=2,
        )
    cache = perturbed.__dict__.setdefault("_mop_cache", {})
    if n.entries in cache:
        return cache[n.entries]
    if n.norm > perturbed.system.max_degree:
        raise ConfigurationError(
            f"|n|={n.norm} exceeds the system's degree budget {perturbed.system.max_degree}"
        )
    system = perturbed.system
    interval = system.basis_interval
    d = n.norm
    if d == 0:
        poly = Polynomial(CHEBYSHEV, (mpc(1),), (interval.lo, interval.hi))
        cache[n.entries] = poly
        return poly
    if perturbed.perturbation.is_trivial:
        poly = solve_mop(system, n)
        cache[n.entries] = poly
        return poly
    poly = _solve_with_escalation(perturbed, n, _solve_perturbed_kernel)
    with working(perturbed.precision_bits):
        res = orthogonality_residual(perturbed, poly, n)
        if res > tol_orth(perturbed.precision_bits):
            raise PrecisionError(
                f"perturbed orthogonality residual {mp.nstr(res, 5)}; increase precision"
            )
    cache[n.entries] = poly
    return poly


def _solve_perturbed_kernel(perturbed: PerturbedSystem, n: MultiIndex):
    system = perturbed.system
    interval = system.basis_interval
    d = n.norm
    moms = _moment_arrays(perturbed, n, d)
    rows = _constraint_matrix(moms, n, d + 1)
    deg = _first_dependent_column(rows, perturbed.precision_bits)
    lead = 1 / cheb_leading_scale(deg, interval.lo, interval.hi)
    if deg == d:
        a = [row[:d] for row in rows]
        b = [-row[d] * lead for row in rows]
        x, log2cond = solve_refined(a, b, equilibrate=True)
        poly = Polynomial(CHEBYSHEV, tuple(x) + (lead,), (interval.lo, interval.hi))
    else:
        poly, log2cond = _solve_rank_deficient(rows, deg, lead, interval)
    return poly, log2cond


def _first_dependent_column(rows, bits: int) -> int:
    """Index of the first column lying in the span of the previous ones,
    under the pivot threshold 2^(-bits+24); equals the minimal degree."""
    nrows = len(rows)
    ncols = len(rows[0])
    thresh = mpf(2) ** (-bits + 24)
    work = [row[:] for row in rows]
    used = [False] * nrows
    for col in range(ncols):
        colscale = max(abs(rows[r][col]) for r in range(nrows)) or mpf(1)
        best_r, best_v = -1, mpf(0)
        for r in range(nrows):
            if not used[r] and abs(work[r][col]) > best_v:
                best_r, best_v = r, abs(work[r][col])
        if best_r < 0 or best_v <= thresh * colscale:
            return col
        used[best_r] = True
        inv = 1 / work[best_r][col]
        for r in range(nrows):
            if used[r]:
                continue
            f = work[r][col] * inv
            if f != 0:
                wr, wb = work[r], work[best_r]
                for c in range(col, ncols):
                    wr[c] -= f * wb[c]
    raise StructuralError(
        "no nontrivial solution at any degree; numerical failure in the "
        "perturbed moment system"
    )


def _solve_rank_deficient(rows, deg: int, lead, interval: Interval):
    a = [row[:deg] for row in rows]
    b = [-row[deg] * lead for row in rows]
    # consistency is guaranteed; solve the square system built from the
    # best-pivot rows and let the residual check validate the rest
    sq, rhs = _select_square(a, b, deg)
    x, log2cond = solve_refined(sq, rhs, equilibrate=True)
    return Polynomial(CHEBYSHEV, tuple(x) + (lead,), (interval.lo, interval.hi)), log2cond


def _select_square(a, b, deg: int):
    nrows = len(a)
    work = [row[:] for row in a]
    resid = b[:]
    chosen: list[int] = []
    avail = set(range(nrows))
    for col in range(deg):
        best_r, best_v = -1, mpf(-1)
        for r in avail:
            if abs(work[r][col]) > best_v:
                best_r, best_v = r, abs(work[r][col])
        chosen.append(best_r)
        avail.discard(best_r)
        inv = 1 / work[best_r][col]
        for r in avail:
            f = work[r][col] * inv
            if f != 0:
                for c in range(col, deg):
                    work[r][c] -= f * work[best_r][c]
                resid[r] -= f * resid[best_r]
    return [a[r] for r in chosen], [b[r] for r in chosen]


# ---------------------------------------------------------------------------
# expansion of the perturbed polynomial over unperturbed ones
# ---------------------------------------------------------------------------


def auxiliary_indices(n: MultiIndex, perturbation: RationalPerturbation):
    """Indices n_j, j = 0..N, with N = deg(p_1 p_2^2 ... p_m^m): first
    component n_1 - deg(p_2...p_m) + j, later components shifted down by
    their own suffix degrees."""
    m = n.m
    N = sum(k * perturbation.numerators[k - 1].degree for k in range(1, m + 1))
    deltas = [-perturbation.deg_p(k + 1, m) for k in range(1, m + 1)]
    base = n.shifted(deltas)
    out = []
    for j in range(N + 1):
        nj = MultiIndex((base.entries[0] + j,) + base.entries[1:])
        if not in_weak_class(nj.entries):
            raise IndexLadderError(f"auxiliary index {nj.entries} leaves the admissible class")
        out.append(nj)
    return out


def lemma3_expansion(perturbed: PerturbedSystem, n: MultiIndex | Sequence[int],
                     qtilde: Polynomial | None = None):
    """Constants lambda_j with Qtilde * p_1...p_m = sum_j lambda_j Q_{n_j}.

    The unperturbed polynomials have consecutive degrees, so coefficient
    matching in the shared Chebyshev basis is triangular. Returns
    (lambdas, aux_indices, residual): residual is the relative coefficient
    norm of what is left after subtracting the expansion.
    """
    n = n if isinstance(n, MultiIndex) else MultiIndex(tuple(n))
    pert = perturbed.perturbation
    if pert.is_rational:
        raise ConfigurationError("expansion applies to polynomial perturbations only")
    if not perturbed.in_class(n.entries):
        raise ConfigurationError(f"index {n.entries} outside the perturbed class")
    system = perturbed.system
    with working(perturbed.precision_bits):
        aux = auxiliary_indices(n, pert)
        qs = [solve_mop(system, nj) for nj in aux]
        if qtilde is None:
            qtilde = solve_perturbed_mop(perturbed, n)
        interval = (system.basis_interval.lo, system.basis_interval.hi)
        r_n = qtilde
        for p in pert.numerators:
            r_n = r_n * p
        r_n = r_n.to_chebyshev(interval)
        rcoeffs = list(r_n.coeffs)
        base_deg = aux[0].norm
        scale = max(abs(c) for c in rcoeffs)
        lambdas = [mpc(0)] * len(aux)
        resid = rcoeffs + [mpc(0)] * (base_deg + len(aux) - len(rcoeffs))
        for j in range(len(aux) - 1, -1, -1):
            deg_j = base_deg + j
            qj = qs[j].to_chebyshev(interval)
            lam = resid[deg_j] / qj.coeffs[deg_j]
            lambdas[j] = lam
            if lam != 0:
                for i, c in enumerate(qj.coeffs):
                    resid[i] -= lam * c
        residual = max(abs(c) for c in resid) / scale
        return lambdas, aux, residual


# ---------------------------------------------------------------------------
# ladders
# ---------------------------------------------------------------------------


def build_ladder(base: MultiIndex | Sequence[int], count: int,
                 perturbation: RationalPerturbation | None = None,
                 stride: int = 1):
    """Multi-indices obtained by cyclically incrementing n_1, n_2, ...;
    every produced index is validated against the admissible class and
    only every stride-th one is kept (stride m compares equal phases)."""
    base = base if isinstance(base, MultiIndex) else MultiIndex(tuple(base))
    degrees = perturbation.class_degrees() if perturbation is not None else [0] * base.m
    if not in_index_class(base.entries, degrees):
        raise IndexLadderError(f"ladder base {base.entries} outside the admissible class")
    out = [base]
    cur = base
    pos = 0
    produced = 0
    while len(out) < count:
        nxt = cur.incremented(pos + 1)
        if not in_index_class(nxt.entries, degrees):
            raise IndexLadderError(
                f"increment of component {pos + 1} leaves the class at {cur.entries}"
            )
        cur = nxt
        pos = (pos + 1) % base.m
        produced += 1
        if produced % stride == 0:
            out.append(cur)
    return out
