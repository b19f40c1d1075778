"""Genus-zero uniformization of the sheeted surface over the slits.

The (m+1)-sheeted surface glued consecutively along the slits has genus
zero, so it is the Riemann sphere of a parameter w and the projection is
a rational map of degree m+1:

    Z(w) = w + sum_j rho_j / (w - pi_j)

with one simple pole per sheet cell (w = infinity belongs to sheet 0)
and 2m simple real critical points whose values are the slit endpoints.
Newton's method solves for (pi, rho, critical points) slit by slit: each
new slit starts degenerate (a short cut around its midpoint, the pole
placed at the preimage of the midpoint in the last cell) and grows to
full size over continuation steps.

Every function with a simple zero over infinity on sheet 0 and a simple
pole over infinity on sheet l is a Moebius map c/(w - pi_l) in the
parameter, so all branch identities reduce to rational arithmetic plus
one polynomial root solve per evaluation point. Sheet bookkeeping uses
the preimage ovals of the slits: winding signatures classify which cell
a parameter point lies in, with a path-tracking fallback near the cuts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from mpmath import mp, mpf, mpc

from .errors import ConfigurationError, NumericalError, ProximityError, StructuralError
from .measures import Interval
from .mop import solve_refined
from .precision import decimal_digits, to_decimal, working


def tol_newton(bits: int) -> mpf:
    return mpf(2) ** (-bits + 32)


def _realify(x):
    """Collapse a numerically real quantity to mpf; the covering data is
    real by conjugation symmetry."""
    x = mpc(x)
    if abs(x.imag) > mpf(2) ** (-mp.prec // 2) * (1 + abs(x.real)):
        raise StructuralError(f"expected a real quantity, got {mp.nstr(x, 10)}")
    return x.real


@dataclass(frozen=True)
class SurfaceSpec:
    slits: tuple

    def __post_init__(self):
        slits = tuple(self.slits)
        if not slits:
            raise ConfigurationError("need at least one slit")
        for i in range(len(slits)):
            for j in range(i + 1, len(slits)):
                if not slits[i].disjoint_from(slits[j]):
                    raise ConfigurationError(f"slits {i + 1} and {j + 1} are not disjoint")
        object.__setattr__(self, "slits", slits)

    @property
    def m(self) -> int:
        return len(self.slits)

    @property
    def span(self) -> mpf:
        lo = min(s.lo for s in self.slits)
        hi = max(s.hi for s in self.slits)
        return hi - lo

    def cache_key(self) -> str:
        parts = []
        for s in self.slits:
            parts.append(mp.nstr(s.lo, 30) + ":" + mp.nstr(s.hi, 30))
        return "|".join(parts)


class CoveringMap:
    """Solved covering data plus float64 query machinery."""

    def __init__(self, spec: SurfaceSpec, precision_bits: int,
                 poles, residues, crit):
        self.spec = spec
        self.precision_bits = precision_bits
        self.m = spec.m
        self.poles = [_realify(p) for p in poles]
        self.residues = [_realify(r) for r in residues]
        self.crit = [(_realify(c[0]), _realify(c[1])) for c in crit]
        self._ovals: list | None = None
        self._signatures: list | None = None
        self._anchor_z = None
        self._anchor_w: list | None = None

    # -- the map and derivatives -------------------------------------------

    def Z(self, w):
        out = w
        for p, r in zip(self.poles, self.residues):
            out = out + r / (w - p)
        return out

    def Zp(self, w):
        out = mpc(1)
        for p, r in zip(self.poles, self.residues):
            out = out - r / (w - p) ** 2
        return out

    def Zpp(self, w):
        out = mpc(0)
        for p, r in zip(self.poles, self.residues):
            out = out + 2 * r / (w - p) ** 3
        return out

    # -- float64 cell classification ----------------------------------------

    def _ensure_query(self):
        if self._ovals is None:
            self._build_query()

    def _build_query(self):
        poles = [float(p) for p in self.poles]
        residues = [float(r) for r in self.residues]

        def zf(w):
            return w + sum(r / (w - p) for p, r in zip(poles, residues))

        def zpf(w):
            return 1 - sum(r / (w - p) ** 2 for p, r in zip(poles, residues))

        def zppf(w):
            return sum(2 * r / (w - p) ** 3 for p, r in zip(poles, residues))

        ovals = []
        for j, slit in enumerate(self.spec.slits):
            a, b = float(slit.lo), float(slit.hi)
            wa, wb = complex(self.crit[j][0]), complex(self.crit[j][1])
            ns = 512
            zs = a + (b - a) * (0.5 - 0.5 * np.cos(np.pi * np.arange(1, ns) / ns))
            arc = [wa]
            v = 2 * (zs[0] - a) / zppf(wa)
            w = wa + 1j * abs(v) ** 0.5 if v.real <= 0 else wa + v**0.5
            if w.imag < 0:
                w = w.conjugate()
            for z in zs:
                for _ in range(60):
                    dw = (zf(w) - z) / zpf(w)
                    w = w - dw
                    if abs(dw) < 1e-13 * (1 + abs(w)):
                        break
                if w.imag < 0:
                    w = w.conjugate()
                arc.append(w)
            arc.append(wb)
            pts = np.array(arc + [x.conjugate() for x in arc[-2:0:-1]])
            ovals.append(pts)
        self._ovals = ovals
        extent = max(max(np.abs(o).max() for o in ovals),
                     max(abs(p) for p in poles) if poles else 1.0)
        far = complex(2.5 * extent + 2, 1.7 * extent + 2)
        sig0 = self._signature_of(far)
        sigs = [sig0]
        for p in poles:
            sigs.append(self._signature_of(complex(p)))
        if len(set(sigs)) != self.m + 1:
            raise StructuralError("cell signatures are not distinct; covering invalid")
        self._signatures = sigs
        # real anchor to the right of everything, with per-cell preimages
        z_anchor = max(float(s.hi) for s in self.spec.slits) + 3 * float(self.spec.span) + 5
        roots = self._preimages_float(z_anchor)
        anchor_w = [None] * (self.m + 1)
        for r in roots:
            k = self._classify_float(r)
            if k is None or anchor_w[k] is not None:
                raise StructuralError("anchor preimages could not be classified")
            anchor_w[k] = r
        self._anchor_z = z_anchor
        self._anchor_w = anchor_w

    def _signature_of(self, w: complex):
        sig = []
        for oval in self._ovals:
            d = oval - w
            ang = np.angle(d[np.r_[1:len(d), 0]] / d)
            sig.append(int(round(abs(ang.sum()) / (2 * np.pi))) % 2)
        return tuple(sig)

    def _classify_float(self, w: complex):
        sig = self._signature_of(w)
        for k, s in enumerate(self._signatures):
            if s == sig:
                return k
        return None

    def _preimages_float(self, z: complex):
        poles = [float(p) for p in self.poles]
        residues = [float(r) for r in self.residues]
        # P_z(w) = (w - z) prod(w - pi_j) + sum_j rho_j prod_{i != j}(w - pi_i)
        prod = np.poly1d([1.0])
        for p in poles:
            prod = prod * np.poly1d([1.0, -p])
        pz = np.poly1d([1.0, -complex(z)]) * prod
        for j, r in enumerate(residues):
            q = np.poly1d([1.0])
            for i, p in enumerate(poles):
                if i != j:
                    q = q * np.poly1d([1.0, -p])
            pz = pz + r * q
        return list(np.roots(pz.coeffs))

    # -- branch-point inversion ----------------------------------------------

    def min_slit_distance(self, z) -> mpf:
        return min(s.distance_to(z) for s in self.spec.slits)

    def sheet_point(self, k: int, z):
        """The parameter point over z on sheet k, polished to working
        precision; Newton from a float64 seed found by winding
        classification, or by path tracking from the anchor when the
        query sits close to a cut."""
        if not 0 <= k <= self.m:
            raise ConfigurationError(f"sheet {k} outside 0..{self.m}")
        self._ensure_query()
        with working(self.precision_bits):
            z = mpc(z)
            near_cut = self.min_slit_distance(z) < mpf("1e-5") * (1 + self.spec.span)
            seed = None
            if not near_cut:
                roots = self._preimages_float(complex(z))
                cells = [self._classify_float(r) for r in roots]
                matches = [r for r, c in zip(roots, cells) if c == k]
                if len(matches) == 1 and None not in cells:
                    seed = matches[0]
            if seed is None:
                seed = self._track_from_anchor(k, complex(z))
            return self._polish(seed, z)

    def _track_from_anchor(self, k: int, z: complex):
        self._ensure_query()
        poles = [float(p) for p in self.poles]
        residues = [float(r) for r in self.residues]

        def zf(w):
            return w + sum(r / (w - p) for p, r in zip(poles, residues))

        def zpf(w):
            return 1 - sum(r / (w - p) ** 2 for p, r in zip(poles, residues))

        height = 1.0 + float(self.spec.span)
        sgn = 1.0 if z.imag >= 0 else -1.0
        za = complex(self._anchor_z, 0.0)
        path = [za, complex(za.real, sgn * height), complex(z.real, sgn * height), z]
        w = complex(self._anchor_w[k])
        for seg in range(3):
            z0, z1 = path[seg], path[seg + 1]
            steps = 48
            i = 0
            while i < steps:
                zt = z0 + (z1 - z0) * (i + 1) / steps
                wn = w
                ok = False
                for _ in range(40):
                    dw = (zf(wn) - zt) / zpf(wn)
                    wn = wn - dw
                    if abs(dw) < 1e-12 * (1 + abs(wn)):
                        ok = True
                        break
                if not ok:
                    steps *= 2
                    i *= 2
                    continue
                w = wn
                i += 1
        return w

    def _polish(self, seed: complex, z):
        w = mpc(seed)
        tol = tol_newton(self.precision_bits) * (1 + abs(z))
        for _ in range(80):
            dw = (self.Z(w) - z) / self.Zp(w)
            w = w - dw
            if abs(dw) <= tol:
                break
        if abs(self.Z(w) - z) > tol * 16:
            raise NumericalError(
                f"branch inversion did not converge at z = {mp.nstr(z, 10)}"
            )
        if mpc(z).imag == 0 and abs(w.imag) < mpf(2) ** (-self.precision_bits // 2):
            w = mpc(w.real)
        return w

    # -- serialization --------------------------------------------------------

    def to_json(self) -> dict:
        bits = self.precision_bits
        return {
            "schema_version": 1,
            "slits": [[to_decimal(s.lo, bits), to_decimal(s.hi, bits)] for s in self.spec.slits],
            "precision_bits": bits,
            "poles": [to_decimal(p, bits) for p in self.poles],
            "residues": [to_decimal(r, bits) for r in self.residues],
            "critical_points": [[to_decimal(c[0], bits), to_decimal(c[1], bits)] for c in self.crit],
        }

    @classmethod
    def from_json(cls, rec: dict) -> "CoveringMap":
        bits = int(rec["precision_bits"])
        with working(bits):
            slits = tuple(Interval(mpf(a), mpf(b)) for a, b in rec["slits"])
            poles = [mpf(p) for p in rec["poles"]]
            residues = [mpf(r) for r in rec["residues"]]
            crit = [(mpf(a), mpf(b)) for a, b in rec["critical_points"]]
        return cls(SurfaceSpec(slits), bits, poles, residues, crit)


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------


def build_covering(spec: SurfaceSpec, precision_bits: int,
                   continuation_steps: int = 8) -> CoveringMap:
    """Newton-with-continuation solve of the covering for the slit chain."""
    with working(precision_bits):
        s1 = spec.slits[0]
        pi1 = s1.midpoint
        rho1 = (s1.length / 4) ** 2
        state = _State(
            poles=[pi1], residues=[rho1],
            crit=[[pi1 - s1.length / 4, pi1 + s1.length / 4]],
        )
        targets = [[s1.lo, s1.hi]]
        for j in range(2, spec.m + 1):
            slit = spec.slits[j - 1]
            _insert_slit(state, targets, slit, precision_bits, continuation_steps)
        _newton(state, targets, precision_bits)
        return CoveringMap(spec, precision_bits, state.poles, state.residues, state.crit)


@dataclass
class _State:
    poles: list
    residues: list
    crit: list


def _zval(state: _State, w):
    out = w
    for p, r in zip(state.poles, state.residues):
        out = out + r / (w - p)
    return out


def _zpval(state: _State, w):
    out = mpf(1)
    for p, r in zip(state.poles, state.residues):
        out = out - r / (w - p) ** 2
    return out


def _insert_slit(state: _State, targets, slit: Interval, bits: int, steps: int):
    c = slit.midpoint
    hw = slit.length / 2
    prev_hi = max(t[1] for t in targets)
    prev_lo = min(t[0] for t in targets)
    span = prev_hi - prev_lo + slit.length
    last_pole = state.poles[-1]
    last_res = state.residues[-1]
    prev_slit_lo, prev_slit_hi = targets[-1]
    side = 1 if c > prev_slit_hi else -1
    x_far = c + side * (4 * span + 8)

    # preimage of the far point in the last cell, tracked inward to c
    w = last_pole + last_res / (x_far - _zval_excluding(state, last_pole, len(state.poles) - 1))
    track_steps = 64
    for i in range(1, track_steps + 1):
        zt = x_far + (c - x_far) * mpf(i) / track_steps
        for _ in range(60):
            dw = (_zval(state, w) - zt) / _zpval(state, w)
            w = w - dw
            if abs(dw) < mpf(2) ** (-bits // 2) * (1 + abs(w)):
                break
    pi_new = w
    zp = _zpval(state, pi_new)
    if zp == 0:
        raise StructuralError("degenerate insertion point for a new slit")

    # phase A: seed the degenerate slit, shrinking it until Newton lands
    t0 = mpf(1) / steps
    while True:
        half = hw * t0
        rho_new = half**2 / (4 * zp)
        delta = half / (2 * zp)
        snap = _snapshot(state, targets)
        state.poles.append(pi_new)
        state.residues.append(rho_new)
        state.crit.append([pi_new - delta, pi_new + delta])
        targets.append([c - half, c + half])
        try:
            _newton(state, targets, bits)
            break
        except NumericalError:
            _restore(state, targets, snap)
            t0 = t0 / 2
            if t0 < mpf(1) / 1024:
                raise StructuralError(
                    f"could not seed the slit [{slit.lo}, {slit.hi}]"
                )
    # phase B: grow the slit to full size, halving the step on failure
    t = t0
    t_step = mpf(1) / steps
    while t < 1:
        t_next = min(mpf(1), t + t_step)
        half = hw * t_next
        snap = _snapshot(state, targets)
        targets[-1] = [c - half, c + half]
        try:
            _newton(state, targets, bits)
            t = t_next
        except NumericalError:
            _restore(state, targets, snap)
            t_step = t_step / 2
            if t_step < mpf(1) / 1024:
                raise StructuralError(
                    f"continuation failed while growing the slit [{slit.lo}, {slit.hi}]"
                )


def _snapshot(state: _State, targets):
    return (
        list(state.poles),
        list(state.residues),
        [list(c) for c in state.crit],
        [list(t) for t in targets],
    )


def _restore(state: _State, targets, snap):
    state.poles, state.residues = list(snap[0]), list(snap[1])
    state.crit = [list(c) for c in snap[2]]
    targets[:] = [list(t) for t in snap[3]]


def _zval_excluding(state: _State, w, skip: int):
    out = w
    for i, (p, r) in enumerate(zip(state.poles, state.residues)):
        if i != skip:
            out = out + r / (w - p)
    return out


def _newton(state: _State, targets, bits: int, max_iter: int = 80):
    """Damped Newton on (poles, residues, critical points) with equations
    Z(w_c) = endpoint, Z'(w_c) = 0 for every slit."""
    mcur = len(state.poles)
    tol = tol_newton(bits)
    scale = 1 + max(abs(t[0]) + abs(t[1]) for t in targets)

    def pack():
        v = []
        v.extend(state.poles)
        v.extend(state.residues)
        for c in state.crit:
            v.extend(c)
        return v

    def unpack(v):
        state.poles = list(v[:mcur])
        state.residues = list(v[mcur:2 * mcur])
        state.crit = [[v[2 * mcur + 2 * j], v[2 * mcur + 2 * j + 1]] for j in range(mcur)]

    def residual(v):
        unpack(v)
        out = []
        for j in range(mcur):
            for e in range(2):
                wc = state.crit[j][e]
                out.append(_zval(state, wc) - targets[j][e])
                out.append(_zpval(state, wc))
        return out

    def jacobian(v):
        unpack(v)
        rows = []
        for j in range(mcur):
            for e in range(2):
                wc = state.crit[j][e]
                rowZ = [mpf(0)] * (4 * mcur)
                rowD = [mpf(0)] * (4 * mcur)
                for i, (p, r) in enumerate(zip(state.poles, state.residues)):
                    rowZ[i] = r / (wc - p) ** 2
                    rowZ[mcur + i] = 1 / (wc - p)
                    rowD[i] = -2 * r / (wc - p) ** 3
                    rowD[mcur + i] = -1 / (wc - p) ** 2
                col = 2 * mcur + 2 * j + e
                rowZ[col] = _zpval(state, wc)
                zpp = mpf(0)
                for p, r in zip(state.poles, state.residues):
                    zpp += 2 * r / (wc - p) ** 3
                rowD[col] = zpp
                rows.append(rowZ)
                rows.append(rowD)
        return rows

    v = pack()
    fv = residual(v)
    norm = max(abs(x) for x in fv)
    for _ in range(max_iter):
        if norm <= tol * scale:
            unpack(v)
            return
        jac = jacobian(v)
        try:
            dv, _ = solve_refined(jac, [-x for x in fv], refinements=1)
            dv = [mpc(d).real for d in dv]
        except Exception as exc:
            raise NumericalError(f"Newton linear solve failed: {exc}") from exc
        lam = mpf(1)
        improved = False
        for _ in range(8):
            v_try = [a + lam * b for a, b in zip(v, dv)]
            f_try = residual(v_try)
            n_try = max(abs(x) for x in f_try)
            if n_try < norm:
                v, fv, norm = v_try, f_try, n_try
                improved = True
                break
            lam = lam / 2
        if not improved:
            raise NumericalError("Newton stalled on the covering equations")
    if norm > tol * scale:
        raise NumericalError("Newton did not reach tolerance on the covering equations")
    unpack(v)


# ---------------------------------------------------------------------------
# branch functions
# ---------------------------------------------------------------------------


class BranchFunction:
    """The function with a simple zero over infinity on sheet 0 and a
    simple pole over infinity on sheet l: psi(w) = c / (w - pi_l)."""

    def __init__(self, cover: CoveringMap, l: int, c):
        if not 1 <= l <= cover.m:
            raise ConfigurationError(f"level l={l} outside 1..{cover.m}")
        self.cover = cover
        self.l = l
        self.c = c
        self.pole = cover.poles[l - 1]

    # at-infinity data -------------------------------------------------------

    @property
    def C1(self):
        """Coefficient of 1/z in the sheet-0 expansion at infinity."""
        return self.c

    @property
    def C2(self):
        """Coefficient of z in the sheet-l expansion at infinity."""
        return self.c / self.cover.residues[self.l - 1]

    def value_at_infinity(self, k: int):
        """Branch value at infinity on sheet k (finite for k not in {0, l})."""
        if k == 0 or k == self.l:
            raise ConfigurationError("sheet has a zero/pole over infinity")
        return self.c / (self.cover.poles[k - 1] - self.pole)

    def sg_at_infinity(self, k: int) -> int:
        """Sign of the leading coefficient of the sheet-k branch at
        infinity (the value itself when finite)."""
        if k == 0:
            v = self.C1
        elif k == self.l:
            v = self.C2
        else:
            v = self.value_at_infinity(k)
        return 1 if v > 0 else -1

    def norm_constant(self):
        """The constant value of the product of all branches."""
        with working(self.cover.precision_bits):
            prod = self.C1 * self.C2
            for k in range(1, self.cover.m + 1):
                if k != self.l:
                    prod = prod * self.value_at_infinity(k)
            return prod

    # evaluation -------------------------------------------------------------

    def value(self, k: int, z):
        """Branch value on sheet k at z (off the sheet's cut set)."""
        w = self.cover.sheet_point(k, z)
        return self.c / (w - self.pole)

    def value_at_w(self, w):
        return self.c / (w - self.pole)

    def inverse_is_linear_in(self):
        """1/psi = (w - pi_l)/c: exposed for divided-difference tricks."""
        return self.pole, self.c


def psi_branches(cover: CoveringMap, l: int, delta1: int | None = None) -> BranchFunction:
    """The normalized branch function for level l.

    The modulus of c comes from requiring the product of all branches to
    have modulus one. For l = 1 the sign follows the slit orientation:
    sg of the sheet-0 value at infinity equals +1 when the first slit
    lies left of the second and -1 otherwise (delta1); for l >= 2 the
    sign is fixed positive (the two normalized choices differ by a global
    flip that cancels from every limit formula).
    """
    with working(cover.precision_bits):
        pole = cover.poles[l - 1]
        prod = cover.residues[l - 1]
        for k in range(1, cover.m + 1):
            if k != l:
                prod = prod * (cover.poles[k - 1] - pole)
        cmag = abs(prod) ** (mpf(1) / (cover.m + 1))
        if l == 1:
            if delta1 is None:
                delta1 = 1 if cover.m == 1 else (
                    1 if cover.spec.slits[0].is_left_of(cover.spec.slits[1]) else -1
                )
            c = delta1 * cmag
        else:
            c = cmag
        branch = BranchFunction(cover, l, c)
        if abs(abs(branch.norm_constant()) - 1) > mpf(2) ** (-cover.precision_bits // 2):
            raise StructuralError("branch normalization failed")
        if l == 1:
            expected = _sign_pattern_level1(cover, delta1)
            got = [branch.sg_at_infinity(k) for k in range(cover.m + 1)]
            if got != expected:
                raise StructuralError(
                    f"level-1 sign pattern {got} differs from the orientation rule {expected}"
                )
        return branch


def _sign_pattern_level1(cover: CoveringMap, delta1: int):
    if delta1 == 1:
        return [1] * (cover.m + 1)
    return [-1, -1] + [1] * (cover.m - 1)


def verify_relalg(branches: list, l: int, z_samples) -> mpf:
    """Max relative residual, across sheets and samples, of the relation
    1/psi^(1)(z) - 1/psi^(1)(inf on sheet l-1) = (C1'/C1) / psi^(l-1)(z),
    where C1 and C1' are the sheet-0 leading coefficients of psi^(1) and
    psi^(l-1)."""
    if l < 2:
        raise ConfigurationError("the relation needs l >= 2")
    b1 = branches[0]
    bprev = branches[l - 2]
    cover = b1.cover
    with working(cover.precision_bits):
        worst = mpf(0)
        inv_at_inf = (cover.poles[l - 2] - b1.pole) / b1.c
        ratio = bprev.C1 / b1.C1
        for k in range(cover.m + 1):
            for z in z_samples:
                w = cover.sheet_point(k, z)
                lhs = (w - b1.pole) / b1.c - inv_at_inf
                rhs = ratio * (w - bprev.pole) / bprev.c
                scale = max(abs(lhs), abs(rhs), mpf("1e-30"))
                worst = max(worst, abs(lhs - rhs) / scale)
        return worst


def save_covering(cover: CoveringMap, path):
    with open(path, "w") as fh:
        json.dump(cover.to_json(), fh, indent=1, sort_keys=True)


def load_covering(path) -> CoveringMap:
    with open(path) as fh:
        return CoveringMap.from_json(json.load(fh))
