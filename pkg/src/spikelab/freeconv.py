"""Subordination functions for free additive and multiplicative convolution.

Additive case (measures on R): omega1, omega2 are the analytic self-maps of
the upper half-plane with

    G_{mu+nu}(z) = G_mu(omega1(z)) = G_nu(omega2(z)),
    omega1(z) + omega2(z) - z = F_mu(omega1(z)) = F_nu(omega2(z)).

omega1 is the attracting fixed point of w -> z + h_nu(z + h_mu(w)) with
h_m(w) = F_m(w) - w.

Multiplicative cases (measures on [0, inf) or on the unit circle): with
eta_m = psi_m / (1 + psi_m), the subordination functions satisfy

    eta_{mu*nu}(z) = eta_mu(omega1(z)) = eta_nu(omega2(z)),
    omega1(z) * omega2(z) = z * eta_{mu*nu}(z),

and omega1 is the fixed point of w -> z f_nu(z f_mu(w)), f_m(w) = eta_m(w)/w.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np

from . import measures as ms
from .errors import BoundaryExtensionError, DomainError, IterationError, PreconditionError
from .measures import Measure, SupportSet

ADDITIVE = "additive"
MULT_POSITIVE = "multiplicative_positive"
MULT_UNITARY = "multiplicative_unitary"
CONV_TYPES = (ADDITIVE, MULT_POSITIVE, MULT_UNITARY)

LADDER = (1e-3, 1e-5, 1e-7, 1e-9)
LADDER_TOL = 1e-8

DEFAULT_GRID_STEP = 1e-3
DEFAULT_IM_OFFSET = 1e-4
DEFAULT_THRESHOLD = 1e-3


@dataclass(frozen=True)
class SubordinationPair:
    """Numerical evaluator for the subordination functions of ``mu`` and ``nu``.

    ``omega1`` belongs to ``mu`` (the first argument) and ``omega2`` to ``nu``.
    """

    conv_type: str
    mu: Measure
    nu: Measure
    tolerance: float = 1e-12
    max_iterations: int = 10_000
    damping: float = 1.0

    def __post_init__(self):
        if self.conv_type not in CONV_TYPES:
            raise PreconditionError(f"unknown convolution type {self.conv_type!r}")
        if not 0 < self.damping <= 1:
            raise PreconditionError("damping must lie in (0, 1]")
        want = {ADDITIVE: (ms.REAL, ms.POSITIVE), MULT_POSITIVE: (ms.POSITIVE,), MULT_UNITARY: (ms.CIRCLE,)}
        for m in (self.mu, self.nu):
            if m.carrier not in want[self.conv_type]:
                raise PreconditionError(f"{self.conv_type} needs measures carried by {want[self.conv_type]}, got {m.carrier}")
        if self.conv_type == MULT_UNITARY:
            for m in (self.mu, self.nu):
                if abs(m.mean()) < 1e-12:
                    raise PreconditionError("unitary subordination needs measures with nonzero first moment")

    @classmethod
    def additive(cls, mu: Measure, nu: Measure, **kw) -> "SubordinationPair":
        return cls(ADDITIVE, mu, nu, **kw)

    @classmethod
    def multiplicative(cls, mu: Measure, nu: Measure, **kw) -> "SubordinationPair":
        kind = MULT_UNITARY if mu.carrier == ms.CIRCLE else MULT_POSITIVE
        return cls(kind, mu, nu, **kw)

    def swapped(self) -> "SubordinationPair":
        return replace(self, mu=self.nu, nu=self.mu)

    @property
    def additive_type(self) -> bool:
        return self.conv_type == ADDITIVE

    @cached_property
    def support(self) -> SupportSet:
        """Support of the convolution at the default grid settings (cached)."""
        return convolution_support(self)


# ---------------------------------------------------------------------------
# fixed-point engine


def _iterate(step, z: np.ndarray, w0: np.ndarray, sp: SubordinationPair, strict: bool = True):
    """Run ``w <- step(z, w)`` elementwise to convergence.

    Damping (halving the step) switches on for an element once its step size
    grows, which is how oscillation shows up for this map. The stopping test
    uses the a-posteriori error estimate delta / (1 - q) so slowly contracting
    points near the real axis are not stopped early.
    Returns (w, converged_mask).
    """
    w = np.array(w0, dtype=complex, copy=True)
    lam = np.full(w.shape, sp.damping)
    prev = np.full(w.shape, np.inf)
    done = np.zeros(w.shape, dtype=bool)
    last_res = np.full(w.shape, np.inf)
    active = np.flatnonzero(~done)
    zf, wf, lamf, prevf, donef, resf = z.reshape(-1), w.reshape(-1), lam.reshape(-1), prev.reshape(-1), done.reshape(-1), last_res.reshape(-1)
    for _ in range(sp.max_iterations):
        if active.size == 0:
            break
        wa = wf[active]
        with np.errstate(all="ignore"):
            new = step(zf[active], wa)
        bad = ~np.isfinite(new)
        if np.any(bad):
            new = np.where(bad, wa, new)
        delta = np.abs(new - wa)
        prev_delta = prevf[active]
        grow = delta > prev_delta
        lamf[active] = np.where(grow, np.minimum(lamf[active], 0.5), lamf[active])
        la = lamf[active]
        wf[active] = (1 - la) * wa + la * new
        prevf[active] = delta
        resf[active] = delta
        # distance to the fixed point is about delta / (1 - q) for contraction factor q
        q = np.minimum(np.where(np.isfinite(prev_delta), delta / np.maximum(prev_delta, 1e-300), 0.0), 0.999)
        scale = np.maximum(1.0, np.abs(wa))
        err = np.where(delta < 1e-15 * scale, delta, delta / (1.0 - q))
        conv = (err < sp.tolerance * scale) & ~bad
        donef[active] = conv
        active = active[~conv]
    if strict and active.size:
        raise IterationError("subordination fixed point did not converge", float(resf[active].max()), sp.max_iterations)
    idx = np.flatnonzero(donef)
    if idx.size:
        wf[idx] = _polish(step, zf[idx], wf[idx])
    return wf.reshape(w.shape), donef.reshape(w.shape)


def _polish(step, z: np.ndarray, w: np.ndarray) -> np.ndarray:
    """One Newton step on step(z, w) - w = 0, kept only where it shrinks the residual.

    Near the real axis the map contracts slowly and the error left by the
    stopping rule gets amplified in the subordination identities.
    """
    with np.errstate(all="ignore"):
        t0 = step(z, w)
        r0 = t0 - w
        h = 1e-7 * np.maximum(1.0, np.abs(w))
        d = (step(z, w + h) - t0) / h
        w1 = w + r0 / (1.0 - d)
        r1 = step(z, w1) - w1
    keep = np.isfinite(w1) & np.isfinite(r1) & (np.abs(r1) < np.abs(r0))
    return np.where(keep, w1, w)


def _additive_step(mu: Measure, nu: Measure):
    def step(z, w):
        return z + ms.h_transform(nu, z + ms.h_transform(mu, w))

    return step


def _mult_step(mu: Measure, nu: Measure):
    def step(z, w):
        return z * ms.eta_over_w(nu, z * ms.eta_over_w(mu, w))

    return step


def _solve_omega(sp: SubordinationPair, z, which: int, strict: bool = True, w0=None):
    """omega_which at complex z (array), no real-axis handling."""
    mu, nu = (sp.mu, sp.nu) if which == 1 else (sp.nu, sp.mu)
    zz = np.asarray(z, dtype=complex)
    if sp.conv_type == ADDITIVE:
        if np.any(zz.imag == 0):
            raise DomainError("real z must go through omega_real_boundary")
        flip = zz.imag < 0
        zu = np.where(flip, zz.conj(), zz)
        start = zu if w0 is None else np.where(flip, np.conj(w0), w0)
        w, ok = _iterate(_additive_step(mu, nu), zu, start, sp, strict)
        return np.where(flip, w.conj(), w), ok
    if sp.conv_type == MULT_UNITARY:
        if np.any(np.abs(zz) >= 1):
            raise DomainError("unitary subordination is evaluated inside the unit disk")
        start = zz if w0 is None else w0
        return _iterate(_mult_step(mu, nu), zz, start, sp, strict)
    if np.any((zz.imag == 0) & (zz.real > 0)):
        raise DomainError("positive subordination is evaluated off [0, inf)")
    flip = zz.imag < 0
    zu = np.where(flip, zz.conj(), zz)
    start = zu if w0 is None else np.where(flip, np.conj(w0), w0)
    w, ok = _iterate(_mult_step(mu, nu), zu, start, sp, strict)
    return np.where(flip, w.conj(), w), ok


def _omega(sp: SubordinationPair, z, which: int):
    zz = np.asarray(z, dtype=complex)
    real_pts = (zz.imag == 0) if sp.conv_type != MULT_UNITARY else np.zeros(zz.shape, dtype=bool)
    if sp.conv_type == ADDITIVE and np.any(real_pts):
        out = np.empty(zz.shape, dtype=complex)
        if np.any(~real_pts):
            out[~real_pts] = _solve_omega(sp, zz[~real_pts], which)[0]
        out[real_pts] = omega_real_boundary(sp, zz[real_pts].real, sp.support, which=which, argument="z")
        w = out
    else:
        w = _solve_omega(sp, zz, which)[0]
    return complex(w) if np.ndim(z) == 0 else w


def omega1(sp: SubordinationPair, z):
    """Subordination function attached to ``mu``."""
    return _omega(sp, z, 1)


def omega2(sp: SubordinationPair, z):
    """Subordination function attached to ``nu``."""
    return _omega(sp, z, 2)


def multiplicative_subordination(sp: SubordinationPair, z, which: int = 1):
    if sp.conv_type == ADDITIVE:
        raise PreconditionError("use omega1/omega2 for the additive case")
    return _omega(sp, z, which)


def multiplicative_eta(m: Measure, z):
    return ms.eta_transform(m, z)


def v_function(sp: SubordinationPair, z, which: int = 1):
    """v_k(z) = omega_k(1/z) for the multiplicative models."""
    zz = np.asarray(z, dtype=complex)
    return _omega(sp, 1.0 / zz, which) if np.ndim(z) else complex(_omega(sp, 1.0 / complex(z), which))


# ---------------------------------------------------------------------------
# convolution transforms


def _cauchy_from_omega(sp: SubordinationPair, z: np.ndarray, w: np.ndarray) -> np.ndarray:
    if sp.conv_type == ADDITIVE:
        return np.asarray(ms.cauchy_transform(sp.mu, w))
    # G(z) = (1 + psi(1/z)) / z = 1 / (z (1 - eta(1/z))), eta(1/z) = eta_mu(omega1(1/z))
    eta = np.asarray(ms.eta_transform(sp.mu, w))
    return 1.0 / (z * (1.0 - eta))


def _conv_cauchy(sp: SubordinationPair, z, strict: bool = True):
    zz = np.asarray(z, dtype=complex)
    if sp.conv_type == ADDITIVE:
        w, ok = _solve_omega(sp, zz, 1, strict)
    else:
        if sp.conv_type == MULT_UNITARY and np.any(np.abs(zz) <= 1):
            raise DomainError("unitary convolution transform is evaluated outside the closed disk")
        w, ok = _solve_omega(sp, 1.0 / zz, 1, strict)
    return _cauchy_from_omega(sp, zz, w), ok


def convolution_cauchy(sp: SubordinationPair, z):
    """Cauchy transform of the free convolution at ``z``."""
    zz = np.asarray(z, dtype=complex)
    if sp.conv_type == ADDITIVE and np.any(zz.imag == 0):
        w = np.asarray(omega1(sp, zz))
        g = np.asarray(ms.cauchy_transform(sp.mu, w))
    else:
        g, _ = _conv_cauchy(sp, zz)
    return complex(g) if np.ndim(z) == 0 else g


def convolution_eta(sp: SubordinationPair, z):
    """eta of the multiplicative convolution, eta_mu(omega1(z))."""
    if sp.conv_type == ADDITIVE:
        raise PreconditionError("eta is only used for the multiplicative case")
    w = np.asarray(_omega(sp, z, 1))
    out = ms.eta_transform(sp.mu, w)
    return complex(out) if np.ndim(z) == 0 else out


def convolution_atoms(sp: SubordinationPair) -> tuple[np.ndarray, np.ndarray]:
    """Atoms of the convolution: a+b (or a*b) carries mu{a} + nu{b} - 1 when positive."""
    if sp.mu.kind == ms.SEMICIRCLE or sp.nu.kind == ms.SEMICIRCLE:
        return np.zeros(0), np.zeros(0)
    pa, wa = sp.mu.atoms()
    pb, wb = sp.nu.atoms()
    locs, ws = [], []
    for a, x in zip(pa, wa):
        for b, y in zip(pb, wb):
            if x + y > 1 + 1e-12:
                locs.append(a + b if sp.conv_type == ADDITIVE else a * b)
                ws.append(x + y - 1)
    if sp.conv_type == MULT_POSITIVE:
        zero = max((x for a, x in zip(pa, wa) if a == 0), default=0.0)
        zero = max(zero, max((y for b, y in zip(pb, wb) if b == 0), default=0.0))
        if zero > 0:
            keep = [i for i, l in enumerate(locs) if l != 0]
            locs = [locs[i] for i in keep] + [0.0]
            ws = [ws[i] for i in keep] + [zero]
    return np.asarray(locs), np.asarray(ws)


def _enclosure(sp: SubordinationPair) -> tuple[float, float]:
    if sp.conv_type == MULT_UNITARY:
        return 0.0, 2 * math.pi
    smu, snu = ms.support(sp.mu), ms.support(sp.nu)
    if sp.conv_type == ADDITIVE:
        return smu.lo + snu.lo, smu.hi + snu.hi
    return smu.lo * snu.lo, smu.hi * snu.hi


def density(sp: SubordinationPair, x, im_offset: float = DEFAULT_IM_OFFSET, continuous_only: bool = False, strict: bool = False):
    """Smoothed density of the convolution at real x (argument x on the circle).

    With ``continuous_only`` the Poisson-smoothed contribution of the atoms
    found by ``convolution_atoms`` is subtracted.
    """
    xs = np.asarray(x, dtype=float)
    if sp.conv_type == MULT_UNITARY:
        z = np.exp(1j * xs) * (1.0 + im_offset)
    else:
        z = xs + 1j * im_offset
    g, _ = _conv_cauchy(sp, z, strict=strict)
    if continuous_only:
        locs, ws = convolution_atoms(sp)
        if locs.size:
            g = g - ms._atom_sum(z, locs.astype(complex), ws)
    if sp.conv_type == MULT_UNITARY:
        return np.real(2 * z * g - 1) / (2 * math.pi)
    return -np.imag(g) / math.pi


def convolution_support(
    sp: SubordinationPair,
    grid_step: float = DEFAULT_GRID_STEP,
    im_offset: float = DEFAULT_IM_OFFSET,
    threshold: float = DEFAULT_THRESHOLD,
) -> SupportSet:
    """Numerical support of the convolution: atoms plus {density > threshold}."""
    if threshold <= 0 or grid_step <= 0 or im_offset <= 0:
        raise PreconditionError("grid_step, im_offset and threshold must be positive")
    lo, hi = _enclosure(sp)
    circle = sp.conv_type == MULT_UNITARY
    if circle:
        n = int(math.ceil(2 * math.pi / grid_step))
        xs = np.arange(n) * (2 * math.pi / n)
    else:
        pad = 5 * grid_step
        n = int(math.ceil((hi - lo + 2 * pad) / grid_step)) + 1
        xs = (lo - pad) + grid_step * np.arange(n)
        if sp.conv_type == MULT_POSITIVE:
            xs = xs[xs > 0]
    dens = density(sp, xs, im_offset=im_offset, continuous_only=True)
    mask = dens > threshold
    ivs = _runs(xs, mask)
    if circle and ivs and mask[0] and mask[-1]:
        # close the wrap-around run at 2*pi
        ivs[-1] = (ivs[-1][0], 2 * math.pi)
    locs, _ = convolution_atoms(sp)
    if circle:
        pts = [float(np.mod(np.angle(l), 2 * math.pi)) for l in locs]
    else:
        pts = [float(np.real(l)) for l in locs]
    ivs += [(p, p) for p in pts]
    if not ivs:
        raise DomainError("density threshold left an empty support; lower the threshold")
    return SupportSet(tuple(ivs), circle=circle)


def _runs(xs: np.ndarray, mask: np.ndarray) -> list[tuple[float, float]]:
    if not mask.any():
        return []
    m = mask.astype(np.int8)
    edges = np.diff(np.concatenate([[0], m, [0]]))
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1) - 1
    return [(float(xs[a]), float(xs[b])) for a, b in zip(starts, stops)]


# ---------------------------------------------------------------------------
# boundary values on the real line / circle


def _ladder_point(sp: SubordinationPair, x: np.ndarray, delta: float) -> np.ndarray:
    """Point at which omega is evaluated for boundary offset ``delta``."""
    if sp.conv_type == ADDITIVE:
        return x + 1j * delta
    if sp.conv_type == MULT_POSITIVE:
        return 1.0 / (x + 1j * delta)
    return np.exp(-1j * x) / (1.0 + delta)


def boundary_values(sp: SubordinationPair, x, which: int = 1, strict: bool = True):
    """Boundary values along the im-offset ladder, vectorized.

    Additive: omega(x) for real x. Positive: v(x) = omega(1/x) for x > 0.
    Unitary: v(e^{ix}) = omega(e^{-ix}) for an argument x.
    Returns (values, ok_mask); failures are nan when ``strict`` is False.
    """
    xs = np.asarray(x, dtype=float)
    w = None
    prev = None
    ok = np.ones(xs.shape, dtype=bool)
    for delta in LADDER:
        z = _ladder_point(sp, xs, delta)
        w, conv = _solve_omega(sp, z, which, strict=False, w0=w)
        ok &= conv
        prev_w, cur = prev, w
        prev = w
    assert prev_w is not None
    if sp.conv_type == MULT_UNITARY:
        # only the argument settles at O(delta^2); the modulus moves at O(delta)
        settled = np.abs(np.angle(cur * np.conj(prev_w))) < LADDER_TOL
        off_axis = np.abs(np.abs(cur) - 1.0) < 1e-6
        value = cur / np.abs(cur)
    else:
        settled = np.abs(cur.real - prev_w.real) < LADDER_TOL * np.maximum(1.0, np.abs(cur.real))
        off_axis = np.abs(cur.imag) < 1e-6 * np.maximum(1.0, np.abs(cur.real))
        value = cur.real
    ok &= settled & off_axis & np.isfinite(cur)
    if strict and not ok.all():
        bad = xs[~ok] if xs.ndim else xs
        raise BoundaryExtensionError(f"boundary extension did not settle at {np.atleast_1d(bad)[:5]}")
    value = np.where(ok, value, np.nan)
    return value, ok


def omega_real_boundary(sp: SubordinationPair, x, K: SupportSet | None = None, which: int = 1, argument: str = "auto"):
    """Real boundary value of omega_which at x outside the convolution support K.

    For the multiplicative types this is v_which(x) = omega_which(1/x); pass
    an argument angle on the circle. ``argument="z"`` means ``x`` is already
    the point at which omega itself is wanted (additive only).
    """
    K = sp.support if K is None else K
    xs = np.asarray(x, dtype=float)
    key = np.mod(xs, 2 * math.pi) if sp.conv_type == MULT_UNITARY else xs
    if np.any(np.asarray(K.distance(key)) <= 0):
        raise DomainError("boundary value requested inside the convolution support")
    val, _ = boundary_values(sp, xs, which=which, strict=True)
    return val.item() if np.ndim(x) == 0 else val


def residuals(sp: SubordinationPair, z) -> tuple[np.ndarray, np.ndarray]:
    """(|G_mu(w1) - G_nu(w2)|, |w1 + w2 - z - F_mu(w1)|) for the additive case."""
    zz = np.asarray(z, dtype=complex)
    w1 = np.asarray(omega1(sp, zz))
    w2 = np.asarray(omega2(sp, zz))
    r1 = np.abs(np.asarray(ms.cauchy_transform(sp.mu, w1)) - np.asarray(ms.cauchy_transform(sp.nu, w2)))
    r2 = np.abs(w1 + w2 - zz - np.asarray(ms.f_transform(sp.mu, w1)))
    return r1, r2
