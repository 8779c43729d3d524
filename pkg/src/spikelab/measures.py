"""Compactly supported probability measures and their analytic transforms.

Three kinds are supported: finite atomic measures, the semicircle family and
empirical (sample) measures. Each lives on a carrier: the real line, the
positive half-line or the unit circle. Circle atoms are stored by argument in
``[0, 2*pi)``.

All transforms accept scalars or numpy arrays and broadcast.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, PoleError, PreconditionError

ATOMIC = "atomic"
SEMICIRCLE = "semicircle"
EMPIRICAL = "empirical"
KINDS = (ATOMIC, SEMICIRCLE, EMPIRICAL)

REAL = "real"
POSITIVE = "positive"
CIRCLE = "circle"
CARRIERS = (REAL, POSITIVE, CIRCLE)

TWO_PI = 2.0 * math.pi
_WEIGHT_TOL = 1e-9
_CIRCLE_TOL = 1e-12
_LOC_TOL = 1e-10
# evaluations with |z - t| below this are treated as hitting an atom
_HIT_TOL = 1e-300


def _as_complex(z):
    return np.asarray(z, dtype=complex)


def _unwrap_scalar(z, out):
    return complex(out) if np.ndim(z) == 0 else out


# ---------------------------------------------------------------------------
# support sets


@dataclass(frozen=True)
class SupportSet:
    """Ordered, disjoint union of closed intervals.

    With ``circle=True`` the intervals are argument intervals inside
    ``[0, 2*pi]``; an arc through angle 0 is stored as two pieces.
    """

    intervals: tuple[tuple[float, float], ...] = ()
    circle: bool = False

    def __post_init__(self):
        ivs = sorted((float(lo), float(hi)) for lo, hi in self.intervals)
        for lo, hi in ivs:
            if lo > hi:
                raise ValueError(f"interval with lo > hi: ({lo}, {hi})")
        object.__setattr__(self, "intervals", tuple(_merge(ivs)))

    @classmethod
    def from_points(cls, points: Iterable[float], circle: bool = False) -> "SupportSet":
        return cls(tuple((float(p), float(p)) for p in points), circle=circle)

    def __iter__(self):
        return iter(self.intervals)

    def __len__(self):
        return len(self.intervals)

    @property
    def lo(self) -> float:
        return self.intervals[0][0]

    @property
    def hi(self) -> float:
        return self.intervals[-1][1]

    def is_empty(self) -> bool:
        return not self.intervals

    def fattened(self, eps: float) -> "SupportSet":
        return fattened(self, eps)

    def union(self, other: "SupportSet") -> "SupportSet":
        return SupportSet(self.intervals + other.intervals, circle=self.circle)

    def shifted(self, c: float) -> "SupportSet":
        return SupportSet(tuple((lo + c, hi + c) for lo, hi in self.intervals), circle=self.circle)

    def distance(self, x) -> np.ndarray | float:
        """Distance from ``x`` (scalar or array) to the set; angular on the circle."""
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        if not self.intervals:
            d = np.full(xs.shape, np.inf)
        else:
            lo = np.array([iv[0] for iv in self.intervals])
            hi = np.array([iv[1] for iv in self.intervals])
            if self.circle:
                xs = np.mod(xs, TWO_PI)
                d = np.full(xs.shape, np.inf)
                for shift in (-TWO_PI, 0.0, TWO_PI):
                    y = xs[:, None] + shift
                    di = np.maximum(np.maximum(lo - y, y - hi), 0.0)
                    d = np.minimum(d, di.min(axis=1))
            else:
                di = np.maximum(np.maximum(lo - xs[:, None], xs[:, None] - hi), 0.0)
                d = di.min(axis=1)
        return float(d[0]) if np.ndim(x) == 0 else d

    def contains(self, x, tol: float = 0.0):
        d = self.distance(x)
        return d <= tol

    def gaps(self, lo: float, hi: float) -> list[tuple[float, float]]:
        """Open components of ``[lo, hi]`` minus the set (real line only)."""
        out = []
        cur = lo
        for a, b in self.intervals:
            if b < lo:
                continue
            if a > hi:
                break
            if a > cur:
                out.append((cur, a))
            cur = max(cur, b)
        if cur < hi:
            out.append((cur, hi))
        return out

    def to_list(self) -> list[list[float]]:
        return [[lo, hi] for lo, hi in self.intervals]


def _merge(ivs: Sequence[tuple[float, float]]) -> list[tuple[float, float]]:
    out: list[tuple[float, float]] = []
    for lo, hi in ivs:
        if out and lo <= out[-1][1]:
            out[-1] = (out[-1][0], max(out[-1][1], hi))
        else:
            out.append((lo, hi))
    return out


def fattened(s: SupportSet, eps: float) -> SupportSet:
    """Return ``s + (-eps, eps)`` with overlapping pieces merged."""
    if eps < 0:
        raise PreconditionError("eps must be nonnegative")
    ivs = [(lo - eps, hi + eps) for lo, hi in s.intervals]
    if s.circle:
        if any(hi - lo >= TWO_PI for lo, hi in ivs):
            return SupportSet(((0.0, TWO_PI),), circle=True)
        wrapped = []
        for lo, hi in ivs:
            if lo < 0:
                wrapped += [(0.0, hi), (lo + TWO_PI, TWO_PI)]
            elif hi > TWO_PI:
                wrapped += [(lo, TWO_PI), (0.0, hi - TWO_PI)]
            else:
                wrapped.append((lo, hi))
        ivs = wrapped
    return SupportSet(tuple(ivs), circle=s.circle)


# ---------------------------------------------------------------------------
# measures


@dataclass(frozen=True)
class Measure:
    """A compactly supported probability measure.

    Use the ``atomic``, ``semicircle`` and ``empirical`` constructors rather
    than building instances directly.
    """

    kind: str
    carrier: str = REAL
    locations: tuple[float, ...] = ()
    weights: tuple[float, ...] = ()
    center: float = 0.0
    radius: float = 2.0
    samples: tuple[float, ...] = ()
    _cache: dict = field(default_factory=dict, compare=False, repr=False, hash=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PreconditionError(f"unknown measure kind {self.kind!r}")
        if self.carrier not in CARRIERS:
            raise PreconditionError(f"unknown carrier {self.carrier!r}")
        if self.kind == ATOMIC:
            if len(self.locations) == 0 or len(self.locations) != len(self.weights):
                raise PreconditionError("atomic measure needs matching, non-empty locations and weights")
            w = np.asarray(self.weights, dtype=float)
            if np.any(w <= 0) or np.any(w > 1 + _WEIGHT_TOL):
                raise PreconditionError("atom weights must lie in (0, 1]")
            if abs(w.sum() - 1.0) > _WEIGHT_TOL:
                raise PreconditionError(f"atom weights sum to {w.sum()!r}, not 1")
            object.__setattr__(self, "weights", tuple(float(x) for x in w / w.sum()))
            object.__setattr__(self, "locations", tuple(self._check_points(self.locations)))
        elif self.kind == SEMICIRCLE:
            if not self.radius > 0:
                raise PreconditionError("semicircle radius must be positive")
            if self.carrier == CIRCLE:
                raise PreconditionError("semicircle measures live on the real line")
            if self.carrier == POSITIVE and self.center - self.radius < 0:
                raise PreconditionError("semicircle on the positive half-line needs center >= radius")
        else:
            if len(self.samples) == 0:
                raise PreconditionError("empirical measure needs samples")
            object.__setattr__(self, "samples", tuple(self._check_points(self.samples)))

    def _check_points(self, pts) -> list[float]:
        arr = np.asarray(pts)
        if self.carrier == CIRCLE:
            if np.iscomplexobj(arr):
                if np.any(np.abs(np.abs(arr) - 1.0) > _CIRCLE_TOL):
                    raise PreconditionError("circle points must have modulus 1")
                arr = np.angle(arr)
            arr = np.mod(np.asarray(arr, dtype=float), TWO_PI)
            return [float(x) for x in arr]
        if np.iscomplexobj(arr):
            if np.any(np.abs(arr.imag) > 0):
                raise PreconditionError("real-carried measure got complex points")
            arr = arr.real
        arr = np.asarray(arr, dtype=float)
        if not np.all(np.isfinite(arr)):
            raise PreconditionError("points must be finite")
        if self.carrier == POSITIVE and np.any(arr < 0):
            raise PreconditionError("positive-carried measure got negative points")
        return [float(x) for x in arr]

    # -- constructors -------------------------------------------------------

    @classmethod
    def atomic(cls, locations, weights=None, carrier: str = REAL) -> "Measure":
        """Finite atomic measure. Circle atoms may be given as arguments or unit complex numbers."""
        locations = list(locations) if not isinstance(locations, np.ndarray) else locations
        if weights is None:
            weights = [1.0 / len(locations)] * len(locations)
        return cls(ATOMIC, carrier, locations=tuple(locations), weights=tuple(weights))

    @classmethod
    def semicircle(cls, center: float = 0.0, radius: float = 2.0, carrier: str = REAL) -> "Measure":
        return cls(SEMICIRCLE, carrier, center=float(center), radius=float(radius))

    @classmethod
    def empirical(cls, samples, carrier: str = REAL) -> "Measure":
        return cls(EMPIRICAL, carrier, samples=tuple(np.asarray(samples).tolist()))

    # -- basic data ---------------------------------------------------------

    @property
    def on_circle(self) -> bool:
        return self.carrier == CIRCLE

    def atoms(self) -> tuple[np.ndarray, np.ndarray]:
        """(points, weights) with duplicates merged; circle points as unit complex numbers.

        Raises for the semicircle, which has no atoms.
        """
        if "atoms" in self._cache:
            return self._cache["atoms"]
        if self.kind == SEMICIRCLE:
            raise PreconditionError("semicircle measure has no atom list")
        if self.kind == ATOMIC:
            locs = np.asarray(self.locations, dtype=float)
            w = np.asarray(self.weights, dtype=float)
        else:
            locs = np.asarray(self.samples, dtype=float)
            w = np.full(locs.size, 1.0 / locs.size)
        order = np.argsort(locs, kind="stable")
        locs, w = locs[order], w[order]
        # merge locations closer than the equality tolerance
        keep = np.ones(locs.size, dtype=bool)
        keep[1:] = np.diff(locs) > _LOC_TOL
        groups = np.cumsum(keep) - 1
        merged_w = np.bincount(groups, weights=w)
        merged_l = locs[keep]
        pts = np.exp(1j * merged_l) if self.on_circle else merged_l
        self._cache["atoms"] = (pts, merged_w)
        return pts, merged_w

    def isclose(self, other: "Measure", tol: float = _LOC_TOL) -> bool:
        """Equality up to atom order, with locations and weights compared to ``tol``."""
        if self.kind != other.kind or self.carrier != other.carrier:
            return False
        if self.kind == SEMICIRCLE:
            return abs(self.center - other.center) <= tol and abs(self.radius - other.radius) <= tol
        (pa, wa), (pb, wb) = self.atoms(), other.atoms()
        return pa.size == pb.size and bool(np.all(np.abs(pa - pb) <= tol) and np.all(np.abs(wa - wb) <= tol))

    def arguments(self) -> np.ndarray:
        """Sorted atom arguments in [0, 2*pi) (circle measures only)."""
        if not self.on_circle:
            raise PreconditionError("arguments() is only defined on the circle")
        pts, _ = self.atoms()
        return np.mod(np.angle(pts), TWO_PI)

    def mean(self) -> complex | float:
        """First moment (complex on the circle)."""
        if self.kind == SEMICIRCLE:
            return self.center
        pts, w = self.atoms()
        m = np.sum(w * pts)
        return complex(m) if self.on_circle else float(m)

    def variance(self) -> float:
        if self.kind == SEMICIRCLE:
            return self.radius**2 / 4.0
        if self.on_circle:
            raise PreconditionError("variance is not defined on the circle")
        pts, w = self.atoms()
        m = np.sum(w * pts)
        return float(np.sum(w * (pts - m) ** 2))

    def density(self, x):
        """Lebesgue density of the semicircle law."""
        if self.kind != SEMICIRCLE:
            raise PreconditionError("only the semicircle has a closed-form density")
        u = (np.asarray(x, dtype=float) - self.center) / self.radius
        out = np.where(np.abs(u) < 1, 2.0 / (math.pi * self.radius) * np.sqrt(np.clip(1 - u**2, 0, None)), 0.0)
        return float(out) if np.ndim(x) == 0 else out

    def cdf(self, x):
        if self.kind == SEMICIRCLE:
            u = np.clip((np.asarray(x, dtype=float) - self.center) / self.radius, -1.0, 1.0)
            out = 0.5 + (u * np.sqrt(1 - u**2) + np.arcsin(u)) / math.pi
        else:
            pts, w = self.atoms()
            key = np.mod(np.angle(pts), TWO_PI) if self.on_circle else pts
            order = np.argsort(key)
            key, cw = key[order], np.cumsum(w[order])
            idx = np.searchsorted(key, np.asarray(x, dtype=float), side="right")
            out = np.where(idx > 0, cw[np.maximum(idx - 1, 0)], 0.0)
        return float(out) if np.ndim(x) == 0 else out

    def quantile(self, p) -> np.ndarray:
        """Generalized inverse CDF at probabilities ``p`` (arguments on the circle)."""
        p = np.asarray(p, dtype=float)
        if np.any((p < 0) | (p > 1)):
            raise PreconditionError("probabilities must lie in [0, 1]")
        if self.kind == SEMICIRCLE:
            lo = np.full(p.shape, self.center - self.radius)
            hi = np.full(p.shape, self.center + self.radius)
            for _ in range(64):
                mid = 0.5 * (lo + hi)
                below = self.cdf(mid) < p
                lo = np.where(below, mid, lo)
                hi = np.where(below, hi, mid)
            return 0.5 * (lo + hi)
        pts, w = self.atoms()
        key = np.mod(np.angle(pts), TWO_PI) if self.on_circle else pts
        order = np.argsort(key)
        key, cw = key[order], np.cumsum(w[order])
        idx = np.searchsorted(cw - 1e-12, p, side="left")
        return key[np.minimum(idx, key.size - 1)]

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind, "carrier": self.carrier}
        if self.kind == ATOMIC:
            d["atoms"] = [[loc, w] for loc, w in zip(self.locations, self.weights)]
        elif self.kind == SEMICIRCLE:
            d["center"] = self.center
            d["radius"] = self.radius
        else:
            d["samples"] = list(self.samples)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Measure":
        try:
            kind = d["kind"]
            carrier = d.get("carrier", REAL)
            if kind == ATOMIC:
                atoms = d["atoms"]
                locs = [a[0] for a in atoms]
                ws = [float(a[1]) for a in atoms]
                if abs(sum(ws) - 1.0) > _WEIGHT_TOL:
                    raise PreconditionError(f"atom weights sum to {sum(ws)!r}, not 1 +- 1e-9")
                return cls.atomic(locs, ws, carrier=carrier)
            if kind == SEMICIRCLE:
                return cls.semicircle(d.get("center", 0.0), d.get("radius", 2.0), carrier=carrier)
            if kind == EMPIRICAL:
                return cls.empirical(d["samples"], carrier=carrier)
        except (KeyError, TypeError, IndexError) as exc:
            raise PreconditionError(f"malformed measure definition: {exc}") from exc
        raise PreconditionError(f"unknown measure kind {kind!r}")


# ---------------------------------------------------------------------------
# transforms


def _atom_sum(z: np.ndarray, pts: np.ndarray, w: np.ndarray, chunk: int = 1 << 22) -> np.ndarray:
    """sum_k w_k / (z - pts_k), chunked to bound memory."""
    flat = z.reshape(-1)
    out = np.empty(flat.shape, dtype=complex)
    step = max(1, chunk // max(pts.size, 1))
    for s in range(0, flat.size, step):
        diff = flat[s : s + step, None] - pts[None, :]
        if np.any(np.abs(diff) <= _HIT_TOL):
            raise DomainError("Cauchy transform evaluated at an atom")
        out[s : s + step] = (w[None, :] / diff).sum(axis=1)
    return out.reshape(z.shape)


def _semicircle_cauchy(m: Measure, z: np.ndarray) -> np.ndarray:
    w = z - m.center
    r = m.radius
    on_cut = (w.imag == 0) & (np.abs(w.real) <= r)
    if np.any(on_cut):
        raise DomainError("Cauchy transform of the semicircle evaluated on its support")
    # product of principal roots is the branch with G ~ 1/z everywhere off the cut;
    # 2(w - s)/r^2 rewritten as 2/(w + s) to avoid cancellation at large |w|
    return 2.0 / (w + np.sqrt(w - r) * np.sqrt(w + r))


def cauchy_transform(m: Measure, z):
    """G_m(z) = integral of 1/(z - t) dm(t)."""
    zz = _as_complex(z)
    if m.kind == SEMICIRCLE:
        out = _semicircle_cauchy(m, zz)
    else:
        pts, w = m.atoms()
        out = _atom_sum(zz, pts.astype(complex), w)
    return _unwrap_scalar(z, out)


def f_transform(m: Measure, z):
    """Reciprocal Cauchy transform F_m = 1/G_m."""
    g = _as_complex(cauchy_transform(m, z))
    if np.any(g == 0):
        raise PoleError("Cauchy transform vanishes; F has a pole here")
    return _unwrap_scalar(z, 1.0 / g)


def h_transform(m: Measure, z):
    """F_m(z) - z, computed without cancellation at large |z|."""
    zz = _as_complex(z)
    if m.kind == SEMICIRCLE:
        w = zz - m.center
        if np.any((w.imag == 0) & (np.abs(w.real) <= m.radius)):
            raise DomainError("h-transform of the semicircle evaluated on its support")
        r = m.radius
        out = m.center - r**2 / (2.0 * (w + np.sqrt(w - r) * np.sqrt(w + r)))
    else:
        # 1 - zG(z) = -sum p t/(z - t), so h = -(sum p t/(z - t)) / G
        pts, w = m.atoms()
        pts = pts.astype(complex)
        g = _atom_sum(zz, pts, w)
        if np.any(g == 0):
            raise PoleError("Cauchy transform vanishes; F has a pole here")
        out = -_atom_sum(zz, pts, w * pts) / g
    return _unwrap_scalar(z, out)


def psi_tilde(m: Measure, w):
    """psi_m(w)/w = integral of t/(1 - w t) dm(t), analytic at w = 0."""
    ww = _as_complex(w)
    if m.kind == SEMICIRCLE:
        small = np.abs(ww) < 1e-14
        safe = np.where(small, 1.0, ww)
        # psi(w) = G(1/w)/w - 1
        val = (_semicircle_cauchy(m, 1.0 / safe) / safe - 1.0) / safe
        out = np.where(small, m.center, val)
    else:
        pts, p = m.atoms()
        pts = pts.astype(complex)
        flat = ww.reshape(-1)
        den = 1.0 - flat[:, None] * pts[None, :]
        if np.any(np.abs(den) <= _HIT_TOL):
            raise DomainError("moment transform evaluated at the reciprocal of an atom")
        out = ((p * pts)[None, :] / den).sum(axis=1).reshape(ww.shape)
    return _unwrap_scalar(w, out)


def psi_transform(m: Measure, w):
    """Moment generating transform psi_m(w) = integral of w t/(1 - w t) dm(t)."""
    ww = _as_complex(w)
    return _unwrap_scalar(w, ww * _as_complex(psi_tilde(m, ww)))


def eta_over_w(m: Measure, w):
    """eta_m(w)/w, analytic at 0 with value equal to the first moment."""
    ww = _as_complex(w)
    pt = _as_complex(psi_tilde(m, ww))
    return _unwrap_scalar(w, pt / (1.0 + ww * pt))


def eta_transform(m: Measure, w):
    """eta_m(w) = psi_m(w) / (1 + psi_m(w))."""
    ww = _as_complex(w)
    return _unwrap_scalar(w, ww * _as_complex(eta_over_w(m, ww)))


# ---------------------------------------------------------------------------
# supports and distances


def support(m: Measure) -> SupportSet:
    """Closed support; for empirical samples the tight enclosing interval(s)."""
    if m.kind == SEMICIRCLE:
        return SupportSet(((m.center - m.radius, m.center + m.radius),))
    if m.kind == ATOMIC:
        pts, _ = m.atoms()
        if m.on_circle:
            return SupportSet.from_points(np.mod(np.angle(pts), TWO_PI), circle=True)
        return SupportSet.from_points(pts)
    if m.on_circle:
        args = np.sort(np.mod(np.asarray(m.samples), TWO_PI))
        if args.size == 1:
            return SupportSet.from_points(args, circle=True)
        gaps = np.diff(np.concatenate([args, [args[0] + TWO_PI]]))
        k = int(np.argmax(gaps))
        start, stop = args[(k + 1) % args.size], args[k]
        if start <= stop:
            return SupportSet(((start, stop),), circle=True)
        return SupportSet(((0.0, stop), (start, TWO_PI)), circle=True)
    s = np.asarray(m.samples)
    return SupportSet(((float(s.min()), float(s.max())),))


def total_variation_distance(a: Measure, b: Measure) -> float:
    """Half the l1 distance between the atom weight vectors on the union of locations."""
    if a.kind == SEMICIRCLE or b.kind == SEMICIRCLE:
        raise PreconditionError("total variation is implemented for atomic/empirical measures only")
    pa, wa = a.atoms()
    pb, wb = b.atoms()
    if a.on_circle:
        pa = np.mod(np.angle(pa), TWO_PI)
    if b.on_circle:
        pb = np.mod(np.angle(pb), TWO_PI)
    locs = np.concatenate([pa, pb]).real
    diff = np.concatenate([wa, -wb])
    order = np.argsort(locs, kind="stable")
    locs, diff = locs[order], diff[order]
    keep = np.ones(locs.size, dtype=bool)
    keep[1:] = np.diff(locs) > _LOC_TOL
    groups = np.cumsum(keep) - 1
    net = np.bincount(groups, weights=diff)
    return float(min(1.0, 0.5 * np.abs(net).sum()))


def distance_to_support(m: Measure, x) -> float:
    return support(m).distance(x)
