"""Outlier prediction for spiked deformed models.

An A-side spike theta produces an outlier at every rho outside the
convolution support K with omega1(rho) = theta (additive), or
v1(rho) = omega1(1/rho) = 1/theta (multiplicative); B-side spikes use omega2.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import freeconv as fc
from . import measures as ms
from .errors import PreconditionError
from .measures import Measure, SupportSet

TWO_PI = 2 * math.pi
MERGE_TOL = 1e-8
ROUNDTRIP_TOL = 1e-6
DEFAULT_EPS_CUT = 0.05
GRID_POINTS = 400
BISECTION_STEPS = 60


# ---------------------------------------------------------------------------
# spike schedules


@dataclass(frozen=True)
class Growth:
    """Spike growth function N -> phi(N).

    kinds: ``all`` (every stored spike), ``constant`` (``value`` spikes),
    ``sqrt`` (floor(sqrt N)) and ``power`` (floor(N**value), value < 1).
    """

    kind: str = "all"
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in ("all", "constant", "sqrt", "power"):
            raise PreconditionError(f"unknown growth kind {self.kind!r}")
        if self.kind == "power" and not 0 <= self.value < 1:
            raise PreconditionError("power growth needs an exponent in [0, 1)")
        if self.kind == "constant" and self.value < 0:
            raise PreconditionError("constant growth must be nonnegative")

    def __call__(self, n: int, available: int | None = None) -> int:
        if self.kind == "all":
            k = available if available is not None else 0
        elif self.kind == "constant":
            k = int(self.value)
        elif self.kind == "sqrt":
            k = math.isqrt(n)
        else:
            k = int(math.floor(n**self.value + 1e-12))
        if available is not None:
            k = min(k, available)
        return min(k, n)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "value": self.value}

    @classmethod
    def from_dict(cls, d) -> "Growth":
        if isinstance(d, str):
            return cls(d)
        return cls(d.get("kind", "all"), float(d.get("value", 0.0)))


@dataclass(frozen=True)
class SpikeSchedule:
    """Spike sequence, growth rule and base measure for one side of a model.

    Spikes on the unit circle are stored as arguments in [0, 2*pi).
    ``gue_bulk`` asks the simulator to draw the non-spike part as a GUE
    matrix instead of deterministic quantiles (semicircle bases only).
    """

    spikes: tuple[float, ...]
    base_measure: Measure
    growth: Growth = field(default_factory=Growth)
    gue_bulk: bool = False

    def __post_init__(self):
        sp = np.asarray(self.spikes, dtype=float if self.base_measure.carrier != ms.CIRCLE else None)
        if self.base_measure.carrier == ms.CIRCLE:
            if np.iscomplexobj(sp):
                sp = np.angle(sp)
            sp = np.mod(np.asarray(sp, dtype=float), TWO_PI)
        object.__setattr__(self, "spikes", tuple(float(x) for x in np.atleast_1d(sp)))
        if self.base_measure.carrier == ms.POSITIVE and any(s <= 0 for s in self.spikes):
            raise PreconditionError("spikes on the positive half-line must be > 0")
        supp = ms.support(self.base_measure)
        d = supp.distance(np.asarray(self.spikes)) if self.spikes else np.zeros(0)
        if np.any(d <= 0):
            raise PreconditionError("every spike must lie outside the support of the base measure")
        if self.gue_bulk and self.base_measure.kind != ms.SEMICIRCLE:
            raise PreconditionError("gue_bulk needs a semicircle base measure")

    def count(self, n: int) -> int:
        return self.growth(n, len(self.spikes))

    def active(self, n: int | None = None) -> tuple[float, ...]:
        return self.spikes if n is None else self.spikes[: self.count(n)]

    def distances(self) -> np.ndarray:
        return np.asarray(ms.support(self.base_measure).distance(np.asarray(self.spikes)))

    def check(self, accumulation_tol: float | None = None, envelope: float | None = None, sample_ns: Sequence[int] = (100, 1000, 10_000)) -> None:
        """Validate the declared accumulation and growth properties; raise on violation."""
        if accumulation_tol is not None and self.spikes:
            if self.distances()[-1] > accumulation_tol:
                raise PreconditionError("last stored spike is not within the accumulation tolerance")
        for n in sample_ns:
            k = self.count(n)
            if k > n:
                raise PreconditionError("growth exceeds matrix size")
            if envelope is not None and k / n > envelope:
                raise PreconditionError(f"phi({n})/{n} = {k / n} exceeds envelope {envelope}")

    @property
    def points(self) -> np.ndarray:
        s = np.asarray(self.spikes, dtype=float)
        return np.exp(1j * s) if self.base_measure.carrier == ms.CIRCLE else s

    def to_dict(self) -> dict:
        return {
            "spikes": list(self.spikes),
            "base": self.base_measure.to_dict(),
            "growth": self.growth.to_dict(),
            "gue_bulk": self.gue_bulk,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SpikeSchedule":
        return cls(
            tuple(d.get("spikes", ())),
            Measure.from_dict(d["base"]),
            Growth.from_dict(d.get("growth", "all")),
            bool(d.get("gue_bulk", False)),
        )


def affine_spikes(a: float, b: float, k_from: int, k_to: int) -> tuple[float, ...]:
    """Spike list a + b/k for k = k_from..k_to."""
    return tuple(a + b / k for k in range(k_from, k_to + 1))


# ---------------------------------------------------------------------------
# predictions


@dataclass(frozen=True)
class OutlierPrediction:
    """Predicted outlier at ``location`` (an argument on the circle).

    ``sources`` holds (side, spike index) pairs; ``side`` is "A", "B" or
    "AB" when spikes from both factors land on the same point.
    """

    location: float
    side: str
    sources: tuple[tuple[str, int], ...]
    multiplicity: int
    window: float
    circle: bool = False

    @property
    def point(self) -> complex | float:
        return complex(np.exp(1j * self.location)) if self.circle else self.location

    def to_dict(self) -> dict:
        return {
            "rho": self.location,
            "side": self.side,
            "sources": [i for _, i in self.sources],
            "source_sides": [s for s, _ in self.sources],
            "multiplicity": self.multiplicity,
            "window": self.window,
        }

    @classmethod
    def from_dict(cls, d: dict, circle: bool = False) -> "OutlierPrediction":
        sides = d.get("source_sides") or [d["side"]] * len(d["sources"])
        return cls(float(d["rho"]), d["side"], tuple(zip(sides, (int(i) for i in d["sources"]))), int(d["multiplicity"]), float(d["window"]), circle)


def predictions_to_json(preds: Sequence[OutlierPrediction]) -> str:
    return json.dumps([p.to_dict() for p in preds], indent=2)


def _qualifying(sched: SpikeSchedule | None, eps_cut: float, n: int | None) -> list[tuple[int, float]]:
    if sched is None:
        return []
    spikes = sched.active(n)
    if not spikes:
        return []
    d = np.atleast_1d(ms.support(sched.base_measure).distance(np.asarray(spikes)))
    return [(i, s) for i, (s, di) in enumerate(zip(spikes, d)) if di > eps_cut]


def _components(K: SupportSet, delta: float, lo: float, hi: float, circle: bool) -> list[tuple[float, float]]:
    Kd = K.fattened(delta)
    if not circle:
        return [c for c in Kd.gaps(lo, hi) if c[1] - c[0] > 1e-12]
    ivs = list(Kd.intervals)
    if not ivs:
        return [(0.0, TWO_PI)]
    if ivs[0][0] <= 0 and ivs[-1][1] >= TWO_PI:
        if len(ivs) == 1:
            return []
        # merge the run that wraps through angle 0
        ivs = ivs[1:-1] + [(ivs[-1][0], ivs[0][1] + TWO_PI)]
    arcs = []
    for (a0, a1), (b0, _) in zip(ivs, ivs[1:] + [(ivs[0][0] + TWO_PI, 0.0)]):
        if b0 > a1:
            arcs.append((a1, b0))
    return arcs


def _mismatch(sp: fc.SubordinationPair, which: int, xs: np.ndarray, targets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Signed mismatch between the boundary value and the target at each x."""
    vals, ok = fc.boundary_values(sp, xs, which=which, strict=False)
    if sp.conv_type == fc.MULT_UNITARY:
        diff = np.angle(vals * np.conj(targets))
    else:
        diff = vals - targets
    return np.where(ok, diff, np.nan), ok


def _solve_side(sp: fc.SubordinationPair, which: int, spikes: list[tuple[int, float]], comps, side: str) -> list[tuple[float, str, int]]:
    """All roots of boundary(x) = target over all components, vectorized bisection."""
    if not spikes or not comps:
        return []
    unitary = sp.conv_type == fc.MULT_UNITARY
    mult = sp.conv_type != fc.ADDITIVE
    idx = np.array([i for i, _ in spikes])
    theta = np.array([s for _, s in spikes], dtype=float)
    if unitary:
        targets = np.exp(-1j * theta)
    elif mult:
        targets = 1.0 / theta
    else:
        targets = theta
    brackets = []  # (a, b, spike position)
    for lo, hi in comps:
        xs = np.linspace(lo, hi, GRID_POINTS)
        vals, ok = fc.boundary_values(sp, xs, which=which, strict=False)
        for k, t in enumerate(targets):
            if unitary:
                g = np.angle(vals * np.conj(t))
                cand = (np.sign(g[:-1]) * np.sign(g[1:]) <= 0) & (np.abs(g[:-1]) < math.pi / 2) & (np.abs(g[1:]) < math.pi / 2)
            else:
                g = vals - t
                cand = np.sign(g[:-1]) * np.sign(g[1:]) <= 0
            cand &= ok[:-1] & ok[1:]
            for j in np.flatnonzero(cand):
                if g[j] == 0 and j > 0 and cand[j - 1]:
                    continue
                brackets.append((xs[j], xs[j + 1], k))
    if not brackets:
        return []
    a = np.array([b[0] for b in brackets])
    b = np.array([b[1] for b in brackets])
    k = np.array([b[2] for b in brackets])
    t = targets[k]
    ga, _ = _mismatch(sp, which, a, t)
    for _ in range(BISECTION_STEPS):
        m = 0.5 * (a + b)
        gm, _ = _mismatch(sp, which, m, t)
        left = np.sign(gm) == np.sign(ga)
        a = np.where(left, m, a)
        ga = np.where(left, gm, ga)
        b = np.where(left, b, m)
        if np.all(b - a < 1e-13 * np.maximum(1.0, np.abs(a))):
            break
    roots = 0.5 * (a + b)
    g, ok = _mismatch(sp, which, roots, t)
    scale = np.maximum(1.0, np.abs(t)) if not unitary else 1.0
    good = ok & (np.abs(g) < ROUNDTRIP_TOL * scale)
    out = []
    for r, kk, gd in zip(roots, k, good):
        if gd:
            loc = float(np.mod(r, TWO_PI)) if unitary else float(r)
            out.append((loc, side, int(idx[kk])))
    return out


def _merge_roots(roots: list[tuple[float, str, int]], K: SupportSet, circle: bool) -> list[OutlierPrediction]:
    roots = sorted(roots)
    groups: list[list[tuple[float, str, int]]] = []
    for r in roots:
        if groups and _sep(r[0], groups[-1][0][0], circle) < MERGE_TOL:
            groups[-1].append(r)
        else:
            groups.append([r])
    if circle and len(groups) > 1 and _sep(groups[0][0][0], groups[-1][0][0], circle) < MERGE_TOL:
        groups[0] = groups.pop() + groups[0]
    locs = [float(np.mean([g[0] for g in grp])) if not circle else grp[0][0] for grp in groups]
    preds = []
    for i, (loc, grp) in enumerate(zip(locs, groups)):
        others = [_sep(loc, o, circle) for j, o in enumerate(locs) if j != i]
        d = min([float(K.distance(loc))] + others)
        sides = sorted({g[1] for g in grp})
        sources = tuple(sorted({(g[1], g[2]) for g in grp}))
        preds.append(OutlierPrediction(loc, "".join(sides), sources, len(sources), d / 2.0, circle))
    return preds


def _sep(x: float, y: float, circle: bool) -> float:
    d = abs(x - y)
    return min(d, TWO_PI - d) if circle else d


def _bbox(K: SupportSet, scheds, conv_type: str) -> tuple[float, float]:
    biggest = max([abs(s) for sc in scheds if sc is not None for s in sc.spikes] + [1.0])
    if conv_type == fc.ADDITIVE:
        return K.lo - 4 * biggest, K.hi + 4 * biggest
    # outliers scale multiplicatively: rho ~ spike * (size of the other factor)
    scale = max([ms.support(sc.base_measure).hi for sc in scheds if sc is not None] + [1.0])
    return 1e-6 * max(K.hi, 1e-3), (K.hi + 4 * biggest) * max(1.0, scale)


def predict_outliers(
    sched_A: SpikeSchedule | None,
    sched_B: SpikeSchedule | None,
    sp: fc.SubordinationPair,
    eps_cut: float = DEFAULT_EPS_CUT,
    K: SupportSet | None = None,
    n: int | None = None,
    bbox: tuple[float, float] | None = None,
) -> list[OutlierPrediction]:
    """Outliers of A + U B U* from spikes farther than ``eps_cut`` from their base support.

    With ``n`` only the first phi(n) spikes of each schedule are used.
    """
    if sp.conv_type != fc.ADDITIVE:
        return predict_outliers_multiplicative(sched_A, sched_B, sp, eps_cut, K=K, n=n, bbox=bbox)
    return _predict(sched_A, sched_B, sp, eps_cut, K, n, bbox)


def predict_outliers_multiplicative(
    sched_A: SpikeSchedule | None,
    sched_B: SpikeSchedule | None,
    sp: fc.SubordinationPair,
    eps_cut: float = DEFAULT_EPS_CUT,
    K: SupportSet | None = None,
    n: int | None = None,
    bbox: tuple[float, float] | None = None,
) -> list[OutlierPrediction]:
    """Outliers of A^{1/2} U B U* A^{1/2} (positive) or A U B U* (unitary)."""
    if sp.conv_type == fc.ADDITIVE:
        raise PreconditionError("additive pair passed to the multiplicative predictor")
    return _predict(sched_A, sched_B, sp, eps_cut, K, n, bbox)


def _predict(sched_A, sched_B, sp, eps_cut, K, n, bbox) -> list[OutlierPrediction]:
    if not eps_cut > 0:
        raise PreconditionError("eps_cut must be positive")
    for sched, m in ((sched_A, sp.mu), (sched_B, sp.nu)):
        if sched is not None and sched.base_measure != m:
            raise PreconditionError("spike schedule base measure does not match the subordination pair")
    K = sp.support if K is None else K
    circle = sp.conv_type == fc.MULT_UNITARY
    lo, hi = bbox if bbox is not None else (_bbox(K, (sched_A, sched_B), sp.conv_type) if not circle else (0.0, TWO_PI))
    comps = _components(K, eps_cut / 2.0, lo, hi, circle)
    roots = []
    roots += _solve_side(sp, 1, _qualifying(sched_A, eps_cut, n), comps, "A")
    roots += _solve_side(sp, 2, _qualifying(sched_B, eps_cut, n), comps, "B")
    return _merge_roots(roots, K, circle)


def assemble_Kprime(K: SupportSet, preds: Sequence[OutlierPrediction]) -> SupportSet:
    """K together with the predicted outlier locations."""
    return K.union(SupportSet.from_points([p.location for p in preds], circle=K.circle))
