"""Checks of predictions against simulated spectra, plus the perturbation bounds
and the finite p x p pencils whose zeros are the outliers."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import freeconv as fc
from . import measures as ms
from . import rmt
from .errors import ConfigError, NumericalError, PreconditionError
from .measures import SupportSet
from .outliers import OutlierPrediction, assemble_Kprime

TWO_PI = 2 * math.pi
DEFAULT_WINDOW = 0.3
DEFAULT_PASS_LEVEL = 0.9


# ---------------------------------------------------------------------------
# window counting and verification


def count_in_window(eigs, center: float, halfwidth: float, circle: bool = False) -> int:
    """Number of eigenvalues strictly inside (center - halfwidth, center + halfwidth)."""
    if not halfwidth > 0:
        raise PreconditionError("halfwidth must be positive")
    e = np.asarray(eigs, dtype=float)
    if circle:
        d = np.abs(np.angle(np.exp(1j * (e - center))))
        return int(np.count_nonzero(d < halfwidth))
    lo = np.searchsorted(e, center - halfwidth, side="right")
    hi = np.searchsorted(e, center + halfwidth, side="left")
    return int(max(0, hi - lo))


@dataclass
class OutlierCheck:
    prediction: OutlierPrediction
    observed_count: int
    passed: bool

    def to_dict(self) -> dict:
        return {"prediction": self.prediction.to_dict(), "observed_count": self.observed_count, "pass": self.passed}


@dataclass
class VerificationReport:
    """Window counts and escapees for one or more simulated spectra.

    For a single run ``per_outlier`` holds that run's counts; aggregated
    reports keep the per-trial counts in ``trial_counts`` and mark a
    prediction as passing when its exact count was seen in at least a
    ``level`` fraction of trials.
    """

    per_outlier: list[OutlierCheck]
    bulk_escapees: int
    epsilon: float
    n: int
    trials: int = 1
    pass_fraction: float = 1.0
    level: float = DEFAULT_PASS_LEVEL
    trial_counts: list[list[int]] = field(default_factory=list)
    trial_escapees: list[int] = field(default_factory=list)
    outlier_pass_fractions: list[float] = field(default_factory=list)
    escapee_free_fraction: float = 1.0

    @property
    def passed(self) -> bool:
        if self.trials == 1:
            return all(c.passed for c in self.per_outlier) and self.bulk_escapees == 0
        return all(f >= self.level for f in self.outlier_pass_fractions) and self.escapee_free_fraction >= self.level

    def to_dict(self) -> dict:
        return {
            "per_outlier": [c.to_dict() for c in self.per_outlier],
            "bulk_escapees": self.bulk_escapees,
            "epsilon": self.epsilon,
            "n": self.n,
            "trials": self.trials,
            "pass_fraction": self.pass_fraction,
            "level": self.level,
            "outlier_pass_fractions": self.outlier_pass_fractions,
            "escapee_free_fraction": self.escapee_free_fraction,
            "trial_counts": self.trial_counts,
            "trial_escapees": self.trial_escapees,
            "pass": self.passed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def default_epsilon(preds: Sequence[OutlierPrediction], cap: float = DEFAULT_WINDOW) -> float:
    return min([p.window for p in preds] + [cap])


def escapees(values, region: SupportSet) -> np.ndarray:
    """Values lying outside ``region``."""
    v = np.asarray(values, dtype=float)
    return v[np.asarray(region.distance(v)) > 0]


def verify_run(run: rmt.SimulationRun, preds: Sequence[OutlierPrediction], K: SupportSet, eps: float | None = None) -> VerificationReport:
    """Count eigenvalues in each prediction window and outside K'_eps."""
    eps = default_epsilon(preds) if eps is None else eps
    if not eps > 0:
        raise ConfigError("epsilon must be positive")
    circle = run.unitary
    locs = sorted(p.location for p in preds)
    for a, b in zip(locs, locs[1:]):
        if b - a < 2 * eps:
            raise ConfigError(f"prediction windows around {a} and {b} overlap at eps={eps}")
    if circle and len(locs) > 1 and locs[0] + TWO_PI - locs[-1] < 2 * eps:
        raise ConfigError("prediction windows overlap across angle 0")
    for p in preds:
        if eps > p.window + 1e-15:
            raise ConfigError(f"eps={eps} exceeds the window {p.window} of the prediction at {p.location}")
    vals = run.values()
    checks = []
    for p in preds:
        c = count_in_window(vals, p.location, eps, circle=circle)
        checks.append(OutlierCheck(p, c, c == p.multiplicity))
    region = assemble_Kprime(K, preds).fattened(eps)
    esc = int(escapees(vals, region).size)
    ok = all(c.passed for c in checks) and esc == 0
    return VerificationReport(checks, esc, eps, run.model_spec.n, 1, 1.0 if ok else 0.0, trial_counts=[[c.observed_count for c in checks]], trial_escapees=[esc])


def aggregate_reports(reports: Sequence[VerificationReport], level: float = DEFAULT_PASS_LEVEL) -> VerificationReport:
    """Combine single-run reports; order of ``reports`` does not matter."""
    if not reports:
        raise PreconditionError("no reports to aggregate")
    first = reports[0]
    t = len(reports)
    hits = np.zeros(len(first.per_outlier))
    for r in reports:
        hits += [c.passed for c in r.per_outlier]
    fractions = (hits / t).tolist()
    esc_free = sum(r.bulk_escapees == 0 for r in reports) / t
    all_ok = sum(r.pass_fraction == 1.0 for r in reports) / t
    checks = [OutlierCheck(c.prediction, int(np.median([r.per_outlier[i].observed_count for r in reports])), f >= level) for i, (c, f) in enumerate(zip(first.per_outlier, fractions))]
    return VerificationReport(
        checks,
        int(sum(r.bulk_escapees for r in reports)),
        first.epsilon,
        first.n,
        t,
        all_ok,
        level,
        [r.trial_counts[0] for r in reports],
        [r.trial_escapees[0] for r in reports],
        fractions,
        esc_free,
    )


# ---------------------------------------------------------------------------
# pseudospectrum, projections, Weyl


def min_singular_value(a: np.ndarray, lam: complex) -> float:
    n = a.shape[0]
    return float(np.linalg.svd(a - lam * np.eye(n), compute_uv=False)[-1])


def pseudospectrum_hermitian(a: np.ndarray, eps: float) -> SupportSet:
    """eps-pseudospectrum of a Hermitian matrix on the real line: the eps-fattened spectrum."""
    if not eps > 0:
        raise PreconditionError("eps must be positive")
    if not np.allclose(a, a.conj().T, atol=1e-12):
        raise PreconditionError("matrix is not Hermitian")
    ev = np.linalg.eigvalsh(a)
    return SupportSet.from_points(ev).fattened(eps)


def pseudospectrum_grid_check(a: np.ndarray, eps: float, grid: np.ndarray, tol: float = 1e-8) -> bool:
    """Compare membership in the returned set with sigma_min(A - x) <= eps on a grid.

    Grid points within ``tol`` of the boundary are not judged.
    """
    ps = pseudospectrum_hermitian(a, eps)
    for x in grid:
        s = min_singular_value(a, x)
        if abs(s - eps) <= tol:
            continue
        if (s <= eps) != bool(ps.contains(x)):
            return False
    return True


def operator_norm(x: np.ndarray) -> float:
    return float(np.linalg.svd(x, compute_uv=False)[0])


def spectral_projection(x: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Orthogonal projection onto eigenvectors of Hermitian x with eigenvalue in (lo, hi)."""
    w, v = np.linalg.eigh(x)
    sel = v[:, (w > lo) & (w < hi)]
    return sel @ sel.conj().T


def projection_perturbation_check(x: np.ndarray, x0: np.ndarray, alpha: float, beta: float, delta: float) -> tuple[float, float, bool]:
    """Spectral projection difference on (alpha, beta) against 4(beta - alpha + 2 delta)/(pi delta^2) ||X - X0||."""
    if not (beta > alpha and delta > 0):
        raise PreconditionError("need alpha < beta and delta > 0")
    for m in (x, x0):
        w = np.linalg.eigvalsh(m)
        if np.any((w >= alpha - delta) & (w <= alpha)) or np.any((w >= beta) & (w <= beta + delta)):
            raise PreconditionError("an eigenvalue lies in a guard strip")
    lhs = operator_norm(spectral_projection(x, alpha, beta) - spectral_projection(x0, alpha, beta))
    rhs = 4 * (beta - alpha + 2 * delta) / (math.pi * delta**2) * operator_norm(x - x0)
    return lhs, rhs, bool(lhs < rhs)


def weyl_check(a: np.ndarray, e: np.ndarray, slack: float = 1e-9) -> tuple[float, float, bool]:
    """max_i |lambda_i(A + E) - lambda_i(A)| against ||E||_op."""
    shift = float(np.max(np.abs(np.linalg.eigvalsh(a + e) - np.linalg.eigvalsh(a))))
    bound = operator_norm(e)
    return shift, bound, shift <= bound + slack


# ---------------------------------------------------------------------------
# finite pencils


@dataclass
class PencilSample:
    """One sampled X'_N with the p qualifying A-spikes replaced by ``alpha``."""

    model: str
    x_prime: np.ndarray
    spikes: np.ndarray
    alpha: float
    a_full: np.ndarray
    b: np.ndarray
    u: np.ndarray

    @property
    def p(self) -> int:
        return self.spikes.size

    def spiked_matrix(self) -> np.ndarray:
        return rmt.assemble(self.model, self.a_full, self.b, self.u)


def default_alpha(measure: ms.Measure, spikes) -> float:
    """Point of the support nearest to the first spike (nonzero for the positive carrier)."""
    supp = ms.support(measure)
    target = float(np.atleast_1d(spikes)[0]) if np.size(spikes) else supp.hi
    best = None
    for lo, hi in supp.intervals:
        c = min(max(target, lo), hi)
        if measure.carrier == ms.POSITIVE and c == 0:
            c = hi
        if best is None or abs(c - target) < abs(best - target):
            best = c
    return float(best)


def pencil_sample(spec: rmt.ModelSpec, eps_cut: float = 0.05, alpha: float | None = None, trial: int = 0, u: np.ndarray | None = None) -> PencilSample:
    """Sample X'_N for the additive or positive model; qualifying A-spikes are moved to the front.

    A precomputed Haar unitary ``u`` may be passed to share it between experiments.
    """
    if spec.model == rmt.MULT_UNITARY:
        raise PreconditionError("pencils are implemented for the real-line models")
    sched = spec.a_side
    if sched.gue_bulk:
        raise PreconditionError("pencil needs a diagonal A side")
    rng = rmt.make_rng(spec.seed, trial)
    a = rmt.build_spiked_diagonal(sched, spec.n).astype(float)
    k = sched.count(spec.n)
    d = np.atleast_1d(ms.support(sched.base_measure).distance(a[:k])) if k else np.zeros(0)
    front = [i for i in range(k) if d[i] > eps_cut]
    order = front + [i for i in range(spec.n) if i not in set(front)]
    a = a[order]
    p = len(front)
    spikes = a[:p].copy()
    if alpha is None:
        alpha = default_alpha(sched.base_measure, spikes)
    if spec.model == rmt.MULT_POSITIVE and alpha == 0:
        raise PreconditionError("alpha must be nonzero for the multiplicative pencil")
    a_prime = a.copy()
    a_prime[:p] = alpha
    b = rmt.side_matrix(spec.b_side, spec.n, rng)
    if u is None:
        u = rmt.sample_haar_unitary(spec.n, rng)
    elif u.shape != (spec.n, spec.n):
        raise PreconditionError("unitary has the wrong size")
    xp = rmt.assemble(spec.model, a_prime, b, u)
    return PencilSample(spec.model, xp, spikes, float(alpha), a, b, u)


def finite_pencil(sample: PencilSample, z: complex) -> np.ndarray:
    """F_N(z): I - P(z - X')^{-1}P* Theta (additive) or (I - Theta) P z(z - X')^{-1} P* + Theta."""
    p = sample.p
    block = rmt.projected_resolvent(sample.model, sample.x_prime, z, p)
    if sample.model == rmt.ADDITIVE:
        theta = np.diag(sample.spikes - sample.alpha)
        return np.eye(p) - block @ theta
    theta = np.diag(sample.spikes / sample.alpha)
    return (np.eye(p) - theta) @ block + theta


def finite_pencil_additive(spec: rmt.ModelSpec, z: complex, eps_cut: float = 0.05, alpha: float | None = None, trial: int = 0) -> np.ndarray:
    return finite_pencil(pencil_sample(spec, eps_cut, alpha, trial), z)


def pencil_limit(sp: fc.SubordinationPair, spikes, alpha: float, z: complex) -> np.ndarray:
    """Deterministic diagonal limit of F_N(z)."""
    spikes = np.asarray(spikes, dtype=float)
    if sp.conv_type == fc.ADDITIVE:
        w = complex(fc.omega1(sp, z))
        return np.diag(1.0 - (spikes - alpha) / (w - alpha))
    w = complex(fc.omega1(sp, 1.0 / complex(z)))
    return np.diag((1.0 - spikes / alpha) / (1.0 - alpha * w) + spikes / alpha)


def pencil_limit_additive(sp: fc.SubordinationPair, spikes, alpha: float, z: complex) -> np.ndarray:
    return pencil_limit(sp, spikes, alpha, z)


def pencil_distance(spec: rmt.ModelSpec, sp: fc.SubordinationPair, z: complex, trials: int, eps_cut: float = 0.05, alpha: float | None = None) -> float:
    """Mean operator-norm distance between F_N(z) and its limit over ``trials`` samples."""
    limit = None
    total = 0.0
    for t in range(trials):
        s = pencil_sample(spec, eps_cut, alpha, t)
        if limit is None:
            limit = pencil_limit(sp, s.spikes, s.alpha, z)
        total += operator_norm(finite_pencil(s, z) - limit)
    return total / trials


def pencil_determinant(sample: PencilSample, x: float) -> float:
    """det F_N(x) at real x; real because the projected resolvent is Hermitian there."""
    return float(np.real(np.linalg.det(finite_pencil(sample, x))))


def pencil_zeros(sample: PencilSample, lo: float, hi: float, points: int = 2000, tol: float = 1e-12) -> np.ndarray:
    """Real zeros of det F_N on [lo, hi] (an interval free of eigenvalues of X'), by bisection."""
    xs = np.linspace(lo, hi, points)
    vals = np.array([pencil_determinant(sample, x) for x in xs])
    roots = []
    for i in np.flatnonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) <= 0):
        a, b, fa = xs[i], xs[i + 1], vals[i]
        if fa == 0:
            roots.append(a)
            continue
        while b - a > tol * max(1.0, abs(a)):
            m = 0.5 * (a + b)
            fm = pencil_determinant(sample, m)
            if np.sign(fm) == np.sign(fa):
                a, fa = m, fm
            else:
                b = m
        roots.append(0.5 * (a + b))
    return np.unique(np.round(np.asarray(roots), 12))


# ---------------------------------------------------------------------------
# inclusion experiment


def perturbed_diagonal(measure: ms.Measure, n: int, eps: float, rng: np.random.Generator, edge_fraction: float = 0.05) -> np.ndarray:
    """Quantile diagonal pushed up to (but not beyond) eps away from the support.

    Every entry moves by a uniform amount in (-eps, eps) and a fraction of
    entries is placed at distance 0.99*eps outside the support edges.
    """
    q = measure.quantile((np.arange(1, n + 1) - 0.5) / n)
    d = q + rng.uniform(-eps, eps, size=n) * 0.99
    supp = ms.support(measure)
    m = max(1, int(edge_fraction * n))
    idx = rng.choice(n, size=m, replace=False)
    d[idx[: m // 2]] = supp.lo - 0.99 * eps
    d[idx[m // 2 :]] = supp.hi + 0.99 * eps
    if measure.carrier == ms.POSITIVE:
        d = np.maximum(d, 0.0)
    return d


def inclusion_trial(sp: fc.SubordinationPair, eps: float, n: int, rng: np.random.Generator, eta: float = 0.1, K: SupportSet | None = None) -> tuple[float, bool]:
    """Sample A + U B U* with sigma(A), sigma(B) inside the eps-fattened supports.

    Returns (largest distance of an eigenvalue to K, inclusion in K_{2 eps + eta}).
    """
    K = sp.support if K is None else K
    a = perturbed_diagonal(sp.mu, n, eps, rng)
    b = perturbed_diagonal(sp.nu, n, eps, rng)
    u = rmt.sample_haar_unitary(n, rng)
    ev = rmt.spectrum(rmt.ADDITIVE, rmt.assemble(rmt.ADDITIVE, a, b, u))
    dist = float(np.max(K.distance(ev)))
    return dist, dist < 2 * eps + eta


# ---------------------------------------------------------------------------
# histograms


def histogram(eigs, bin_width: float) -> list[tuple[float, int]]:
    """Fixed-width bins centred at min(eigs) + k * bin_width, covering the data range."""
    if not bin_width > 0:
        raise PreconditionError("bin_width must be positive")
    e = np.asarray(eigs, dtype=float)
    if e.size == 0:
        return []
    lo = float(e.min())
    idx = np.floor((e - lo) / bin_width + 0.5).astype(int)
    counts = np.bincount(idx)
    return [(lo + k * bin_width, int(c)) for k, c in enumerate(counts)]


def histogram_csv(hist: Sequence[tuple[float, int]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin_center", "count"])
    for c, k in hist:
        w.writerow([repr(float(c)), k])
    return buf.getvalue()
