"""Finite-N simulation of the three spiked deformed models.

    additive                 X = A + U B U*
    multiplicative_positive  X = A^{1/2} U B U* A^{1/2}
    multiplicative_unitary   X = A U B U*

A and B are diagonal: the first phi(N) entries are the spikes, the rest are
deterministic quantiles of the base measure (or a GUE block on request).
U is Haar distributed on U(N).
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import measures as ms
from .errors import NumericalError, PreconditionError
from .outliers import SpikeSchedule

ADDITIVE = "additive"
MULT_POSITIVE = "multiplicative_positive"
MULT_UNITARY = "multiplicative_unitary"
MODELS = (ADDITIVE, MULT_POSITIVE, MULT_UNITARY)

_CARRIERS = {ADDITIVE: (ms.REAL, ms.POSITIVE), MULT_POSITIVE: (ms.POSITIVE,), MULT_UNITARY: (ms.CIRCLE,)}


def make_rng(seed: int, trial: int = 0) -> np.random.Generator:
    """Counter-based stream keyed by (seed, trial)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed) & (2**64 - 1), int(trial)])))


def thread_count(default: int | None = None) -> int:
    env = os.environ.get("SPIKELAB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return default or (os.cpu_count() or 1)


def sample_haar_unitary(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar unitary via QR of a complex Ginibre matrix with the phase fix on R's diagonal."""
    if n < 1:
        raise PreconditionError("n must be positive")
    z = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / math.sqrt(2.0)
    q, r = np.linalg.qr(z)
    d = np.diagonal(r)
    q *= d / np.abs(d)
    return q


def sample_gue_bulk(n: int, rng: np.random.Generator) -> np.ndarray:
    """GUE matrix normalized so that entries have variance 1/n (spectrum -> semicircle on [-2, 2])."""
    if n < 1:
        raise PreconditionError("n must be positive")
    x = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / math.sqrt(2.0)
    h = (x + x.conj().T) / math.sqrt(2.0)
    return h / math.sqrt(n)


def build_spiked_diagonal(sched: SpikeSchedule, n: int) -> np.ndarray:
    """Diagonal entries: phi(n) spikes followed by the (i - 1/2)/(n - phi(n)) quantiles of the base.

    Circle entries come back as unit complex numbers.
    """
    k = sched.count(n)
    if k > n:
        raise PreconditionError("more spikes than matrix size")
    m = n - k
    bulk = sched.base_measure.quantile((np.arange(1, m + 1) - 0.5) / m) if m else np.zeros(0)
    diag = np.concatenate([np.asarray(sched.spikes[:k], dtype=float), bulk])
    if sched.base_measure.carrier == ms.CIRCLE:
        return np.exp(1j * diag)
    return diag


def spiked_from_diagonal(d: np.ndarray, spikes, phi: int) -> np.ndarray:
    """Diag(theta_1..theta_phi, d_1..d_{N-phi}): spikes replace the tail of an existing diagonal."""
    d = np.asarray(d)
    if phi > d.size:
        raise PreconditionError("more spikes than matrix size")
    return np.concatenate([np.asarray(list(spikes)[:phi], dtype=d.dtype), d[: d.size - phi]])


def side_matrix(sched: SpikeSchedule, n: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """Vector of diagonal entries, or a full Hermitian matrix when the bulk is GUE-sampled."""
    if not sched.gue_bulk:
        return build_spiked_diagonal(sched, n)
    if rng is None:
        raise PreconditionError("GUE bulk needs a random generator")
    k = sched.count(n)
    base = sched.base_measure
    out = np.zeros((n, n), dtype=complex)
    out[np.arange(k), np.arange(k)] = sched.spikes[:k]
    if n > k:
        w = sample_gue_bulk(n - k, rng)
        out[k:, k:] = base.center * np.eye(n - k) + (base.radius / 2.0) * w
    return out


@dataclass(frozen=True)
class ModelSpec:
    model: str
    a_side: SpikeSchedule
    b_side: SpikeSchedule
    n: int
    seed: int = 0

    def __post_init__(self):
        if self.model not in MODELS:
            raise PreconditionError(f"unknown model {self.model!r}")
        if self.n < 1:
            raise PreconditionError("n must be positive")
        for s in (self.a_side, self.b_side):
            if s.base_measure.carrier not in _CARRIERS[self.model]:
                raise PreconditionError(f"{self.model} model cannot use a {s.base_measure.carrier} base measure")
            if s.count(self.n) > self.n:
                raise PreconditionError("phi(n) exceeds n")
        if self.model != ADDITIVE and (self.a_side.gue_bulk or self.b_side.gue_bulk):
            raise PreconditionError("GUE bulk is only meaningful for the additive model")

    def with_n(self, n: int) -> "ModelSpec":
        return ModelSpec(self.model, self.a_side, self.b_side, n, self.seed)

    def to_dict(self) -> dict:
        return {"model": self.model, "a_side": self.a_side.to_dict(), "b_side": self.b_side.to_dict(), "n": self.n, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(d["model"], SpikeSchedule.from_dict(d["a_side"]), SpikeSchedule.from_dict(d["b_side"]), int(d["n"]), int(d.get("seed", 0)))


@dataclass(frozen=True)
class SimulationRun:
    """Sorted spectrum of one sample (arguments in [0, 2*pi) order for the unitary model)."""

    eigenvalues: np.ndarray
    model_spec: ModelSpec
    wall_time: float
    trial: int = 0
    extra: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def unitary(self) -> bool:
        return self.model_spec.model == MULT_UNITARY

    def values(self) -> np.ndarray:
        """Real eigenvalues, or arguments in [0, 2*pi) for the unitary model."""
        if self.unitary:
            return np.mod(np.angle(self.eigenvalues), 2 * math.pi)
        return np.asarray(self.eigenvalues, dtype=float)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["eigenvalue"])
        for v in self.values():
            w.writerow([repr(float(v))])
        return buf.getvalue()

    def to_json(self) -> str:
        d = {"model_spec": self.model_spec.to_dict(), "trial": self.trial, "wall_time": self.wall_time}
        if self.unitary:
            d["eigenvalues"] = [[float(z.real), float(z.imag)] for z in self.eigenvalues]
            d["arguments"] = self.values().tolist()
        else:
            d["eigenvalues"] = self.values().tolist()
        return json.dumps(d)


def _conjugated(b: np.ndarray, u: np.ndarray) -> np.ndarray:
    """U B U* for B given as a diagonal vector or a full matrix."""
    if b.ndim == 1:
        return (u * b) @ u.conj().T
    return u @ b @ u.conj().T


def assemble(model: str, a: np.ndarray, b: np.ndarray, u: np.ndarray) -> np.ndarray:
    """The model matrix from A, B (diagonal vectors or full matrices) and U."""
    ubu = _conjugated(b, u)
    if model == ADDITIVE:
        x = ubu + (np.diag(a) if a.ndim == 1 else a)
    elif model == MULT_POSITIVE:
        if a.ndim != 1:
            raise PreconditionError("positive model needs a diagonal A")
        s = np.sqrt(np.asarray(a, dtype=float))
        x = s[:, None] * ubu * s[None, :]
    elif a.ndim == 1:
        x = a[:, None] * ubu
    else:
        x = a @ ubu
    return x


def spectrum(model: str, x: np.ndarray) -> np.ndarray:
    try:
        if model == MULT_UNITARY:
            ev = np.linalg.eigvals(x)
            mod = np.abs(ev)
            if np.max(np.abs(mod - 1.0)) > 1e-9:
                raise NumericalError(f"unitary model eigenvalue off the circle by {np.max(np.abs(mod - 1.0)):.2e}")
            return ev[np.argsort(np.mod(np.angle(ev), 2 * math.pi))]
        h = 0.5 * (x + x.conj().T)
        return np.linalg.eigvalsh(h)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigensolver failed: {exc}") from exc


def sample_model_matrix(spec: ModelSpec, rng: np.random.Generator) -> np.ndarray:
    a = side_matrix(spec.a_side, spec.n, rng)
    b = side_matrix(spec.b_side, spec.n, rng)
    u = sample_haar_unitary(spec.n, rng)
    return assemble(spec.model, a, b, u)


def run_model(spec: ModelSpec, trial: int = 0) -> SimulationRun:
    """Sample one matrix (stream keyed by spec.seed and ``trial``) and return its spectrum."""
    t0 = time.perf_counter()
    rng = make_rng(spec.seed, trial)
    x = sample_model_matrix(spec, rng)
    ev = spectrum(spec.model, x)
    return SimulationRun(ev, spec, time.perf_counter() - t0, trial)


def run_trials(spec: ModelSpec, trials: int, workers: int | None = None) -> list[SimulationRun]:
    workers = min(trials, thread_count(workers)) if trials else 1
    if workers <= 1:
        return [run_model(spec, t) for t in range(trials)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda t: run_model(spec, t), range(trials)))


def projected_resolvent(model: str, x: np.ndarray, z: complex, p: int) -> np.ndarray:
    """Top-left p x p block of (z - X)^{-1}, times z for the multiplicative models."""
    n = x.shape[0]
    rhs = np.zeros((n, p), dtype=complex)
    rhs[np.arange(p), np.arange(p)] = 1.0
    try:
        y = np.linalg.solve(z * np.eye(n) - x, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"resolvent solve failed at z={z}: {exc}") from exc
    block = y[:p, :]
    return z * block if model != ADDITIVE else block


def expected_projected_resolvent(spec: ModelSpec, z: complex, p: int, trials: int, first_trial: int = 0) -> np.ndarray:
    """Monte Carlo mean over fresh unitaries of the projected resolvent block."""
    if p > spec.n:
        raise PreconditionError("p must not exceed n")
    if spec.model != MULT_UNITARY and complex(z).imag == 0:
        raise PreconditionError("z must be off the real axis")
    acc = np.zeros((p, p), dtype=complex)
    for t in range(first_trial, first_trial + trials):
        x = sample_model_matrix(spec, make_rng(spec.seed, t))
        acc += projected_resolvent(spec.model, x, z, p)
    return acc / trials
