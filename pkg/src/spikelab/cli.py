"""Command-line front end: predict, simulate, verify and sweep from a JSON config.

Config schema (all keys except ``measures``, ``a_side`` and ``b_side`` optional)::

    {
      "model": "additive" | "multiplicative_positive" | "multiplicative_unitary",
      "measures": {"mu": <measure>, "nu": <measure>},
      "a_side": {"measure": "mu", "spikes": [-5, 6], "growth": "all", "gue_bulk": false},
      "b_side": {"measure": "nu", "spikes": "2 + 10/k for k = 1..100"},
      "n": [1000, 2000],
      "trials": 20,
      "seed": 42,
      "tolerances": {"eps_cut": 0.05, "window": 0.3, "pass_level": 0.9,
                     "grid_step": 1e-3, "im_offset": 1e-4, "threshold": 1e-3,
                     "bin_width": 0.1},
      "output_dir": "out"
    }

A measure is {"kind": "atomic", "carrier": "real", "atoms": [[loc, weight], ...]},
{"kind": "semicircle", "center": c, "radius": r} or {"kind": "empirical",
"samples": [...]}. Circle locations and spikes are arguments in radians.
Spike lists are explicit numbers or the affine family "a + b/k for k = m..M".

Exit codes: 0 pass, 1 verification failure, 2 config error, 3 solver error,
4 numerical error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

from . import analysis as an
from . import freeconv as fc
from . import rmt
from .errors import BoundaryExtensionError, ConfigError, DomainError, IterationError, NumericalError, PoleError, PreconditionError
from .measures import Measure
from .outliers import Growth, OutlierPrediction, SpikeSchedule, affine_spikes, predict_outliers

log = logging.getLogger("spikelab")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_SOLVER, EXIT_NUMERICAL = 0, 1, 2, 3, 4

_NUM = r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?"
_AFFINE = re.compile(
    rf"^\s*(?:(?P<a>{_NUM})\s*(?:(?P<sign>[+-])\s*(?P<b>{_NUM})\s*/\s*k)?|(?P<b0>{_NUM})\s*/\s*k)"
    rf"\s+for\s+k\s*=\s*(?P<k0>\d+)\s*\.\.\s*(?P<k1>\d+)\s*$"
)


def expand_spikes(spec) -> tuple[float, ...]:
    """Explicit list, or the affine-in-1/k family "a + b/k for k = m..M"."""
    if isinstance(spec, str):
        m = _AFFINE.match(spec)
        if not m:
            raise ConfigError(f"spike expression {spec!r} is not of the form 'a + b/k for k = m..M'")
        k0, k1 = int(m["k0"]), int(m["k1"])
        if k0 < 1 or k1 < k0:
            raise ConfigError(f"bad index range in {spec!r}")
        if m["b0"] is not None:
            a, b = 0.0, float(m["b0"])
        else:
            a = float(m["a"])
            b = 0.0 if m["b"] is None else float(m["b"]) * (-1 if m["sign"] == "-" else 1)
        return affine_spikes(a, b, k0, k1)
    if isinstance(spec, (list, tuple)) and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in spec):
        return tuple(float(x) for x in spec)
    raise ConfigError("spikes must be a list of numbers or an affine expression string")


@dataclass(frozen=True)
class SideConfig:
    measure: str
    spikes: tuple[float, ...] | str = ()
    growth: Growth = field(default_factory=Growth)
    gue_bulk: bool = False

    def to_dict(self) -> dict:
        spikes = self.spikes if isinstance(self.spikes, str) else list(self.spikes)
        return {"measure": self.measure, "spikes": spikes, "growth": self.growth.to_dict(), "gue_bulk": self.gue_bulk}

    @classmethod
    def from_dict(cls, d) -> "SideConfig":
        if not isinstance(d, dict) or "measure" not in d:
            raise ConfigError("each side needs a 'measure' name")
        unknown = set(d) - {"measure", "spikes", "growth", "gue_bulk"}
        if unknown:
            raise ConfigError(f"unknown side keys {sorted(unknown)}")
        spikes = d.get("spikes", [])
        expand_spikes(spikes)
        spikes = spikes if isinstance(spikes, str) else tuple(float(x) for x in spikes)
        try:
            growth = Growth.from_dict(d.get("growth", "all"))
        except (PreconditionError, AttributeError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad growth rule: {exc}") from exc
        return cls(str(d["measure"]), spikes, growth, bool(d.get("gue_bulk", False)))


@dataclass(frozen=True)
class Tolerances:
    eps_cut: float = 0.05
    window: float = an.DEFAULT_WINDOW
    pass_level: float = an.DEFAULT_PASS_LEVEL
    grid_step: float = fc.DEFAULT_GRID_STEP
    im_offset: float = fc.DEFAULT_IM_OFFSET
    threshold: float = fc.DEFAULT_THRESHOLD
    bin_width: float = 0.1

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d) -> "Tolerances":
        if not isinstance(d, dict):
            raise ConfigError("tolerances must be an object")
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown tolerance keys {sorted(unknown)}")
        try:
            t = cls(**{k: float(v) for k, v in d.items()})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad tolerance value: {exc}") from exc
        for k, v in t.to_dict().items():
            if not v > 0:
                raise ConfigError(f"tolerance {k} must be positive")
        if t.pass_level > 1:
            raise ConfigError("pass_level must lie in (0, 1]")
        return t


@dataclass(frozen=True)
class ExperimentConfig:
    model: str
    measures: dict
    a_side: SideConfig
    b_side: SideConfig
    n_values: tuple[int, ...] = (1000,)
    trials: int = 1
    seed: int = 0
    tolerances: Tolerances = field(default_factory=Tolerances)
    output_dir: str | None = None

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "measures": {k: m.to_dict() for k, m in self.measures.items()},
            "a_side": self.a_side.to_dict(),
            "b_side": self.b_side.to_dict(),
            "n": list(self.n_values),
            "trials": self.trials,
            "seed": self.seed,
            "tolerances": self.tolerances.to_dict(),
            "output_dir": self.output_dir,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(d) - {"model", "measures", "a_side", "b_side", "n", "trials", "seed", "tolerances", "output_dir"}
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        for key in ("measures", "a_side", "b_side"):
            if key not in d:
                raise ConfigError(f"missing required key {key!r}")
        model = d.get("model", rmt.ADDITIVE)
        if model not in rmt.MODELS:
            raise ConfigError(f"unknown model {model!r}; expected one of {rmt.MODELS}")
        if not isinstance(d["measures"], dict) or not d["measures"]:
            raise ConfigError("measures must be a non-empty object")
        measures = {}
        for name, md in d["measures"].items():
            try:
                measures[name] = Measure.from_dict(md)
            except (PreconditionError, DomainError, AttributeError, TypeError, ValueError) as exc:
                raise ConfigError(f"measure {name!r}: {exc}") from exc
        sides = [SideConfig.from_dict(d[k]) for k in ("a_side", "b_side")]
        for s in sides:
            if s.measure not in measures:
                raise ConfigError(f"side references undeclared measure {s.measure!r}")
        ns = d.get("n", [1000])
        ns = [ns] if isinstance(ns, int) else ns
        if not isinstance(ns, list) or not ns or not all(isinstance(x, int) and not isinstance(x, bool) and x > 0 for x in ns):
            raise ConfigError("n must be a positive integer or a non-empty list of them")
        if any(b <= a for a, b in zip(ns, ns[1:])):
            raise ConfigError("n values must be strictly increasing")
        trials, seed = d.get("trials", 1), d.get("seed", 0)
        if not isinstance(trials, int) or isinstance(trials, bool) or trials < 1:
            raise ConfigError("trials must be a positive integer")
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        out = d.get("output_dir")
        if out is not None and not isinstance(out, str):
            raise ConfigError("output_dir must be a string")
        cfg = cls(model, measures, sides[0], sides[1], tuple(ns), trials, seed, Tolerances.from_dict(d.get("tolerances", {})), out)
        cfg.schedules()  # surface spike/measure mismatches as config errors
        for n in cfg.n_values:
            cfg.model_spec(n)
        return cfg

    def schedule(self, side: SideConfig) -> SpikeSchedule:
        try:
            return SpikeSchedule(expand_spikes(side.spikes), self.measures[side.measure], side.growth, side.gue_bulk)
        except PreconditionError as exc:
            raise ConfigError(f"side with measure {side.measure!r}: {exc}") from exc

    def schedules(self) -> tuple[SpikeSchedule, SpikeSchedule]:
        return self.schedule(self.a_side), self.schedule(self.b_side)

    def model_spec(self, n: int) -> rmt.ModelSpec:
        a, b = self.schedules()
        try:
            return rmt.ModelSpec(self.model, a, b, n, self.seed)
        except PreconditionError as exc:
            raise ConfigError(str(exc)) from exc

    def pair(self) -> fc.SubordinationPair:
        try:
            return fc.SubordinationPair(self.model, self.measures[self.a_side.measure], self.measures[self.b_side.measure])
        except PreconditionError as exc:
            raise ConfigError(str(exc)) from exc


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    return ExperimentConfig.from_dict(raw)


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(path))


# ---------------------------------------------------------------------------
# experiment steps


def _support(cfg: ExperimentConfig, sp: fc.SubordinationPair):
    t = cfg.tolerances
    return fc.convolution_support(sp, grid_step=t.grid_step, im_offset=t.im_offset, threshold=t.threshold)


def predictions_for(cfg: ExperimentConfig, n: int | None = None):
    """(pair, K, predictions) with only the first phi(n) spikes when ``n`` is given."""
    sp = cfg.pair()
    K = _support(cfg, sp)
    a, b = cfg.schedules()
    preds = predict_outliers(a, b, sp, cfg.tolerances.eps_cut, K=K, n=n)
    return sp, K, preds


def _window(cfg: ExperimentConfig, preds: Sequence[OutlierPrediction]) -> float:
    return min([cfg.tolerances.window] + [p.window for p in preds])


def simulate(cfg: ExperimentConfig, n: int) -> list[rmt.SimulationRun]:
    return rmt.run_trials(cfg.model_spec(n), cfg.trials)


def verify_at(cfg: ExperimentConfig, n: int, runs: Sequence[rmt.SimulationRun] | None = None) -> an.VerificationReport:
    _, K, preds = predictions_for(cfg, n)
    runs = simulate(cfg, n) if runs is None else runs
    eps = _window(cfg, preds)
    reports = [an.verify_run(r, preds, K, eps) for r in runs]
    return an.aggregate_reports(reports, cfg.tolerances.pass_level)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def write_runs(out: Path, runs: Sequence[rmt.SimulationRun], bin_width: float) -> list[Path]:
    written = []
    for r in runs:
        stem = f"N{r.model_spec.n}_trial{r.trial:03d}"
        p = out / f"eigenvalues_{stem}.csv"
        _write(p, r.to_csv())
        h = out / f"histogram_{stem}.csv"
        _write(h, an.histogram_csv(an.histogram(r.values(), bin_width)))
        written += [p, h]
    return written


# ---------------------------------------------------------------------------
# subcommands


def cmd_predict(cfg: ExperimentConfig, out: Path | None) -> int:
    n = cfg.n_values[-1]
    _, K, preds = predictions_for(cfg, n)
    doc = {"n": n, "support": K.to_list(), "outliers": [p.to_dict() for p in preds]}
    text = json.dumps(doc, indent=2)
    print(text)
    if out is not None:
        _write(out / "predictions.json", text + "\n")
    return EXIT_OK


def cmd_simulate(cfg: ExperimentConfig, out: Path | None) -> int:
    out = out or Path(".")
    for n in cfg.n_values:
        runs = simulate(cfg, n)
        files = write_runs(out, runs, cfg.tolerances.bin_width)
        log.info("N=%d: wrote %d files to %s", n, len(files), out)
    return EXIT_OK


def cmd_verify(cfg: ExperimentConfig, out: Path | None) -> int:
    n = cfg.n_values[-1]
    report = verify_at(cfg, n)
    text = report.to_json()
    print(text)
    if out is not None:
        _write(out / "verification.json", text + "\n")
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_sweep(cfg: ExperimentConfig, out: Path | None) -> int:
    summary = []
    ok = True
    for n in cfg.n_values:
        runs = simulate(cfg, n)
        if out is not None:
            write_runs(out, runs, cfg.tolerances.bin_width)
        report = verify_at(cfg, n, runs)
        ok &= report.passed
        summary.append(report.to_dict())
        log.info("N=%d: %s", n, "pass" if report.passed else "fail")
    text = json.dumps({"reports": summary, "pass": ok}, indent=2)
    print(text)
    if out is not None:
        _write(out / "sweep.json", text + "\n")
    return EXIT_OK if ok else EXIT_FAIL


COMMANDS = {"predict": cmd_predict, "simulate": cmd_simulate, "verify": cmd_verify, "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spikelab", description="Outlier prediction and verification for spiked random matrix models.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="JSON experiment config")
    p.add_argument("--out", help="output directory (overrides output_dir; created if missing)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--trials", type=int, help="override the number of trials")
    p.add_argument("--quiet", action="store_true", help="suppress progress messages")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be non-negative")
            cfg = replace(cfg, seed=args.seed)
        if args.trials is not None:
            if args.trials < 1:
                raise ConfigError("--trials must be positive")
            cfg = replace(cfg, trials=args.trials)
        out = args.out or cfg.output_dir
        out = Path(out) if out else None
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IterationError, BoundaryExtensionError, DomainError, PoleError, PreconditionError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
