"""Command-line front end: every experiment as a subcommand.

Settings are layered as built-in defaults, then an optional ``--config`` JSON
file, then explicit flags.  Each run prints a JSON report on stdout and, with
``--out DIR``, also writes its CSV/JSON artefacts there.  Reports contain no
wall-clock data unless ``--timing`` is given, so reruns are byte-identical.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import sys
import time
from pathlib import Path
from typing import Callable, Literal, get_args

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from . import __version__
from .heads import HEAD_VARIANTS
from .monofn import PLIF, from_dict, plif_error_bound, plif_fit_function
from .numkit import make_rng, parallel_map, softplus
from .ranklab import (
    ConstructionInapplicable,
    RankTrialSpec,
    SurrogateNotFound,
    indicator_construct,
    monotone_surrogate,
    power_rank_trials,
    search_rank_raising_pairs,
    square_fullrank_trials,
)
from .synth import SyntheticTaskSpec, build_task
from .theory import (
    ConvergenceError,
    InfimumNotAttained,
    MseFitConfig,
    PrimalInfeasible,
    duality_sweep,
    eckart_young_bound,
    log_prob_targets,
    mse_rank_fit,
    truncated_svd_residual,
)
from .trainer import OPTIMIZERS, HeadSpec, TrainConfig, TrainingDiverged, fit_task

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

NUMERICAL_ERRORS = (
    TrainingDiverged,
    SurrogateNotFound,
    ConvergenceError,
    InfimumNotAttained,
    PrimalInfeasible,
    FloatingPointError,
    np.linalg.LinAlgError,
)

HeadName = Literal["linear", "sigsoftmax", "lms-mlp", "lms-plif", "mos"]
assert set(get_args(HeadName)) == set(HEAD_VARIANTS)


class ConfigError(ValueError):
    pass


class NumericalFailure(RuntimeError):
    """A run finished but some part of it failed numerically; report already emitted."""


# ---------------------------------------------------------------- run configs


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    out: str | None = None
    timing: bool = False


class TrainFields(RunConfig):
    contexts: int = Field(2000, ge=1)
    steps: int = Field(3000, ge=1)
    lr: float = Field(1e-2, gt=0)
    optimizer: Literal["adam", "sgd", "momentum"] = "adam"
    batch: int = Field(0, ge=0)
    init_scale: float = Field(0.1, gt=0)
    hidden: int = Field(32, ge=1)
    knots: int = Field(1000, ge=1)
    plif_range: float = Field(10.0, gt=0)
    mix: int = Field(3, ge=1)


class SynthConfig(TrainFields):
    alpha: float = Field(0.1, gt=0)
    vocab: int = Field(100, ge=2)
    dim: int = Field(5, ge=1)
    head: HeadName = "linear"
    seed: int = Field(0, ge=0)


class SweepConfig(TrainFields):
    alphas: list[float] = [0.1]
    vocabs: list[int] = [100]
    dims: list[int] = [5, 10]
    heads: list[HeadName] = ["linear", "lms-plif"]
    seeds: list[int] = [0, 1, 2]

    @field_validator("alphas", "vocabs", "dims", "heads", "seeds")
    @classmethod
    def _non_empty(cls, v):
        if not v:
            raise ValueError("list must not be empty")
        return v


class PowerConfig(RunConfig):
    n: int = Field(10, ge=1)
    m: int = Field(12, ge=1)
    d: int = Field(2, ge=1)
    p: int = Field(2, ge=1)
    trials: int = Field(200, ge=1)
    seed: int = Field(0, ge=0)


class SquareConfig(RunConfig):
    n: int = Field(5, ge=2)
    trials: int = Field(500, ge=1)
    seed: int = Field(0, ge=0)


class IndicatorConfig(RunConfig):
    instances: int = Field(50, ge=1)
    min_vocab: int = Field(4, ge=1)
    max_vocab: int = Field(8, ge=1)
    dim: int = Field(2, ge=1)
    rel_gap: float = Field(1e-9, ge=0)
    seed: int = Field(0, ge=0)


class SurrogateConfig(RunConfig):
    pairs: int = Field(20, ge=1)
    budget: int = Field(10_000, ge=1)
    seed: int = Field(0, ge=0)


class MaxentConfig(RunConfig):
    vocab: int = Field(8, ge=2)
    dim: int = Field(3, ge=0)
    instances: int = Field(50, ge=1)
    tol: float = Field(1e-8, gt=0)
    seed: int = Field(0, ge=0)


class EckartYoungConfig(RunConfig):
    vocab: int = Field(20, ge=2)
    contexts: int = Field(30, ge=1)
    dim: int = Field(3, ge=0)
    instances: int = Field(50, ge=1)
    alpha: float = Field(1.0, gt=0)
    restarts: int = Field(3, ge=1)
    max_iter: int = Field(20_000, ge=1)
    partition: Literal["free", "tied"] = "free"
    seed: int = Field(0, ge=0)


PLIF_TARGETS: dict[str, tuple[Callable[[np.ndarray], np.ndarray], float]] = {
    # name -> (function, bound on |h'|)
    "tanh-plus-linear": (lambda x: np.tanh(x) + 0.1 * x, 1.1),
    "sigsoftmax": (lambda x: 2.0 * x - softplus(x), 2.0),
    "softplus": (softplus, 1.0),
    "arctan": (np.arctan, 1.0),
}


class PlifApproxConfig(RunConfig):
    target: Literal["tanh-plus-linear", "sigsoftmax", "softplus", "arctan"] = "tanh-plus-linear"
    range: float = Field(5.0, gt=0)
    knots: int = Field(1000, ge=1)
    grid: int = Field(200_001, ge=2)


class PlifDumpConfig(RunConfig):
    plif: str | None = None
    identity_range: float = Field(10.0, gt=0)
    identity_knots: int = Field(1000, ge=1)
    points: int = Field(1001, ge=2)
    lo: float | None = None
    hi: float | None = None


# ---------------------------------------------------------------- helpers


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _csv_text(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


class Emitter:
    """Collects artefacts and writes them once the run is complete."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.files: dict[str, str] = {}
        self.phases: dict[str, float] = {}

    def add_csv(self, name: str, header: list[str], rows: list[list]) -> None:
        self.files[name] = _csv_text(header, rows)

    def add_json(self, name: str, obj) -> None:
        self.files[name] = _json_text(obj)

    def phase(self, name: str, seconds: float) -> None:
        self.phases[name] = seconds

    def report(self, command: str, metrics: dict, seed: int | None) -> dict:
        rep = {
            "command": command,
            "version": f"softmaxlab {__version__}",
            "config": self.cfg.model_dump(exclude={"out", "timing"}),
            "seed": seed,
            "metrics": metrics,
        }
        if self.cfg.timing:
            rep["wall_clock"] = self.phases
        return rep

    def flush(self, report: dict, stdout) -> None:
        self.add_json("report.json", report)
        if self.cfg.out is not None:
            out = Path(self.cfg.out)
            out.mkdir(parents=True, exist_ok=True)
            for name, text in self.files.items():
                (out / name).write_text(text, encoding="utf-8")
        stdout.write(_json_text(report))


class _Timer:
    def __init__(self, em: Emitter, name: str):
        self.em, self.name = em, name

    def __enter__(self):
        self.t0 = time.perf_counter()

    def __exit__(self, *exc):
        self.em.phase(self.name, time.perf_counter() - self.t0)


# ---------------------------------------------------------------- synth / sweep

SWEEP_HEADER = ["alpha", "M", "N", "D", "head", "hidden", "knots", "plif_range", "mix",
                "mean_kl", "mode_match", "final_ce", "seed", "runtime"]


def _train_one(cfg: TrainFields, alpha: float, M: int, D: int, head: str, seed: int):
    task = build_task(SyntheticTaskSpec(alpha=alpha, M=M, N=cfg.contexts, D=D, seed=seed))
    spec = HeadSpec(head, hidden=cfg.hidden, knots=cfg.knots, plif_range=cfg.plif_range, mix=cfg.mix)
    tcfg = TrainConfig(steps=cfg.steps, lr=cfg.lr, optimizer=cfg.optimizer, batch=cfg.batch,
                       init_scale=cfg.init_scale, seed=seed)
    t0 = time.perf_counter()
    fit = fit_task(task, spec, tcfg)
    runtime = time.perf_counter() - t0
    size = spec.size_params()
    row = [alpha, M, cfg.contexts, D, head, size.get("hidden"), size.get("knots"), size.get("plif_range"),
           size.get("mix"), fit.metrics.mean_kl, fit.metrics.mode_match, fit.metrics.final_ce, seed,
           runtime if cfg.timing else None]
    return row, fit


def run_synth(cfg: SynthConfig, stdout) -> int:
    em = Emitter(cfg)
    with _Timer(em, "train"):
        row, fit = _train_one(cfg, cfg.alpha, cfg.vocab, cfg.dim, cfg.head, cfg.seed)
    em.add_csv("sweep.csv", SWEEP_HEADER, [row])
    em.add_csv("losses.csv", ["step", "loss"], [[i, v] for i, v in enumerate(fit.metrics.losses)])
    em.add_json("head.json", fit.head.to_dict())
    em.add_json("metrics.json", fit.metrics.to_dict())
    em.flush(em.report("synth", fit.metrics.to_dict(), cfg.seed), stdout)
    return EXIT_OK


def run_sweep(cfg: SweepConfig, stdout) -> int:
    em = Emitter(cfg)
    grid = list(itertools.product(cfg.alphas, cfg.vocabs, cfg.dims, cfg.heads, cfg.seeds))
    with _Timer(em, "train"):
        rows = parallel_map(lambda g: _train_one(cfg, *g)[0], grid)
    em.add_csv("sweep.csv", SWEEP_HEADER, rows)
    runs = [dict(zip(SWEEP_HEADER, r)) for r in rows]
    for r in runs:
        if not cfg.timing:
            r.pop("runtime")
    em.flush(em.report("sweep", {"runs": runs}, None), stdout)
    return EXIT_OK


# ---------------------------------------------------------------- ranklab


def run_power(cfg: PowerConfig, stdout) -> int:
    em = Emitter(cfg)
    with _Timer(em, "trials"):
        rep = power_rank_trials(RankTrialSpec(N=cfg.n, M=cfg.m, d=cfg.d, p=cfg.p, trials=cfg.trials, seed=cfg.seed))
    em.add_csv("trials.csv", ["trial", "rank"], [[t, r] for t, r in enumerate(rep.ranks)])
    em.flush(em.report("ranklab power", rep.to_dict(), cfg.seed), stdout)
    return EXIT_OK


def run_square(cfg: SquareConfig, stdout) -> int:
    em = Emitter(cfg)
    with _Timer(em, "trials"):
        rep = square_fullrank_trials(cfg.n, cfg.trials, cfg.seed)
    em.add_csv("trials.csv", ["trial", "rank"], [[t, r] for t, r in enumerate(rep.ranks)])
    em.flush(em.report("ranklab square", rep.to_dict(), cfg.seed), stdout)
    return EXIT_OK


def run_indicator(cfg: IndicatorConfig, stdout) -> int:
    if cfg.min_vocab > cfg.max_vocab:
        raise ConfigError("min_vocab must not exceed max_vocab")
    em = Emitter(cfg)
    rows = []
    with _Timer(em, "instances"):
        for k in range(cfg.instances):
            rng = make_rng(cfg.seed, k)
            M = int(rng.integers(cfg.min_vocab, cfg.max_vocab + 1))
            W = rng.standard_normal((M, cfg.dim))
            H = rng.standard_normal((M + 2, cfg.dim))
            try:
                res = indicator_construct(W, H, range(M), cfg.rel_gap)
                rows.append([k, M, M + 2, True, res.rank, res.rank == M])
            except ConstructionInapplicable:
                rows.append([k, M, M + 2, False, None, None])
    applicable = [r for r in rows if r[3]]
    metrics = {
        "instances": cfg.instances,
        "applicable": len(applicable),
        "rank_equals_M": sum(bool(r[5]) for r in applicable),
    }
    em.add_csv("instances.csv", ["instance", "M", "N", "applicable", "rank", "rank_equals_M"], rows)
    em.flush(em.report("ranklab indicator", metrics, cfg.seed), stdout)
    return EXIT_OK


def run_surrogate(cfg: SurrogateConfig, stdout) -> int:
    em = Emitter(cfg)
    rows = []
    with _Timer(em, "search"):
        pairs = search_rank_raising_pairs(count=cfg.pairs, seed=cfg.seed)
        for k, pair in enumerate(pairs):
            try:
                res = monotone_surrogate(pair.A, pair.f, pair.K, seed=cfg.seed, budget=cfg.budget)
                rows.append([k, pair.A.shape[0], pair.base_rank, pair.K, True, res.draws, res.rank,
                             res.g.is_strictly_increasing()])
            except SurrogateNotFound:
                rows.append([k, pair.A.shape[0], pair.base_rank, pair.K, False, cfg.budget, None, None])
    found = [r for r in rows if r[4]]
    metrics = {
        "pairs": len(rows),
        "found": len(found),
        "all_verified": all(r[6] >= r[3] and r[7] for r in found),
        "max_draws": max((r[5] for r in found), default=None),
    }
    em.add_csv("pairs.csv", ["pair", "size", "rank_A", "K", "found", "draws", "rank_g", "increasing"], rows)
    em.flush(em.report("ranklab surrogate", metrics, cfg.seed), stdout)
    if len(found) < len(rows):
        raise NumericalFailure(f"surrogate not found for {len(rows) - len(found)} of {len(rows)} pairs")
    return EXIT_OK


# ---------------------------------------------------------------- theory


def run_maxent(cfg: MaxentConfig, stdout) -> int:
    em = Emitter(cfg)
    with _Timer(em, "solve"):
        reps = duality_sweep(cfg.vocab, cfg.dim, cfg.instances, cfg.seed, cfg.tol)
    rows = [[k, r.argmax_R.size, r.argmin_h.size, r.min_ce, r.max_ent, r.gap, r.entropy_p]
            for k, r in enumerate(reps)]
    em.add_csv("instances.csv", ["instance", "M", "d", "min_ce", "max_ent", "gap", "entropy_p"], rows)
    em.add_json("duality.json", [r.to_dict() for r in reps])
    metrics = {
        "instances": len(reps),
        "max_gap": max(r.gap for r in reps),
        "gibbs_holds": all(r.min_ce >= r.entropy_p - 1e-9 for r in reps),
    }
    em.flush(em.report("theory maxent", metrics, cfg.seed), stdout)
    return EXIT_OK


def run_eckart_young(cfg: EckartYoungConfig, stdout) -> int:
    em = Emitter(cfg)
    rows = []
    with _Timer(em, "fit"):
        for k in range(cfg.instances):
            A = log_prob_targets(cfg.vocab, cfg.contexts, make_rng(cfg.seed, k), cfg.alpha)
            fit = mse_rank_fit(A, cfg.dim, MseFitConfig(restarts=cfg.restarts, max_iter=cfg.max_iter,
                                                         seed=cfg.seed, partition=cfg.partition))
            bound = eckart_young_bound(A, cfg.dim)
            svd = truncated_svd_residual(A, cfg.dim + 1)
            rows.append([k, bound, svd, fit.error, fit.error / svd if svd > 0 else None])
    em.add_csv("instances.csv", ["instance", "bound", "svd_residual", "fit_error", "ratio"], rows)
    ratios = [r[4] for r in rows if r[4] is not None]
    metrics = {
        "instances": len(rows),
        "bound_violations": sum(r[3] < r[1] - 1e-6 for r in rows),
        "max_ratio": max(ratios) if ratios else None,
    }
    em.flush(em.report("theory eckart-young", metrics, cfg.seed), stdout)
    return EXIT_OK


# ---------------------------------------------------------------- PLIF


def run_plif_approx(cfg: PlifApproxConfig, stdout) -> int:
    em = Emitter(cfg)
    h, R = PLIF_TARGETS[cfg.target]
    with _Timer(em, "fit"):
        fn = plif_fit_function(h, cfg.range, cfg.knots)
        x = np.linspace(-cfg.range, cfg.range, cfg.grid)
        err = float(np.max(np.abs(fn(x) - h(x))))
    bound = plif_error_bound(R, cfg.range, cfg.knots)
    em.add_json("plif.json", fn.to_dict())
    metrics = {"max_error": err, "bound": bound, "within_bound": err <= bound, "derivative_bound": R}
    em.flush(em.report("plif-approx", metrics, None), stdout)
    return EXIT_OK


def run_plif_dump(cfg: PlifDumpConfig, stdout) -> int:
    if cfg.plif is None:
        fn = PLIF.identity(cfg.identity_range, cfg.identity_knots)
    else:
        try:
            spec = json.loads(Path(cfg.plif).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read PLIF file: {e}") from e
        spec.setdefault("kind", "plif")
        try:
            fn = from_dict(spec)
        except (KeyError, TypeError) as e:
            raise ConfigError(f"malformed PLIF file: {e}") from e
        if not isinstance(fn, PLIF):
            raise ConfigError("file does not describe a PLIF")
    lo = -1.1 * fn.T if cfg.lo is None else cfg.lo
    hi = 1.1 * fn.T if cfg.hi is None else cfg.hi
    if not lo < hi:
        raise ConfigError("lo must be below hi")
    x = np.linspace(lo, hi, cfg.points)
    y = fn(x)
    text = _csv_text(["x", "f_x"], [[float(a), float(b)] for a, b in zip(x, y)])
    if cfg.out is None:
        stdout.write(text)
    else:
        Path(cfg.out).parent.mkdir(parents=True, exist_ok=True)
        Path(cfg.out).write_text(text, encoding="utf-8")
    return EXIT_OK


# ---------------------------------------------------------------- argument parsing


def _floats(s: str) -> list[float]:
    return [float(v) for v in s.split(",") if v]


def _ints(s: str) -> list[int]:
    return [int(v) for v in s.split(",") if v]


def _strs(s: str) -> list[str]:
    return [v for v in s.split(",") if v]


def _flag(p: argparse.ArgumentParser, name: str, dest: str, **kw) -> None:
    p.add_argument(name, dest=dest, default=argparse.SUPPRESS, **kw)


def _common(p: argparse.ArgumentParser, out_help: str = "directory for CSV/JSON artefacts") -> None:
    p.add_argument("--config", dest="_config", default=None, metavar="FILE", help="JSON file with run settings")
    _flag(p, "--out", "out", help=out_help)
    p.add_argument("--timing", dest="timing", action="store_const", const=True, default=argparse.SUPPRESS,
                   help="include wall-clock times (breaks byte-identical output)")


def _train_flags(p: argparse.ArgumentParser) -> None:
    _flag(p, "--contexts", "contexts", type=int)
    _flag(p, "--steps", "steps", type=int)
    _flag(p, "--lr", "lr", type=float)
    _flag(p, "--optimizer", "optimizer", choices=OPTIMIZERS)
    _flag(p, "--batch", "batch", type=int, help="minibatch rows (0 = full batch)")
    _flag(p, "--init-scale", "init_scale", type=float)
    _flag(p, "--hidden", "hidden", type=int, help="monotonic MLP hidden units")
    _flag(p, "--knots", "knots", type=int, help="PLIF knot count")
    _flag(p, "--plif-range", "plif_range", type=float)
    _flag(p, "--mix", "mix", type=int, help="MoS component count")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="softmaxlab", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=f"softmaxlab {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="train one head on one synthetic task")
    _common(p)
    _flag(p, "--alpha", "alpha", type=float)
    _flag(p, "--vocab", "vocab", type=int)
    _flag(p, "--dim", "dim", type=int)
    _flag(p, "--head", "head", choices=HEAD_VARIANTS)
    _flag(p, "--seed", "seed", type=int)
    _train_flags(p)
    p.set_defaults(_model=SynthConfig, _run=run_synth)

    p = sub.add_parser("sweep", help="cartesian product of synth runs, long-format CSV")
    _common(p)
    _flag(p, "--alphas", "alphas", type=_floats)
    _flag(p, "--vocabs", "vocabs", type=_ints)
    _flag(p, "--dims", "dims", type=_ints)
    _flag(p, "--heads", "heads", type=_strs, help=f"comma list from {', '.join(HEAD_VARIANTS)}")
    _flag(p, "--seeds", "seeds", type=_ints)
    _train_flags(p)
    p.set_defaults(_model=SweepConfig, _run=run_sweep)

    rl = sub.add_parser("ranklab", help="rank experiments").add_subparsers(dest="experiment", required=True)
    p = rl.add_parser("power", help="rank of Hadamard powers of rank-d products")
    _common(p)
    for name, t in (("n", int), ("m", int), ("d", int), ("p", int), ("trials", int), ("seed", int)):
        _flag(p, f"--{name}", name, type=t)
    p.set_defaults(_model=PowerConfig, _run=run_power)

    p = rl.add_parser("square", help="elementwise squaring of rank-(N-1) matrices")
    _common(p)
    for name in ("n", "trials", "seed"):
        _flag(p, f"--{name}", name, type=int)
    p.set_defaults(_model=SquareConfig, _run=run_square)

    p = rl.add_parser("indicator", help="indicator construction reaching rank M")
    _common(p)
    _flag(p, "--instances", "instances", type=int)
    _flag(p, "--min-vocab", "min_vocab", type=int)
    _flag(p, "--max-vocab", "max_vocab", type=int)
    _flag(p, "--dim", "dim", type=int)
    _flag(p, "--rel-gap", "rel_gap", type=float)
    _flag(p, "--seed", "seed", type=int)
    p.set_defaults(_model=IndicatorConfig, _run=run_indicator)

    p = rl.add_parser("surrogate", help="monotone surrogates for rank-raising maps")
    _common(p)
    for name in ("pairs", "budget", "seed"):
        _flag(p, f"--{name}", name, type=int)
    p.set_defaults(_model=SurrogateConfig, _run=run_surrogate)

    th = sub.add_parser("theory", help="duality and low-rank bounds").add_subparsers(dest="experiment", required=True)
    p = th.add_parser("maxent", help="min cross-entropy vs max entropy")
    _common(p)
    _flag(p, "--vocab", "vocab", type=int)
    _flag(p, "--dim", "dim", type=int)
    _flag(p, "--instances", "instances", type=int)
    _flag(p, "--tol", "tol", type=float)
    _flag(p, "--seed", "seed", type=int)
    p.set_defaults(_model=MaxentConfig, _run=run_maxent)

    p = th.add_parser("eckart-young", help="MSE rank-(d+1) fit vs the singular value bound")
    _common(p)
    _flag(p, "--vocab", "vocab", type=int)
    _flag(p, "--contexts", "contexts", type=int)
    _flag(p, "--dim", "dim", type=int)
    _flag(p, "--instances", "instances", type=int)
    _flag(p, "--alpha", "alpha", type=float)
    _flag(p, "--restarts", "restarts", type=int)
    _flag(p, "--max-iter", "max_iter", type=int)
    _flag(p, "--partition", "partition", choices=("free", "tied"))
    _flag(p, "--seed", "seed", type=int)
    p.set_defaults(_model=EckartYoungConfig, _run=run_eckart_young)

    p = sub.add_parser("plif-approx", help="PLIF interpolation error against a known target")
    _common(p)
    _flag(p, "--target", "target", choices=tuple(PLIF_TARGETS))
    _flag(p, "--range", "range", type=float)
    _flag(p, "--knots", "knots", type=int)
    _flag(p, "--grid", "grid", type=int)
    p.set_defaults(_model=PlifApproxConfig, _run=run_plif_approx)

    p = sub.add_parser("plif-dump", help="tabulate a PLIF as (x, f(x)) CSV")
    _common(p, out_help="CSV file to write (default: stdout)")
    _flag(p, "--plif", "plif", help="PLIF JSON {T, K, v_raw, b0}; identity PLIF if omitted")
    _flag(p, "--points", "points", type=int)
    _flag(p, "--lo", "lo", type=float)
    _flag(p, "--hi", "hi", type=float)
    p.set_defaults(_model=PlifDumpConfig, _run=run_plif_dump)
    return ap


def resolve_config(ns: argparse.Namespace) -> RunConfig:
    """Defaults < ``--config`` file < flags."""
    layered: dict = {}
    if ns._config is not None:
        try:
            loaded = json.loads(Path(ns._config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config file {ns._config}: {e}") from e
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        layered.update(loaded)
    layered.update({k: v for k, v in vars(ns).items() if not k.startswith("_") and k not in ("command", "experiment")})
    return ns._model(**layered)


def _format_validation(e: ValidationError) -> str:
    lines = []
    for err in e.errors():
        path = ".".join(str(p) for p in err["loc"]) or "<config>"
        lines.append(f"  {path}: {err['msg']}")
    return "invalid configuration:\n" + "\n".join(lines)


def main(argv: list[str] | None = None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        cfg = resolve_config(ns)
        return ns._run(cfg, stdout)
    except ValidationError as e:
        print(f"softmaxlab: {_format_validation(e)}", file=stderr)
        return EXIT_CONFIG
    except NumericalFailure as e:
        print(f"softmaxlab: {e}", file=stderr)
        return EXIT_NUMERIC
    except NUMERICAL_ERRORS as e:
        # LinAlgError is a ValueError, so this must come before the config branch
        print(f"softmaxlab: numerical failure: {e}", file=stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError) as e:
        print(f"softmaxlab: configuration error: {e}", file=stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
