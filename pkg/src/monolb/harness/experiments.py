"""Experiment configuration, reports and the two sweep experiments.

Randomness: every independent Monte Carlo stream gets its own generator
from ``SeedSequence([seed, *stream_key])``.  Stream keys depend only on the
experiment's loop indices, so results do not depend on the number of
workers or on the order in which streams run.
"""

from __future__ import annotations

import math
import time
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from fractions import Fraction
from pathlib import Path

import numpy as np
import scipy

from .. import __version__
from ..instances import QueryMatrix, choose_h
from ..io import MetricRow, write_json, write_metrics_csv
from ..mollifier import OrthantMollifier
from ..momentlab import YesNoPair, build_pair
from ..orthants import (
    duo_counts,
    duo_exact_small,
    duo_monte_carlo,
    key_to_pattern,
    lindeberg_step_gap,
    psi_gap,
)
from ..pruning import PruneParams, prune


class ConfigError(ValueError):
    """A configuration value or file is malformed."""


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for the stream ``key`` of run ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, key)]))


def _map(fn, tasks: list, workers: int) -> list:
    if workers <= 1 or len(tasks) <= 1:
        return [fn(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*tasks)))


# ---------------------------------------------------------------------------
# Configuration and reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    """Run parameters.

    ``h`` defaults to the smallest odd integer ``>= 5 / c``; ``eps`` to
    ``n^(4/h - 1/2)`` and ``delta`` to ``n^(-1/2)``; ``mu`` to the smallest
    feasible mean for ``ell``.  :meth:`derived` echoes all of them.
    """

    seed: int = 0
    n: int = 256
    d: int = 4
    ell: int = 3
    mu: int | None = None
    c: float | None = None
    h: int | None = 3
    eps: float | None = None
    delta: float | None = None
    samples: int = 20_000
    workers: int = 1
    quick: bool = False
    n_grid: tuple = (256, 1024, 4096)
    steps: int = 16
    pilot_samples: int = 200_000
    gammas: tuple = (0.25, 0.4)
    exact: bool = False

    def __post_init__(self):
        for name in ("n", "d", "ell", "samples", "workers", "steps", "pilot_samples"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be a 64-bit nonnegative integer, got {self.seed!r}")
        if self.ell % 2 == 0:
            raise ConfigError(f"ell must be odd, got {self.ell}")
        if self.h is None and self.c is None:
            raise ConfigError("give h or c")
        if self.c is not None and not self.c > 0:
            raise ConfigError(f"c must be positive, got {self.c}")
        if self.eps is not None and not self.eps > 0:
            raise ConfigError(f"eps must be positive, got {self.eps}")
        object.__setattr__(self, "n_grid", tuple(int(v) for v in self.n_grid))
        object.__setattr__(self, "gammas", tuple(float(v) for v in self.gammas))
        if not self.n_grid or min(self.n_grid) < 1:
            raise ConfigError("n_grid must hold positive integers")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def with_updates(self, **kw) -> "ExperimentConfig":
        merged = asdict(self)
        merged.update({k: v for k, v in kw.items() if v is not None})
        return ExperimentConfig.from_dict(merged)

    def resolved_h(self) -> int:
        return self.h if self.h is not None else choose_h(self.c)

    def derived(self, n: int | None = None) -> dict:
        n = self.n if n is None else n
        h = self.resolved_h()
        return {
            "h": h,
            "eps": self.eps if self.eps is not None else n ** (4.0 / h - 0.5),
            "delta": self.delta if self.delta is not None else n**-0.5,
            "mu": self.mu,
        }

    def to_dict(self) -> dict:
        return asdict(self)


def module_versions() -> dict:
    return {"monolb": __version__, "numpy": np.__version__, "scipy": scipy.__version__}


@dataclass
class RunReport:
    """Config echo, metric rows, named checks and free-form tables."""

    name: str
    config: dict
    rows: list = field(default_factory=list)
    checks: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    wall_time: float = 0.0
    versions: dict = field(default_factory=module_versions)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_dict(self) -> dict:
        return {"name": self.name, "config": self.config, "checks": self.checks,
                "passed": self.passed, "rows": [asdict(r) for r in self.rows],
                "tables": self.tables, "wall_time": self.wall_time, "versions": self.versions}

    def write(self, out_dir) -> tuple[Path, Path]:
        out = Path(out_dir)
        return write_json(out / "report.json", self.to_dict()), write_metrics_csv(out / "metrics.csv", self.rows)


def _pair_for(config: ExperimentConfig) -> YesNoPair:
    return build_pair(config.ell, config.mu)


# ---------------------------------------------------------------------------
# Lindeberg replacement trend
# ---------------------------------------------------------------------------


def pilot_union(qm: QueryMatrix, pair: YesNoPair, samples: int, rng) -> np.ndarray:
    """Orthants where ``S`` lands more often than ``T`` in a pilot run
    (the maximizing union of the plug-in TV); never empty."""
    c = duo_counts(qm, pair, samples, rng)
    diff = c.counts_s - c.counts_t
    keys = c.keys[diff > 0] if np.any(diff > 0) else c.keys[[int(np.argmax(diff))]]
    return np.array([key_to_pattern(k, qm.d) for k in keys], dtype=np.int8)


def step_indices(n: int, steps: int) -> np.ndarray:
    return np.unique(np.linspace(1, n, min(steps, n)).round().astype(int))


def _lindeberg_one(seed: int, n: int, d: int, pair: YesNoPair, eps: float, steps: int,
                   samples: int, pilot_samples: int) -> dict:
    qm = QueryMatrix.random(d, n, stream(seed, n, 0))
    union = pilot_union(qm, pair, pilot_samples, stream(seed, n, 1))
    moll = OrthantMollifier(union, eps)
    idx = step_indices(n, steps)
    gaps = [lindeberg_step_gap(qm, pair, None, int(i), eps, samples, stream(seed, n, 2, int(i)), mollifier=moll)
            for i in idx]
    vals = np.array([g.value for g in gaps])
    ses = np.array([g.stderr for g in gaps])
    direct = psi_gap(qm, pair, moll, pilot_samples, stream(seed, n, 3))
    mean_abs = float(np.abs(vals).mean())
    mean_se = float(np.sqrt((ses**2).sum()) / idx.size)
    return {
        "n": n, "orthants": int(union.shape[0]), "i": idx.tolist(),
        "gap": vals.tolist(), "gap_stderr": ses.tolist(),
        "mean_abs_gap": mean_abs, "mean_abs_gap_stderr": mean_se,
        "summed_gap": n * mean_abs, "summed_gap_stderr": n * mean_se,
        "direct_gap": direct.value, "direct_gap_stderr": direct.stderr,
    }


def experiment_lindeberg(config: ExperimentConfig) -> RunReport:
    """Hybrid step gaps ``|E Psi(Q^(i-1)) - E Psi(Q^(i))|`` across ``i`` and ``n``.

    For each ``n`` a random ``d``-row query matrix is drawn and the orthant
    union is fixed from a pilot run.  Checks: the mean step gap does not
    increase with ``n`` beyond ``2`` combined standard errors, and the
    summed gaps (``n`` times the mean over the sampled ``i``) dominate the
    direct ``|E Psi(S) - E Psi(T)|`` minus ``3`` standard errors.
    """
    t0 = time.perf_counter()
    pair = _pair_for(config)
    eps = config.eps if config.eps is not None else 0.2
    tasks = [(config.seed, n, config.d, pair, eps, config.steps, config.samples, config.pilot_samples)
             for n in config.n_grid]
    results = _map(_lindeberg_one, tasks, config.workers)
    rows = []
    for r in results:
        common = dict(n=r["n"], d=config.d, ell=pair.ell, mu=pair.mu, seed=config.seed)
        for i, g, s in zip(r["i"], r["gap"], r["gap_stderr"]):
            rows.append(MetricRow(f"step_gap_i{i}", g, "monte_carlo_conditional", s, config.samples, **common))
        rows.append(MetricRow("mean_abs_step_gap", r["mean_abs_gap"], "monte_carlo_conditional",
                              r["mean_abs_gap_stderr"], config.samples * len(r["i"]), **common))
        rows.append(MetricRow("summed_step_gap", r["summed_gap"], "stratified_estimate",
                              r["summed_gap_stderr"], config.samples * len(r["i"]), **common))
        rows.append(MetricRow("direct_psi_gap", r["direct_gap"], "monte_carlo",
                              r["direct_gap_stderr"], config.pilot_samples, **common))
    trend = all(
        b["mean_abs_gap"] <= a["mean_abs_gap"] + 2 * math.hypot(a["mean_abs_gap_stderr"], b["mean_abs_gap_stderr"])
        for a, b in zip(results, results[1:]))
    dominate = all(r["summed_gap"] >= abs(r["direct_gap"]) - 3 * r["direct_gap_stderr"] for r in results)
    cfg = config.to_dict() | {"derived": config.derived() | {"eps": eps, "mu": pair.mu}}
    return RunReport("lindeberg", cfg, rows, {"trend_non_increasing": trend, "summed_dominates_direct": dominate},
                     {"per_n": results}, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# Lower-bound sweep
# ---------------------------------------------------------------------------


def one_dim_sign_tv(row, pair: YesNoPair) -> float:
    """``|Pr[S >= 0] - Pr[T >= 0]|`` for a single query row, by exact
    convolution of the coefficient laws (an oracle independent of the
    pattern enumeration)."""
    row = np.asarray(row, dtype=int)

    def law(rv) -> dict:
        dist = {Fraction(0): 1.0}
        for x in row:
            nxt: Counter = Counter()
            for v, p in dist.items():
                for a, q in zip(rv.atoms, rv.probs):
                    nxt[v + x * Fraction(float(a))] += p * q
            dist = dict(nxt)
        return dist

    def nonneg(rv) -> float:
        return sum(p for v, p in law(rv).items() if v >= 0)

    return abs(nonneg(pair.yes_rv) - nonneg(pair.no_rv))


def _sweep_one(seed: int, n: int, gamma: float, pair: YesNoPair, h: int, samples: int) -> dict:
    d = max(1, math.floor(n**gamma + 1e-9))
    qm = QueryMatrix.random(d, n, stream(seed, n, int(round(gamma * 1000)), 0))
    pruned, trace = prune(qm.signs, h) if n >= PruneParams().min_n else (qm, None)
    pqm = QueryMatrix(np.asarray(pruned.signs))
    est = duo_monte_carlo(pqm, pair, samples, stream(seed, n, int(round(gamma * 1000)), 1))
    return {"n": n, "gamma": gamma, "d": d, "d_pruned": pqm.d,
            "steps": 0 if trace is None else len(trace.steps),
            "duo": est.value, "stderr": est.stderr, "bias_bound": est.bias_bound}


def experiment_lowerbound_sweep(config: ExperimentConfig, exact_n: int = 8) -> RunReport:
    """``d_UO`` of pruned random query sets with ``d = floor(n^gamma)``.

    Also cross-checks two exact facts at ``n = exact_n``: a single query
    gives the 1-D sign TV, and ``d`` copies of it give the same value.
    """
    t0 = time.perf_counter()
    pair = _pair_for(config)
    h = config.resolved_h()
    tasks = [(config.seed, n, g, pair, h, max(config.samples, 10_000))
             for n in config.n_grid for g in config.gammas]
    results = _map(_sweep_one, tasks, config.workers)
    rows = [MetricRow("duo_pruned", r["duo"], "monte_carlo", r["stderr"], max(config.samples, 10_000),
                      config.seed, r["n"], r["d_pruned"], pair.ell, pair.mu) for r in results]

    row = stream(config.seed, exact_n, 9).choice(np.array([-1, 1], dtype=np.int8), exact_n)
    single = duo_exact_small(QueryMatrix(row[None, :]), pair).value
    oracle = one_dim_sign_tv(row, pair)
    dup = duo_exact_small(QueryMatrix(np.repeat(row[None, :], config.d, axis=0)), pair).value
    rows += [MetricRow("duo_d1_exact", single, "exact", 0.0, 0, config.seed, exact_n, 1, pair.ell, pair.mu),
             MetricRow("sign_tv_1d_oracle", oracle, "exact", 0.0, 0, config.seed, exact_n, 1, pair.ell, pair.mu),
             MetricRow("duo_duplicated_exact", dup, "exact", 0.0, 0, config.seed, exact_n, config.d,
                       pair.ell, pair.mu)]
    checks = {"d1_matches_1d_oracle": bool(abs(single - oracle) <= 1e-12),
              "duplicates_match_d1": bool(abs(dup - single) <= 1e-12)}
    cfg = config.to_dict() | {"derived": config.derived() | {"mu": pair.mu}}
    return RunReport("lowerbound_sweep", cfg, rows, checks, {"sweep": results}, time.perf_counter() - t0)
