"""Command-line entry point ``monolb``.

Exit codes: 0 success, 1 a checked property failed, 2 usage error
(unknown flag, malformed config or input file, resource guard).
Reports go to ``--out``, else ``$MONOLB_OUTPUT_DIR``, else ``./monolb-output``.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from ..geometry import ArrangementTooLarge
from ..instances import HardInstanceFamily, QueryMatrix, sample_no, sample_yes
from ..io import FormatError, MetricRow, load_query_matrix, load_truth_table, read_json, write_json
from ..mollifier import (
    OrthantMollifier,
    box_mollifier_pair,
    box_sandwich,
    derivative_bound_check,
    phi_eps,
    psi_support_check,
)
from ..momentlab import MomentProblemError, build_pair, gaussian_raw_moments, relative_moment_errors
from ..monodist import MAX_EXACT_N, exact_distance_to_monotone, fourier_negative_mass, ltf_truth_table
from ..orthants import EXACT_GUARD, duo_exact_small, duo_monte_carlo
from ..pruning import PruneParams, is_scattered, near_span_set, prune, verify_trace
from .experiments import (
    ConfigError,
    ExperimentConfig,
    RunReport,
    experiment_lindeberg,
    experiment_lowerbound_sweep,
    stream,
)

OUTPUT_ENV = "MONOLB_OUTPUT_DIR"
MOMENT_RTOL = 1e-9


class UsageError(Exception):
    """Bad command line."""


class ResourceGuard(Exception):
    """The request would exceed a configured size limit."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or ./monolb-output)")
    p.add_argument("--config", help="JSON file with experiment settings; flags override it")
    p.add_argument("--seed", type=int)


def _floats(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _ints(text: str) -> tuple:
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _query_source(p: argparse.ArgumentParser) -> None:
    p.add_argument("--queries", help="query matrix JSON file")
    p.add_argument("--n", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--near-span", type=int, metavar="K", help="generate a degenerate set near a K-point span")
    p.add_argument("--h", type=int)
    p.add_argument("--log-power", type=float, default=5.0)
    p.add_argument("--eps", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="monolb", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("build-rv", help="build the moment-matched yes/no variables")
    _common(p)
    p.add_argument("--ell", type=int)
    p.add_argument("--mu", type=int)
    p.add_argument("--grid-size", type=int, default=200)

    p = sub.add_parser("sample", help="draw LTFs from the yes or no distribution")
    _common(p)
    p.add_argument("--n", type=int)
    p.add_argument("--ell", type=int)
    p.add_argument("--kind", choices=("yes", "no"), default="yes")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--tables", action="store_true", help="also write truth-table bit arrays (n <= 20)")

    p = sub.add_parser("dist", help="exact distance to monotone")
    _common(p)
    p.add_argument("--table", help="truth-table bit-array file")
    p.add_argument("--n", type=int)
    p.add_argument("--ell", type=int)
    p.add_argument("--kind", choices=("yes", "no"), default="no")
    p.add_argument("--count", type=int, default=1)

    p = sub.add_parser("duo", help="union-of-orthants distance of a query set")
    _common(p)
    p.add_argument("--queries")
    p.add_argument("--n", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--ell", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--exact", action="store_true", help="exact enumeration, cross-checked against Monte Carlo")
    p.add_argument("--sweep", action="store_true", help="run the pruned-query d_UO sweep over --n-grid")
    p.add_argument("--n-grid", type=_ints)

    p = sub.add_parser("prune", help="prune a query set until it is scattered")
    _common(p)
    _query_source(p)

    p = sub.add_parser("scatter-check", help="test whether a query set is scattered")
    _common(p)
    _query_source(p)

    p = sub.add_parser("moll-check", help="mollifier property checks")
    _common(p)
    p.add_argument("--eps", type=_floats, default=(0.05, 0.1, 0.5))
    p.add_argument("--kmax", type=int, default=3)
    p.add_argument("--probes", type=int, default=1000)

    p = sub.add_parser("lindeberg", help="hybrid step-gap trend experiment")
    _common(p)
    p.add_argument("--d", type=int)
    p.add_argument("--ell", type=int)
    p.add_argument("--eps", type=float)
    p.add_argument("--n-grid", type=_ints)
    p.add_argument("--steps", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--pilot-samples", type=int)
    p.add_argument("--workers", type=int)

    p = sub.add_parser("verify-all", help="run the acceptance suite")
    _common(p)
    p.add_argument("--quick", action="store_true", help="reduced Monte Carlo sample counts")
    p.add_argument("--only", type=_ints, help="comma-separated criterion numbers")
    return parser


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def output_dir(args) -> Path:
    return Path(args.out or os.environ.get(OUTPUT_ENV) or "monolb-output")


def load_config(args, **overrides) -> ExperimentConfig:
    base = ExperimentConfig()
    if args.config:
        try:
            data = read_json(args.config)
        except FormatError as exc:
            raise ConfigError(str(exc)) from exc
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc.strerror}") from exc
        base = ExperimentConfig.from_dict(data)
    return base.with_updates(seed=args.seed, **overrides)


def _finish(report: RunReport, args, extra: dict | None = None) -> int:
    out = output_dir(args)
    for name, obj in (extra or {}).items():
        write_json(out / name, obj)
    report.write(out)
    status = "ok" if report.passed else "FAILED: " + ", ".join(k for k, v in report.checks.items() if not v)
    print(f"{report.name}: {status} ({out / 'report.json'})")
    return 0 if report.passed else 1


def _queries(args, cfg: ExperimentConfig) -> np.ndarray:
    if args.queries:
        return load_query_matrix(args.queries).signs
    n = args.n or cfg.n
    d = args.d or cfg.d
    rng = stream(cfg.seed, n, d)
    k = getattr(args, "near_span", None)
    if k:
        return near_span_set(n, d, k, 1, rng)
    return QueryMatrix.random(d, n, rng).signs


def _prune_params(args, cfg) -> PruneParams:
    return PruneParams(eps=args.eps, log_power=args.log_power, seed=cfg.seed)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_build_rv(args) -> int:
    t0 = time.perf_counter()
    cfg = load_config(args, ell=args.ell, mu=args.mu)
    pair = build_pair(cfg.ell, cfg.mu, args.grid_size)
    target = gaussian_raw_moments(pair.mu, pair.ell)
    yes = float(relative_moment_errors(pair.yes_rv, target).max())
    no = float(relative_moment_errors(pair.no_rv, target).max())
    common = dict(seed=cfg.seed, ell=pair.ell, mu=pair.mu)
    rows = [MetricRow("max_rel_moment_error_yes", yes, "exact_construction", **common),
            MetricRow("max_rel_moment_error_no", no, "lp_mpmath_polish", **common),
            MetricRow("no_negative_mass", pair.no_rv.negative_mass(), "exact_construction", **common)]
    checks = {"yes_moments": yes <= MOMENT_RTOL, "no_moments": no <= MOMENT_RTOL,
              "yes_nonnegative": bool(np.all(pair.yes_rv.atoms >= 0)),
              "no_negative_mass": pair.no_rv.negative_mass() > 0}
    body = pair.to_dict() | {"moment_residuals": pair.moment_residuals()}
    rep = RunReport("build-rv", cfg.to_dict() | {"derived": {"mu": pair.mu}}, rows, checks,
                    {"pair": body}, time.perf_counter() - t0)
    return _finish(rep, args, {"pair.json": body})


def cmd_sample(args) -> int:
    t0 = time.perf_counter()
    cfg = load_config(args, n=args.n, ell=args.ell)
    if args.count < 1:
        raise UsageError("--count must be positive")
    fam = HardInstanceFamily.build(cfg.n, h=cfg.resolved_h(), ell=cfg.ell, mu=cfg.mu)
    rng = stream(cfg.seed, cfg.n, 0)
    draw = sample_yes if args.kind == "yes" else sample_no
    ltfs = [draw(fam, rng) for _ in range(args.count)]
    out = output_dir(args)
    if args.tables:
        if cfg.n > MAX_EXACT_N:
            raise ResourceGuard(f"truth tables need n <= {MAX_EXACT_N}, got n={cfg.n}")
        out.mkdir(parents=True, exist_ok=True)
        for j, f in enumerate(ltfs):
            ltf_truth_table(f).save(out / f"table_{j:04d}.bits")
    rows = [MetricRow("ltf_count", float(args.count), f"sample_{args.kind}", seed=cfg.seed, n=cfg.n,
                      ell=fam.ell, mu=fam.mu)]
    rep = RunReport("sample", cfg.to_dict() | {"derived": fam.describe()}, rows, {}, {},
                    time.perf_counter() - t0)
    return _finish(rep, args, {"ltfs.json": {"kind": args.kind, "family": fam.describe(),
                                             "ltfs": [f.to_dict() for f in ltfs]}})


def cmd_dist(args) -> int:
    t0 = time.perf_counter()
    cfg = load_config(args, n=args.n, ell=args.ell)
    if args.table:
        tables = [load_truth_table(args.table, args.n)]
        fam = None
    else:
        if cfg.n > MAX_EXACT_N:
            raise ResourceGuard(f"exact distance needs n <= {MAX_EXACT_N}, got n={cfg.n}")
        fam = HardInstanceFamily.build(cfg.n, h=cfg.resolved_h(), ell=cfg.ell, mu=cfg.mu)
        rng = stream(cfg.seed, cfg.n, 0)
        draw = sample_yes if args.kind == "yes" else sample_no
        tables = [ltf_truth_table(draw(fam, rng)) for _ in range(args.count)]
    rows, results, ok = [], [], True
    for j, t in enumerate(tables):
        dist = exact_distance_to_monotone(t)
        neg = fourier_negative_mass(t)
        ok &= float(dist) >= neg / 4 - 1e-12
        results.append({"index": j, "distance": str(dist), "fourier_negative_mass": neg})
        rows.append(MetricRow("distance_to_monotone", float(dist), "min_cut_exact", seed=cfg.seed, n=t.n,
                              ell=None if fam is None else fam.ell, mu=None if fam is None else fam.mu))
    rep = RunReport("dist", cfg.to_dict(), rows, {"fourier_lower_bound": bool(ok)}, {"tables": results},
                    time.perf_counter() - t0)
    return _finish(rep, args)


def cmd_duo(args) -> int:
    t0 = time.perf_counter()
    cfg = load_config(args, n=args.n, d=args.d, ell=args.ell, samples=args.samples, n_grid=args.n_grid)
    if args.sweep:
        return _finish(experiment_lowerbound_sweep(cfg), args)
    qm = QueryMatrix(_queries(args, cfg))
    pair = build_pair(cfg.ell, cfg.mu)
    samples = args.samples or 1_000_000
    common = dict(seed=cfg.seed, n=qm.n, d=qm.d, ell=pair.ell, mu=pair.mu)
    ex = None
    if args.exact:
        support = max(pair.yes_rv.support_size, pair.no_rv.support_size)
        if support**qm.n > EXACT_GUARD:
            raise ResourceGuard(f"exact d_UO needs {support}^{qm.n} > {EXACT_GUARD} terms; use n <= "
                                f"{int(math.log(EXACT_GUARD) / math.log(support))}")
        ex = duo_exact_small(qm, pair)
    mc = duo_monte_carlo(qm, pair, samples, stream(cfg.seed, qm.n, qm.d, 1))
    rows = [MetricRow("duo", mc.value, mc.method, mc.stderr, mc.samples, **common),
            MetricRow("duo_bias_bound", mc.bias_bound, "analytic", **common)]
    checks, tables = {}, {"monte_carlo": mc.to_dict()}
    if ex is not None:
        rows.insert(0, MetricRow("duo", ex.value, ex.method, 0.0, 0, **common))
        checks["exact_matches_mc"] = abs(ex.value - mc.value) <= 3 * mc.stderr + mc.bias_bound
        tables["exact"] = ex.to_dict()
    rep = RunReport("duo", cfg.to_dict() | {"derived": {"mu": pair.mu}}, rows, checks, tables,
                    time.perf_counter() - t0)
    return _finish(rep, args)


def cmd_prune(args) -> int:
    t0 = time.perf_counter()
    cfg = load_config(args, h=args.h)
    x = _queries(args, cfg)
    params = _prune_params(args, cfg)
    pruned, trace = prune(x, cfg.resolved_h(), params)
    scat = is_scattered(pruned, cfg.resolved_h(), params)
    checks = {"scattered": scat.scattered, "trace_verified": verify_trace(x, trace),
              "telescoping_bound": trace.telescoping_sum() <= trace.telescoping_bound()}
    common = dict(seed=cfg.seed, n=x.shape[1], d=x.shape[0])
    rows = [MetricRow("initial_size", float(trace.initial_size), "count", **common),
            MetricRow("final_size", float(trace.final_size), "count", **common),
            MetricRow("telescoping_sum", float(trace.telescoping_sum()), "exact_fraction", **common),
            MetricRow("radius_sum", trace.radius_sum(), "trace", **common)]
    rep = RunReport("prune", cfg.to_dict() | {"prune_params": params.to_dict()}, rows, checks,
                    {"trace": trace.to_dict(), "scatter": scat.to_dict()}, time.perf_counter() - t0)
    return _finish(rep, args, {"pruned.json": QueryMatrix(np.asarray(pruned.signs)).to_dict(),
                               "trace.json": trace.to_dict()})


def cmd_scatter_check(args) -> int:
    t0 = time.perf_counter()
    cfg = load_config(args, h=args.h)
    x = _queries(args, cfg)
    params = _prune_params(args, cfg)
    rep_s = is_scattered(x, cfg.resolved_h(), params)
    rows = [MetricRow("violations", float(len(rep_s.violations)), rep_s.mode, samples=rep_s.subsets_checked,
                      seed=cfg.seed, n=x.shape[1], d=x.shape[0])]
    rep = RunReport("scatter-check", cfg.to_dict() | {"prune_params": params.to_dict()}, rows,
                    {"scattered": rep_s.scattered}, {"scatter": rep_s.to_dict()}, time.perf_counter() - t0)
    return _finish(rep, args)


def cmd_moll_check(args) -> int:
    t0 = time.perf_counter()
    cfg = load_config(args)
    if not 1 <= args.kmax <= 4:
        raise UsageError("--kmax must lie in 1..4")
    rng = stream(cfg.seed, 0)
    rows, checks, tables = [], {}, {}
    for eps in args.eps:
        if not eps > 0:
            raise UsageError("--eps values must be positive")
        below = -rng.exponential(1.0, args.probes)
        above = eps + rng.exponential(1.0, args.probes)
        checks[f"exact_outside_eps{eps:g}"] = bool(np.all(phi_eps(below, eps) == 0) and np.all(phi_eps(above, eps) == 1))
        for k in range(1, args.kmax + 1):
            r = derivative_bound_check(eps, k)
            checks[f"derivative_k{k}_eps{eps:g}"] = r.holds
            rows.append(MetricRow(f"max_abs_derivative_k{k}_eps{eps:g}", r.max_abs, "richardson_fd", seed=cfg.seed))
    om = OrthantMollifier(np.array([[1, 1, -1], [-1, 1, 1]]), min(args.eps))
    for j in ([0], [0, 2], [0, 1, 2]):
        s = psi_support_check(om, j, args.probes, rng)
        checks[f"support_J{''.join(map(str, j))}"] = s.holds
        tables[f"support_J{''.join(map(str, j))}"] = s.to_dict()
    sw = box_sandwich(box_mollifier_pair(0.2, 0.1, 2), rng.normal(0, 0.4, (100_000, 2)))
    checks["box_sandwich"] = sw.holds(3.0)
    rows.append(MetricRow("box_probability", sw.middle, "monte_carlo", sw.stderr, 100_000, cfg.seed))
    rep = RunReport("moll-check", cfg.to_dict(), rows, checks, tables, time.perf_counter() - t0)
    return _finish(rep, args)


def cmd_lindeberg(args) -> int:
    cfg = load_config(args, d=args.d, ell=args.ell, eps=args.eps, n_grid=args.n_grid, steps=args.steps,
                      samples=args.samples, pilot_samples=args.pilot_samples, workers=args.workers)
    return _finish(experiment_lindeberg(cfg), args)


def cmd_verify_all(args) -> int:
    from .acceptance import CRITERIA, run_all

    t0 = time.perf_counter()
    numbers = args.only or sorted(CRITERIA)
    bad = [k for k in numbers if k not in CRITERIA]
    if bad:
        raise UsageError(f"unknown criterion numbers: {bad}")
    results = run_all(quick=args.quick, numbers=numbers, echo=print)
    rows = [MetricRow(f"criterion_{r.number}", float(r.passed), "quick" if r.quick else "full") for r in results]
    rep = RunReport("verify-all", {"quick": args.quick, "criteria": numbers}, rows,
                    {f"criterion_{r.number}": bool(r.passed) for r in results},
                    {"criteria": [r.to_dict() for r in results]}, time.perf_counter() - t0)
    return _finish(rep, args)


COMMANDS = {
    "build-rv": cmd_build_rv,
    "sample": cmd_sample,
    "dist": cmd_dist,
    "duo": cmd_duo,
    "prune": cmd_prune,
    "scatter-check": cmd_scatter_check,
    "moll-check": cmd_moll_check,
    "lindeberg": cmd_lindeberg,
    "verify-all": cmd_verify_all,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(f"missing subcommand; choose from {', '.join(COMMANDS)}")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"monolb: usage error: {exc}", file=sys.stderr)
    except ConfigError as exc:
        print(f"monolb: malformed config: {exc}", file=sys.stderr)
    except FormatError as exc:
        print(f"monolb: malformed input: {exc}", file=sys.stderr)
    except (ResourceGuard, ArrangementTooLarge) as exc:
        print(f"monolb: resource guard: {exc}", file=sys.stderr)
    except FileNotFoundError as exc:
        print(f"monolb: missing file: {exc.filename}", file=sys.stderr)
    except (MomentProblemError, ValueError, TypeError) as exc:
        print(f"monolb: invalid arguments: {exc}", file=sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())
