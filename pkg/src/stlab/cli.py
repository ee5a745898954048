"""Command-line front end: `stlab <subcommand> [options]`.

Every run writes its artifacts under the configured output directory and a
manifest.json listing the config echo, code version, calibration constants,
per-stage timings and a sha256 digest of each artifact.  The manifest is
written even when a stage fails.  Exit status: 0 ok, 1 check failed or
stage error, 2 usage error, 3 node budget exceeded (partial results).
"""
from __future__ import annotations

import argparse
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__, io
from .analytic import MU_INF, DomainError, ModelParams, kappa_solve, tail_asymptotics
from .config import ConfigError, ExperimentConfig, load, parse_level_set
from .seeding import rng_for
from .slicetree import BudgetExceeded, box_exponents, grow
from .stable_laws import get_table, offspring

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_BUDGET = 0, 1, 2, 3

COMMANDS = ("simulate", "kappa", "csbp-verify", "tails", "exponents", "spectrum", "dims",
            "xcheck", "verify")

# flag -> config key
_CONFIG_FLAGS = {
    "gamma": "gamma", "generator": "generator", "delta": "delta", "a0": "a0",
    "horizon": "horizon", "replicates": "replicates", "sample_size": "sample_size",
    "n": "sample_size", "level_set": "level_set", "seed": "seed", "budget": "budget",
    "out": "out", "law_cache": "law_cache", "root_mass": "root_mass", "profile": "profile",
}


def resolve_threads(requested: int | None = None) -> int:
    """Worker count: the request (default all cores), capped by STLAB_THREADS."""
    n = requested or os.cpu_count() or 1
    cap = os.environ.get("STLAB_THREADS")
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            pass
    return max(1, n)


class Run:
    """Artifact bookkeeping for one invocation."""

    def __init__(self, cfg: ExperimentConfig, command: str, threads: int = 1,
                 dat: bool = False, quiet: bool = False):
        self.cfg = cfg
        self.command = command
        self.threads = threads
        self.dat = dat
        self.quiet = quiet
        self.out = Path(cfg.out)
        self.files: dict[str, str] = {}
        self.timings: dict[str, float] = {}
        self.calibration: dict = {}
        self.summary: dict = {}

    def _record(self, path: Path):
        self.files[path.relative_to(self.out).as_posix()] = io.digest(path)

    def csv(self, name, header, rows):
        for path in io.write_csv(self.out / name, header, rows, dat_mirror=self.dat):
            self._record(path)

    def json(self, name, obj):
        self._record(io.write_json(self.out / name, obj))

    def say(self, *args):
        if not self.quiet:
            print(*args)

    @contextmanager
    def stage(self, name):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - t0

    def map(self, fn, items):
        """Apply fn over items on the worker pool; results come back in item order."""
        items = list(items)
        if self.threads <= 1 or len(items) <= 1:
            return [fn(i) for i in items]
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            return list(pool.map(fn, items))

    def manifest(self, status: str, error: str | None = None) -> dict:
        m = {
            "command": self.command,
            "config": self.cfg.echo(),
            "version": __version__,
            "calibration": self.calibration,
            "timings": self.timings,
            "files": dict(sorted(self.files.items())),
            "summary": self.summary,
            "status": status,
            "threads": self.threads,
        }
        if error:
            m["error"] = error
        io.write_json(self.out / "manifest.json", m)
        return m


def _table(cfg):
    return get_table(ModelParams(cfg.gamma), cache_dir=cfg.law_cache or None)


def _root_mass(cfg):
    return cfg.root_mass if cfg.root_mass > 0 else None


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(run: Run, opts) -> int:
    cfg = run.cfg
    p = ModelParams(cfg.gamma)
    status = EXIT_OK
    if cfg.generator in ("slice", "both"):
        tab = _table(cfg)

        def one(r):
            rng = rng_for(cfg.seed, r, "simulate-slice")
            try:
                t = grow(p, cfg.delta, cfg.a0, cfg.horizon, tab, rng, root_mass=_root_mass(cfg),
                         budget=cfg.budget)
                return r, t, None
            except BudgetExceeded as exc:
                return r, exc.partial, str(exc)

        with run.stage("slice"):
            results = run.map(one, range(cfg.replicates))
        rows = []
        for r, t, err in results:
            if err:
                status = EXIT_BUDGET
                run.summary.setdefault("budget_exceeded", []).append({"replicate": r, "error": err})
            for k in range(t.n_levels):
                rows.append((r, t.level_of(k), float(t.mass[k].sum()), int(t.mass[k].size)))
            if opts.dump_tree:
                run.csv(f"slice_tree_r{r:03d}.csv", ("id", "parent", "level", "mass"), t.iter_rows())
        run.csv("slice_levels.csv", ("replicate", "level", "local_time", "nodes"), rows)

    if cfg.generator in ("gw", "both"):
        from .gwtree import calibrate, height_path, sample_gw

        law = offspring(p)
        n = cfg.sample_size
        K = max(1, math.ceil(n ** (1 - 1 / p.gamma)))
        cal = calibrate(p, law, K)
        run.calibration = {"K": K, "c_h": float(cal.c_h), "c_l": float(cal.c_l)}

        def one_gw(r):
            (tree,), rate = sample_gw(law, rng_for(cfg.seed, r, "simulate-gw"), n)
            return r, tree, rate

        with run.stage("gw"):
            results = run.map(one_gw, range(cfg.replicates))
        rows, rates = [], []
        for r, tree, rate in results:
            rates.append(rate)
            sizes = np.bincount(tree.depth)
            for k, z in enumerate(sizes):
                rows.append((r, k, float(cal.c_h * k), int(z)))
            if opts.dump_tree:
                hp = height_path(tree, cal.c_h)
                run.csv(f"gw_height_r{r:03d}.csv", ("t", "height"), hp.rows())
        run.csv("gw_generations.csv", ("replicate", "generation", "height", "size"), rows)
        run.summary["gw_acceptance_rate"] = rates
    return status


def _parse_mu(s: str):
    return MU_INF if s.strip().lower() in ("inf", "infinity") else float(s)


def cmd_kappa(run: Run, opts) -> int:
    p = ModelParams(run.cfg.gamma)
    sol = kappa_solve(opts.a, opts.lam, _parse_mu(opts.mu), p)
    print(f"{sol.value:.17g}")
    run.csv("kappa.csv", ("gamma", "a", "lambda", "mu", "kappa", "residual"),
            [(p.gamma, opts.a, opts.lam, opts.mu, sol.value, sol.residual)])
    return EXIT_OK


def cmd_csbp_verify(run: Run, opts) -> int:
    from .csbp import BoundRow, verify_tail_bounds

    cfg = run.cfg
    p = ModelParams(cfg.gamma)
    tab = _table(cfg)
    kinds = ["low_mass", "infimum"] + ([] if p.is_quadratic else ["recovery", "sup_growth"])

    def one(i):
        return verify_tail_bounds(p, kinds[i], tab, rng_for(cfg.seed, i, "csbp-verify"),
                                  replicates=cfg.sample_size)

    with run.stage("bounds"):
        res = run.map(one, range(len(kinds)))
    rows, bad = [], 0
    for kind, block in zip(kinds, res):
        for row in block:
            rows.append((kind,) + row.csv_row())
            bad += not row.passed
    run.csv("bounds.csv", ("bound",) + BoundRow.CSV_COLUMNS, rows)
    run.summary["violations"] = bad
    run.say(f"{len(rows)} cells, {bad} violations")
    return EXIT_OK if bad == 0 else EXIT_FAIL


def cmd_tails(run: Run, opts) -> int:
    from .verify import tail_constant, tail_slopes

    cfg = run.cfg
    p = ModelParams(cfg.gamma)
    with run.stage("sample"):
        x = np.sort(_table(cfg).sample(rng_for(cfg.seed, 0, "tails"), cfg.sample_size))
    right, left = tail_slopes(x)
    n = x.size
    k = max(10, n // 100)
    rows = []
    for side, slope in (("right", right), ("left", left)):
        idx = np.unique(np.geomspace(1, k, 40).astype(int)) - 1
        for i in idx:
            if side == "right":
                xi, prob = x[n - 1 - i], (i + 1) / n
                kind = "lt_right"
            else:
                xi, prob = x[i], (i + 1) / n
                kind = "lt_left"
            try:
                asym = tail_asymptotics(kind, float(xi), p)
            except DomainError:
                asym = math.nan
            rows.append((side, float(xi), prob, asym, slope))
    run.csv("tails.csv", ("side", "x", "empirical", "asymptote", "fitted_slope"), rows)
    run.summary.update(right_slope=right, left_slope=left)
    if not p.is_quadratic:
        run.summary["right_constant"] = tail_constant(x, p.gamma)
        run.summary["right_constant_asymptote"] = tail_asymptotics("lt_right", 1.0, p)
    run.say(f"right-tail slope {right:.4f}  left-tail slope {left:.4f}")
    return EXIT_OK


def _exponent_setup(cfg):
    levels = int(round((cfg.horizon - cfg.a0) / cfg.delta))
    J = 0
    while J < 7 and 2 ** (J + 2) - 1 <= levels:
        J += 1
    if J < 3:
        raise ConfigError("horizon", "need at least 15 levels between a0 and horizon")
    return dict(gamma=cfg.gamma, delta=cfg.delta, a0=cfg.a0, k=levels - 2**J, J=J, roots=20,
                root_mass=cfg.root_mass or 0.05, per_batch=20)


def cmd_exponents(run: Run, opts) -> int:
    from .fractal import exponent_relations, pointwise_exponents
    from .verify import exponent_ensemble

    cfg = run.cfg
    setup = _exponent_setup(cfg)
    with run.stage("profiles"):
        p, profiles, info = exponent_ensemble(cfg, cfg.sample_size, setup, _table(cfg))
    est, dropped = pointwise_exponents(profiles, with_dropped=True)
    run.csv("exponents.csv", ("vertex", "alpha_l", "alpha_m", "alpha_b", "r2", "spread", "oscillating"),
            [(e.vertex, e.alpha_l, e.alpha_m, e.alpha_b, e.r2, e.spread, e.oscillating) for e in est])
    rel = exponent_relations(est, p)
    run.summary.update(
        median_alpha_l=float(np.median([e.alpha_l for e in est])),
        median_alpha_m=float(np.median([e.alpha_m for e in est])),
        implication_fraction=rel.implication_fraction,
        median_abs_residual=rel.residual_abs_median, dropped=len(dropped), setup=setup, **info)
    run.say(f"median alpha_l {run.summary['median_alpha_l']:.4f}  "
            f"median alpha_m {run.summary['median_alpha_m']:.4f}")
    return EXIT_OK


def _trees(run: Run, stage: str):
    cfg = run.cfg
    p = ModelParams(cfg.gamma)
    tab = _table(cfg)

    def one(r):
        return grow(p, cfg.delta, cfg.a0, cfg.horizon, tab, rng_for(cfg.seed, r, stage),
                    root_mass=_root_mass(cfg), budget=cfg.budget)

    with run.stage("grow"):
        return p, run.map(one, range(cfg.replicates))


def cmd_spectrum(run: Run, opts) -> int:
    from .fractal import spectrum

    cfg = run.cfg
    p, trees = _trees(run, "spectrum")
    k0 = trees[0].n_levels // 2
    with run.stage("exponents"):
        h = np.concatenate([box_exponents(t, t.level_of(k), cfg.delta)
                            for t in trees for k in range(k0, t.n_levels) if t.mass[k].size])
    sp = spectrum(h, cfg.delta, p, min_estimates=min(1000, h.size))
    run.csv("spectrum.csv", ("h", "count", "f_hat", "reference"), sp.rows())
    try:
        run.summary["slope"] = sp.slope(1 / p.gamma, p.p)
    except ValueError as exc:
        run.summary["slope_error"] = str(exc)
    run.summary.update(n_exponents=int(h.size), modal_bin=sp.extra["modal_bin"])
    return EXIT_OK


def cmd_dims(run: Run, opts) -> int:
    from .fractal import box_dimension

    cfg = run.cfg
    F = parse_level_set(cfg.level_set)
    p, trees = _trees(run, "dims")
    J = 0
    while F.lo - cfg.delta * 2 ** (J + 2) >= cfg.a0 - 1e-12 and J < 8:
        J += 1
    if J < 3:
        raise ConfigError("level_set", "lower end too close to a0 for four covering scales")
    scales = cfg.delta * 2.0 ** np.arange(J + 1)
    hi = F.hi if F.kind != "singleton" else cfg.horizon
    targets = [(f"T({F.lo:g})", F.lo, None, p.p),
               (f"T({F.kind})", F, None, p.p + F.dim),
               ("T", "tree", (F.lo, hi), p.gamma * p.p)]
    rows, summ = [], []
    with run.stage("covering"):
        for name, tgt, window, ref in targets:
            de = box_dimension(trees, tgt, scales, window=window, name=name)
            rows.extend((name, r, c) for r, c in de.rows())
            summ.append((name, de.slope, de.se, de.ci[0], de.ci[1], ref))
    run.csv("dims.csv", ("target", "scale", "mean_count"), rows)
    run.csv("dims_summary.csv", ("target", "slope", "se", "ci_lo", "ci_hi", "reference"), summ)
    for s in summ:
        run.say(f"{s[0]:>14s}  {s[1]:.4f} +- {s[2]:.4f}  (reference {s[5]:.4f})")
    return EXIT_OK


def cmd_xcheck(run: Run, opts) -> int:
    from scipy import stats

    from .gwtree import mid_level_cdf, mid_level_local_times

    cfg = run.cfg
    p = ModelParams(cfg.gamma)
    K = 50 if p.is_quadratic else 40
    with run.stage("gw"):
        x, cal = mid_level_local_times(p, offspring(p), K, cfg.sample_size,
                                       rng_for(cfg.seed, 0, "xcheck"))
    cdf = mid_level_cdf(p, cal)
    ks = stats.kstest(x, cdf)
    run.calibration = {"K": K, "c_h": float(cal.c_h), "c_l": float(cal.c_l)}
    us = np.linspace(0.01, 0.99, 99)
    q = np.quantile(x, us)
    run.csv("xcheck.csv", ("u", "x", "reference_cdf"), zip(us, q, cdf(q)))
    run.summary.update(ks_D=float(ks.statistic), ks_p=float(ks.pvalue), K=K)
    run.say(f"KS D={ks.statistic:.5f} p={ks.pvalue:.4f}")
    return EXIT_OK


def cmd_verify(run: Run, opts) -> int:
    from .verify import verify_all

    only = [int(s) for s in opts.only.split(",")] if opts.only else None
    rep = verify_all(run.cfg, only=only, echo=None if run.quiet else print)
    run.json("verify_report.json", rep)
    run.summary["overall"] = rep["overall"]
    return EXIT_OK if rep["overall"] else EXIT_FAIL


HANDLERS = {
    "simulate": cmd_simulate, "kappa": cmd_kappa, "csbp-verify": cmd_csbp_verify,
    "tails": cmd_tails, "exponents": cmd_exponents, "spectrum": cmd_spectrum, "dims": cmd_dims,
    "xcheck": cmd_xcheck, "verify": cmd_verify,
}


def _default_opts(**kw):
    ns = argparse.Namespace(dump_tree=False, only=None, a=1.0, lam=1.0, mu="0")
    for k, v in kw.items():
        setattr(ns, k, v)
    return ns


def run_command(command: str, cfg: ExperimentConfig, threads: int | None = None,
                quiet: bool = False, opts=None, dat: bool = False):
    """Run one subcommand; returns (exit status, manifest dict)."""
    if command not in HANDLERS:
        raise ConfigError("command", f"unknown subcommand {command!r}")
    run = Run(cfg, command, resolve_threads(threads), dat, quiet)
    opts = opts or _default_opts()
    try:
        with run.stage("total"):
            status = HANDLERS[command](run, opts)
    except BudgetExceeded as exc:
        return EXIT_BUDGET, run.manifest("partial", str(exc))
    except Exception as exc:
        return EXIT_FAIL, run.manifest("error", f"{type(exc).__name__}: {exc}")
    label = {EXIT_OK: "ok", EXIT_BUDGET: "partial"}.get(status, "failed")
    return status, run.manifest(label)


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("configuration")
    g.add_argument("--config", help="key=value config file")
    g.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key (repeatable)")
    g.add_argument("--gamma", type=float)
    g.add_argument("--generator", choices=("slice", "gw", "both"))
    g.add_argument("--delta", type=float)
    g.add_argument("--a0", type=float)
    g.add_argument("--horizon", type=float)
    g.add_argument("--replicates", type=int)
    g.add_argument("--sample-size", dest="sample_size")
    g.add_argument("--level-set", dest="level_set", help="singleton:a | interval:u:v | cantor:u:v")
    g.add_argument("--seed", type=int)
    g.add_argument("--budget")
    g.add_argument("--out")
    g.add_argument("--law-cache", dest="law_cache", help="directory for local-time law tables")
    g.add_argument("--root-mass", dest="root_mass", type=float)
    g.add_argument("--profile", choices=("desk", "trim"))
    r = common.add_argument_group("run")
    r.add_argument("--threads", type=int, help="worker threads (capped by STLAB_THREADS)")
    r.add_argument("--export", choices=("csv", "dat"), default="csv",
                   help="dat also writes whitespace-separated mirrors")
    r.add_argument("--dump-tree", action="store_true", help="write every node (simulate)")
    r.add_argument("-q", "--quiet", action="store_true")

    ap = argparse.ArgumentParser(prog="stlab", description="Stable Levy tree laboratory.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "kappa":
            sp.add_argument("--a", type=float, default=1.0)
            sp.add_argument("--lambda", dest="lam", type=float, default=1.0)
            sp.add_argument("--mu", default="0", help="number or 'inf'")
        if name == "tails":
            sp.add_argument("--n", dest="n", help="sample size (alias of --sample-size)")
        if name == "verify":
            sp.add_argument("--only", help="comma-separated criterion numbers")
    return ap


def config_from_args(args) -> ExperimentConfig:
    cfg = load(args.config) if args.config else ExperimentConfig()
    pairs = {}
    for flag, key in _CONFIG_FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            pairs[key] = v
    for item in args.set:
        if "=" not in item:
            raise ConfigError(item, "expected KEY=VALUE")
        k, v = item.split("=", 1)
        pairs[k.strip()] = v.strip()
    return cfg.with_overrides(pairs)


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        cfg = config_from_args(args)
    except (ConfigError, OSError) as exc:
        ap.error(f"invalid config: {exc}")
    status, manifest = run_command(args.command, cfg, args.threads, args.quiet, args,
                                   dat=args.export == "dat")
    if manifest.get("error"):
        print(f"stlab {args.command}: {manifest['status']}: {manifest['error']}", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
