"""Command-line interface: ``analyze``, ``simulate``, ``figure-data``, ``selftest``."""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path


from . import sim
from .errors import MetaError
from .grid import expand_grid, load_config
from .io import fmt, read_dataset, write_figure_data, write_results
from .qstat import as_effect_set
from .study import EffectSet


def _select(tokens: str | None):
    """Resolve comma-separated tokens: full tags, ``family.*`` or bare method
    names, which match that name in every family."""
    if not tokens:
        return sim.ALL_TAGS
    sel = []
    for tok in (t.strip() for t in tokens.split(",")):
        if not tok:
            continue
        if "." in tok:
            sel.append(tok)
            continue
        hit = [t for t in sim.ALL_TAGS if t.split(".", 1)[1].upper() == tok.upper()]
        if not hit:
            raise MetaError(f"unknown method {tok!r}")
        sel.extend(hit)
    return sim.resolve_methods(sel)


def cmd_analyze(args) -> int:
    ids, studies = read_dataset(args.file)
    es = as_effect_set(studies)
    tags = _select(args.methods)
    batch = EffectSet(es.y[None], es.v2[None], es.g[None], es.n_t[None], es.n_c[None])
    res = {t: {k: v[0] for k, v in r.items()} for t, r in sim.evaluate(batch, tags, args.level).items()}
    out = sys.stdout
    w = max(len(i) for i in ids + ["study_id"])
    print(f"K = {es.K} studies, level = {args.level:g}", file=out)
    print(f"{'study_id':<{w}}  {'y':>16}  {'v2':>16}", file=out)
    for i, sid in enumerate(ids):
        print(f"{sid:<{w}}  {fmt(es.y[i]):>16}  {fmt(es.v2[i]):>16}", file=out)

    def section(title, fam, cols):
        rows = [(t.split(".", 1)[1], r) for t, r in res.items() if t.split(".", 1)[0] == fam]
        if not rows:
            return
        print(f"\n{title}", file=out)
        print(f"{'method':<10}" + "".join(f"  {c:>16}" for c in cols) + "  converged", file=out)
        for m, r in rows:
            print(f"{m:<10}" + "".join(f"  {fmt(r[c]):>16}" for c in cols) + f"  {'yes' if r['ok'] else 'no'}", file=out)

    section("tau2 estimates", "tau2", ["value"])
    section("tau2 intervals", "tau2ci", ["lower", "upper"])
    section("mu estimates", "mu", ["value"])
    section("mu intervals", "muci", ["lower", "upper"])
    t_based = [t for t in res if t.startswith(("muci.HKSJ", "muci.SSW"))]
    if es.K == 2 and t_based:
        print("\nnote: with K = 2 the t-based mu intervals rest on 1 degree of freedom", file=out)
    return 0


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    if args.reps is not None:
        cfg["reps"] = args.reps
    if args.seed is not None:
        cfg["seed"] = args.seed
    scenarios = expand_grid(cfg)
    tags = sim.resolve_methods(cfg.get("methods"))
    output = args.output or cfg.get("output") or "results.csv"
    t0 = time.monotonic()

    def progress(i, n, sc):
        if not args.quiet:
            print(f"[{i}/{n}] K={sc.K} n={sc.n_label} q={sc.q:g} sigma2=({sc.sigma2_c:g},{sc.sigma2_t:g}) "
                  f"tau2={sc.tau2:g} mu={sc.mu:g} ({time.monotonic() - t0:.1f}s)", file=sys.stderr)

    metrics = sim.run_grid(scenarios, tags, cfg.get("level", 0.95), args.threads, progress)
    write_results(metrics, output)
    if not args.quiet:
        print(f"wrote {output} ({len(scenarios)} scenarios)", file=sys.stderr)
    return 0


def cmd_figure_data(args) -> int:
    paths = write_figure_data(args.results, args.family, args.n, args.K, args.outdir)
    for p in paths:
        print(p)
    return 0


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    return 0 if run_selftest(verbose=not args.quiet) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mdmeta", description="Random-effects meta-analysis of mean differences.")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="estimate tau2 and mu for a study CSV")
    a.add_argument("file", type=Path)
    a.add_argument("--level", type=float, default=0.95)
    a.add_argument("--methods", help="comma-separated method names or tags (default: all)")
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("simulate", help="run a scenario grid from a JSON config or preset")
    s.add_argument("config", help="config path or preset name (table2, table2-small)")
    s.add_argument("--output", "-o")
    s.add_argument("--reps", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--threads", type=int, help=f"worker processes (default ${sim.THREADS_ENV} or 1)")
    s.add_argument("--quiet", "-q", action="store_true")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("figure-data", help="pivot a results file into panel files")
    f.add_argument("results", type=Path)
    f.add_argument("--family", required=True)
    f.add_argument("--n", required=True, help='size label, e.g. "20" or "u30"')
    f.add_argument("--K", type=int, required=True)
    f.add_argument("--outdir", default="figure-data")
    f.set_defaults(func=cmd_figure_data)

    t = sub.add_parser("selftest", help="run the built-in checks")
    t.add_argument("--quiet", "-q", action="store_true")
    t.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (MetaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
