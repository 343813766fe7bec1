"""Command-line front end.

Commands::

    ccmar run   --scenario FILE [--reps N] [--n N] [--seed S] [--workers W] --out DIR
    ccmar truth --scenario FILE [--nmc N] [--repeats R]
    ccmar table --in RESULTS [--format csv|markdown] [--truth T]
    ccmar hist  --in RESULTS --estimator ID [--bins B]

Exit codes: 0 success, 2 configuration error, 3 runtime error (every
replicate failed, or no usable output).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import load_shipped, parse_scenario_file, serialize, shipped_scenarios
from .errors import CcmarError, ConfigError, SchemaError
from .estimators import CCMAR_IF
from .harness import compute_truth, default_workers, run_scenario, summarize
from .report import emit_histogram_data, emit_table, read_results, write_results

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
log = logging.getLogger("ccmar")


class RuntimeFailure(CcmarError):
    pass


def _load(name: str):
    path = Path(name)
    if not path.exists() and name in shipped_scenarios():
        return load_shipped(name)
    return parse_scenario_file(path)


def _versions() -> dict:
    return {"ccmar": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": sys.version.split()[0]}


def _reference(suite):
    return CCMAR_IF if CCMAR_IF in suite else suite[0]


def cmd_run(args) -> int:
    config = _load(args.scenario)
    updates = {}
    if args.reps is not None:
        updates["replicates"] = args.reps
    if args.n is not None:
        updates["n"] = args.n
    if args.seed is not None:
        updates["master_seed"] = args.seed
    if args.truth_value is not None:
        updates["truth_value"] = args.truth_value
    if updates:
        config = config.with_updates(**updates)
    workers = args.workers if args.workers is not None else default_workers()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = run_scenario(config, workers=workers)
    write_results(results, out / "results.csv")
    failed = sum(r.record.error is not None for r in results.records)
    if failed == len(results.records):
        raise RuntimeFailure("every replicate failed; see the error column of results.csv")

    truth = compute_truth(config, n_mc=args.nmc) if args.nmc else compute_truth(config)
    rows = summarize(results, truth.value, reference=_reference(config.suite), order=config.suite)
    (out / "metrics.csv").write_text(emit_table(rows, "csv"), encoding="utf-8")
    (out / "metrics.md").write_text(emit_table(rows, "markdown"), encoding="utf-8")
    (out / "scenario.toml").write_text(serialize(config), encoding="utf-8")
    meta = {
        "scenario": config.name, "master_seed": config.master_seed, "replicates": config.replicates,
        "n": config.n, "workers": workers,
        "pi_clip": None if config.pi_clip is None else list(config.pi_clip),
        "truth": {"value": truth.value, "mc_se": truth.mc_se, "method": truth.method},
        "flags": results.meta["flags"], "failed_records": failed,
        "dropped": {r.estimator: r.dropped for r in rows},
        "elapsed_seconds": round(results.elapsed, 3), "versions": _versions(),
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(emit_table(rows, "markdown"), end="")
    return EXIT_OK


def cmd_truth(args) -> int:
    config = _load(args.scenario)
    truth = compute_truth(config, n_mc=args.nmc, repeats=args.repeats) if (args.nmc or args.repeats) \
        else compute_truth(config)
    print(json.dumps({"value": truth.value, "mc_se": truth.mc_se, "method": truth.method}))
    return EXIT_OK


def _truth_for(source: Path, given):
    if given is not None:
        return given
    meta = (source if source.is_dir() else source.parent) / "meta.json"
    if not meta.exists():
        raise ConfigError(f"no --truth given and no {meta} to read it from")
    return float(json.loads(meta.read_text(encoding="utf-8"))["truth"]["value"])


def cmd_table(args) -> int:
    source = Path(args.inp)
    results = read_results(source)
    suite = list(results.by_estimator())
    if not suite:
        raise RuntimeFailure("results file holds no records")
    rows = summarize(results, _truth_for(source, args.truth), reference=_reference(suite))
    print(emit_table(rows, args.format, args.decimals), end="")
    return EXIT_OK


def cmd_hist(args) -> int:
    results = read_results(args.inp)
    print(emit_histogram_data(results, args.estimator, args.bins), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ccmar", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a simulation scenario")
    r.add_argument("--scenario", required=True, help="scenario file, or the name of a shipped scenario")
    r.add_argument("--reps", type=int)
    r.add_argument("--n", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--workers", type=int, help="worker processes (default: $CCMAR_WORKERS or 1)")
    r.add_argument("--nmc", type=int, help="Monte Carlo draws for the truth (default from the scenario)")
    r.add_argument("--truth-value", type=float, help="skip the truth computation and use this value")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_run)

    t = sub.add_parser("truth", help="compute the true ATE of a scenario")
    t.add_argument("--scenario", required=True)
    t.add_argument("--nmc", type=int)
    t.add_argument("--repeats", type=int)
    t.set_defaults(func=cmd_truth)

    tb = sub.add_parser("table", help="summarize a results file")
    tb.add_argument("--in", dest="inp", required=True, help="results.csv or a run directory")
    tb.add_argument("--format", choices=("csv", "markdown"), default="markdown")
    tb.add_argument("--truth", type=float, help="true ATE (default: read from meta.json)")
    tb.add_argument("--decimals", type=int, default=1, help="decimals for the bias columns")
    tb.set_defaults(func=cmd_table)

    h = sub.add_parser("hist", help="histogram data for one estimator")
    h.add_argument("--in", dest="inp", required=True)
    h.add_argument("--estimator", required=True)
    h.add_argument("--bins", type=int, default=30)
    h.set_defaults(func=cmd_hist)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, SchemaError) as err:
        print(f"ccmar: configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (CcmarError, ArithmeticError, OSError) as err:
        print(f"ccmar: error: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
