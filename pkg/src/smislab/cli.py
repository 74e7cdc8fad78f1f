"""Command-line entry point: ``smislab {synth,score,backtest,validate,regress,report}``.

Exit codes: 0 success, 1 data/validation/solver error, 2 usage error.
Every command writes ``manifest.json`` into its output directory.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import re
import sys
from datetime import datetime, timezone
from pathlib import Path

import pandas as pd

from . import __version__
from .backtest import BacktestConfig, random_validation, run_backtest
from .data import load_dataset, load_panel, quarter_range
from .econometrics import DEFAULT_TAUS, build_regression_panel, mmqr_fit
from .exceptions import SmislabError
from .scoring import SIGNIFICANCE, ScoreTable, score_history
from .synth import SynthConfig, config_dict, generate, write_dataset

logger = logging.getLogger("smislab")

SEED_ENV = "SMISLAB_SEED"
MANIFEST = "manifest.json"
DATA_FILES = ("holdings.csv", "funds.csv", "prices.csv", "esg.csv", "shares.csv")
STRATEGIES = ("esg", "smis", "tt", "tb", "bt")
ENGINES = ("tilt", "cvar", "evar", "mv", "sharpe")


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _digest(obj):
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _seed(args):
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError:
            raise SmislabError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return args.seed


def write_manifest(out_dir, command, config, inputs, seed, artifacts, started):
    """Record one command run; earlier runs in the same directory are kept under ``runs``."""
    out = Path(out_dir)
    path = out / MANIFEST
    previous = json.loads(path.read_text()) if path.exists() else {}
    entry = {
        "command": command,
        "config": config,
        "config_digest": _digest(config),
        "inputs": {str(p): _sha256(p) for p in inputs if Path(p).exists()},
        "seed": seed,
        "artifacts": {name: {"path": Path(p).name, "sha256": _sha256(p)} for name, p in artifacts.items()},
        "started": started,
        "finished": _now(),
        "version": __version__,
    }
    runs = previous.get("runs", {})
    runs[command] = entry
    manifest = dict(entry, runs=runs)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def read_manifest(out_dir):
    path = Path(out_dir) / MANIFEST
    if not path.exists():
        raise SmislabError(f"no {MANIFEST} in {out_dir}")
    return json.loads(path.read_text())


def _data_inputs(data_dir):
    return [Path(data_dir) / f for f in DATA_FILES]


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args):
    started = _now()
    seed = _seed(args)
    cfg = SynthConfig(n_assets=args.n_assets, n_art9=args.n_art9, n_art8=args.n_art8, n_art6=args.n_art6,
                      n_quarters=args.n_quarters, first_quarter=args.first_quarter,
                      hold_link=args.hold_link, drift_link=args.drift_link, rng_seed=seed)
    paths = write_dataset(generate(cfg), args.out)
    write_manifest(args.out, "synth", config_dict(cfg), [], seed, paths, started)
    return 0


def _load_scores_source(args):
    if args.data:
        return load_dataset(args.data, quarters=[]), _data_inputs(args.data)
    if not (args.holdings and args.funds):
        raise SmislabError("give --data or both --holdings and --funds")
    return load_panel(args.holdings, args.funds), [Path(args.holdings), Path(args.funds)]


def cmd_score(args):
    started = _now()
    source, inputs = _load_scores_source(args)
    panel = getattr(source, "panel", source)
    quarters = quarter_range(args.quarter_range) if args.quarter_range else panel.quarters
    table = score_history(source, quarters)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = table.to_csv(out / "scores.csv")
    for q, reason in table.gaps.items():
        print(f"warning: {q}: {reason}", file=sys.stderr)
    config = {"quarter_range": args.quarter_range, "gaps": {str(q): r for q, r in table.gaps.items()}}
    write_manifest(out, "score", config, inputs, None, {"scores": path}, started)
    return 0


def _backtest_config(args, seed):
    return BacktestConfig(start=args.start, end=args.end, strategy=args.strategy, engine=args.engine,
                          k=args.k, overlay=args.overlay, calibration_days=args.calibration_days,
                          alpha=args.alpha, rng_seed=seed, benchmark_size=args.benchmark_size,
                          hard_fail=not args.skip_bad_quarters)


def cmd_backtest(args):
    started = _now()
    seed = _seed(args)
    config = _backtest_config(args, seed)
    dataset = load_dataset(args.data, quarters=[])
    report = run_backtest(config, dataset)
    paths = report.write(args.out)
    cfg = dict(config.to_dict(), data=str(Path(args.data).resolve()))
    write_manifest(args.out, "backtest", cfg, _data_inputs(args.data), seed, paths, started)
    return 0


def cmd_validate(args):
    started = _now()
    manifest = read_manifest(args.out)
    run = manifest.get("runs", {}).get("backtest")
    if run is None:
        raise SmislabError(f"{args.out} holds no backtest run; run `smislab backtest` first")
    cfg = dict(run["config"])
    data = cfg.pop("data")
    cfg.update(n_random=args.n_random, ci_level=args.ci)
    if os.environ.get(SEED_ENV, "").strip():
        cfg["rng_seed"] = _seed(args)
    config = BacktestConfig.from_dict(cfg)
    dataset = load_dataset(data, quarters=[])
    report = random_validation(config, dataset, run_backtest(config, dataset), jobs=args.jobs)
    paths = report.write(args.out)
    write_manifest(args.out, "validate", dict(config.to_dict(), data=data), _data_inputs(data),
                   config.rng_seed, paths, started)
    return 0


def _scores_for(args, dataset):
    if args.scores:
        return ScoreTable.read_csv(args.scores), [Path(args.scores)]
    return score_history(dataset, dataset.panel.quarters), []


def _parse_taus(text):
    try:
        taus = tuple(float(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad tau list {text!r}") from None
    if not all(0 < t < 1 for t in taus):
        raise argparse.ArgumentTypeError("taus must lie in (0, 1)")
    return taus


def cmd_regress(args):
    started = _now()
    seed = _seed(args)
    dataset = load_dataset(args.data, quarters=[])
    scores, extra = _scores_for(args, dataset)
    panel = build_regression_panel(dataset, scores)
    fit = mmqr_fit(panel, args.taus, bootstrap=args.bootstrap, seed=seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = fit.to_csv(out / "regression_results.csv")
    config = {"taus": list(args.taus), "bootstrap": args.bootstrap, "n_obs": fit.n_obs,
              "dropped": panel.dropped, "n_clipped": fit.n_clipped}
    write_manifest(out, "regress", config, _data_inputs(args.data) + extra, seed, {"regression": path}, started)
    return 0


def cmd_report(args):
    started = _now()
    dataset = load_dataset(args.data, quarters=[])
    scores, extra = _scores_for(args, dataset)
    frame = scores.frame.copy()
    esg = dataset.esg.reset_index()
    frame["year"] = [(q - 1).year for q in frame["quarter"]]
    merged = frame.merge(esg[["asset_id", "year", "esg_score", "gics_sector"]], on=["asset_id", "year"], how="left")
    merged = merged.dropna(subset=["esg_score", "smis"])
    merged["quarter"] = merged["quarter"].astype(str)
    scatter = pd.DataFrame({"quarter": merged["quarter"], "asset_id": merged["asset_id"],
                            "esg": merged["esg_score"], "smis": merged["smis"],
                            "significant": (merged["p_value"] < SIGNIFICANCE).astype(int)})
    sectors = (merged.dropna(subset=["gics_sector"])
               .groupby(["quarter", "gics_sector"], sort=True)
               .agg(mean_smis=("smis", "mean"), mean_esg=("esg_score", "mean"), n_assets=("asset_id", "size"))
               .reset_index())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"scatter": out / "scatter.csv", "sectors": out / "sectors.csv"}
    scatter.to_csv(paths["scatter"], index=False, float_format="%.10g")
    sectors.to_csv(paths["sectors"], index=False, float_format="%.10g")
    write_manifest(out, "report", {"format": args.format}, _data_inputs(args.data) + extra, None, paths, started)
    return 0


# ---------------------------------------------------------------------------
# parser


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser():
    p = argparse.ArgumentParser(prog="smislab", description="SFDR market-implied sustainability toolkit")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--jobs", type=_positive_int, default=os.cpu_count() or 1,
                   help="worker processes for parallel steps (default: CPU count)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n-assets", type=_positive_int, default=400)
    s.add_argument("--n-art9", type=_positive_int, default=30)
    s.add_argument("--n-art8", type=int, default=120)
    s.add_argument("--n-art6", type=int, default=30)
    s.add_argument("--n-quarters", type=_positive_int, default=56)
    s.add_argument("--first-quarter", default="2010Q1")
    s.add_argument("--hold-link", type=float, default=2.0)
    s.add_argument("--drift-link", type=float, default=0.15)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("score", help="SMIS and SMISw per asset and quarter")
    s.add_argument("--data", help="directory with the standard CSV files")
    s.add_argument("--holdings")
    s.add_argument("--funds")
    s.add_argument("--quarter-range", help="e.g. 2010Q1:2012Q4")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("backtest", help="tilted or optimized strategy against the benchmark")
    s.add_argument("--data", required=True)
    s.add_argument("--strategy", choices=STRATEGIES, default="smis")
    s.add_argument("--engine", choices=ENGINES, default="tilt")
    s.add_argument("--k", type=_positive_int, default=100)
    s.add_argument("--overlay", type=float, default=0.10)
    s.add_argument("--alpha", type=float, default=0.95)
    s.add_argument("--calibration-days", type=int, default=250)
    s.add_argument("--benchmark-size", type=_positive_int, default=600)
    s.add_argument("--start", default="2010-04-01")
    s.add_argument("--end", default="2023-12-31")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--skip-bad-quarters", action="store_true",
                   help="hold the benchmark in quarters where selection fails instead of stopping")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_backtest)

    s = sub.add_parser("validate", help="random-selection confidence bounds for a finished backtest")
    s.add_argument("--out", required=True, help="directory of the backtest run")
    s.add_argument("--n-random", type=int, default=200)
    s.add_argument("--ci", type=float, default=0.90)
    s.add_argument("--seed", type=int, default=None)
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("regress", help="location-scale quantile regression of SMIS")
    s.add_argument("--data", required=True)
    s.add_argument("--scores", help="scores.csv (computed from --data when omitted)")
    s.add_argument("--taus", type=_parse_taus, default=DEFAULT_TAUS)
    s.add_argument("--bootstrap", type=int, default=0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_regress)

    s = sub.add_parser("report", help="figure-ready CSVs")
    s.add_argument("--data", required=True)
    s.add_argument("--scores")
    s.add_argument("--format", choices=("csv",), default="csv")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_report)
    return p


def _slug(exc):
    name = type(exc).__name__.removesuffix("Error")
    return re.sub(r"(?<!^)(?=[A-Z])", "-", name).lower() or "error"


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (SmislabError, FileNotFoundError, ValueError) as exc:
        print(f"error: {_slug(exc)}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
