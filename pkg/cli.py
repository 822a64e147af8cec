"""
TVineSynth - Main Orchestrator
==============================

Command-line entry point for the truncated C-vine synthetic data generator
and its privacy / utility evaluation harness.

Workflow:
---------
- Step 1 (order):   place the sensitive covariates and their strongly
                    associated covariates at the start of the order O*
- Step 2 (fit):     estimate the C-vine once, up to the maximal truncation level
- Step 3 (sweep):   truncate at every candidate level, score utility (TSTR AUC)
                    and privacy (MAB or PG), and draw the privacy-utility plot

Commands:
---------
    python cli.py simulate --n 1000 --seed 1 --out-dir run
    python cli.py split DATA.csv --test-fraction 0.2 --out-dir run
    python cli.py order DATA.csv --sensitive x6 --out-dir run
    python cli.py fit DATA.csv --order run/order.json --t-max 20 --out-dir run
    python cli.py sample run/model.json --truncate 11 -n 1000 --out-dir run
    python cli.py attack aia DATA.csv --order run/order.json --sensitive x6 --out-dir run
    python cli.py utility DATA.csv TEST.csv --model run/model.json --out-dir run
    python cli.py fidelity DATA.csv SYNTH.csv --out-dir run
    python cli.py sweep DATA.csv TEST.csv --order run/order.json --truncations 1,11,12,18,20 \\
        --privacy mab --sensitive x6 --out-dir run
    python cli.py summary run/model.json --edges

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
"""

import argparse
import json
import logging
import os
import sys
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from pydantic import ValidationError

# Add the repository root to the path for `tools` imports
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from observability import log_artifacts, log_stage_execution, tracked_run
from tools import __version__
from tools.config_tool import Settings, load_attack_config, load_settings
from tools.cvine_tool import fit_cvine, load_model, sample, save_model, summary, truncate
from tools.datagen_tool import reference_block_spec, simulate, train_test_split
from tools.dataset_tool import Dataset, RunManifest, Stopwatch, read_csv, write_csv, write_manifest
from tools.errors import DataError, TVineError, UsageError
from tools.evaluation_tool import (
    SweepConfig,
    fidelity,
    plot_privacy_utility,
    read_competitors,
    sweep,
    utility_replicates,
    utility_trtr,
    write_sweep_csv,
    write_tau_matrices,
)
from tools.forest_tool import ForestConfig
from tools.ordering_tool import OrderResult, OrderSpec, find_order
from tools.privacy_tool import CVineGenerator, run_aia, run_mia, select_targets
from tools.numerics_tool import RngStream, Stream


# ============================================================================
# HELPERS
# ============================================================================

def banner(title: str):
    print("\n" + "=" * 60)
    print(title)
    print("=" * 60)


def write_json(path: str, payload) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as f:
        json.dump(payload, f, indent=2)
    return path


def load_order(path: str, data: Optional[Dataset] = None) -> OrderResult:
    """Read an order file written by `order`; the column names must match the data."""
    if not os.path.exists(path):
        raise DataError(f"Order file not found: {path}")
    try:
        with open(path, "r") as f:
            result = OrderResult(**json.load(f))
    except (json.JSONDecodeError, TypeError, ValidationError) as e:
        raise DataError(f"Invalid order file {path}: {e}")
    if data is not None:
        if sorted(result.order) != list(range(data.n_features)):
            raise DataError(f"order in {path} is not a permutation of the {data.n_features} covariates")
        if result.names and tuple(result.names) != data.names:
            raise DataError(f"order in {path} was computed for columns {result.names}")
    return result


def sensitive_index(data: Dataset, name: str) -> int:
    return data.column_index(name)


def parse_truncations(text: str) -> List[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"--truncations expects comma-separated integers, got '{text}'")


def base_stream(args) -> RngStream:
    return RngStream(int(args.seed))


def finish(args, command: str, inputs: Dict[str, str], config: Dict, outputs: List[str], clock: Stopwatch):
    manifest = RunManifest(
        command=command,
        inputs=inputs,
        config=config,
        base_seed=int(args.seed),
        tool_version=__version__,
        wall_clock_s=clock.elapsed(),
        outputs=[os.path.basename(p) for p in outputs],
    )
    write_manifest(args.out_dir, manifest)
    for path in outputs:
        print(f"[OK] wrote {path}")


# ============================================================================
# COMMANDS
# ============================================================================

def cmd_simulate(args) -> int:
    """Two-class block-Gaussian train and test sets."""
    clock = Stopwatch()
    if args.n < 1:
        raise UsageError("--n must be at least 1")
    if not 0.0 < args.test_fraction < 1.0:
        raise UsageError("--test-fraction must lie in (0, 1)")
    spec = reference_block_spec()
    base = base_stream(args)
    n_test = max(1, int(round(args.n * args.test_fraction / (1.0 - args.test_fraction))))
    train = simulate(spec, args.n, base.derive(Stream.SIMULATE, 0))
    test = simulate(spec, n_test, base.derive(Stream.SIMULATE, 1))
    outputs = [
        write_csv(train, os.path.join(args.out_dir, "train.csv")),
        write_csv(test, os.path.join(args.out_dir, "test.csv")),
    ]
    finish(args, "simulate", {}, {"n": args.n, "n_test": n_test, "test_fraction": args.test_fraction},
           outputs, clock)
    return 0


def cmd_split(args) -> int:
    clock = Stopwatch()
    data = read_csv(args.data, args.response)
    train, test = train_test_split(data, args.test_fraction, base_stream(args).derive(Stream.SPLIT))
    outputs = [
        write_csv(train, os.path.join(args.out_dir, "train.csv")),
        write_csv(test, os.path.join(args.out_dir, "test.csv")),
    ]
    finish(args, "split", {"data": args.data}, {"test_fraction": args.test_fraction}, outputs, clock)
    return 0


def cmd_order(args) -> int:
    clock = Stopwatch()
    data = read_csv(args.data, args.response)
    spec = OrderSpec(
        sensitive=[sensitive_index(data, name) for name in args.sensitive],
        threshold=args.threshold,
        association=args.association,
    )
    result = find_order(data, spec)
    path = write_json(os.path.join(args.out_dir, "order.json"), result.model_dump())
    print(f"[OK] O* = {result.order_names()}")
    print(f"     associated K = {[data.names[k] for k in result.associated]}")
    print(f"     safe truncation bound = {result.safe_truncation_bound}, "
          f"recommended t_max = {result.recommended_t_max}")
    finish(args, "order", {"data": args.data}, spec.model_dump(), [path], clock)
    return 0


def cmd_fit(args) -> int:
    clock = Stopwatch()
    data = read_csv(args.data, args.response)
    order = load_order(args.order, data)
    t_max = args.t_max or data.n_features
    model = fit_cvine(data, order.order, t_max, base_stream(args).derive(Stream.FIT), jobs=args.jobs)
    path = save_model(model, os.path.join(args.out_dir, "model.json"))
    print(f"[OK] fitted C-vine with {data.n_features} covariates up to tree {t_max}")
    finish(args, "fit", {"data": args.data, "order": args.order}, {"t_max": t_max}, [path], clock)
    return 0


def cmd_sample(args) -> int:
    clock = Stopwatch()
    model = load_model(args.model)
    if args.truncate is not None:
        model = truncate(model, args.truncate)
    n = args.n or model.n_train
    synthetic = sample(model, n, base_stream(args).derive(Stream.SAMPLE))
    path = write_csv(synthetic, os.path.join(args.out_dir, "synthetic.csv"))
    finish(args, "sample", {"model": args.model}, {"truncate": model.truncation_level, "n": n}, [path], clock)
    return 0


def cmd_attack(args) -> int:
    clock = Stopwatch()
    data = read_csv(args.data, args.response)
    order = load_order(args.order, data)
    aia_cfg, mia_cfg = load_attack_config(args.config)
    j = sensitive_index(data, args.sensitive)
    t_max = args.t_max or data.n_features
    generator = CVineGenerator(order.order, t_max=t_max, truncation=args.truncate)
    base = base_stream(args)
    targets = select_targets(data, j, args.targets, args.n_targets, base.derive(Stream.TARGETS))
    config = {"t_max": t_max, "truncate": args.truncate, "targets": args.targets, "n_targets": args.n_targets}
    inputs = {"data": args.data, "order": args.order}
    if args.config:
        inputs["config"] = args.config

    banner(f"{args.game.upper()} GAME  sensitive={args.sensitive}  targets={targets.tolist()}")
    if args.game == "aia":
        report = run_aia(data, generator, j, targets, aia_cfg, base.derive(Stream.AIA), jobs=args.jobs)
        payload = report.to_dict()
        payload["sensitive_name"] = args.sensitive
        outputs = [write_json(os.path.join(args.out_dir, "aia_report.json"), payload)]
        frame_path = os.path.join(args.out_dir, "aia_iterations.csv")
        pd.DataFrame(report.iteration_rows()).to_csv(frame_path, index=False, float_format="%.17g")
        outputs.append(frame_path)
        print(f"[OK] MAB = {report.mab:.4f}   WCAB = {report.wcab:.4f}   MR2 = {report.mr2:.4f}")
        config["aia"] = aia_cfg.model_dump()
    else:
        reports = [
            run_mia(data, generator, int(t), mia_cfg, base.derive(Stream.MIA, int(t)), jobs=args.jobs)
            for t in targets
        ]
        gains = [r.privacy_gain for r in reports]
        payload = {"reports": [r.to_dict() for r in reports], "median_privacy_gain": float(np.median(gains))}
        outputs = [write_json(os.path.join(args.out_dir, "mia_report.json"), payload)]
        rows = [dict(row, target_index=r.target_index) for r in reports for row in r.challenge_rows]
        frame_path = os.path.join(args.out_dir, "mia_challenges.csv")
        pd.DataFrame(rows).to_csv(frame_path, index=False, float_format="%.17g")
        outputs.append(frame_path)
        print(f"[OK] median PG = {payload['median_privacy_gain']:.4f} over {len(reports)} targets")
        config["mia"] = mia_cfg.model_dump()

    finish(args, f"attack {args.game}", inputs, config, outputs, clock)
    return 0


def cmd_utility(args) -> int:
    clock = Stopwatch()
    real = read_csv(args.data, args.response)
    test = read_csv(args.test, args.response)
    model = load_model(args.model)
    if args.truncate is not None:
        model = truncate(model, args.truncate)
    forest_cfg = ForestConfig()
    tstr = utility_replicates(model, test, args.n_rep, base_stream(args).derive(Stream.UTILITY), forest_cfg,
                              jobs=args.jobs)
    trtr = utility_trtr(real, test, forest_cfg)
    payload = {
        "truncation": model.truncation_level,
        "tstr": tstr.tolist(),
        "tstr_median": float(np.median(tstr)),
        "tstr_q25": float(np.quantile(tstr, 0.25)),
        "tstr_q75": float(np.quantile(tstr, 0.75)),
        "trtr": trtr,
    }
    path = write_json(os.path.join(args.out_dir, "utility.json"), payload)
    print(f"[OK] TSTR AUC median = {payload['tstr_median']:.4f}   TRTR AUC = {trtr:.4f}")
    finish(args, "utility", {"data": args.data, "test": args.test, "model": args.model},
           {"truncate": model.truncation_level, "n_rep": args.n_rep, "forest": forest_cfg.model_dump()},
           [path], clock)
    return 0


def cmd_fidelity(args) -> int:
    clock = Stopwatch()
    real = read_csv(args.data, args.response)
    synthetic = read_csv(args.synthetic, args.response)
    if synthetic.columns != real.columns:
        raise DataError(f"synthetic columns {synthetic.columns} differ from real columns {real.columns}")
    report = fidelity(real, synthetic)
    path = write_json(os.path.join(args.out_dir, "fidelity.json"), report.to_dict())
    print(f"[OK] IP_alpha = {report.integrated_precision:.4f}   IR_beta = {report.integrated_recall:.4f}   "
          f"authenticity = {report.authenticity:.4f}")
    finish(args, "fidelity", {"data": args.data, "synthetic": args.synthetic}, {}, [path], clock)
    return 0


def cmd_sweep(args, settings: Settings) -> int:
    clock = Stopwatch()
    real = read_csv(args.data, args.response)
    test = read_csv(args.test, args.response)
    order = load_order(args.order, real)
    aia_cfg, mia_cfg = load_attack_config(args.config)
    competitors = read_competitors(args.competitors) if args.competitors else None
    try:
        cfg = SweepConfig(
            truncations=parse_truncations(args.truncations),
            privacy=args.privacy,
            sensitive=sensitive_index(real, args.sensitive),
            n_rep=args.n_rep,
            target_mode=args.targets,
            n_targets=args.n_targets,
        )
    except ValidationError as e:
        raise UsageError(f"Invalid sweep settings: {e}")

    banner(f"TRUNCATION SWEEP  T={cfg.truncations}  privacy={cfg.privacy}")
    tracking_uri = settings.mlflow_uri or f"file://{os.path.abspath(os.path.join(args.out_dir, 'mlruns'))}"
    with tracked_run(settings.tracking, "sweep", tracking_uri, settings.experiment) as tracking:
        result = sweep(real, test, order.order, cfg, aia_cfg, mia_cfg, base_stream(args), jobs=args.jobs)
        outputs = [write_sweep_csv(result, os.path.join(args.out_dir, "sweep.csv"))]
        outputs += write_tau_matrices(result, args.out_dir)
        outputs.append(plot_privacy_utility(result.records, os.path.join(args.out_dir, "privacy_utility.svg"),
                                            competitors))
        if tracking:
            for rec in result.records:
                log_stage_execution("sweep", {}, {"utility_median": rec.utility_median,
                                                  "privacy_median": rec.privacy_median}, 0.0, step=rec.truncation)
            log_stage_execution("sweep", {"seed": args.seed, "truncations": cfg.truncations,
                                          "privacy_metric": cfg.privacy}, {}, clock.elapsed())
            log_artifacts(outputs)

    print(f"{'t':>4}  {'utility':>8}  {cfg.privacy:>8}")
    for rec in result.records:
        print(f"{rec.truncation:>4}  {rec.utility_median:>8.4f}  {rec.privacy_median:>8.4f}")
    inputs = {"data": args.data, "test": args.test, "order": args.order}
    if args.config:
        inputs["config"] = args.config
    if args.competitors:
        inputs["competitors"] = args.competitors
    config = cfg.model_dump()
    config.update(targets_selected=result.targets, aia=aia_cfg.model_dump(), mia=mia_cfg.model_dump())
    finish(args, "sweep", inputs, config, outputs, clock)
    return 0


def cmd_summary(args) -> int:
    model = load_model(args.model)
    banner(f"C-VINE  d={model.d}  truncation={model.truncation_level}  n_train={model.n_train}")
    print(f"order O*: {[model.names[i] for i in model.order]}")
    for row in summary(model):
        families = ", ".join(row["families"]) or "-"
        print(f"tree {row['tree']:>2}  root {row['root']:<8} {row['dependent']:>3}/{row['edges']:<3} dependent  "
              f"[{families}]")
        if args.edges:
            for label, copula in row["edge_details"]:
                print(f"    {label:<24} {copula}")
    return 0


# ============================================================================
# ARGUMENT PARSING
# ============================================================================

def build_parser(settings: Settings) -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--response", default="y", help="name of the binary response column")
    shared.add_argument("--seed", type=int, default=settings.seed)
    shared.add_argument("--out-dir", default=".")
    shared.add_argument("--jobs", type=int, default=settings.jobs)
    shared.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="tvinesynth", description="Truncated C-vine synthetic data")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[shared], help="simulate block-Gaussian train/test data")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--test-fraction", type=float, default=0.2)

    p = sub.add_parser("split", parents=[shared], help="stratified train/test split of a CSV")
    p.add_argument("data")
    p.add_argument("--test-fraction", type=float, default=0.2)

    p = sub.add_parser("order", parents=[shared], help="privacy-aware covariate order")
    p.add_argument("data")
    p.add_argument("--sensitive", action="append", default=[])
    p.add_argument("--threshold", type=float, default=0.3)
    p.add_argument("--association", choices=["kendall", "spearman", "pearson"], default="kendall")

    p = sub.add_parser("fit", parents=[shared], help="fit the C-vine up to --t-max")
    p.add_argument("data")
    p.add_argument("--order", required=True)
    p.add_argument("--t-max", type=int, default=None)

    p = sub.add_parser("sample", parents=[shared], help="sample synthetic data from a model")
    p.add_argument("model")
    p.add_argument("--truncate", type=int, default=None)
    p.add_argument("-n", type=int, default=None)

    p = sub.add_parser("attack", parents=[shared], help="attribute / membership inference game")
    p.add_argument("game", choices=["aia", "mia"])
    p.add_argument("data")
    p.add_argument("--order", required=True)
    p.add_argument("--sensitive", required=True)
    p.add_argument("--targets", choices=["outlier", "random"], default="outlier")
    p.add_argument("--n-targets", type=int, default=3)
    p.add_argument("--config", default=None)
    p.add_argument("--t-max", type=int, default=None)
    p.add_argument("--truncate", type=int, default=None)

    p = sub.add_parser("utility", parents=[shared], help="TSTR and TRTR AUC")
    p.add_argument("data")
    p.add_argument("test")
    p.add_argument("--model", required=True)
    p.add_argument("--truncate", type=int, default=None)
    p.add_argument("--n-rep", type=int, default=50)

    p = sub.add_parser("fidelity", parents=[shared], help="alpha-precision, beta-recall, authenticity")
    p.add_argument("data")
    p.add_argument("synthetic")

    p = sub.add_parser("sweep", parents=[shared], help="privacy-utility sweep over truncation levels")
    p.add_argument("data")
    p.add_argument("test")
    p.add_argument("--order", required=True)
    p.add_argument("--truncations", required=True)
    p.add_argument("--privacy", choices=["mab", "pg"], default="mab")
    p.add_argument("--sensitive", required=True)
    p.add_argument("--targets", choices=["outlier", "random"], default="outlier")
    p.add_argument("--n-targets", type=int, default=3)
    p.add_argument("--n-rep", type=int, default=50)
    p.add_argument("--config", default=None)
    p.add_argument("--competitors", default=None)

    p = sub.add_parser("summary", parents=[shared], help="per-tree structure of a model")
    p.add_argument("model")
    p.add_argument("--edges", action="store_true", help="list every dependent edge with its fitted copula")
    return parser


COMMANDS = {
    "simulate": cmd_simulate,
    "split": cmd_split,
    "order": cmd_order,
    "fit": cmd_fit,
    "sample": cmd_sample,
    "attack": cmd_attack,
    "utility": cmd_utility,
    "fidelity": cmd_fidelity,
    "summary": cmd_summary,
}


def main(argv: Optional[List[str]] = None) -> int:
    try:
        settings = load_settings()
        args = build_parser(settings).parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    except UsageError as e:
        print(f"[ERROR] {e}")
        return e.exit_code

    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.jobs < 1:
            raise UsageError("--jobs must be at least 1")
        if args.command == "sweep":
            return cmd_sweep(args, settings)
        return COMMANDS[args.command](args)
    except TVineError as e:
        print(f"[ERROR] {e}")
        return e.exit_code
    except ValidationError as e:
        print(f"[ERROR] {e}")
        return UsageError.exit_code


# ============================================================================
# ENTRY POINT
# ============================================================================
if __name__ == "__main__":
    sys.exit(main())
