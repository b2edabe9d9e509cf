#!/usr/bin/env python3
"""
Command-line interface: analyze, prune, train, verify, spiked, regress.

Exit codes: 0 success, 1 contract / usage errors, 2 numeric failures.
Reports go to the paths given on the command line; each run also writes
a manifest next to its primary output, including failed runs. When the
command line itself does not parse, the manifest goes next to whatever
--out, --report or --log value argv names; with none of them there is no
manifest, only the usage message on stderr and exit code 1.
"""

import argparse
import logging
import sys
import time
import traceback
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np
import pandas as pd

from .config import (apply_config, config_snapshot, get_config, parse_overrides, print_config_info,
                     read_config_file)
from .errors import ContractError, RMTPruneError, UsageError, exit_code_for
from .matrixio import load_checkpoint, load_idx_dataset, read_matrix, read_matrix_csv, save_checkpoint
from .nn_core import TrainConfig, accuracy, init_mlp, model_from_checkpoint, model_to_checkpoint, train
from .prune_engine import PruneConfig, cycle_reports_frame, mask_frozen_finetune, mp_prune_hook, run_prune_cycles
from .regression_lab import RegressionProblem, run_regression_experiment, mse_report
from .reporting import RunManifest, manifest_path_for, write_csv, write_json, write_report
from .rmt_core import BemaSettings, bema_fit, compute_esd, esd_histogram, layer_metrics
from .spiked_lab import SpikedSpec, generate_spiked, run_spiked_experiment, shrink_sweep
from .theory_checks import SUITES, SuiteConfig, run_suite

logger = logging.getLogger(__name__)


class Colors:
    """ANSI color codes for terminal output"""
    HEADER = '\033[95m'
    OKBLUE = '\033[94m'
    OKGREEN = '\033[92m'
    WARNING = '\033[93m'
    FAIL = '\033[91m'
    ENDC = '\033[0m'
    BOLD = '\033[1m'


def disable_colors():
    for attr in dir(Colors):
        if not attr.startswith('_'):
            setattr(Colors, attr, '')


class ArgumentParser(argparse.ArgumentParser):
    """argparse that raises UsageError instead of exiting with status 2"""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def configure_logging(level: str):
    cfg = get_config()
    numeric = getattr(logging, str(level).upper(), None)
    if not isinstance(numeric, int):
        raise UsageError(f"unknown log level {level!r}")
    logging.basicConfig(level=numeric, format=cfg.LOG_FORMAT, stream=sys.stderr, force=True)


def _int_list(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text: str) -> List[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _add_config_flags(p: argparse.ArgumentParser, flag: str = "--config"):
    p.add_argument(flag, dest="config", help="key = value settings file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one setting (repeatable)")


def _add_seed(p: argparse.ArgumentParser, required: bool = True):
    p.add_argument("--seed", type=int, required=required, help="base seed (required for randomized runs)")


def build_parser() -> ArgumentParser:
    cfg = get_config()
    parser = ArgumentParser(prog="rmt-prune", description=f"{cfg.APP_NAME} {cfg.VERSION}")
    parser.add_argument("--log-level", default=cfg.LOG_LEVEL, help="logging level (default: %(default)s)")
    parser.add_argument("--no-color", action="store_true", help="Disable colored output")
    parser.add_argument("--show-config", action="store_true", help="Print the effective settings and exit")
    parser.add_argument("--threads", type=int, default=None, help="worker threads (default: RMTPRUNE_THREADS)")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("analyze", help="per-layer MP fit, spike metric and fit metric")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--model", help="model checkpoint")
    source.add_argument("--matrix", help="single matrix (.pmat or .csv)")
    p.add_argument("--out", required=True, help="metrics report (.json or .csv)")
    p.add_argument("--histogram-dir", help="write ESD-vs-MP density tables here")
    p.add_argument("--bins", type=int, default=50)
    _add_config_flags(p)

    p = sub.add_parser("prune", help="data-free pruning cycles on a checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="pruned checkpoint")
    p.add_argument("--report", required=True, help="cycle report (.csv or .json)")
    p.add_argument("--eval-data", nargs=2, metavar=("IMAGES", "LABELS"))
    p.add_argument("--finetune-data", nargs=2, metavar=("IMAGES", "LABELS"))
    p.add_argument("--finetune-config", help="key = value TrainConfig file for fine-tuning")
    p.add_argument("--limit", type=int, help="use only the first LIMIT samples of each dataset")
    _add_seed(p, required=False)
    _add_config_flags(p)

    p = sub.add_parser("train", help="train an MLP, optionally with MP singular-value pruning")
    p.add_argument("--data", nargs=2, required=True, metavar=("IMAGES", "LABELS"))
    p.add_argument("--eval-data", nargs=2, metavar=("IMAGES", "LABELS"))
    p.add_argument("--topology", type=_int_list, help="layer widths, e.g. 784,512,512,10")
    p.add_argument("--init-model", help="start from this checkpoint instead of a fresh net")
    p.add_argument("--activation", choices=("relu", "abs"), default="relu")
    p.add_argument("--activation-on-final", action="store_true")
    p.add_argument("--limit", type=int)
    p.add_argument("--mp-prune-every", type=int, help="run MP singular-value pruning every K epochs")
    p.add_argument("--f-slope", type=float, default=1.0 / 200.0, help="keep-fraction slope (default 1/200)")
    p.add_argument("--prune-config", help="key = value PruneConfig file for MP pruning")
    p.add_argument("--out", required=True, help="trained checkpoint")
    p.add_argument("--log", required=True, help="per-epoch log CSV")
    _add_seed(p)
    _add_config_flags(p)

    p = sub.add_parser("verify", help="run a theory check suite")
    p.add_argument("--suite", choices=SUITES, required=True)
    p.add_argument("--data", nargs=2, metavar=("IMAGES", "LABELS"))
    p.add_argument("--eval-data", nargs=2, metavar=("IMAGES", "LABELS"))
    p.add_argument("--model", help="trained checkpoint (noise-injection)")
    p.add_argument("--limit", type=int)
    p.add_argument("--out", required=True, help="suite report CSV")
    _add_seed(p)
    _add_config_flags(p)

    p = sub.add_parser("spiked", help="planted spikes: predicted vs measured")
    p.add_argument("--out", required=True, help="per-seed spike table CSV")
    p.add_argument("--n-seeds", type=int, default=10)
    p.add_argument("--shrink-grid", type=_float_list, help="also write top singular values of gamma R + S")
    p.add_argument("--shrink-out")
    _add_seed(p)
    _add_config_flags(p, "--spec")

    p = sub.add_parser("regress", help="Fourier-feature regression: none / ridge / lasso / pruning")
    p.add_argument("--out", required=True, help="MSE table CSV")
    p.add_argument("--n-seeds", type=int, default=1)
    p.add_argument("--spectra-dir", help="cumulative singular-value tables for the first seed")
    _add_seed(p)
    _add_config_flags(p, "--spec")

    return parser


def _settings(cls, args, manifest: RunManifest, file_attr: str = "config", override_attr: str = "overrides",
              extra: Optional[Dict] = None):
    path = getattr(args, file_attr, None)
    values = read_config_file(path) if path else {}
    if path:
        manifest.inputs[file_attr] = str(path)
    overrides = parse_overrides(getattr(args, override_attr, None) or [])
    overrides.update(extra or {})
    instance = apply_config(cls, values, overrides)
    manifest.config[cls.__name__] = config_snapshot(instance)
    return instance


def _dataset(pair, args, manifest: RunManifest, name: str):
    if not pair:
        return None
    manifest.inputs[name] = f"{pair[0]},{pair[1]}"
    return load_idx_dataset(pair[0], pair[1], limit=getattr(args, "limit", None))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_analyze(args, manifest: RunManifest) -> str:
    bema = _settings(BemaSettings, args, manifest)
    if args.model:
        manifest.inputs["model"] = args.model
        model = model_from_checkpoint(load_checkpoint(args.model))
        weights = [layer.effective_weight() for layer in model.layers]
    else:
        manifest.inputs["matrix"] = args.matrix
        reader = read_matrix_csv if Path(args.matrix).suffix.lower() == ".csv" else read_matrix
        weights = [reader(args.matrix)]

    records = []
    for k, W in enumerate(weights):
        metrics = layer_metrics(W, bema.alpha, bema.beta, bema.tau)
        record = metrics.to_record(k)
        record.update({"n_rows": W.shape[0], "n_cols": W.shape[1],
                       "accepted": bool(metrics.fit.accepted) if metrics.fit else False,
                       "sigma2": metrics.fit.sigma2_hat if metrics.fit else float("nan")})
        records.append(record)
        if args.histogram_dir and metrics.fit is not None:
            table = esd_histogram(compute_esd(W), metrics.fit, args.bins)
            manifest.record_output(write_csv(table, Path(args.histogram_dir) / f"layer{k}_esd.csv"))

    frame = pd.DataFrame(records)
    if Path(args.out).suffix.lower() == ".json":
        manifest.record_output(write_json({"layers": records}, args.out))
    else:
        manifest.record_output(write_report(frame, args.out))
    return frame.to_string(index=False)


def cmd_prune(args, manifest: RunManifest) -> str:
    cfg = _settings(PruneConfig, args, manifest)
    manifest.inputs["model"] = args.model
    model = model_from_checkpoint(load_checkpoint(args.model))
    eval_data = _dataset(args.eval_data, args, manifest, "eval_data")

    baseline = accuracy(model, eval_data) if eval_data is not None else None
    pruned, reports = run_prune_cycles(model, cfg, eval_data, args.threads)
    summary = [f"cycles: {len(reports)}, parameter reduction: "
               f"{reports[-1].param_reduction:.2%}" if reports else "cycles: 0"]

    if args.finetune_data:
        if args.seed is None:
            raise UsageError("fine-tuning is randomized; pass --seed")
        train_data = _dataset(args.finetune_data, args, manifest, "finetune_data")
        train_cfg = _settings(TrainConfig, args, manifest, "finetune_config", "no_overrides", {"seed": args.seed})
        manifest.seeds = [args.seed]
        pruned, _ = mask_frozen_finetune(pruned, train_data, train_cfg, eval_data)

    if eval_data is not None:
        summary.append(f"accuracy: {baseline:.4f} -> {accuracy(pruned, eval_data):.4f}")

    manifest.record_output(write_report(cycle_reports_frame(reports), args.report))
    save_checkpoint(model_to_checkpoint(pruned), args.out)
    manifest.record_output(args.out)
    return "\n".join(summary)


def cmd_train(args, manifest: RunManifest) -> str:
    train_cfg = _settings(TrainConfig, args, manifest, extra={"seed": args.seed})
    manifest.seeds = [args.seed]
    data = _dataset(args.data, args, manifest, "data")
    eval_data = _dataset(args.eval_data, args, manifest, "eval_data")

    if args.init_model:
        manifest.inputs["init_model"] = args.init_model
        model = model_from_checkpoint(load_checkpoint(args.init_model))
    else:
        if not args.topology:
            raise UsageError("train needs --topology or --init-model")
        if args.topology[0] != data.n_features or args.topology[-1] != data.n_classes:
            raise ContractError(f"topology {args.topology} does not match data "
                                f"({data.n_features} features, {data.n_classes} classes)")
        model = init_mlp(args.topology, args.activation, args.activation_on_final, seed=args.seed)

    hooks = []
    if args.mp_prune_every:
        prune_cfg = _settings(PruneConfig, args, manifest, "prune_config", "no_overrides")
        manifest.config["mp_prune"] = {"every": args.mp_prune_every, "f_slope": args.f_slope}
        hooks.append(mp_prune_hook(prune_cfg, args.mp_prune_every, args.f_slope))

    model, log = train(model, data, train_cfg, hooks, eval_data)
    manifest.record_output(write_csv(log, args.log))
    save_checkpoint(model_to_checkpoint(model), args.out)
    manifest.record_output(args.out)
    if log.empty:
        return "trained 0 epochs"
    last = log.iloc[-1]
    return f"epochs: {len(log)}, loss: {last['total']:.5f}, train accuracy: {last['train_acc']:.4f}"


def cmd_verify(args, manifest: RunManifest) -> str:
    cfg = _settings(SuiteConfig, args, manifest)
    manifest.seeds = list(range(args.seed, args.seed + cfg.n_seeds))
    data = _dataset(args.data, args, manifest, "data")
    eval_data = _dataset(args.eval_data, args, manifest, "eval_data")
    model = None
    if args.model:
        manifest.inputs["model"] = args.model
        model = model_from_checkpoint(load_checkpoint(args.model))

    frame = run_suite(args.suite, cfg, args.seed, data, model, eval_data, args.threads)
    manifest.record_output(write_csv(frame, args.out))
    return frame.to_string(index=False)


def cmd_spiked(args, manifest: RunManifest) -> str:
    spec = _settings(SpikedSpec, args, manifest, extra={"seed": args.seed})
    seeds = list(range(args.seed, args.seed + args.n_seeds))
    manifest.seeds = seeds
    frame = run_spiked_experiment(spec, seeds, args.threads)
    manifest.record_output(write_csv(frame, args.out))

    if args.shrink_grid:
        if not args.shrink_out:
            raise UsageError("--shrink-grid needs --shrink-out")
        manifest.record_output(write_csv(shrink_sweep(generate_spiked(spec), args.shrink_grid), args.shrink_out))

    means = frame.groupby("sigma")[["sigma_prime_pred", "sigma_prime_emp", "overlap_pred", "overlap_left_emp"]].mean()
    return means.to_string()


def cmd_regress(args, manifest: RunManifest) -> str:
    problem = _settings(RegressionProblem, args, manifest, extra={"seed": args.seed})
    seeds = list(range(args.seed, args.seed + args.n_seeds))
    manifest.seeds = seeds
    frame = run_regression_experiment(problem, seeds, args.threads)
    manifest.record_output(write_csv(frame, args.out))

    if args.spectra_dir:
        _, spectra = mse_report(problem)
        for name, table in spectra.items():
            manifest.record_output(write_csv(table, Path(args.spectra_dir) / f"spectrum_{name}.csv"))

    return frame.groupby("estimator", sort=False)["mse"].mean().to_string()


COMMANDS: Dict[str, Callable] = {
    "analyze": cmd_analyze,
    "prune": cmd_prune,
    "train": cmd_train,
    "verify": cmd_verify,
    "spiked": cmd_spiked,
    "regress": cmd_regress,
}


def _primary_output(args) -> Optional[str]:
    for attr in ("out", "report", "log"):
        value = getattr(args, attr, None)
        if value:
            return value
    return None


def _output_from_argv(argv: List[str]) -> Optional[str]:
    """Primary output named in a command line that failed to parse"""
    for flag in ("--out", "--report", "--log"):
        for i, token in enumerate(argv):
            if token == flag and i + 1 < len(argv) and not argv[i + 1].startswith("-"):
                return argv[i + 1]
            if token.startswith(flag + "="):
                return token.split("=", 1)[1]
    return None


def _write_usage_manifest(argv: List[str], error: UsageError):
    primary = _output_from_argv(argv)
    if not primary:
        return
    manifest = RunManifest(subcommand=next((t for t in argv if t in COMMANDS), ""), argv=argv)
    manifest.record_error(error)
    try:
        manifest.write(manifest_path_for(primary))
    except OSError as e:
        logger.error(f"could not write manifest: {e}")


def dispatch(argv: Optional[List[str]] = None) -> int:
    """Parse argv, run one subcommand, write its manifest; returns the exit code"""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.no_overrides = []
        configure_logging(args.log_level)
    except UsageError as e:
        print(f"{Colors.FAIL}error: {e}{Colors.ENDC}", file=sys.stderr)
        _write_usage_manifest(argv, e)
        return e.exit_code

    if args.no_color or not sys.stdout.isatty():
        disable_colors()

    if args.show_config:
        print_config_info()
        return 0
    if not args.command:
        parser.print_usage(sys.stderr)
        return UsageError.exit_code

    manifest = RunManifest(subcommand=args.command, argv=argv)
    primary = _primary_output(args)
    start = time.perf_counter()
    error: Optional[BaseException] = None
    try:
        summary = COMMANDS[args.command](args, manifest)
        print(f"{Colors.OKGREEN}{args.command} finished{Colors.ENDC}")
        if summary:
            print(summary)
    except RMTPruneError as e:
        error = e
        logger.error(f"{args.command} failed: {e}")
        print(f"{Colors.FAIL}Error: {e}{Colors.ENDC}", file=sys.stderr)
    except OSError as e:
        error = e
        logger.error(f"{args.command} failed: {e}")
        print(f"{Colors.FAIL}Error: {e}{Colors.ENDC}", file=sys.stderr)
    except Exception as e:
        error = e
        logger.error(f"{args.command} failed unexpectedly:\n{traceback.format_exc()}")
        print(f"{Colors.FAIL}Unexpected error: {e}{Colors.ENDC}", file=sys.stderr)
    finally:
        manifest.wall_clock_seconds = round(time.perf_counter() - start, 3)
        if error is not None:
            manifest.record_error(error)
        if primary:
            try:
                manifest.write(manifest_path_for(primary))
            except OSError as e:
                logger.error(f"could not write manifest: {e}")

    return exit_code_for(error)


def main(argv: Optional[List[str]] = None) -> int:
    return dispatch(argv)
