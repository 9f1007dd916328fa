"""
Command-line interface.

    deepfpc gen-data | fpc-run | train | eval | table1 | sweep-snr |
            sweep-flip | compare-fpc | calibrate-fpc [flags]

Exit codes: 0 success, 1 usage error, 2 runtime error. All randomness
derives from --seed. Every command writes a run-config file next to its
outputs; passing it back with --config replays the run.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

from . import __version__
from .config import RunConfig, load_config, parse_bool, resolve_threads
from .errors import DeepFpcError, UsageError
from .experiments import (
    CALIBRATION_NU_GRID,
    ExperimentConfig,
    ExperimentResult,
    ResultRow,
    calibrate_fpc,
    run_algorithm_noise_comparison,
    run_flip_sweep,
    run_snr_sweep,
    run_table1,
)
from .formats import read_dataset, read_model, write_dataset, write_model
from .network import init_model
from .signals import (
    Stream,
    add_gaussian_noise,
    flip_signs,
    floor_nmse_db,
    make_dataset,
)
from .solvers import FpcConfig, Variant, fpc_solve_batch, nmse_matrix
from .training import LOSSES, AdamState, TrainConfig, evaluate_model, train

logger = logging.getLogger(__name__)

_NOT_RECORDED = {"command", "func", "config", "verbose", "quiet"}


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that raises UsageError instead of exiting."""

    def error(self, message: str) -> None:
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _float_list(text: str) -> List[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise UsageError(f"expected a comma-separated list of numbers, got {text!r}")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value file with flag defaults")
    p.add_argument("--seed", type=int, default=0, help="seed for all randomness")
    p.add_argument("--threads", type=int, default=None, help="worker count (default: $DFPC_THREADS or 1)")


def _add_experiment_flags(p: argparse.ArgumentParser, training: bool = True) -> None:
    d = ExperimentConfig()
    p.add_argument("--out-dir", default=".", help="directory for CSV files and run-config")
    p.add_argument("--n", type=int, default=d.n, help="signal dimension")
    p.add_argument("--m", type=int, default=d.m, help="measurements per signal")
    p.add_argument("--k", type=int, default=d.k, help="sparsity")
    p.add_argument("--l-test", type=int, default=d.l_test, help="test signals")
    p.add_argument("--tau", type=float, default=d.tau, help="step size")
    p.add_argument("--nu", type=float, default=d.nu, help="threshold nu = tau/lambda")
    p.add_argument("--fpc-iters", type=int, default=d.fpc_iters, help="FPC iteration budget")
    p.add_argument("--phi-draws", type=int, default=d.phi_draws, help="sensing matrices per seed")
    if not training:
        return
    p.add_argument("--l-train", type=int, default=d.l_train, help="training signals")
    p.add_argument("--layers", type=int, default=d.layers, help="network depth")
    p.add_argument("--tied", action="store_true", help="share weights across layers")
    p.add_argument("--nu0", type=float, default=d.nu0, help="initial threshold of every layer")
    p.add_argument("--loss", choices=LOSSES, default=d.loss, help="training loss")
    p.add_argument("--epochs", type=int, default=d.epochs, help="training epochs")
    p.add_argument("--batch-size", type=int, default=d.batch_size, help="training batch size")
    p.add_argument("--lr0", type=float, default=d.lr0, help="initial ADAM step size")
    p.add_argument("--decay", type=float, default=d.decay_rate, help="step size decay rate")
    p.add_argument("--decay-every", type=int, default=d.decay_every, help="steps per decay period")
    p.add_argument("--validation-fraction", type=float, default=d.validation_fraction,
                   help="fraction of training pairs held out for validation")
    p.add_argument("--straight-through", action="store_true",
                   help="identity surrogate gradient for sign() in the l1 network")


def build_parser() -> _Parser:
    """Build the argument parser with one subparser per command."""
    root = _Parser(prog="deepfpc", description="1-bit compressed sensing with FPC and DeepFPC networks")
    root.add_argument("--version", action="version", version=f"deepfpc {__version__}")
    root.add_argument("--verbose", action="store_true", help="debug logging")
    root.add_argument("--quiet", action="store_true", help="warnings and errors only")
    sub = root.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True
    fmt = argparse.ArgumentDefaultsHelpFormatter
    d = ExperimentConfig()

    def command(name: str, func: Callable[[argparse.Namespace], int], help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text, description=help_text, formatter_class=fmt)
        p.set_defaults(func=func)
        _add_common(p)
        return p

    p = command("gen-data", _cmd_gen_data, "generate a DFPC-DATA dataset")
    p.add_argument("--n", type=int, default=100, help="signal dimension")
    p.add_argument("--m", type=int, default=300, help="measurements per signal")
    p.add_argument("--k", type=int, default=10, help="sparsity")
    p.add_argument("--l", type=int, default=100, help="number of signals")
    p.add_argument("--stream", choices=["train", "test"], default="train", help="signal substream")
    p.add_argument("--draw", type=int, default=0, help="sensing matrix draw index")
    p.add_argument("--out", default="data.bin", help="output DFPC-DATA file")

    p = command("fpc-run", _cmd_fpc_run, "run FPC-l1/FPC-l2 on a dataset")
    p.add_argument("--variant", choices=["l1", "l2"], default="l2", help="consistency penalty")
    p.add_argument("--iters", type=int, default=150, help="iterations")
    p.add_argument("--tau", type=float, default=1.0, help="step size")
    p.add_argument("--nu", type=float, default=FpcConfig().nu, help="threshold nu = tau/lambda")
    p.add_argument("--data", required=True, help="DFPC-DATA file")
    p.add_argument("--out", default="fpc-run.csv", help="per-sample CSV")

    p = command("train", _cmd_train, "train a DeepFPC network on a dataset")
    p.add_argument("--variant", choices=["l1", "l2"], default="l2", help="network variant")
    p.add_argument("--layers", type=int, default=20, help="network depth")
    p.add_argument("--data", required=True, help="DFPC-DATA training file")
    p.add_argument("--epochs", type=int, default=d.epochs, help="training epochs")
    p.add_argument("--batch-size", type=int, default=d.batch_size, help="batch size")
    p.add_argument("--lr0", type=float, default=d.lr0, help="initial ADAM step size")
    p.add_argument("--decay", type=float, default=d.decay_rate, help="step size decay rate")
    p.add_argument("--decay-every", type=int, default=d.decay_every, help="steps per decay period")
    p.add_argument("--tau", type=float, default=d.tau, help="step size used for initialization")
    p.add_argument("--nu0", type=float, default=d.nu0, help="initial threshold")
    p.add_argument("--loss", choices=LOSSES, default=d.loss, help="training loss")
    p.add_argument("--tied", action="store_true", help="share weights across layers")
    p.add_argument("--straight-through", action="store_true",
                   help="identity surrogate gradient for sign() in the l1 network")
    p.add_argument("--validation-fraction", type=float, default=0.0, help="held-out fraction")
    p.add_argument("--out", default="model.bin", help="output DFPC-MODEL file")
    p.add_argument("--history", default=None,
                   help="loss history CSV to append to (default: train-history.csv next to --out)")

    p = command("eval", _cmd_eval, "evaluate a trained model on a dataset")
    p.add_argument("--model", required=True, help="DFPC-MODEL file")
    p.add_argument("--data", required=True, help="DFPC-DATA file")
    p.add_argument("--snr-db", type=float, default=None, help="add Gaussian noise at this SNR")
    p.add_argument("--flip-ratio", type=float, default=None, help="flip this fraction of signs")
    p.add_argument("--out", default="eval.csv", help="per-sample CSV")

    p = command("table1", _cmd_table1, "FPC-l2 per iteration vs DeepFPC-l2 per depth")
    _add_experiment_flags(p)
    p.add_argument("--retrain-per-depth", action="store_true", help="train one network per depth")

    p = command("sweep-snr", _cmd_sweep_snr, "DeepFPC-l1 vs DeepFPC-l2 under Gaussian noise")
    _add_experiment_flags(p)
    p.add_argument("--snr-list", default="20,25,30,35,40", help="comma-separated SNRs in dB")

    p = command("sweep-flip", _cmd_sweep_flip, "DeepFPC-l1 vs DeepFPC-l2 under sign flips")
    _add_experiment_flags(p)
    p.add_argument("--ratio-list", default="0,0.01,0.03,0.05,0.1,0.2,0.3",
                   help="comma-separated flip ratios")

    p = command("compare-fpc", _cmd_compare_fpc, "FPC-l1 vs FPC-l2 under both noise channels")
    _add_experiment_flags(p, training=False)
    p.add_argument("--snr-list", default="20,25,30,35,40", help="comma-separated SNRs in dB")
    p.add_argument("--ratio-list", default="0,0.01,0.03,0.05,0.1,0.2,0.3",
                   help="comma-separated flip ratios")

    p = command("calibrate-fpc", _cmd_calibrate, "choose nu against the reference FPC-l2 trajectory")
    _add_experiment_flags(p, training=False)
    p.add_argument("--nu-grid", default=",".join(repr(v) for v in CALIBRATION_NU_GRID),
                   help="comma-separated candidate thresholds")
    return root


def _subparser(parser: argparse.ArgumentParser, name: str) -> argparse.ArgumentParser:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise UsageError(f"unknown command {name!r}")


def _apply_file_defaults(p: argparse.ArgumentParser, values: Dict[str, str]) -> None:
    """Use config file values as defaults so explicit flags still win."""
    by_key = {}
    for action in p._actions:
        for opt in action.option_strings:
            if opt.startswith("--"):
                by_key[opt[2:]] = action
    defaults = {}
    for key, value in values.items():
        action = by_key.get(key)
        if action is None or action.dest in _NOT_RECORDED:
            raise UsageError(f"unknown setting {key!r} for {p.prog}")
        if isinstance(action, argparse._StoreTrueAction):
            defaults[action.dest] = parse_bool(value)
        else:
            defaults[action.dest] = value
            action.required = False
    p.set_defaults(**defaults)


def _find_config(argv: Sequence[str]) -> Optional[str]:
    for i, token in enumerate(argv):
        if token == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if token.startswith("--config="):
            return token.split("=", 1)[1]
    return None


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    """Parse argv, applying --config file values as defaults."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    config_path = _find_config(argv)
    command = next((token for token in argv if not token.startswith("-")), None)
    if config_path and command:
        _apply_file_defaults(_subparser(parser, command), load_config(config_path))
    args = parser.parse_args(argv)
    args.threads = resolve_threads(args.threads)
    return args


def _record(args: argparse.Namespace, out_dir: Path) -> Path:
    mapping = {k: v for k, v in vars(args).items() if k not in _NOT_RECORDED}
    return RunConfig.from_mapping(args.command, mapping).write(out_dir)


def _cmd_gen_data(args: argparse.Namespace) -> int:
    dataset = make_dataset(args.n, args.m, args.k, args.l, args.seed, Stream[args.stream.upper()], args.draw)
    out = Path(args.out)
    write_dataset(dataset, out)
    _record(args, out.parent)
    print(f"wrote {out} (n={args.n} m={args.m} k={args.k} l={args.l} seed={args.seed})")
    return 0


def _write_single(result: ExperimentResult, out: Path) -> None:
    result.write_csv(out.parent, stem=out.stem)
    row = result.rows[0]
    print(f"{row.method}: mean NMSE {row.mean_nmse_db:.2f} dB over {len(row.samples)} samples")


def _cmd_fpc_run(args: argparse.Namespace) -> int:
    dataset = read_dataset(args.data)
    cfg = FpcConfig.from_nu(args.tau, args.nu, variant=Variant(args.variant), max_iters=args.iters)
    traces = fpc_solve_batch(
        dataset.phi, dataset.measurements.signs, cfg,
        truths=dataset.signals.values, threads=args.threads,
    )
    samples = floor_nmse_db(nmse_matrix(traces)[-1])
    result = ExperimentResult(
        experiment="fpc-run",
        seed=dataset.seed,
        config=cfg.to_dict(),
        rows=[ResultRow(method=f"fpc-{args.variant}", sweep_param="iters", sweep_value=args.iters, samples=samples)],
    )
    out = Path(args.out)
    _write_single(result, out)
    _record(args, out.parent)
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    dataset = read_dataset(args.data)
    model = init_model(dataset.phi, Variant(args.variant), args.layers, args.tau, args.nu0, args.tied)
    cfg = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
        loss=args.loss,
        validation_fraction=args.validation_fraction,
        straight_through=args.straight_through,
    )
    adam = AdamState(lr0=args.lr0, decay_rate=args.decay, decay_every=args.decay_every)
    model, history = train(model, dataset, cfg, adam)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_model(model, out)
    history_path = Path(args.history) if args.history else out.parent / "train-history.csv"
    history.write_csv(history_path, append=True)
    _record(args, out.parent)
    last = history.records[-1] if history.records else None
    if last is not None:
        print(f"wrote {out}; final train loss {last.train_loss:.5f} after {last.step} steps")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    if args.snr_db is not None and args.flip_ratio is not None:
        raise UsageError("choose at most one of --snr-db and --flip-ratio")
    model = read_model(args.model)
    dataset = read_dataset(args.data)
    sweep_param, sweep_value = "none", 0.0
    if args.snr_db is not None:
        dataset = dataset.with_measurements(add_gaussian_noise(dataset.measurements, args.snr_db, args.seed))
        sweep_param, sweep_value = "snr_db", args.snr_db
    elif args.flip_ratio is not None:
        dataset = dataset.with_measurements(flip_signs(dataset.measurements, args.flip_ratio, args.seed))
        sweep_param, sweep_value = "flip_ratio", args.flip_ratio

    samples = floor_nmse_db(evaluate_model(model, dataset))
    result = ExperimentResult(
        experiment="eval",
        seed=args.seed,
        config={"variant": model.variant.value, "layers": model.num_layers, "tied": model.tied},
        rows=[ResultRow(
            method=f"deepfpc-{model.variant.value}", sweep_param=sweep_param,
            sweep_value=sweep_value, samples=samples,
        )],
    )
    out = Path(args.out)
    _write_single(result, out)
    _record(args, out.parent)
    return 0


def _experiment_config(args: argparse.Namespace) -> ExperimentConfig:
    d = ExperimentConfig()
    return ExperimentConfig(
        n=args.n, m=args.m, k=args.k,
        l_train=getattr(args, "l_train", d.l_train),
        l_test=args.l_test,
        tau=args.tau, nu=args.nu,
        fpc_iters=args.fpc_iters,
        layers=getattr(args, "layers", d.layers),
        tied=getattr(args, "tied", d.tied),
        nu0=getattr(args, "nu0", d.nu0),
        loss=getattr(args, "loss", d.loss),
        epochs=getattr(args, "epochs", d.epochs),
        batch_size=getattr(args, "batch_size", d.batch_size),
        lr0=getattr(args, "lr0", d.lr0),
        decay_rate=getattr(args, "decay", d.decay_rate),
        decay_every=getattr(args, "decay_every", d.decay_every),
        validation_fraction=getattr(args, "validation_fraction", d.validation_fraction),
        straight_through=getattr(args, "straight_through", d.straight_through),
        phi_draws=args.phi_draws,
        retrain_per_depth=getattr(args, "retrain_per_depth", d.retrain_per_depth),
        snr_grid=tuple(_float_list(args.snr_list)) if hasattr(args, "snr_list") else d.snr_grid,
        flip_grid=tuple(_float_list(args.ratio_list)) if hasattr(args, "ratio_list") else d.flip_grid,
        threads=args.threads,
    )


def _finish(args: argparse.Namespace, result: ExperimentResult) -> int:
    out_dir = Path(args.out_dir)
    samples_path, summary_path = result.write_csv(out_dir)
    _record(args, out_dir)
    for row in result.rows:
        logger.debug("%s %s=%s: %.2f dB", row.method, row.sweep_param, row.sweep_value, row.mean_nmse_db)
    print(f"wrote {samples_path} and {summary_path}")
    return 0


def _cmd_table1(args: argparse.Namespace) -> int:
    return _finish(args, run_table1(_experiment_config(args), args.seed))


def _cmd_sweep_snr(args: argparse.Namespace) -> int:
    cfg = _experiment_config(args)
    return _finish(args, run_snr_sweep(cfg, cfg.snr_grid, args.seed))


def _cmd_sweep_flip(args: argparse.Namespace) -> int:
    cfg = _experiment_config(args)
    return _finish(args, run_flip_sweep(cfg, cfg.flip_grid, args.seed))


def _cmd_compare_fpc(args: argparse.Namespace) -> int:
    return _finish(args, run_algorithm_noise_comparison(_experiment_config(args), args.seed))


def _cmd_calibrate(args: argparse.Namespace) -> int:
    best_nu, result = calibrate_fpc(_experiment_config(args), _float_list(args.nu_grid), args.seed)
    print(f"best nu={best_nu:g} (tau={args.tau:g}, lambda={args.tau / best_nu:g})")
    return _finish(args, result)


def _configure_logging(args: argparse.Namespace) -> None:
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run one command.

    Args:
        argv: Arguments without the program name (sys.argv[1:] if None)

    Returns:
        Exit code: 0 success, 1 usage error, 2 runtime error
    """
    try:
        args = parse_args(argv)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:
        return 0 if e.code is None else int(e.code)

    _configure_logging(args)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (DeepFpcError, OSError) as e:
        logger.error("%s", e)
        return 2
