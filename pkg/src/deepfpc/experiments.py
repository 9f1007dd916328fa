"""
Reproducible experiments: depth/iteration tables, noise sweeps and the
classical FPC comparison.

Every experiment returns an ExperimentResult holding the per-sample NMSE
of every (method, sweep value) point together with the configuration
snapshot and seed that reproduce it.
"""

import csv
import logging
import math
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, TypeVar, Union

import numpy as np

from .errors import InvalidArgument
from .network import UnfoldedModel, init_model
from .signals import (
    Dataset,
    NMSE_FLOOR_DB,
    Stream,
    add_gaussian_noise,
    derive_seed,
    flip_signs,
    floor_nmse_db,
    make_dataset,
    mean_nmse_db,
)
from .solvers import FpcConfig, Variant, fpc_solve_batch, nmse_matrix
from .training import AdamState, TrainConfig, evaluate_model, evaluate_readouts, train

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

# Averaged NMSE (dB) of FPC-l2 over its first 20 iterations on the
# N=100, K=10, M=300 setup; the target of calibrate_fpc.
REFERENCE_FPC_L2_DB = (
    -4.53, -4.80, -5.03, -5.23, -5.42, -5.59, -5.76, -5.91, -6.06, -6.20,
    -6.34, -6.48, -6.62, -6.76, -6.89, -7.02, -7.16, -7.29, -7.42, -7.55,
)

SAMPLE_FIELDS = ["experiment", "method", "sweep_param", "sweep_value", "seed", "sample_index", "nmse_db"]
SUMMARY_FIELDS = ["experiment", "method", "sweep_param", "sweep_value", "seed", "mean_nmse_db", "n_samples"]

TESTED_SNR_RANGE = (20.0, 40.0)
TESTED_FLIP_RANGE = (0.0, 0.3)

CALIBRATION_NU_GRID = (0.0002, 0.0005, 0.001, 0.002, 0.005, 0.01, 0.02, 0.05)


def _method(kind: str, variant: Variant) -> str:
    return f"{kind}-{variant.value}"


@dataclass
class ExperimentConfig:
    """
    Problem sizes, solver and training hyperparameters, and sweep grids.

    nu is the FPC threshold picked by calibrate_fpc over CALIBRATION_NU_GRID
    at tau = 1; nu0 is the starting threshold of every network layer. An
    untrained 20-layer network at nu0 = 0.02 shrinks some columns to zero.
    """
    n: int = 100
    m: int = 300
    k: int = 10
    l_train: int = 100
    l_test: int = 100
    tau: float = 1.0
    nu: float = 0.001
    fpc_iters: int = 150
    layers: int = 20
    tied: bool = False
    nu0: float = 0.001
    loss: str = "mse_all_layers"
    epochs: int = 2000
    batch_size: int = 25
    lr0: float = 1e-3
    decay_rate: float = 0.9
    decay_every: int = 1000
    validation_fraction: float = 0.0
    straight_through: bool = False
    phi_draws: int = 1
    retrain_per_depth: bool = False
    snr_grid: Tuple[float, ...] = (20.0, 25.0, 30.0, 35.0, 40.0)
    flip_grid: Tuple[float, ...] = (0.0, 0.01, 0.03, 0.05, 0.10, 0.20, 0.30)
    threads: int = 1

    def __post_init__(self) -> None:
        if self.layers < 1 or self.fpc_iters < 1:
            raise InvalidArgument("layers and fpc_iters must be positive")
        if self.phi_draws < 1:
            raise InvalidArgument(f"phi_draws must be positive, got {self.phi_draws}")
        self.snr_grid = tuple(float(v) for v in self.snr_grid)
        self.flip_grid = tuple(float(v) for v in self.flip_grid)

    def fpc_config(self, variant: Variant, iters: Optional[int] = None, **kwargs) -> FpcConfig:
        return FpcConfig.from_nu(
            self.tau, self.nu, variant=variant, max_iters=iters or self.fpc_iters, **kwargs
        )

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=seed,
            loss=self.loss,
            validation_fraction=self.validation_fraction,
            straight_through=self.straight_through,
        )

    def adam_state(self) -> AdamState:
        return AdamState(lr0=self.lr0, decay_rate=self.decay_rate, decay_every=self.decay_every)

    def to_dict(self) -> dict:
        """Convert to dictionary for serialization."""
        d = {name: getattr(self, name) for name in self.__dataclass_fields__}
        d["snr_grid"] = list(self.snr_grid)
        d["flip_grid"] = list(self.flip_grid)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        """Create from dictionary; unknown keys are rejected."""
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidArgument(f"unknown experiment settings: {sorted(unknown)}")
        return cls(**d)


@dataclass
class ResultRow:
    """Per-sample NMSE of one method at one sweep value."""
    method: str
    sweep_param: str
    sweep_value: float
    samples: np.ndarray

    @property
    def mean_nmse_db(self) -> float:
        return mean_nmse_db(self.samples)


@dataclass
class ExperimentResult:
    """Rows of an experiment with the configuration that produced them."""
    experiment: str
    seed: int
    config: dict
    rows: List[ResultRow] = field(default_factory=list)
    metadata: Dict[str, str] = field(default_factory=dict)

    def row(self, method: str, sweep_value: float) -> ResultRow:
        for r in self.rows:
            if r.method == method and r.sweep_value == sweep_value:
                return r
        raise KeyError(f"no row for {method} at {sweep_value}")

    def mean(self, method: str, sweep_value: float) -> float:
        return self.row(method, sweep_value).mean_nmse_db

    def methods(self) -> List[str]:
        return list(OrderedDict.fromkeys(r.method for r in self.rows))

    def write_csv(self, out_dir: Union[str, Path], stem: Optional[str] = None) -> Tuple[Path, Path]:
        """
        Write <stem>.csv (per sample), <stem>-summary.csv and <stem>-meta.conf
        into out_dir. The stem defaults to the experiment name.

        Returns:
            (per-sample path, summary path)
        """
        out_dir = Path(out_dir).expanduser()
        out_dir.mkdir(parents=True, exist_ok=True)
        stem = stem or self.experiment
        samples_path = out_dir / f"{stem}.csv"
        summary_path = out_dir / f"{stem}-summary.csv"

        with open(samples_path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(SAMPLE_FIELDS)
            for r in self.rows:
                for index, value in enumerate(r.samples):
                    writer.writerow([
                        self.experiment, r.method, r.sweep_param, format_value(r.sweep_value),
                        self.seed, index, repr(float(value)),
                    ])

        with open(summary_path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(SUMMARY_FIELDS)
            for r in self.rows:
                writer.writerow([
                    self.experiment, r.method, r.sweep_param, format_value(r.sweep_value),
                    self.seed, repr(r.mean_nmse_db), len(r.samples),
                ])

        meta = OrderedDict([
            ("experiment", self.experiment),
            ("seed", str(self.seed)),
            ("aggregation", "db_mean"),
            ("nmse_floor_db", repr(NMSE_FLOOR_DB)),
        ])
        meta.update(self.metadata)
        meta.update((key, _format_setting(value)) for key, value in self.config.items())
        text = "".join(f"{key}={value}\n" for key, value in meta.items())
        (out_dir / f"{stem}-meta.conf").write_text(text, encoding="utf-8")
        return samples_path, summary_path


def format_value(value: float) -> str:
    """Render a sweep value: integers without a fractional part."""
    value = float(value)
    if math.isfinite(value) and value == int(value):
        return str(int(value))
    return repr(value)


def _format_setting(value: object) -> str:
    if isinstance(value, (list, tuple)):
        return ",".join(format_value(v) for v in value)
    if isinstance(value, bool):
        return str(int(value))
    return str(value)


class _RowCollector:
    """Concatenates per-sample results of the same point across matrix draws."""

    def __init__(self) -> None:
        self._rows: "OrderedDict[Tuple[str, str, float], List[np.ndarray]]" = OrderedDict()

    def add(self, method: str, sweep_param: str, sweep_value: float, samples: np.ndarray) -> None:
        key = (method, sweep_param, float(sweep_value))
        self._rows.setdefault(key, []).append(floor_nmse_db(samples))

    def rows(self) -> List[ResultRow]:
        return [
            ResultRow(method=m, sweep_param=p, sweep_value=v, samples=np.concatenate(parts))
            for (m, p, v), parts in self._rows.items()
        ]


def _map(fn: Callable[[T], R], items: Iterable[T], threads: int) -> List[R]:
    """Apply fn to every item; results keep the item order."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def make_problem(cfg: ExperimentConfig, seed: int, draw: int = 0) -> Tuple[Dataset, Dataset]:
    """Train and test datasets sharing one sensing matrix, with disjoint signal streams."""
    train_ds = make_dataset(cfg.n, cfg.m, cfg.k, cfg.l_train, seed, Stream.TRAIN, draw)
    test_ds = make_dataset(cfg.n, cfg.m, cfg.k, cfg.l_test, seed, Stream.TEST, draw)
    return train_ds, test_ds


def train_model(
    cfg: ExperimentConfig, variant: Variant, layers: int, dataset: Dataset, seed: int
) -> UnfoldedModel:
    """Initialize a network from the dataset's sensing matrix and train it."""
    model = init_model(dataset.phi, variant, layers, cfg.tau, cfg.nu0, cfg.tied)
    model, _ = train(model, dataset, cfg.train_config(seed), cfg.adam_state())
    return model


def fpc_nmse(cfg: ExperimentConfig, dataset: Dataset, variant: Variant, iters: int) -> np.ndarray:
    """Per-iteration, per-sample NMSE of an FPC run over a dataset (iters x L)."""
    traces = fpc_solve_batch(
        dataset.phi,
        dataset.measurements.signs,
        cfg.fpc_config(variant, iters),
        truths=dataset.signals.values,
        threads=cfg.threads,
    )
    return nmse_matrix(traces)


def run_table1(cfg: ExperimentConfig, seed: int) -> ExperimentResult:
    """
    FPC-l2 per iteration against DeepFPC-l2 per depth.

    The DeepFPC-l2 column is read out layer by layer from one trained
    network (each truncation normalized), or from one network per depth
    when cfg.retrain_per_depth is set. The FPC-l2 row at cfg.fpc_iters is
    included as well.
    """
    collector = _RowCollector()
    for draw in range(cfg.phi_draws):
        train_ds, test_ds = make_problem(cfg, seed, draw)
        iters = max(cfg.fpc_iters, cfg.layers)
        fpc = fpc_nmse(cfg, test_ds, Variant.L2, iters)
        for depth in range(1, cfg.layers + 1):
            collector.add("fpc-l2", "depth", depth, fpc[depth - 1])
        if cfg.fpc_iters > cfg.layers:
            collector.add("fpc-l2", "depth", cfg.fpc_iters, fpc[cfg.fpc_iters - 1])

        train_seed = derive_seed(seed, draw)
        if cfg.retrain_per_depth:
            def per_depth(depth: int) -> np.ndarray:
                model = train_model(cfg, Variant.L2, depth, train_ds, train_seed)
                return evaluate_model(model, test_ds)
            deep = _map(per_depth, range(1, cfg.layers + 1), cfg.threads)
        else:
            model = train_model(cfg, Variant.L2, cfg.layers, train_ds, train_seed)
            deep = evaluate_readouts(model, test_ds)
        for depth, samples in enumerate(deep, start=1):
            collector.add("deepfpc-l2", "depth", depth, samples)
        logger.info("table1: draw %d done", draw)

    return ExperimentResult(
        experiment="table1",
        seed=seed,
        config=cfg.to_dict(),
        rows=collector.rows(),
        metadata={"interpretation": "retrain-per-depth" if cfg.retrain_per_depth else "per-layer-readout"},
    )


def _warn_outside(name: str, values: Sequence[float], bounds: Tuple[float, float]) -> None:
    lo, hi = bounds
    outside = [v for v in values if math.isfinite(v) and not lo <= v <= hi]
    if outside:
        logger.warning("%s values %s lie outside the reference range [%g, %g]", name, outside, lo, hi)


def _noise_sweep(
    name: str,
    cfg: ExperimentConfig,
    values: Sequence[float],
    seed: int,
    sweep_param: str,
    channel: Callable[[Dataset, float, int], Dataset],
) -> ExperimentResult:
    """Train DeepFPC-l1 and DeepFPC-l2 on clean data, test both under a channel."""
    variants = (Variant.L1, Variant.L2)
    collector = _RowCollector()
    for draw in range(cfg.phi_draws):
        train_ds, test_ds = make_problem(cfg, seed, draw)
        train_seed = derive_seed(seed, draw)
        models = _map(
            lambda v: train_model(cfg, v, cfg.layers, train_ds, train_seed), variants, cfg.threads
        )
        noise_seed = derive_seed(seed, draw, 1)

        def point(value: float) -> List[np.ndarray]:
            noisy = channel(test_ds, value, noise_seed)
            out = [evaluate_model(model, noisy) for model in models]
            logger.info("%s: %s=%s done (draw %d)", name, sweep_param, format_value(value), draw)
            return out

        for value, results in zip(values, _map(point, values, cfg.threads)):
            for variant, samples in zip(variants, results):
                collector.add(_method("deepfpc", variant), sweep_param, value, samples)

    return ExperimentResult(experiment=name, seed=seed, config=cfg.to_dict(), rows=collector.rows())


def _gaussian_channel(dataset: Dataset, snr_db: float, seed: int) -> Dataset:
    return dataset.with_measurements(add_gaussian_noise(dataset.measurements, snr_db, seed))


def _flip_channel(dataset: Dataset, ratio: float, seed: int) -> Dataset:
    return dataset.with_measurements(flip_signs(dataset.measurements, ratio, seed))


def run_snr_sweep(cfg: ExperimentConfig, snr_list: Optional[Sequence[float]], seed: int) -> ExperimentResult:
    """
    Noise robustness under Gaussian measurement noise.

    Models are trained on noiseless data and tested at every SNR in
    snr_list (cfg.snr_grid if None); +inf means no noise.
    """
    values = [float(v) for v in (snr_list if snr_list is not None else cfg.snr_grid)]
    _warn_outside("SNR (dB)", values, TESTED_SNR_RANGE)
    return _noise_sweep("sweep-snr", cfg, values, seed, "snr_db", _gaussian_channel)


def run_flip_sweep(cfg: ExperimentConfig, ratio_list: Optional[Sequence[float]], seed: int) -> ExperimentResult:
    """Noise robustness under sign flips at every ratio in ratio_list (cfg.flip_grid if None)."""
    values = [float(v) for v in (ratio_list if ratio_list is not None else cfg.flip_grid)]
    bad = [v for v in values if not 0.0 <= v <= 1.0]
    if bad:
        raise InvalidArgument(f"flip ratios must be in [0, 1], got {bad}")
    _warn_outside("flip ratio", values, TESTED_FLIP_RANGE)
    return _noise_sweep("sweep-flip", cfg, values, seed, "flip_ratio", _flip_channel)


def run_algorithm_noise_comparison(cfg: ExperimentConfig, seed: int) -> ExperimentResult:
    """
    Classical FPC-l1 against FPC-l2 under both channels, no learning.

    Gaussian rows cover +inf (noiseless) and cfg.snr_grid; flip rows
    cover cfg.flip_grid.
    """
    variants = (Variant.L1, Variant.L2)
    points = [("snr_db", math.inf)] + [("snr_db", v) for v in cfg.snr_grid]
    points += [("flip_ratio", v) for v in cfg.flip_grid]
    collector = _RowCollector()

    for draw in range(cfg.phi_draws):
        _, test_ds = make_problem(cfg, seed, draw)
        noise_seed = derive_seed(seed, draw, 1)

        def point(p: Tuple[str, float]) -> List[np.ndarray]:
            param, value = p
            channel = _gaussian_channel if param == "snr_db" else _flip_channel
            noisy = channel(test_ds, value, noise_seed)
            return [fpc_nmse(cfg, noisy, v, cfg.fpc_iters)[-1] for v in variants]

        for (param, value), results in zip(points, _map(point, points, cfg.threads)):
            for variant, samples in zip(variants, results):
                collector.add(_method("fpc", variant), param, value, samples)
        logger.info("compare-fpc: draw %d done", draw)

    return ExperimentResult(experiment="compare-fpc", seed=seed, config=cfg.to_dict(), rows=collector.rows())


def calibrate_fpc(
    cfg: ExperimentConfig, nu_grid: Optional[Sequence[float]], seed: int
) -> Tuple[float, ExperimentResult]:
    """
    Pick nu (tau fixed) whose FPC-l2 trajectory best matches the reference.

    The score of a candidate is the squared distance between its mean
    NMSE over the first iterations and REFERENCE_FPC_L2_DB.

    nu_grid defaults to CALIBRATION_NU_GRID.

    Returns:
        (best nu, result with one row per candidate at the last reference iteration)
    """
    nu_grid = list(CALIBRATION_NU_GRID if nu_grid is None else nu_grid)
    if not nu_grid:
        raise InvalidArgument("nu_grid is empty")
    _, test_ds = make_problem(cfg, seed)
    depth = len(REFERENCE_FPC_L2_DB)
    reference = np.array(REFERENCE_FPC_L2_DB)

    def score(nu: float) -> Tuple[float, np.ndarray]:
        candidate = ExperimentConfig.from_dict({**cfg.to_dict(), "nu": float(nu)})
        nmse = fpc_nmse(candidate, test_ds, Variant.L2, depth)
        means = np.array([mean_nmse_db(row) for row in nmse])
        return float(np.sum((means - reference) ** 2)), nmse[-1]

    scored = _map(score, nu_grid, cfg.threads)
    rows = [
        ResultRow(method="fpc-l2", sweep_param="nu", sweep_value=float(nu), samples=floor_nmse_db(last))
        for nu, (_, last) in zip(nu_grid, scored)
    ]
    best_index = int(np.argmin([s for s, _ in scored]))
    best_nu = float(nu_grid[best_index])
    logger.info("calibrate-fpc: best nu=%g (score %.4f)", best_nu, scored[best_index][0])
    result = ExperimentResult(
        experiment="calibrate-fpc",
        seed=seed,
        config=cfg.to_dict(),
        rows=rows,
        metadata={
            "best_nu": repr(best_nu),
            "scores": ",".join(repr(s) for s, _ in scored),
        },
    )
    return best_nu, result
