"""
Signal model for 1-bit compressed sensing.

Random sparse signals, Gaussian sensing matrices, sign measurements,
the two noise channels (pre-quantization Gaussian noise and sign flips)
and the NMSE metric.

Randomness is counter-based: every column draws from its own generator
seeded by (seed, stream, column), so results do not depend on the order
or the number of workers that produce them.
"""

import math
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from typing import List, Optional, Sequence, Union

import numpy as np

from .errors import InvalidArgument, InvalidState
from .operators import sign

NMSE_FLOOR_DB = -300.0


class Stream(IntEnum):
    """Independent random substreams derived from one seed."""
    TRAIN = 0
    TEST = 1
    PHI = 2
    NOISE = 3
    FLIP = 4
    SHUFFLE = 5


class NoiseKind(Enum):
    """Channel applied to a measurement batch."""
    NONE = "none"
    GAUSSIAN = "gaussian"
    FLIP = "flip"


def substream(seed: int, stream: int, index: int = 0) -> np.random.Generator:
    """
    Get the generator for one (seed, stream, index) substream.

    Args:
        seed: Non-negative 64-bit seed
        stream: Stream identifier
        index: Column (or draw) index within the stream

    Returns:
        A fresh numpy Generator
    """
    if seed < 0:
        raise InvalidArgument(f"seed must be non-negative, got {seed}")
    return np.random.default_rng([int(seed), int(stream), int(index)])


def derive_seed(seed: int, *keys: int) -> int:
    """Derive an independent 64-bit seed from a seed and integer keys."""
    if seed < 0:
        raise InvalidArgument(f"seed must be non-negative, got {seed}")
    state = np.random.SeedSequence([int(seed), *map(int, keys)]).generate_state(1, dtype=np.uint64)
    return int(state[0])


@dataclass
class SparseSignal:
    """One ground-truth signal: unit-norm, K-sparse."""
    values: np.ndarray
    support: np.ndarray

    @property
    def k(self) -> int:
        return len(self.support)


@dataclass
class SignalBatch:
    """L sparse signals stored as the columns of an N x L matrix."""
    values: np.ndarray
    supports: List[np.ndarray] = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def __len__(self) -> int:
        return self.values.shape[1]

    def __getitem__(self, index: int) -> SparseSignal:
        return SparseSignal(values=self.values[:, index], support=self.supports[index])


@dataclass
class MeasurementBatch:
    """
    Binary measurements of a signal batch.

    signs holds the +/-1 values (M x L). pre_quant holds Phi @ X before
    quantization; it is kept so that noise can be injected before the sign.
    """
    signs: np.ndarray
    pre_quant: Optional[np.ndarray] = None

    @property
    def m(self) -> int:
        return self.signs.shape[0]

    def __len__(self) -> int:
        return self.signs.shape[1]

    def copy(self) -> "MeasurementBatch":
        return MeasurementBatch(
            signs=self.signs.copy(),
            pre_quant=None if self.pre_quant is None else self.pre_quant.copy(),
        )


@dataclass(frozen=True)
class NoiseSpec:
    """
    Noise channel description.

    Exactly one kind is active: gaussian uses snr_db, flip uses flip_ratio.
    """
    kind: NoiseKind = NoiseKind.NONE
    snr_db: float = math.inf
    flip_ratio: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind is NoiseKind.FLIP and not 0.0 <= self.flip_ratio <= 1.0:
            raise InvalidArgument(f"flip_ratio must be in [0, 1], got {self.flip_ratio}")
        if self.kind is NoiseKind.GAUSSIAN and (math.isnan(self.snr_db) or self.snr_db == -math.inf):
            raise InvalidArgument(f"snr_db must be a number above -inf, got {self.snr_db}")
        if self.kind is not NoiseKind.GAUSSIAN and self.snr_db != math.inf:
            raise InvalidArgument(f"snr_db is only used by gaussian noise, got kind={self.kind.value}")
        if self.kind is not NoiseKind.FLIP and self.flip_ratio != 0.0:
            raise InvalidArgument(f"flip_ratio is only used by flip noise, got kind={self.kind.value}")

    @classmethod
    def gaussian(cls, snr_db: float, seed: int) -> "NoiseSpec":
        return cls(kind=NoiseKind.GAUSSIAN, snr_db=snr_db, seed=seed)

    @classmethod
    def flip(cls, flip_ratio: float, seed: int) -> "NoiseSpec":
        return cls(kind=NoiseKind.FLIP, flip_ratio=flip_ratio, seed=seed)

    def to_dict(self) -> dict:
        """Convert to dictionary for serialization."""
        return {
            "kind": self.kind.value,
            "snr_db": self.snr_db,
            "flip_ratio": self.flip_ratio,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSpec":
        """Create from dictionary."""
        return cls(
            kind=NoiseKind(d["kind"]),
            snr_db=float(d.get("snr_db", math.inf)),
            flip_ratio=float(d.get("flip_ratio", 0.0)),
            seed=int(d.get("seed", 0)),
        )


@dataclass
class Dataset:
    """A sensing matrix with a batch of signals and their measurements."""
    phi: np.ndarray
    signals: SignalBatch
    measurements: MeasurementBatch
    k: int
    seed: int
    stream: Stream = Stream.TRAIN

    @property
    def n(self) -> int:
        return self.phi.shape[1]

    @property
    def m(self) -> int:
        return self.phi.shape[0]

    def __len__(self) -> int:
        return len(self.signals)

    def subset(self, columns: Sequence[int]) -> "Dataset":
        """Dataset restricted to the given columns (in the given order)."""
        cols = np.asarray(columns, dtype=int)
        pre = self.measurements.pre_quant
        return replace(
            self,
            signals=SignalBatch(
                values=self.signals.values[:, cols],
                supports=[self.signals.supports[c] for c in cols],
            ),
            measurements=MeasurementBatch(
                signs=self.measurements.signs[:, cols],
                pre_quant=None if pre is None else pre[:, cols],
            ),
        )

    def with_measurements(self, measurements: MeasurementBatch) -> "Dataset":
        return replace(self, measurements=measurements)


def draw_sensing_matrix(m: int, n: int, seed: int, draw: int = 0) -> np.ndarray:
    """
    Draw an M x N sensing matrix with i.i.d. N(0, 1/M) entries.

    Args:
        m: Number of measurements
        n: Signal dimension
        seed: Run seed
        draw: Index of the matrix draw for this seed

    Returns:
        M x N float64 matrix
    """
    if m < 1 or n < 1:
        raise InvalidArgument(f"matrix dimensions must be positive, got {m}x{n}")
    rng = substream(seed, Stream.PHI, draw)
    return rng.standard_normal((m, n)) / math.sqrt(m)


def generate_signals(
    n: int, k: int, l: int, seed: int, stream: Stream = Stream.TRAIN
) -> SignalBatch:
    """
    Generate L unit-norm K-sparse signals of dimension N.

    The support is drawn uniformly without replacement, the nonzero values
    from the standard normal, and each vector is scaled to unit l2 norm.

    Args:
        n: Signal dimension
        k: Sparsity level
        l: Number of signals
        seed: Run seed
        stream: Signal substream (train and test are disjoint)

    Returns:
        SignalBatch with N x L values

    Raises:
        InvalidArgument: If k is not in [1, n] or l < 1
    """
    if not 0 < k <= n:
        raise InvalidArgument(f"sparsity must satisfy 0 < k <= n, got k={k}, n={n}")
    if l < 1:
        raise InvalidArgument(f"signal count must be at least 1, got l={l}")

    values = np.zeros((n, l))
    supports = []
    for col in range(l):
        rng = substream(seed, stream, col)
        support = np.sort(rng.choice(n, size=k, replace=False))
        amplitudes = rng.standard_normal(k)
        values[support, col] = amplitudes / np.linalg.norm(amplitudes)
        supports.append(support)
    return SignalBatch(values=values, supports=supports)


def _as_columns(x: Union[SignalBatch, SparseSignal, np.ndarray]) -> np.ndarray:
    if isinstance(x, (SignalBatch, SparseSignal)):
        x = x.values
    x = np.asarray(x, dtype=float)
    return x.reshape(-1, 1) if x.ndim == 1 else x


def measure(phi: np.ndarray, x: Union[SignalBatch, np.ndarray]) -> MeasurementBatch:
    """
    Take 1-bit measurements y_l = sign(Phi x_l) of every signal column.

    Args:
        phi: M x N sensing matrix
        x: SignalBatch, N x L matrix or a single N-vector

    Returns:
        MeasurementBatch with signs and pre-quantization values

    Raises:
        InvalidArgument: If the column count of phi differs from N
    """
    cols = _as_columns(x)
    if phi.shape[1] != cols.shape[0]:
        raise InvalidArgument(
            f"sensing matrix has {phi.shape[1]} columns but signals have dimension {cols.shape[0]}"
        )
    pre_quant = phi @ cols
    return MeasurementBatch(signs=sign(pre_quant), pre_quant=pre_quant)


def make_dataset(
    n: int, m: int, k: int, l: int, seed: int, stream: Stream = Stream.TRAIN, draw: int = 0
) -> Dataset:
    """
    Generate a full problem instance.

    The sensing matrix depends only on (seed, draw), so the train and test
    datasets of one seed share it.
    """
    phi = draw_sensing_matrix(m, n, seed, draw)
    signals = generate_signals(n, k, l, seed, stream)
    return Dataset(
        phi=phi, signals=signals, measurements=measure(phi, signals),
        k=k, seed=seed, stream=stream,
    )


def add_gaussian_noise(batch: MeasurementBatch, snr_db: float, seed: int) -> MeasurementBatch:
    """
    Add Gaussian noise at a given SNR to the pre-quantization values and re-sign.

    Per column, P_S = ||Phi x_l||^2 / M and the noise amplitude is
    A_N = sqrt(P_S / 10^(SNR/10)).

    Args:
        batch: Measurements with pre_quant values
        snr_db: Signal-to-noise ratio in dB (+inf leaves the batch unchanged)
        seed: Noise seed

    Returns:
        New MeasurementBatch

    Raises:
        InvalidArgument: If snr_db is NaN or -inf
        InvalidState: If batch carries no pre_quant values
    """
    if math.isnan(snr_db) or snr_db == -math.inf:
        raise InvalidArgument(f"snr_db must be a number above -inf, got {snr_db}")
    if batch.pre_quant is None:
        raise InvalidState("gaussian noise needs pre-quantization values")
    if math.isinf(snr_db) and snr_db > 0:
        return batch.copy()

    m = batch.m
    noisy = batch.pre_quant.copy()
    for col in range(len(batch)):
        p_s = float(np.sum(noisy[:, col] ** 2)) / m
        a_n = noise_amplitude(p_s, snr_db)
        noisy[:, col] += a_n * substream(seed, Stream.NOISE, col).standard_normal(m)
    return MeasurementBatch(signs=sign(noisy), pre_quant=noisy)


def noise_amplitude(signal_power: float, snr_db: float) -> float:
    """Noise amplitude A_N = sqrt(P_S / 10^(SNR/10))."""
    return math.sqrt(signal_power / 10.0 ** (snr_db / 10.0))


def flip_count(m: int, flip_ratio: float) -> int:
    """Number of flipped entries per column, round(ratio * M) with halves rounded up."""
    return int(math.floor(flip_ratio * m + 0.5))


def draw_flip_pattern(m: int, l: int, flip_ratio: float, seed: int) -> np.ndarray:
    """
    Draw one +/-1 flip vector xi per column.

    Each column has exactly round(flip_ratio * M) entries equal to -1,
    at positions drawn uniformly without replacement.

    Returns:
        M x L matrix of +/-1
    """
    if not 0.0 <= flip_ratio <= 1.0:
        raise InvalidArgument(f"flip_ratio must be in [0, 1], got {flip_ratio}")
    count = flip_count(m, flip_ratio)
    xi = np.ones((m, l))
    if count == 0:
        return xi
    for col in range(l):
        positions = substream(seed, Stream.FLIP, col).choice(m, size=count, replace=False)
        xi[positions, col] = -1.0
    return xi


def apply_flip_pattern(batch: MeasurementBatch, xi: np.ndarray) -> MeasurementBatch:
    """
    Multiply every measurement column by its flip vector.

    pre_quant is multiplied too, so signs stay equal to sign(pre_quant)
    and applying the same pattern twice restores the batch.
    """
    if xi.shape != batch.signs.shape:
        raise InvalidArgument(f"flip pattern shape {xi.shape} != batch shape {batch.signs.shape}")
    return MeasurementBatch(
        signs=batch.signs * xi,
        pre_quant=None if batch.pre_quant is None else batch.pre_quant * xi,
    )


def flip_signs(batch: MeasurementBatch, flip_ratio: float, seed: int) -> MeasurementBatch:
    """
    Invert the sign of round(flip_ratio * M) random entries of every column.

    Args:
        batch: Measurements
        flip_ratio: Fraction of flipped signs, in [0, 1]
        seed: Flip seed

    Returns:
        New MeasurementBatch
    """
    xi = draw_flip_pattern(batch.m, len(batch), flip_ratio, seed)
    return apply_flip_pattern(batch, xi)


def apply_noise(batch: MeasurementBatch, spec: NoiseSpec) -> MeasurementBatch:
    """Apply the channel described by spec."""
    if spec.kind is NoiseKind.GAUSSIAN:
        return add_gaussian_noise(batch, spec.snr_db, spec.seed)
    if spec.kind is NoiseKind.FLIP:
        return flip_signs(batch, spec.flip_ratio, spec.seed)
    return batch.copy()


def nmse_db(estimate: Union[np.ndarray, SparseSignal], truth: Union[np.ndarray, SparseSignal]) -> float:
    """
    Normalized mean squared error 10 log10(||x* - x||^2 / ||x||^2) in dB.

    Returns -inf for an exact match.

    Raises:
        InvalidArgument: If truth has zero norm or the shapes differ
    """
    est = np.asarray(getattr(estimate, "values", estimate), dtype=float)
    ref = np.asarray(getattr(truth, "values", truth), dtype=float)
    if est.shape != ref.shape:
        raise InvalidArgument(f"estimate shape {est.shape} != truth shape {ref.shape}")
    ref_energy = float(np.sum(ref * ref))
    if ref_energy == 0.0:
        raise InvalidArgument("NMSE is undefined for a zero-norm truth")
    err = float(np.sum((est - ref) ** 2))
    if err == 0.0:
        return -math.inf
    return 10.0 * math.log10(err / ref_energy)


def nmse_db_batch(estimates: np.ndarray, truths: Union[np.ndarray, SignalBatch]) -> np.ndarray:
    """Per-column NMSE in dB of an N x L estimate matrix."""
    ref = _as_columns(truths)
    est = _as_columns(estimates)
    if est.shape != ref.shape:
        raise InvalidArgument(f"estimate shape {est.shape} != truth shape {ref.shape}")
    return np.array([nmse_db(est[:, col], ref[:, col]) for col in range(ref.shape[1])])


def floor_nmse_db(values: np.ndarray) -> np.ndarray:
    """Replace -inf (exact recovery) with the reporting floor of -300 dB."""
    return np.maximum(np.asarray(values, dtype=float), NMSE_FLOOR_DB)


def mean_nmse_db(values: Sequence[float], mode: str = "db") -> float:
    """
    Average per-sample NMSE values given in dB.

    Args:
        values: Per-sample NMSE in dB, summed in the given order
        mode: "db" averages the dB values, "linear" averages the ratios
            and converts the mean back to dB

    Returns:
        Mean NMSE in dB
    """
    vals = floor_nmse_db(values)
    if vals.size == 0:
        raise InvalidArgument("cannot average an empty NMSE list")
    if mode == "db":
        return math.fsum(vals.tolist()) / vals.size
    if mode == "linear":
        return 10.0 * math.log10(math.fsum((10.0 ** (vals / 10.0)).tolist()) / vals.size)
    raise InvalidArgument(f"unknown NMSE averaging mode {mode!r}")


def support_histogram(batch: SignalBatch) -> np.ndarray:
    """Count how often each index appears in the supports of a batch."""
    counts = np.zeros(batch.n, dtype=int)
    for support in batch.supports:
        counts[support] += 1
    return counts
