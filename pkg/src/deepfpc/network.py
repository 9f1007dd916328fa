"""
Deep-unfolded FPC networks.

Each layer of DeepFPC-l2 computes

    x <- S_nu(x + A Y relu(Y Bbar x))

and each layer of the DeepFPC-l1 baseline computes

    x <- S_nu(x + A (y - sign(B x)))

with trainable A, Bbar and nu per layer. Only the final layer output is
normalized onto the unit sphere.

The batched forward pass evaluates a whole measurement matrix at once:
the per-sample products Y_l Bbar are Hadamard products of the sign batch
with the replicated weights, so no per-sample diagonal matrix is formed.
ExtendedBatch materializes the extended matrices explicitly; it is used
to check the broadcast path block by block.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import InvalidArgument, InvalidState, ZeroOutput
from .operators import relu, sign, soft_threshold
from .solvers import Variant

logger = logging.getLogger(__name__)


@dataclass
class LayerParams:
    """Trainable weights of one layer: A (N x M), Bbar (M x N) and nu >= 0."""
    A: np.ndarray
    Bbar: np.ndarray
    nu: float

    def copy(self) -> "LayerParams":
        return LayerParams(A=self.A.copy(), Bbar=self.Bbar.copy(), nu=float(self.nu))


@dataclass
class UnfoldedModel:
    """
    An R-layer unfolded network.

    With tied=True every entry of layers is the same LayerParams object.
    """
    variant: Variant
    layers: List[LayerParams]
    tied: bool = False

    def __post_init__(self) -> None:
        if not self.layers:
            raise InvalidArgument("an unfolded model needs at least one layer")
        n, m = self.layers[0].A.shape
        for r, layer in enumerate(self.layers):
            if layer.A.shape != (n, m) or layer.Bbar.shape != (m, n):
                raise InvalidArgument(
                    f"layer {r} has A {layer.A.shape} and Bbar {layer.Bbar.shape}, "
                    f"expected {(n, m)} and {(m, n)}"
                )
            if layer.nu < 0:
                raise InvalidArgument(f"layer {r} has negative nu={layer.nu}")
        if self.tied and any(layer is not self.layers[0] for layer in self.layers):
            raise InvalidArgument("tied model layers must share one parameter set")

    @property
    def n(self) -> int:
        return self.layers[0].A.shape[0]

    @property
    def m(self) -> int:
        return self.layers[0].A.shape[1]

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    def parameters(self) -> List[LayerParams]:
        """Distinct parameter sets, in first-use order."""
        seen: Dict[int, LayerParams] = {}
        for layer in self.layers:
            seen.setdefault(id(layer), layer)
        return list(seen.values())

    def parameter_count(self) -> int:
        return sum(p.A.size + p.Bbar.size + 1 for p in self.parameters())

    def copy(self) -> "UnfoldedModel":
        """Deep copy that keeps the tying structure."""
        copies: Dict[int, LayerParams] = {}
        layers = [copies.setdefault(id(layer), layer.copy()) for layer in self.layers]
        return UnfoldedModel(variant=self.variant, layers=layers, tied=self.tied)


@dataclass
class LayerCache:
    """Intermediate values of one layer, each stored as columns (one per sample)."""
    x_in: np.ndarray
    pre: np.ndarray
    correction_in: np.ndarray
    z: np.ndarray


@dataclass
class ForwardCache:
    """Everything backward() needs from a forward pass."""
    y: np.ndarray
    layers: List[LayerCache] = field(default_factory=list)
    x_final: Optional[np.ndarray] = None
    norms: Optional[np.ndarray] = None
    # column norms of the outputs of layers 1..R-1, kept only on request
    readout_norms: Optional[List[np.ndarray]] = None

    def readouts(self) -> List[np.ndarray]:
        """Normalized outputs of layers 1..R-1 (the last layer is x_final / norms)."""
        if self.readout_norms is None:
            raise InvalidState("forward pass was run without readouts")
        return [lc.x_in / norms for lc, norms in zip(self.layers[1:], self.readout_norms)]


@dataclass
class LayerGradient:
    """Gradient with respect to one LayerParams."""
    A: np.ndarray
    Bbar: np.ndarray
    nu: float = 0.0


@dataclass
class ExtendedBatch:
    """
    Explicit extended matrices of one layer for a batch of L samples.

    Y_ex: (M*L) x N, row l*M + m holds y_ml in every column.
    B_ex: (M*L) x N, Bbar stacked L times vertically.
    A_ex: N x (M*L), A repeated L times horizontally.
    X_ex: N x (M*L), column l*M + m holds x_l.
    """
    Y_ex: np.ndarray
    B_ex: np.ndarray
    A_ex: np.ndarray
    m: int
    batch_size: int
    X_ex: Optional[np.ndarray] = None

    def hadamard(self) -> np.ndarray:
        """Y_ex (*) B_ex, the stacked blocks [Y_1 Bbar; ...; Y_L Bbar]."""
        return self.Y_ex * self.B_ex

    def margins(self) -> np.ndarray:
        """Y_l Bbar x_l for every sample via Hadamard, sum and reshape (M x L)."""
        if self.X_ex is None:
            raise InvalidState("margins need X_ex; build the batch with x_batch")
        flat = np.sum(self.hadamard() * self.X_ex.T, axis=1)
        return flat.reshape(self.batch_size, self.m).T

    def back_project(self, w: np.ndarray) -> np.ndarray:
        """A w_l for every sample via Hadamard, sum and reshape (N x L)."""
        n = self.A_ex.shape[0]
        weighted = self.A_ex * w.T.reshape(1, -1)
        return weighted.reshape(n, self.batch_size, self.m).sum(axis=2)


def init_model(
    phi: np.ndarray,
    variant: Variant,
    num_layers: int,
    tau: float,
    nu0: float,
    tied: bool = False,
) -> UnfoldedModel:
    """
    Initialize an unfolded network from the algorithm's matrices.

    Every layer starts at A = tau Phi^T, with Bbar = -Phi for the l2
    variant and Bbar = Phi (the sign argument) for the l1 variant, so the
    untrained network is the truncated algorithm without intermediate
    renormalization.

    Args:
        phi: M x N sensing matrix
        variant: Variant.L1 or Variant.L2
        num_layers: Number of layers R
        tau: Step size
        nu0: Initial threshold of every layer
        tied: Share one parameter set across all layers

    Returns:
        UnfoldedModel
    """
    if num_layers < 1:
        raise InvalidArgument(f"num_layers must be at least 1, got {num_layers}")
    if nu0 < 0:
        raise InvalidArgument(f"nu0 must be nonnegative, got {nu0}")

    def make_layer() -> LayerParams:
        bbar = -phi if variant is Variant.L2 else phi
        return LayerParams(A=tau * phi.T, Bbar=np.array(bbar, dtype=float), nu=float(nu0))

    if tied:
        shared = make_layer()
        layers = [shared] * num_layers
    else:
        layers = [make_layer() for _ in range(num_layers)]
    return UnfoldedModel(variant=variant, layers=layers, tied=tied)


def _normalize_columns(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(x, axis=0)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise ZeroOutput(column=int(zero[0]))
    return x / norms, norms


def _check_batch(model: UnfoldedModel, y_batch: np.ndarray, x0_batch: np.ndarray) -> None:
    if y_batch.ndim != 2 or x0_batch.ndim != 2:
        raise InvalidArgument("batched forward expects M x L and N x L matrices")
    if y_batch.shape[0] != model.m or x0_batch.shape[0] != model.n:
        raise InvalidArgument(
            f"model is {model.n}x{model.m} but got y {y_batch.shape} and x0 {x0_batch.shape}"
        )
    if y_batch.shape[1] != x0_batch.shape[1]:
        raise InvalidArgument("y_batch and x0_batch have different column counts")
    if np.any(np.linalg.norm(x0_batch, axis=0) == 0):
        raise InvalidArgument("every start column must be nonzero")


def _layer_batched(
    layer: LayerParams, variant: Variant, y: np.ndarray, x: np.ndarray
) -> LayerCache:
    """One layer on all columns at once; y enters by Hadamard products only."""
    if variant is Variant.L2:
        pre = y * (layer.Bbar @ x)
        correction_in = y * relu(pre)
    else:
        pre = layer.Bbar @ x
        correction_in = y - sign(pre)
    z = x + layer.A @ correction_in
    return LayerCache(x_in=x, pre=pre, correction_in=correction_in, z=z)


def forward_with_cache(
    model: UnfoldedModel, y_batch: np.ndarray, x0_batch: np.ndarray, readouts: bool = False
) -> Tuple[np.ndarray, ForwardCache]:
    """
    Batched forward pass that also returns the cache for backward().

    Args:
        readouts: Also keep the norms of every intermediate layer output,
            so backward() can take gradients of per-layer readouts

    Returns:
        (N x L unit-column estimates, ForwardCache)

    Raises:
        ZeroOutput: If a final column (or, with readouts, any layer output column) is zero
    """
    y_batch = np.asarray(y_batch, dtype=float)
    x = np.asarray(x0_batch, dtype=float)
    _check_batch(model, y_batch, x)

    cache = ForwardCache(y=y_batch, readout_norms=[] if readouts else None)
    for r, layer in enumerate(model.layers):
        lc = _layer_batched(layer, model.variant, y_batch, x)
        cache.layers.append(lc)
        x = soft_threshold(lc.z, layer.nu)
        if readouts and r < model.num_layers - 1:
            cache.readout_norms.append(_normalize_columns(x)[1])
    xstar, norms = _normalize_columns(x)
    cache.x_final = x
    cache.norms = norms
    return xstar, cache


def forward_batched(model: UnfoldedModel, y_batch: np.ndarray, x0_batch: np.ndarray) -> np.ndarray:
    """
    Run the network on L samples at once.

    Args:
        model: Unfolded network
        y_batch: M x L sign matrix
        x0_batch: N x L start points

    Returns:
        N x L matrix with unit-norm columns
    """
    xstar, _ = forward_with_cache(model, y_batch, x0_batch)
    return xstar


def forward_readouts(
    model: UnfoldedModel, y_batch: np.ndarray, x0_batch: np.ndarray
) -> List[np.ndarray]:
    """
    Normalized output after every layer of a batched forward pass.

    Element r is the estimate of the network truncated to r + 1 layers.
    """
    y_batch = np.asarray(y_batch, dtype=float)
    x = np.asarray(x0_batch, dtype=float)
    _check_batch(model, y_batch, x)

    readouts = []
    for layer in model.layers:
        x = soft_threshold(_layer_batched(layer, model.variant, y_batch, x).z, layer.nu)
        readouts.append(_normalize_columns(x)[0])
    return readouts


def forward_single(
    model: UnfoldedModel, y: np.ndarray, x0: np.ndarray
) -> Tuple[np.ndarray, ForwardCache]:
    """
    Run the network on one measurement vector.

    Args:
        model: Unfolded network
        y: +/-1 measurement vector of length M
        x0: Nonzero start point of length N

    Returns:
        (unit-norm estimate, ForwardCache with single-column entries)

    Raises:
        ZeroOutput: If the last layer outputs zero
    """
    y = np.asarray(y, dtype=float).ravel()
    x = np.asarray(x0, dtype=float).ravel()
    if y.shape[0] != model.m or x.shape[0] != model.n:
        raise InvalidArgument(f"model is {model.n}x{model.m} but got y {y.shape} and x0 {x.shape}")
    if np.linalg.norm(x) == 0:
        raise InvalidArgument("x0 must be nonzero")

    cache = ForwardCache(y=y[:, None])
    for layer in model.layers:
        if model.variant is Variant.L2:
            pre = y * (layer.Bbar @ x)
            correction_in = y * np.maximum(pre, 0.0)
        else:
            pre = layer.Bbar @ x
            correction_in = y - sign(pre)
        z = x + layer.A @ correction_in
        cache.layers.append(
            LayerCache(x_in=x[:, None], pre=pre[:, None], correction_in=correction_in[:, None], z=z[:, None])
        )
        x = soft_threshold(z, layer.nu)

    norm = np.linalg.norm(x)
    if norm == 0:
        raise ZeroOutput()
    cache.x_final = x[:, None]
    cache.norms = np.array([norm])
    return x / norm, cache


def build_extended(
    y_batch: np.ndarray, layer: LayerParams, x_batch: Optional[np.ndarray] = None
) -> ExtendedBatch:
    """
    Build the extended matrices of one layer.

    Y_ex reshapes the sign batch into a column and repeats it N times
    horizontally, B_ex stacks Bbar L times, A_ex repeats A L times
    horizontally, and X_ex repeats each x_l M times horizontally.
    """
    m, l = y_batch.shape
    n = layer.A.shape[0]
    if layer.Bbar.shape != (m, n):
        raise InvalidArgument(f"layer expects {layer.Bbar.shape[0]} measurements, got {m}")
    y_col = np.asarray(y_batch, dtype=float).T.reshape(-1, 1)
    x_ex = None
    if x_batch is not None:
        if x_batch.shape != (n, l):
            raise InvalidArgument(f"x_batch must be {(n, l)}, got {x_batch.shape}")
        x_ex = np.repeat(x_batch, m, axis=1)
    return ExtendedBatch(
        Y_ex=np.repeat(y_col, n, axis=1),
        B_ex=np.tile(layer.Bbar, (l, 1)),
        A_ex=np.tile(layer.A, (1, l)),
        m=m,
        batch_size=l,
        X_ex=x_ex,
    )


def extended_layer(
    layer: LayerParams, variant: Variant, y_batch: np.ndarray, x_batch: np.ndarray
) -> np.ndarray:
    """One layer evaluated with materialized extended matrices."""
    if variant is Variant.L2:
        ext = build_extended(y_batch, layer, x_batch)
        correction_in = y_batch * relu(ext.margins())
    else:
        ext = build_extended(np.ones_like(y_batch), layer, x_batch)
        correction_in = y_batch - sign(ext.margins())
    return soft_threshold(x_batch + ext.back_project(correction_in), layer.nu)


def backward(
    model: UnfoldedModel,
    cache: Optional[ForwardCache],
    upstream: np.ndarray,
    straight_through: bool = False,
    readout_upstreams: Optional[Sequence[np.ndarray]] = None,
) -> List[LayerGradient]:
    """
    Reverse-mode gradients of a scalar loss through the network.

    Args:
        model: The model the cache was produced with
        cache: ForwardCache from forward_single or forward_with_cache
        upstream: dLoss/dx* (N-vector or N x L)
        straight_through: For the l1 variant, pass gradients through
            sign(.) as the identity inside [-1, 1] instead of zero
        readout_upstreams: Optional dLoss/d(readout) for layers 1..R-1,
            where a readout is the normalized output of that layer;
            needs a cache from forward_with_cache(..., readouts=True)

    Returns:
        One LayerGradient per entry of model.parameters(); gradients of
        tied layers are summed

    Raises:
        InvalidState: If the cache is missing or does not match the model
        InvalidArgument: If readout_upstreams does not have one entry per inner layer
    """
    if cache is None or cache.x_final is None or len(cache.layers) != model.num_layers:
        raise InvalidState("backward needs the cache of a forward pass through this model")
    if readout_upstreams is not None:
        if cache.readout_norms is None:
            raise InvalidState("readout gradients need a forward pass run with readouts")
        if len(readout_upstreams) != model.num_layers - 1:
            raise InvalidArgument(
                f"expected {model.num_layers - 1} readout gradients, got {len(readout_upstreams)}"
            )

    params = model.parameters()
    index = {id(p): i for i, p in enumerate(params)}
    grads = [LayerGradient(A=np.zeros_like(p.A), Bbar=np.zeros_like(p.Bbar)) for p in params]

    dx = _normalize_vjp(cache.x_final, cache.norms, upstream)

    y = cache.y
    for r in reversed(range(model.num_layers)):
        layer, lc = model.layers[r], cache.layers[r]
        grad = grads[index[id(layer)]]
        passed = np.abs(lc.z) > layer.nu
        dz = dx * passed
        grad.nu -= float(np.sum(np.sign(lc.z) * dz))
        grad.A += dz @ lc.correction_in.T
        dcorr = layer.A.T @ dz
        dx = dz.copy()

        dbx = None
        if model.variant is Variant.L2:
            dpre = dcorr * y * (lc.pre > 0)
            dbx = dpre * y
        elif straight_through:
            dbx = -dcorr * (np.abs(lc.pre) <= 1.0)
        if dbx is not None:
            grad.Bbar += dbx @ lc.x_in.T
            dx += layer.Bbar.T @ dbx

        # lc.x_in is the output of layer r - 1
        if readout_upstreams is not None and r > 0:
            dx += _normalize_vjp(lc.x_in, cache.readout_norms[r - 1], readout_upstreams[r - 1])
    return grads


def _normalize_vjp(x: np.ndarray, norms: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Pull g back through x -> x / ||x|| (column-wise)."""
    g = np.asarray(g, dtype=float)
    g = g.reshape(-1, 1) if g.ndim == 1 else g
    xhat = x / norms
    return (g - xhat * np.sum(xhat * g, axis=0)) / norms
