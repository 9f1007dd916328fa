"""
File formats for datasets and trained models.

Both formats start with textual key=value header lines, end the header
with a blank line, and continue with a binary payload of little-endian
float64 values.

DFPC-DATA v1 payload: Phi row-major (M*N), X column-major (N*L),
pre_quant column-major (M*L), signs as int8 column-major (M*L).

DFPC-MODEL v1 payload, per layer: A row-major (N*M), Bbar row-major
(M*N), nu.
"""

from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np

from .errors import FormatError, InvalidState
from .network import LayerParams, UnfoldedModel
from .signals import Dataset, MeasurementBatch, SignalBatch, Stream
from .solvers import Variant

DATA_MAGIC = "DFPC-DATA"
MODEL_MAGIC = "DFPC-MODEL"
VERSION = 1

_F8 = np.dtype("<f8")
_I1 = np.dtype("i1")

PathLike = Union[str, Path]


def _encode_header(fields: List[Tuple[str, object]]) -> bytes:
    lines = [f"{key}={value}" for key, value in fields]
    return ("\n".join(lines) + "\n\n").encode("ascii")


def _split_header(blob: bytes, magic: str) -> Tuple[Dict[str, str], bytes]:
    end = blob.find(b"\n\n")
    if end < 0:
        raise FormatError("missing blank line after header")
    header: Dict[str, str] = {}
    for line in blob[:end].decode("ascii", errors="replace").splitlines():
        key, sep, value = line.partition("=")
        if not sep:
            raise FormatError(f"malformed header line {line!r}")
        header[key.strip()] = value.strip()
    if header.get("magic") != magic:
        raise FormatError(f"expected magic={magic}, got {header.get('magic')!r}")
    if header.get("version") != str(VERSION):
        raise FormatError(f"unsupported {magic} version {header.get('version')!r}")
    return header, blob[end + 2:]


def _int_field(header: Dict[str, str], key: str) -> int:
    try:
        return int(header[key])
    except (KeyError, ValueError):
        raise FormatError(f"header field {key!r} missing or not an integer")


class _Reader:
    """Sequential reader over a binary payload."""

    def __init__(self, payload: bytes):
        self.payload = payload
        self.offset = 0

    def take(self, count: int, dtype: np.dtype) -> np.ndarray:
        nbytes = count * dtype.itemsize
        if self.offset + nbytes > len(self.payload):
            raise FormatError("payload is truncated")
        out = np.frombuffer(self.payload, dtype=dtype, count=count, offset=self.offset)
        self.offset += nbytes
        return out

    def finish(self) -> None:
        if self.offset != len(self.payload):
            raise FormatError(f"{len(self.payload) - self.offset} trailing payload bytes")


def dataset_to_bytes(dataset: Dataset) -> bytes:
    """Serialize a dataset as DFPC-DATA v1."""
    pre = dataset.measurements.pre_quant
    if pre is None:
        raise InvalidState("DFPC-DATA files require pre-quantization values")
    header = _encode_header([
        ("magic", DATA_MAGIC),
        ("version", VERSION),
        ("n", dataset.n),
        ("m", dataset.m),
        ("k", dataset.k),
        ("l", len(dataset)),
        ("seed", dataset.seed),
        ("stream", dataset.stream.name.lower()),
    ])
    return b"".join([
        header,
        dataset.phi.astype(_F8).tobytes(order="C"),
        dataset.signals.values.astype(_F8).tobytes(order="F"),
        pre.astype(_F8).tobytes(order="F"),
        dataset.measurements.signs.astype(_I1).tobytes(order="F"),
    ])


def dataset_from_bytes(blob: bytes) -> Dataset:
    """Parse a DFPC-DATA v1 blob."""
    header, payload = _split_header(blob, DATA_MAGIC)
    n, m, k, l = (_int_field(header, key) for key in ("n", "m", "k", "l"))
    seed = _int_field(header, "seed")
    try:
        stream = Stream[header.get("stream", "train").upper()]
    except KeyError:
        raise FormatError(f"unknown stream {header['stream']!r}")

    reader = _Reader(payload)
    phi = reader.take(m * n, _F8).reshape((m, n), order="C").astype(float)
    x = reader.take(n * l, _F8).reshape((n, l), order="F").astype(float)
    pre = reader.take(m * l, _F8).reshape((m, l), order="F").astype(float)
    signs = reader.take(m * l, _I1).reshape((m, l), order="F").astype(float)
    reader.finish()

    supports = [np.flatnonzero(x[:, col]) for col in range(l)]
    return Dataset(
        phi=phi,
        signals=SignalBatch(values=x, supports=supports),
        measurements=MeasurementBatch(signs=signs, pre_quant=pre),
        k=k,
        seed=seed,
        stream=stream,
    )


def write_dataset(dataset: Dataset, path: PathLike) -> Path:
    """Write a dataset file and return its path."""
    path = Path(path).expanduser()
    path.write_bytes(dataset_to_bytes(dataset))
    return path


def read_dataset(path: PathLike) -> Dataset:
    """Read a DFPC-DATA file."""
    return dataset_from_bytes(Path(path).expanduser().read_bytes())


def model_to_bytes(model: UnfoldedModel) -> bytes:
    """
    Serialize a model as DFPC-MODEL v1.

    Every layer is written, tied or not; the tied flag makes the reader
    share the first layer's parameters across all layers.
    """
    header = _encode_header([
        ("magic", MODEL_MAGIC),
        ("version", VERSION),
        ("variant", model.variant.value),
        ("layers", model.num_layers),
        ("n", model.n),
        ("m", model.m),
        ("tied", int(model.tied)),
    ])
    chunks = [header]
    for layer in model.layers:
        chunks.append(layer.A.astype(_F8).tobytes(order="C"))
        chunks.append(layer.Bbar.astype(_F8).tobytes(order="C"))
        chunks.append(np.array([layer.nu], dtype=_F8).tobytes())
    return b"".join(chunks)


def model_from_bytes(blob: bytes) -> UnfoldedModel:
    """Parse a DFPC-MODEL v1 blob."""
    header, payload = _split_header(blob, MODEL_MAGIC)
    try:
        variant = Variant(header.get("variant"))
    except ValueError:
        raise FormatError(f"unknown variant {header.get('variant')!r}")
    layers_count = _int_field(header, "layers")
    n, m = _int_field(header, "n"), _int_field(header, "m")
    tied = _int_field(header, "tied") == 1
    if layers_count < 1:
        raise FormatError("a model needs at least one layer")

    reader = _Reader(payload)
    layers = []
    for _ in range(layers_count):
        a = reader.take(n * m, _F8).reshape((n, m)).astype(float)
        bbar = reader.take(m * n, _F8).reshape((m, n)).astype(float)
        nu = float(reader.take(1, _F8)[0])
        layers.append(LayerParams(A=a, Bbar=bbar, nu=nu))
    reader.finish()

    if tied:
        layers = [layers[0]] * layers_count
    return UnfoldedModel(variant=variant, layers=layers, tied=tied)


def write_model(model: UnfoldedModel, path: PathLike) -> Path:
    """Write a model file and return its path."""
    path = Path(path).expanduser()
    path.write_bytes(model_to_bytes(model))
    return path


def read_model(path: PathLike) -> UnfoldedModel:
    """Read a DFPC-MODEL file."""
    return model_from_bytes(Path(path).expanduser().read_bytes())
