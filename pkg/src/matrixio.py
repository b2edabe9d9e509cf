#!/usr/bin/env python3
"""
Bit-exact I/O for matrices, datasets and model checkpoints.

Formats:
  PMAT        8-byte magic "PMAT0001", rows and cols as little-endian u64,
              then rows*cols little-endian float64 values, row-major.
  CSV         one matrix row per line, 17 significant digits.
  IDX         the MNIST image/label container (big-endian header).
  checkpoint  one line of JSON header, a blank line, then PMAT blobs whose
              byte offsets (relative to the first blob) are in the header.
"""

import gzip
import io
import json
import logging
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .config import get_config
from .errors import (ContractError, DataError, DegenerateInputError, DimensionError,
                     DomainError, FormatError, ParameterError, TruncationError)

logger = logging.getLogger(__name__)

# Dense float64, C-contiguous, 2-D
RealMatrix = np.ndarray

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

_PMAT_HEADER = struct.Struct("<QQ")
ACTIVATIONS = ("abs", "relu")


@dataclass
class LabeledDataset:
    """Feature rows with integer class labels in [0, n_classes)"""

    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise DimensionError(f"features must be 2-D, got shape {self.features.shape}")
        if self.labels.ndim != 1 or self.labels.shape[0] != self.features.shape[0]:
            raise DimensionError(
                f"{self.labels.shape[0] if self.labels.ndim == 1 else self.labels.shape} labels "
                f"for {self.features.shape[0]} samples"
            )
        if self.n_classes < 1:
            raise ContractError(f"n_classes must be positive, got {self.n_classes}")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise DataError(f"labels must lie in [0, {self.n_classes})")
        if not np.all(np.isfinite(self.features)):
            raise DataError("features contain non-finite values")

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "LabeledDataset":
        return LabeledDataset(self.features[indices], self.labels[indices], self.n_classes)


@dataclass
class ModelCheckpoint:
    """
    Serializable model state.

    Layer k contributes "layer{k}.weight" (or "layer{k}.left" and
    "layer{k}.right" when split) and optionally "layer{k}.bias" stored as a
    1 x out matrix. Masks are keyed by the weight name they apply to.
    """

    topology: List[int]
    activation: str
    activation_on_final: bool
    layers: List[Tuple[str, np.ndarray]]
    masks: Dict[str, np.ndarray] = field(default_factory=dict)
    split_flags: List[bool] = field(default_factory=list)

    def named(self) -> Dict[str, np.ndarray]:
        return dict(self.layers)


def _check_matrix(m, what: str = "matrix") -> np.ndarray:
    m = np.asarray(m)
    if m.ndim != 2:
        raise DimensionError(f"{what} must be 2-D, got shape {m.shape}")
    if not np.issubdtype(m.dtype, np.number):
        raise DataError(f"{what} must be numeric, got dtype {m.dtype}")
    if not np.all(np.isfinite(m)):
        raise DataError(f"{what} contains non-finite entries")
    return np.ascontiguousarray(m, dtype=np.float64)


# ---------------------------------------------------------------------------
# Atomic writes
# ---------------------------------------------------------------------------

def atomic_write_bytes(path, data: bytes):
    """Write via a temporary file in the same directory, then rename"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp_name, path)
    except OSError as e:
        logger.error(f"Failed to write {path}: {e}")
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def _read_bytes(path) -> bytes:
    path = Path(path)
    try:
        if path.suffix == ".gz":
            with gzip.open(path, "rb") as f:
                return f.read()
        return path.read_bytes()
    except OSError as e:
        logger.error(f"Failed to read {path}: {e}")
        raise


# ---------------------------------------------------------------------------
# PMAT
# ---------------------------------------------------------------------------

def encode_matrix(m: RealMatrix) -> bytes:
    """Serialize a matrix to PMAT bytes"""
    m = _check_matrix(m)
    rows, cols = m.shape
    return get_config().PMAT_MAGIC + _PMAT_HEADER.pack(rows, cols) + m.astype("<f8", copy=False).tobytes()


def decode_matrix(buf: bytes, source: str = "<bytes>") -> RealMatrix:
    """Parse PMAT bytes; the buffer must hold exactly one matrix"""
    magic = get_config().PMAT_MAGIC
    if buf[:len(magic)] != magic:
        raise FormatError(f"{source}: bad magic {bytes(buf[:len(magic)])!r}, expected {magic!r}")

    header_end = len(magic) + _PMAT_HEADER.size
    if len(buf) < header_end:
        raise TruncationError(f"{source}: header cut short ({len(buf)} bytes)")

    rows, cols = _PMAT_HEADER.unpack_from(buf, len(magic))
    expected = header_end + 8 * rows * cols
    if len(buf) != expected:
        raise TruncationError(f"{source}: {rows}x{cols} needs {expected} bytes, found {len(buf)}")

    m = np.frombuffer(buf, dtype="<f8", count=rows * cols, offset=header_end)
    m = m.reshape(rows, cols).astype(np.float64)
    if not np.all(np.isfinite(m)):
        raise DataError(f"{source}: matrix contains non-finite entries")
    return m


def write_matrix(m: RealMatrix, path):
    atomic_write_bytes(path, encode_matrix(m))


def read_matrix(path) -> RealMatrix:
    return decode_matrix(_read_bytes(path), source=str(path))


# ---------------------------------------------------------------------------
# CSV fixtures
# ---------------------------------------------------------------------------

def write_matrix_csv(m: RealMatrix, path):
    m = _check_matrix(m)
    buffer = io.StringIO()
    np.savetxt(buffer, m, fmt=get_config().CSV_FLOAT_FORMAT, delimiter=",")
    atomic_write_text(path, buffer.getvalue())


def read_matrix_csv(path) -> RealMatrix:
    text = _read_bytes(path).decode("utf-8")
    if not text.strip():
        raise FormatError(f"{path}: empty CSV matrix")
    try:
        m = np.loadtxt(io.StringIO(text), delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from e
    if not np.all(np.isfinite(m)):
        raise DataError(f"{path}: matrix contains non-finite entries")
    return np.ascontiguousarray(m)


# ---------------------------------------------------------------------------
# IDX
# ---------------------------------------------------------------------------

def read_idx(path) -> np.ndarray:
    """
    Read an IDX image or label file.

    Images come back as an n x (H*W) float64 array scaled to [0, 1];
    labels as an int64 vector.
    """
    buf = _read_bytes(path)
    if len(buf) < 8:
        raise FormatError(f"{path}: too short for an IDX header")

    magic, count = struct.unpack(">II", buf[:8])

    if magic == IDX_LABELS_MAGIC:
        if len(buf) != 8 + count:
            raise TruncationError(f"{path}: header says {count} labels, payload has {len(buf) - 8}")
        labels = np.frombuffer(buf, dtype=np.uint8, count=count, offset=8).astype(np.int64)
        logger.info(f"Read {count} labels from {path}")
        return labels

    if magic == IDX_IMAGES_MAGIC:
        if len(buf) < 16:
            raise TruncationError(f"{path}: image header cut short")
        rows, cols = struct.unpack(">II", buf[8:16])
        size = count * rows * cols
        if len(buf) != 16 + size:
            raise TruncationError(
                f"{path}: header says {count}x{rows}x{cols}, payload has {len(buf) - 16} bytes"
            )
        pixels = np.frombuffer(buf, dtype=np.uint8, count=size, offset=16)
        images = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0
        logger.info(f"Read {count} images of {rows}x{cols} from {path}")
        return images

    raise FormatError(f"{path}: unknown IDX magic 0x{magic:08x}")


def load_idx_dataset(images_path, labels_path, n_classes: int = 10,
                     limit: Optional[int] = None) -> LabeledDataset:
    """Pair an IDX image file with its label file"""
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim != 2 or labels.ndim != 1:
        raise FormatError(f"expected an image file and a label file, got {images_path}, {labels_path}")
    if images.shape[0] != labels.shape[0]:
        raise TruncationError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    return LabeledDataset(images, labels, n_classes)


def write_idx_images(images: np.ndarray, height: int, width: int, path):
    """Write uint8 images (n x H*W, values 0..255) as IDX; used for fixtures"""
    images = np.asarray(images, dtype=np.uint8)
    header = struct.pack(">IIII", IDX_IMAGES_MAGIC, images.shape[0], height, width)
    atomic_write_bytes(path, header + images.tobytes())


def write_idx_labels(labels, path):
    labels = np.asarray(labels, dtype=np.uint8)
    atomic_write_bytes(path, struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]) + labels.tobytes())


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------

def normalize_dataset(d: LabeledDataset, target_max_norm: float) -> LabeledDataset:
    """Scale all rows by one factor so the largest row norm equals the target"""
    if not target_max_norm > 0:
        raise ParameterError(f"target_max_norm must be positive, got {target_max_norm}")
    if d.n_samples == 0:
        raise DomainError("cannot normalize an empty dataset")

    max_norm = float(np.max(np.linalg.norm(d.features, axis=1)))
    if max_norm == 0.0:
        raise DegenerateInputError("all feature rows are zero")

    factor = target_max_norm / max_norm
    # a factor within rounding of 1 means the data is already at the target
    if abs(factor - 1.0) <= 4 * np.finfo(np.float64).eps:
        return LabeledDataset(d.features.copy(), d.labels.copy(), d.n_classes)

    logger.debug(f"Normalizing {d.n_samples} rows: max norm {max_norm:.6g} -> {target_max_norm}")
    return LabeledDataset(d.features * factor, d.labels.copy(), d.n_classes)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def validate_checkpoint(ckpt: ModelCheckpoint):
    """Raise unless every shape in the checkpoint chains with the topology"""
    topology = list(ckpt.topology)
    n_layers = len(topology) - 1
    if n_layers < 1:
        raise FormatError(f"topology needs at least two widths, got {topology}")
    if ckpt.activation not in ACTIVATIONS:
        raise FormatError(f"activation must be one of {ACTIVATIONS}, got {ckpt.activation!r}")

    split_flags = list(ckpt.split_flags) or [False] * n_layers
    if len(split_flags) != n_layers:
        raise FormatError(f"{len(split_flags)} split flags for {n_layers} layers")

    named = {}
    for name, m in ckpt.layers:
        if name in named:
            raise FormatError(f"duplicate matrix name {name!r}")
        named[name] = _check_matrix(m, name)

    expected = set()
    for k in range(n_layers):
        n_in, n_out = topology[k], topology[k + 1]
        if split_flags[k]:
            left, right = f"layer{k}.left", f"layer{k}.right"
            for name in (left, right):
                if name not in named:
                    raise FormatError(f"split layer {k} is missing {name!r}")
            if named[left].shape[0] != n_out or named[right].shape[1] != n_in:
                raise DimensionError(
                    f"layer {k} factors {named[left].shape} x {named[right].shape} "
                    f"do not map {n_in} -> {n_out}"
                )
            if named[left].shape[1] != named[right].shape[0]:
                raise DimensionError(
                    f"layer {k} inner dimensions differ: {named[left].shape[1]} vs {named[right].shape[0]}"
                )
            expected.update((left, right))
        else:
            weight = f"layer{k}.weight"
            if weight not in named:
                raise FormatError(f"layer {k} is missing {weight!r}")
            if named[weight].shape != (n_out, n_in):
                raise DimensionError(f"{weight} has shape {named[weight].shape}, expected {(n_out, n_in)}")
            expected.add(weight)

        bias = f"layer{k}.bias"
        if bias in named:
            if named[bias].shape != (1, n_out):
                raise DimensionError(f"{bias} has shape {named[bias].shape}, expected {(1, n_out)}")
            expected.add(bias)

    unexpected = set(named) - expected
    if unexpected:
        raise FormatError(f"unexpected matrices in checkpoint: {sorted(unexpected)}")

    for name, mask in ckpt.masks.items():
        if name not in named or not name.endswith(".weight"):
            raise FormatError(f"mask {name!r} does not belong to an unsplit weight")
        mask = _check_matrix(mask, f"mask {name}")
        if mask.shape != named[name].shape:
            raise DimensionError(f"mask {name!r} has shape {mask.shape}, weight has {named[name].shape}")
        if not np.all((mask == 0.0) | (mask == 1.0)):
            raise DataError(f"mask {name!r} is not binary")


def save_checkpoint(ckpt: ModelCheckpoint, path):
    validate_checkpoint(ckpt)

    blobs = []
    entries = []
    offset = 0
    items = [("layer", name, m) for name, m in ckpt.layers]
    items += [("mask", name, ckpt.masks[name]) for name in sorted(ckpt.masks)]
    for kind, name, m in items:
        blob = encode_matrix(m)
        entries.append({"kind": kind, "name": name, "offset": offset, "length": len(blob)})
        blobs.append(blob)
        offset += len(blob)

    n_layers = len(ckpt.topology) - 1
    header = {
        "magic": get_config().CHECKPOINT_MAGIC,
        "topology": [int(w) for w in ckpt.topology],
        "activation": ckpt.activation,
        "activation_on_final": bool(ckpt.activation_on_final),
        "split_flags": [bool(s) for s in (ckpt.split_flags or [False] * n_layers)],
        "blobs": entries,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    atomic_write_bytes(path, header_bytes + b"\n\n" + b"".join(blobs))
    logger.info(f"Saved checkpoint with {len(entries)} matrices to {path}")


def load_checkpoint(path) -> ModelCheckpoint:
    buf = _read_bytes(path)
    sep = buf.find(b"\n\n")
    if sep < 0:
        raise FormatError(f"{path}: no blank line after checkpoint header")

    try:
        header = json.loads(buf[:sep].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: unreadable checkpoint header: {e}") from e

    if header.get("magic") != get_config().CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint (magic {header.get('magic')!r})")

    body = buf[sep + 2:]
    layers: List[Tuple[str, np.ndarray]] = []
    masks: Dict[str, np.ndarray] = {}
    end = 0
    try:
        for entry in header["blobs"]:
            start, length = int(entry["offset"]), int(entry["length"])
            if start != end or start + length > len(body):
                raise FormatError(f"{path}: blob {entry['name']!r} does not match the payload layout")
            m = decode_matrix(body[start:start + length], source=f"{path}:{entry['name']}")
            if entry["kind"] == "mask":
                masks[entry["name"]] = m
            else:
                layers.append((entry["name"], m))
            end = start + length
        ckpt = ModelCheckpoint(
            topology=list(header["topology"]),
            activation=header["activation"],
            activation_on_final=bool(header["activation_on_final"]),
            layers=layers,
            masks=masks,
            split_flags=list(header["split_flags"]),
        )
    except (KeyError, TypeError, TruncationError) as e:
        raise FormatError(f"{path}: header and blobs disagree: {e}") from e

    if end != len(body):
        raise FormatError(f"{path}: {len(body) - end} trailing bytes after the last blob")

    validate_checkpoint(ckpt)
    return ckpt
