"""Datasets: MNIST IDX reading, contrast normalization, ZCA whitening, splits.

Nothing here downloads.  MNIST is read from a local directory holding the
four standard IDX files; :func:`mnist_root` looks at ``$MAXOUTLAB_DATA``
(expects an ``mnist/`` subdirectory or the files directly).
"""
from __future__ import annotations

import gzip
import os
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import DomainError, Prng
from .serialization import DATA_MAGIC, read_container, write_container

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
DATA_ENV = "MAXOUTLAB_DATA"


class IdxError(ValueError):
    """Malformed IDX file.  ``offset`` is the byte position of the problem."""

    def __init__(self, msg, path=None, offset=None):
        self.path, self.offset = path, offset
        where = f"{path}: " if path else ""
        at = f" (byte offset {offset})" if offset is not None else ""
        super().__init__(f"{where}{msg}{at}")


class IdxMagicError(IdxError):
    pass


class IdxTruncatedError(IdxError):
    pass


class IdxCountMismatchError(IdxError):
    pass


class NumericError(ArithmeticError):
    pass


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or len(self.inputs) != len(self.labels):
            raise DomainError(
                f"inputs {self.inputs.shape} and labels {self.labels.shape} disagree")
        if self.labels.size and self.labels.min() < 0:
            raise DomainError("labels must be nonnegative")

    def __len__(self):
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def classes(self) -> int:
        return int(self.meta.get("classes", self.labels.max() + 1 if self.labels.size else 0))

    def subset(self, index) -> "Dataset":
        return Dataset(self.inputs[index], self.labels[index], dict(self.meta))

    def head(self, n: int) -> "Dataset":
        return self.subset(slice(0, n))


def _read_bytes(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as f:
        return f.read()


def _parse_idx(blob: bytes, path, magic: int, ndim: int):
    if len(blob) < 4:
        raise IdxTruncatedError("file too short for magic number", path, len(blob))
    (found,) = struct.unpack(">I", blob[:4])
    if found != magic:
        raise IdxMagicError(f"magic 0x{found:08x}, expected 0x{magic:08x}", path, 0)
    hdr = 4 + 4 * ndim
    if len(blob) < hdr:
        raise IdxTruncatedError("header ends early", path, len(blob))
    dims = struct.unpack(">" + "I" * ndim, blob[4:hdr])
    need = hdr + int(np.prod(dims))
    if len(blob) < need:
        raise IdxTruncatedError(f"expected {need} bytes, file has {len(blob)}", path, len(blob))
    data = np.frombuffer(blob, dtype=np.uint8, count=need - hdr, offset=hdr)
    return data.reshape(dims)


def load_idx(images_path, labels_path) -> Dataset:
    """Read an IDX image/label pair; pixels scaled to [0, 1].

    Plain and gzip-compressed files are both accepted.
    """
    images = _parse_idx(_read_bytes(images_path), images_path, IMAGE_MAGIC, 3)
    labels = _parse_idx(_read_bytes(labels_path), labels_path, LABEL_MAGIC, 1)
    if len(images) != len(labels):
        raise IdxCountMismatchError(
            f"{len(images)} images but {len(labels)} labels in {labels_path}", images_path, 4)
    x = images.reshape(len(images), -1).astype(np.float64) / 255.0
    return Dataset(x, labels.astype(np.int64),
                   {"source": str(images_path), "classes": 10, "preprocessing": []})


def write_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray):
    """Write uint8 images (N, rows, cols) and labels (N,) as IDX files."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGE_MAGIC, *images.shape))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", LABEL_MAGIC, len(labels)))
        f.write(labels.tobytes())


def mnist_root(root=None) -> Path:
    root = Path(root or os.environ.get(DATA_ENV, "data"))
    return root / "mnist" if (root / "mnist").is_dir() else root


def _find(root: Path, stem: str) -> Path:
    for name in (f"{stem}-idx{{}}-ubyte", f"{stem}.idx{{}}-ubyte"):
        for nd in ("1", "3"):
            for suffix in ("", ".gz"):
                p = root / (name.format(nd) + suffix)
                if p.exists():
                    return p
    raise FileNotFoundError(f"no IDX file for {stem!r} under {root}")


def load_mnist(split: str = "train", root=None) -> Dataset:
    """The 60k training or 10k test set from a local MNIST directory."""
    base = mnist_root(root)
    prefix = {"train": "train", "test": "t10k"}[split]
    ds = load_idx(_find(base, f"{prefix}-images"), _find(base, f"{prefix}-labels"))
    ds.meta["source"] = f"mnist:{split}"
    return ds


def gcn(X: np.ndarray, scale: float = 55.0, bias: float = 10.0) -> np.ndarray:
    """Global contrast normalization, one example per row.

    Each row is centred, divided by ``sqrt(bias + mean(centred**2))`` and
    multiplied by ``scale``.
    """
    if not scale > 0 or bias < 0:
        raise DomainError("need scale > 0 and bias >= 0")
    X = np.asarray(X, dtype=np.float64)
    centred = X - X.mean(axis=1, keepdims=True)
    norm = np.sqrt(bias + np.mean(centred ** 2, axis=1, keepdims=True))
    # zero-power rows with bias 0 would divide 0 by 0; leave them at 0
    norm[norm == 0] = 1.0
    return scale * centred / norm


@dataclass(frozen=True)
class ZcaTransform:
    mean: np.ndarray
    matrix: np.ndarray
    eps: float

    def apply(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) @ self.matrix


def zca_fit(X: np.ndarray, eps: float = 0.1) -> ZcaTransform:
    """Fit ``M = U (L + eps I)^(-1/2) U^T`` on the (biased) training covariance."""
    if not eps > 0:
        raise DomainError("eps must be positive")
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    if n <= d:
        warnings.warn(f"ZCA fit on {n} examples in {d} dimensions; covariance is singular")
    mean = X.mean(axis=0)
    centred = X - mean
    cov = centred.T @ centred / n
    try:
        evals, evecs = np.linalg.eigh(cov)
    except np.linalg.LinAlgError as e:
        raise NumericError(f"eigendecomposition failed: {e}") from e
    evals = np.clip(evals, 0.0, None)
    M = (evecs / np.sqrt(evals + eps)) @ evecs.T
    M = 0.5 * (M + M.T)
    return ZcaTransform(mean, M, float(eps))


def zca_apply(t: ZcaTransform, X: np.ndarray) -> np.ndarray:
    return t.apply(X)


def split(dataset: Dataset, valid_n: int | None = None, per_class: int | None = None,
          train_n: int | None = None, seed: int = 0):
    """Split into ``(train, valid)``.

    ``valid_n``: the last ``valid_n`` examples become validation, order kept;
    ``train_n`` optionally truncates the training part to its first rows.
    ``per_class``: a seeded draw of ``per_class`` examples of every class
    forms the validation set; the rest (in original order) is training.
    """
    N = len(dataset)
    if (valid_n is None) == (per_class is None):
        raise DomainError("give exactly one of valid_n or per_class")
    if valid_n is not None:
        if not 0 <= valid_n <= N:
            raise DomainError(f"cannot take {valid_n} validation examples from {N}")
        avail = N - valid_n
        train_n = avail if train_n is None else train_n
        if not 0 <= train_n <= avail:
            raise DomainError(f"only {avail} examples left for training, asked for {train_n}")
        return dataset.subset(slice(0, train_n)), dataset.subset(slice(avail, N))
    rng = Prng(seed)
    valid_idx = []
    for c in np.unique(dataset.labels):
        members = np.flatnonzero(dataset.labels == c)
        if len(members) < per_class:
            raise DomainError(f"class {c} has {len(members)} examples, need {per_class}")
        valid_idx.append(members[rng.permutation(len(members))[:per_class]])
    valid_idx = np.sort(np.concatenate(valid_idx))
    train_idx = np.setdiff1d(np.arange(N), valid_idx)
    if train_n is not None:
        train_idx = train_idx[:train_n]
    return dataset.subset(train_idx), dataset.subset(valid_idx)


def synth_teacher(rng: Prng, spec, n: int, sigma: float = 1.0) -> Dataset:
    """Gaussian inputs labelled by a frozen random network with architecture ``spec``.

    The teacher's parameters are kept in ``meta['teacher']``.
    """
    from .network import forward, init_params

    if n < 1:
        raise DomainError("n must be >= 1")
    teacher = init_params(spec, rng.substream(1), sigma=sigma / np.sqrt(spec.input_dim))
    x = rng.substream(2).normal(1.0, (n, spec.input_dim))
    labels = np.argmax(forward(teacher, spec, x).probs, axis=1)
    return Dataset(x, labels, {"source": "synthetic-teacher", "classes": spec.layers[-1].units,
                               "teacher": teacher, "preprocessing": []})


def save_dataset(path, ds: Dataset):
    meta = {k: v for k, v in ds.meta.items() if k != "teacher"}
    write_container(path, DATA_MAGIC, {"meta": meta},
                    {"inputs": ds.inputs, "labels": ds.labels.astype(np.float64)})


def load_dataset(path) -> Dataset:
    header, tensors = read_container(path, DATA_MAGIC)
    return Dataset(tensors["inputs"], tensors["labels"].astype(np.int64), header["meta"])
