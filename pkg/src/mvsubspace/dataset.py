"""Multi-view datasets: validation, synthetic generation and manifest IO.

On disk every view is a CSV with one row per sample.  Internally the
training code works with columns-as-samples (``d x n``); use
:func:`to_column_major_samples` / :func:`from_column_major_samples` to move
between the two.  Nothing converts implicitly.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

FLOAT_FMT = "%.17g"


class DatasetError(ValueError):
    """Raised when a dataset or manifest violates its contract."""


def _check_view(x, index: int = 0) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (2, 4):
        raise DatasetError(
            f"view {index}: expected a flat (n, d) or image (n, c, h, w) array, got shape {x.shape}"
        )
    if x.shape[0] < 2:
        raise DatasetError(f"view {index}: need at least 2 samples, got {x.shape[0]}")
    if min(x.shape[1:]) < 1:
        raise DatasetError(f"view {index}: empty feature dimension in shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DatasetError(f"view {index}: non-finite value")
    return x


@dataclass
class MultiViewDataset:
    """``n`` samples seen under ``v`` views, rows are samples.

    Each view is either flat ``(n, d)`` or an image stack ``(n, c, h, w)``.
    ``labels`` (optional) are contiguous 0-based cluster ids.
    """

    name: str
    views: list
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        if len(self.views) < 1:
            raise DatasetError("a dataset needs at least one view")
        self.views = [_check_view(x, i) for i, x in enumerate(self.views)]
        counts = {x.shape[0] for x in self.views}
        if len(counts) != 1:
            raise DatasetError(
                f"inconsistent sample count across views: {[x.shape[0] for x in self.views]}"
            )
        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.ndim != 1 or labels.shape[0] != self.n_samples:
                raise DatasetError(
                    f"label count {labels.size} does not match sample count {self.n_samples}"
                )
            if not np.all(labels == np.round(labels)):
                raise DatasetError("labels must be integers")
            labels = labels.astype(np.int64)
            uniq = np.unique(labels)
            if uniq[0] != 0 or uniq[-1] != uniq.size - 1:
                raise DatasetError("labels must be contiguous 0..k-1")
            self.labels = labels

    @property
    def n_samples(self) -> int:
        return self.views[0].shape[0]

    @property
    def n_views(self) -> int:
        return len(self.views)

    @property
    def n_clusters(self) -> Optional[int]:
        if self.labels is None:
            return None
        return int(self.labels.max()) + 1

    def subset_views(self, indices: Sequence[int]) -> "MultiViewDataset":
        """Dataset restricted to the given views (used for single-view baselines)."""
        return MultiViewDataset(
            name=f"{self.name}[{','.join(str(i) for i in indices)}]",
            views=[self.views[i] for i in indices],
            labels=None if self.labels is None else self.labels.copy(),
        )


@dataclass
class SyntheticSpec:
    """Recipe for a union-of-subspaces multi-view dataset.

    ``noise_sigma`` may be a single value or one value per view.
    """

    k: int = 3
    per_cluster: int = 20
    views: int = 2
    ambient_dims: Sequence[int] = field(default_factory=lambda: [10, 12])
    subspace_rank: int = 2
    noise_sigma: Union[float, Sequence[float]] = 0.01
    seed: int = 0

    def validate(self) -> None:
        if self.k < 2:
            raise DatasetError(f"k must be >= 2, got {self.k}")
        if self.subspace_rank < 1:
            raise DatasetError(f"subspace rank must be >= 1, got {self.subspace_rank}")
        if self.per_cluster < self.subspace_rank + 1:
            raise DatasetError(
                f"per_cluster ({self.per_cluster}) must be at least rank + 1 ({self.subspace_rank + 1})"
            )
        if self.views < 1 or len(self.ambient_dims) != self.views:
            raise DatasetError(
                f"need one ambient dimension per view: views={self.views}, dims={list(self.ambient_dims)}"
            )
        if self.subspace_rank >= min(self.ambient_dims):
            raise DatasetError(
                f"subspace rank {self.subspace_rank} must be < min ambient dim {min(self.ambient_dims)}"
            )
        sig = self.sigmas()
        if len(sig) != self.views or any(s < 0 or not np.isfinite(s) for s in sig):
            raise DatasetError(f"invalid noise_sigma {self.noise_sigma!r}")

    def sigmas(self) -> list:
        if np.ndim(self.noise_sigma) == 0:
            return [float(self.noise_sigma)] * self.views
        return [float(s) for s in self.noise_sigma]


def generate_synthetic(spec: SyntheticSpec, name: str = "synthetic") -> MultiViewDataset:
    """Draw a dataset from a union of ``k`` rank-``r`` subspaces per view.

    For each view and cluster an orthonormal basis is drawn independently;
    the per-sample coefficients ``w ~ U[-1, 1]^r`` are shared by all views
    so the views describe the same underlying samples.  Samples are ordered
    cluster by cluster.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n = spec.k * spec.per_cluster
    r = spec.subspace_rank
    labels = np.repeat(np.arange(spec.k), spec.per_cluster)
    coeffs = rng.uniform(-1.0, 1.0, size=(n, r))

    views = []
    for d, sigma in zip(spec.ambient_dims, spec.sigmas()):
        x = np.empty((n, d))
        for c in range(spec.k):
            basis, _ = np.linalg.qr(rng.standard_normal((d, r)))
            rows = labels == c
            x[rows] = coeffs[rows] @ basis.T
        x += sigma * rng.standard_normal((n, d))
        views.append(x)
    return MultiViewDataset(name=name, views=views, labels=labels)


def to_column_major_samples(view) -> np.ndarray:
    """Return a ``d x n`` matrix whose column ``j`` is sample ``j`` flattened.

    Image samples are flattened channel-major, then row-major over pixels.
    """
    x = np.asarray(view, dtype=np.float64)
    return x.reshape(x.shape[0], -1).T.copy()


def from_column_major_samples(cols: np.ndarray, sample_shape: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`to_column_major_samples`."""
    cols = np.asarray(cols, dtype=np.float64)
    return cols.T.reshape((cols.shape[1], *sample_shape)).copy()


def _resolve(base: str, path: str) -> str:
    return path if os.path.isabs(path) else os.path.join(base, path)


def save_dataset(ds: MultiViewDataset, directory: str) -> str:
    """Write manifest, one CSV per view and labels; return the manifest path."""
    os.makedirs(directory, exist_ok=True)
    entries = []
    for i, x in enumerate(ds.views):
        fname = f"view{i}.csv"
        np.savetxt(os.path.join(directory, fname), x.reshape(x.shape[0], -1),
                   fmt=FLOAT_FMT, delimiter=",")
        entries.append({
            "path": fname,
            "layout": "flat" if x.ndim == 2 else "image",
            "shape": list(x.shape),
        })
    manifest = {"name": ds.name, "n_samples": ds.n_samples, "views": entries}
    if ds.labels is not None:
        save_labels(ds.labels, os.path.join(directory, "labels.csv"))
        manifest["labels"] = "labels.csv"
    path = os.path.join(directory, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return path


def load_manifest(path: str) -> MultiViewDataset:
    """Load and validate a dataset described by a JSON manifest."""
    if not os.path.isfile(path):
        raise FileNotFoundError(f"manifest not found: {path}")
    with open(path) as fh:
        manifest = json.load(fh)
    base = os.path.dirname(os.path.abspath(path))
    try:
        entries = manifest["views"]
        declared_n = int(manifest["n_samples"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"{path}: malformed manifest ({exc})") from exc

    views = []
    for i, entry in enumerate(entries):
        vpath = _resolve(base, entry["path"])
        if not os.path.isfile(vpath):
            raise FileNotFoundError(f"view file not found: {vpath}")
        shape = tuple(int(s) for s in entry["shape"])
        layout = entry.get("layout", "flat")
        if (layout == "flat") != (len(shape) == 2) or layout not in ("flat", "image"):
            raise DatasetError(f"view {i}: layout {layout!r} does not fit shape {list(shape)}")
        with np.errstate(invalid="ignore"):
            raw = np.loadtxt(vpath, delimiter=",", ndmin=2, dtype=np.float64)
        if raw.shape[0] != shape[0] or raw.shape[1] != int(np.prod(shape[1:])):
            raise DatasetError(
                f"view {i}: file {vpath} holds {raw.shape[0]}x{raw.shape[1]} values, "
                f"manifest declares shape {list(shape)}"
            )
        views.append(raw.reshape(shape))

    counts = [v.shape[0] for v in views]
    if len(set(counts)) > 1:
        raise DatasetError(f"inconsistent sample count across views: {counts}")
    if counts and counts[0] != declared_n:
        raise DatasetError(
            f"inconsistent sample count: manifest says {declared_n}, views hold {counts[0]}"
        )

    labels = None
    if manifest.get("labels"):
        lpath = _resolve(base, manifest["labels"])
        if not os.path.isfile(lpath):
            raise FileNotFoundError(f"labels file not found: {lpath}")
        labels = load_labels(lpath)
    return MultiViewDataset(name=manifest.get("name", ""), views=views, labels=labels)


def save_labels(labels, path: str) -> None:
    labels = np.asarray(labels, dtype=np.int64)
    with open(path, "w") as fh:
        fh.writelines(f"{int(v)}\n" for v in labels)


def load_labels(path: str) -> np.ndarray:
    if not os.path.isfile(path):
        raise FileNotFoundError(f"labels file not found: {path}")
    with open(path) as fh:
        rows = [line.strip() for line in fh if line.strip()]
    try:
        return np.array([int(v) for v in rows], dtype=np.int64)
    except ValueError as exc:
        raise DatasetError(f"{path}: labels must be integers ({exc})") from exc
