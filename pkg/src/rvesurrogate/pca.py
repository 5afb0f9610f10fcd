"""Principal-component reduction of state-variable field snapshots.

The covariance-style matrix ``M = A A^T`` is built from the column-centered
data matrix ``A`` of (optionally subsampled) snapshots and decomposed with a
dense symmetric eigensolver.  Components are retained either as a fixed
count ``p`` or as the smallest ``p`` whose residual fractional eigenvalue
``1 - sum_{i<=p} L_i / sum_k L_k`` drops below a tolerance.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PCA_MAGIC = b"RVEPCA1"
PCA_VERSION = 1

DEFAULT_DIMENSION_CAP = 10_000
EIGENVALUE_FLOOR_REL = 1e-12


@dataclass
class PcaModel:
    """Mean, full eigenvalue spectrum and retained principal components."""

    mean: np.ndarray         # (d,)
    eigenvalues: np.ndarray  # (d,), descending, non-negative
    components: np.ndarray   # (d, p), orthonormal columns

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.eigenvalues = np.asarray(self.eigenvalues, dtype=np.float64)
        self.components = np.asarray(self.components, dtype=np.float64)
        if self.components.shape[0] != self.mean.shape[0]:
            raise ValueError("component rows must match the field dimension")

    @property
    def d(self) -> int:
        return self.mean.shape[0]

    @property
    def retained_p(self) -> int:
        return self.components.shape[1]


def fit(
    snapshots,
    subsample_fraction: float = 1.0,
    p: int | None = None,
    delta: float | None = None,
    seed: int = 0,
    dimension_cap: int = DEFAULT_DIMENSION_CAP,
) -> PcaModel:
    """Fit principal components on a (possibly subsampled) snapshot set.

    ``snapshots`` is an (n, d) array or a list of length-d vectors.  Exactly
    one of ``p`` (fixed retained dimension) or ``delta`` (residual
    fractional-eigenvalue tolerance) selects the reduction.  Subsampling is
    uniform without replacement and seeded.
    """
    x = np.asarray(snapshots, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("snapshots must form an (n, d) matrix")
    n, d = x.shape
    if d > dimension_cap:
        raise ValueError(
            f"field dimension {d} exceeds the cap {dimension_cap}; decompose "
            "in snapshot space (n x n) instead of assembling the d x d matrix"
        )
    if not 0.0 < subsample_fraction <= 1.0:
        raise ValueError("subsample_fraction must be in (0, 1]")
    if (p is None) == (delta is None):
        raise ValueError("give exactly one of p or delta")

    if subsample_fraction < 1.0:
        keep = max(2, int(round(subsample_fraction * n)))
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
        idx = np.sort(rng.choice(n, size=min(keep, n), replace=False))
        x = x[idx]
    if x.shape[0] < 2:
        raise ValueError("need at least 2 snapshots after subsampling")

    mean = x.mean(axis=0)
    centered = x - mean
    m = centered.T @ centered  # = A A^T with A the column-stacked data matrix

    vals, vecs = np.linalg.eigh(m)
    vals = vals[::-1].copy()
    vecs = vecs[:, ::-1].copy()
    vals[vals < 0.0] = 0.0
    if vals[0] > 0.0:
        vals[vals < EIGENVALUE_FLOOR_REL * vals[0]] = 0.0
    # deterministic sign convention: largest-magnitude entry positive
    flip = np.take_along_axis(
        vecs, np.abs(vecs).argmax(axis=0)[None, :], axis=0
    )[0] < 0.0
    vecs[:, flip] *= -1.0

    if p is None:
        p = retained_for_delta(vals, delta)
    if not 0 <= p <= d:
        raise ValueError(f"retained dimension p={p} outside [0, {d}]")
    return PcaModel(mean=mean, eigenvalues=vals, components=vecs[:, :p])


def retained_for_delta(eigenvalues, delta: float) -> int:
    """Smallest p with residual fractional eigenvalue <= delta."""
    vals = np.asarray(eigenvalues, dtype=np.float64)
    total = float(vals.sum())
    if total <= 0.0 or delta >= 1.0:
        return 0
    residual = 1.0 - np.cumsum(vals) / total
    hits = np.nonzero(residual <= delta + 1e-12)[0]
    return int(hits[0]) + 1 if hits.size else vals.size


def residual_fraction(model: PcaModel, p: int) -> float:
    """Residual fractional eigenvalue after keeping the leading p components."""
    if not 0 <= p <= model.d:
        raise ValueError(f"p must lie in [0, {model.d}]")
    total = model.eigenvalues.sum()
    if total <= 0.0:
        return 0.0
    return float(1.0 - model.eigenvalues[:p].sum() / total)


def project(x, model: PcaModel) -> np.ndarray:
    """Coefficients of the retained components: V^T (x - mean)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.d:
        raise ValueError(f"expected trailing dimension {model.d}, got {x.shape}")
    return (x - model.mean) @ model.components


def reconstruct(xi, model: PcaModel) -> np.ndarray:
    """Field reconstruction V xi + mean."""
    xi = np.asarray(xi, dtype=np.float64)
    if xi.shape[-1] != model.retained_p:
        raise ValueError(
            f"expected trailing dimension {model.retained_p}, got {xi.shape}"
        )
    return xi @ model.components.T + model.mean


def reconstruction_mse(model: PcaModel, snapshots) -> float:
    """Mean squared reconstruction error over a snapshot set (raw units)."""
    x = np.asarray(snapshots, dtype=np.float64)
    err = x - reconstruct(project(x, model), model)
    return float(np.mean(err**2))


def save(path, model: PcaModel) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(PCA_MAGIC)
        fh.write(struct.pack("<III", PCA_VERSION, model.d, model.retained_p))
        fh.write(model.mean.astype("<f8").tobytes())
        fh.write(model.eigenvalues.astype("<f8").tobytes())
        fh.write(np.ascontiguousarray(model.components).astype("<f8").tobytes())


def load(path) -> PcaModel:
    with open(path, "rb") as fh:
        magic = fh.read(len(PCA_MAGIC))
        if magic != PCA_MAGIC:
            raise ValueError(f"bad PCA file magic {magic!r}")
        version, d, p = struct.unpack("<III", fh.read(12))
        if version != PCA_VERSION:
            raise ValueError(f"unsupported PCA format version {version}")
        mean = np.frombuffer(fh.read(8 * d), dtype="<f8").copy()
        vals = np.frombuffer(fh.read(8 * d), dtype="<f8").copy()
        comps = np.frombuffer(fh.read(8 * d * p), dtype="<f8").reshape(d, p).copy()
    return PcaModel(mean=mean, eigenvalues=vals, components=comps)


def residual_curve_csv(path, model: PcaModel) -> None:
    """CSV of residual fractional eigenvalue versus retained dimension."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write("p,residual_fraction\n")
        for p in range(model.d + 1):
            fh.write(f"{p},{residual_fraction(model, p):.16e}\n")
