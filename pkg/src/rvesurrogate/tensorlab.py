"""Dense 3x3 tensor algebra for finite-strain kinematics.

All routines operate on numpy arrays of shape ``(..., 3, 3)`` (an arbitrary
batch of second-order tensors) in 64-bit floats.  Symmetric eigendecomposition
is done with cyclic Jacobi sweeps, which is unconditionally stable at this
size, needs no external solver and is bit-reproducible: a matrix produces the
same decomposition whether it is processed alone or inside a batch, because
rotations collapse to exact no-ops once the off-diagonal entry is negligible.

Plane-strain convention: deformation-gradient-like tensors carry the
out-of-plane direction in the third row/column (``F[2, 2] = 1`` and zero
out-of-plane couplings).
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

IDENTITY = np.eye(3)

_JACOBI_PAIRS = ((0, 1), (0, 2), (1, 2))
_JACOBI_MAX_SWEEPS = 30
_JACOBI_REL_TOL = 1e-15


class SpectralDecomp(NamedTuple):
    """Eigenvalues (descending) and orthonormal eigenvector columns."""

    values: np.ndarray   # (..., 3)
    vectors: np.ndarray  # (..., 3, 3), column i pairs with values[..., i]


def _as_tensor(t) -> np.ndarray:
    a = np.asarray(t, dtype=np.float64)
    if a.shape[-2:] != (3, 3):
        raise ValueError(f"expected trailing shape (3, 3), got {a.shape}")
    return a


def _require_finite(a: np.ndarray, label: str) -> None:
    if not np.all(np.isfinite(a)):
        raise ValueError(f"non-finite entries in {label}")


def symmetrize(t) -> np.ndarray:
    a = _as_tensor(t)
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def trace(t) -> np.ndarray:
    a = _as_tensor(t)
    return a[..., 0, 0] + a[..., 1, 1] + a[..., 2, 2]


def dev(t) -> np.ndarray:
    """Deviatoric part ``t - tr(t)/3 I``."""
    a = _as_tensor(t)
    out = a.copy()
    third = trace(a) / 3.0
    for i in range(3):
        out[..., i, i] -= third
    return out


def det(t) -> np.ndarray:
    """Determinant of a 3x3 tensor, closed form (no LAPACK)."""
    a = _as_tensor(t)
    return (
        a[..., 0, 0] * (a[..., 1, 1] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 1])
        - a[..., 0, 1] * (a[..., 1, 0] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 0])
        + a[..., 0, 2] * (a[..., 1, 0] * a[..., 2, 1] - a[..., 1, 1] * a[..., 2, 0])
    )


def inv(t) -> np.ndarray:
    """Closed-form 3x3 inverse via the adjugate."""
    a = _as_tensor(t)
    d = det(a)
    if np.any(np.abs(d) < 1e-300):
        raise ValueError("singular tensor passed to inv")
    adj = np.empty_like(a)
    adj[..., 0, 0] = a[..., 1, 1] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 1]
    adj[..., 0, 1] = a[..., 0, 2] * a[..., 2, 1] - a[..., 0, 1] * a[..., 2, 2]
    adj[..., 0, 2] = a[..., 0, 1] * a[..., 1, 2] - a[..., 0, 2] * a[..., 1, 1]
    adj[..., 1, 0] = a[..., 1, 2] * a[..., 2, 0] - a[..., 1, 0] * a[..., 2, 2]
    adj[..., 1, 1] = a[..., 0, 0] * a[..., 2, 2] - a[..., 0, 2] * a[..., 2, 0]
    adj[..., 1, 2] = a[..., 0, 2] * a[..., 1, 0] - a[..., 0, 0] * a[..., 1, 2]
    adj[..., 2, 0] = a[..., 1, 0] * a[..., 2, 1] - a[..., 1, 1] * a[..., 2, 0]
    adj[..., 2, 1] = a[..., 0, 1] * a[..., 2, 0] - a[..., 0, 0] * a[..., 2, 1]
    adj[..., 2, 2] = a[..., 0, 0] * a[..., 1, 1] - a[..., 0, 1] * a[..., 1, 0]
    return adj / d[..., None, None]


def frobenius(t) -> np.ndarray:
    a = _as_tensor(t)
    return np.sqrt(np.sum(a * a, axis=(-2, -1)))


def double_dot(a, b) -> np.ndarray:
    """Full contraction ``a : b`` of two second-order tensors."""
    return np.sum(_as_tensor(a) * _as_tensor(b), axis=(-2, -1))


def sym_eig(s) -> SpectralDecomp:
    """Eigendecomposition of symmetric 3x3 tensors by cyclic Jacobi sweeps.

    Returns eigenvalues in descending order with matching orthonormal
    eigenvector columns.  Raises ``ValueError`` on non-finite or
    non-symmetric input.
    """
    a = _as_tensor(s).copy()
    _require_finite(a, "sym_eig input")
    asym = np.max(np.abs(a - np.swapaxes(a, -1, -2)))
    scale = max(np.max(np.abs(a)), 1.0)
    if asym > 1e-9 * scale:
        raise ValueError(f"sym_eig input not symmetric (max asymmetry {asym:g})")
    a = 0.5 * (a + np.swapaxes(a, -1, -2))

    v = np.broadcast_to(IDENTITY, a.shape).copy()
    norm = np.maximum(frobenius(a), np.finfo(np.float64).tiny)
    tol = _JACOBI_REL_TOL * norm

    for _ in range(_JACOBI_MAX_SWEEPS):
        off = np.sqrt(
            a[..., 0, 1] ** 2 + a[..., 0, 2] ** 2 + a[..., 1, 2] ** 2
        )
        if np.all(off <= tol):
            break
        for p, q in _JACOBI_PAIRS:
            apq = a[..., p, q]
            app = a[..., p, p]
            aqq = a[..., q, q]
            active = np.abs(apq) > tol
            # Classic Jacobi rotation angle; inactive entries rotate by zero
            # so converged matrices in the batch stay bit-identical.
            safe_apq = np.where(active, apq, 1.0)
            theta = (aqq - app) / (2.0 * safe_apq)
            tval = np.sign(theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
            tval = np.where(np.sign(theta) == 0.0, 1.0 / (np.abs(theta) + np.sqrt(theta * theta + 1.0)), tval)
            c = 1.0 / np.sqrt(tval * tval + 1.0)
            sn = tval * c
            c = np.where(active, c, 1.0)
            sn = np.where(active, sn, 0.0)

            g = np.broadcast_to(IDENTITY, a.shape).copy()
            g[..., p, p] = c
            g[..., q, q] = c
            g[..., p, q] = sn
            g[..., q, p] = -sn
            a = np.swapaxes(g, -1, -2) @ a @ g
            v = v @ g

    vals = np.stack([a[..., 0, 0], a[..., 1, 1], a[..., 2, 2]], axis=-1)
    order = np.argsort(-vals, axis=-1, kind="stable")
    vals = np.take_along_axis(vals, order, axis=-1)
    v = np.take_along_axis(v, order[..., None, :], axis=-1)
    return SpectralDecomp(vals, v)


def reassemble(values, vectors) -> np.ndarray:
    """Rebuild ``sum_i values[i] * n_i (x) n_i`` from a spectral decomposition."""
    vals = np.asarray(values, dtype=np.float64)
    vecs = _as_tensor(vectors)
    return (vecs * vals[..., None, :]) @ np.swapaxes(vecs, -1, -2)


def _spectral_map(s, func, label: str) -> np.ndarray:
    vals, vecs = sym_eig(s)
    return reassemble(func(vals, label), vecs)


def log_spd(s) -> np.ndarray:
    """Tensor logarithm of a symmetric positive definite tensor."""

    def safe_log(vals, label):
        if np.any(vals <= 0.0):
            bad = float(np.min(vals))
            raise ValueError(
                f"{label}: non-positive eigenvalue {bad:g}, input is not SPD"
            )
        return np.log(vals)

    return _spectral_map(s, safe_log, "log_spd")


def exp_sym(s) -> np.ndarray:
    """Tensor exponential of a symmetric tensor (result is SPD)."""
    return _spectral_map(s, lambda vals, _label: np.exp(vals), "exp_sym")


def sqrt_spd(s) -> np.ndarray:
    """Symmetric square root of an SPD tensor."""

    def safe_sqrt(vals, label):
        if np.any(vals < -1e-12):
            raise ValueError(f"{label}: negative eigenvalue, input is not SPD")
        return np.sqrt(np.maximum(vals, 0.0))

    return _spectral_map(s, safe_sqrt, "sqrt_spd")
