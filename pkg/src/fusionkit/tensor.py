"""Dense tensor algebra: mode-n products, matricization, and bilinear forms.

Tensors are plain :class:`numpy.ndarray` values in row-major (C) order.
Mode indices are **1-based** at the API boundary, following the usual
tensor-algebra convention: mode ``n`` addresses array axis ``n - 1``.

The matricization column ordering is fixed as follows: row ``i`` of the
mode-``n`` matrix is the slice ``w[..., i, ...]`` (index ``i`` on axis
``n - 1``) flattened in row-major order over the remaining modes, with the
remaining modes kept in increasing index order.  ``dematricize`` inverts
this exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _as_tensor(w, name="tensor"):
    w = np.asarray(w, dtype=np.float64)
    if w.ndim == 0:
        raise ValueError(f"{name} must have at least one mode, got a scalar")
    if min(w.shape) < 1:
        raise ValueError(f"{name} has an empty mode: shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise ValueError(f"{name} contains non-finite entries")
    return w


def _check_mode(w, n):
    if not 1 <= n <= w.ndim:
        raise ValueError(f"mode {n} out of range for a {w.ndim}-mode tensor")
    return n - 1


@dataclass(frozen=True)
class ModeNMatricization:
    """A tensor unfolded along one mode.

    ``matrix`` has shape ``(I_n, prod of remaining dims)``; ``shape`` records
    the source tensor's shape so the unfolding can be inverted exactly.
    """

    mode: int
    matrix: np.ndarray
    shape: tuple[int, ...]


def mode_n_product(w, v, n):
    """Multiply the mode-``n`` fibres of ``w`` by the matrix ``v``.

    Parameters
    ----------
    w : ndarray
        Tensor of shape ``(I_1, ..., I_N)``.
    v : ndarray
        Matrix of shape ``(J_n, I_n)`` with ``I_n = w.shape[n - 1]``.
    n : int
        1-based mode index.

    Returns
    -------
    ndarray of shape ``w.shape`` with ``I_n`` replaced by ``J_n``, where
    ``out[i_1, .., j_n, .., i_N] = sum_i v[j_n, i] * w[i_1, .., i, .., i_N]``.
    """
    w = _as_tensor(w, "w")
    v = _as_tensor(v, "v")
    ax = _check_mode(w, n)
    if v.ndim != 2:
        raise ValueError(f"v must be a matrix, got shape {v.shape}")
    if v.shape[1] != w.shape[ax]:
        raise ValueError(
            f"mode-{n} product needs v with {w.shape[ax]} columns to match "
            f"w shape {w.shape}, got v shape {v.shape}"
        )
    out = np.tensordot(v, w, axes=(1, ax))
    return np.moveaxis(out, 0, ax)


def matricize(w, n):
    """Unfold ``w`` along mode ``n`` (see the module docstring for ordering)."""
    w = _as_tensor(w, "w")
    ax = _check_mode(w, n)
    mat = np.moveaxis(w, ax, 0).reshape(w.shape[ax], -1)
    return ModeNMatricization(mode=n, matrix=mat, shape=w.shape)


def dematricize(unfolding):
    """Invert :func:`matricize`, restoring the original tensor exactly."""
    shape = tuple(unfolding.shape)
    ax = unfolding.mode - 1
    rest = shape[:ax] + shape[ax + 1 :]
    w = unfolding.matrix.reshape((shape[ax],) + rest)
    return np.moveaxis(w, 0, ax)


def outer_product(x, y):
    """Rank-one matrix ``out[i, j] = x[i] * y[j]``."""
    x = _as_tensor(x, "x")
    y = _as_tensor(y, "y")
    if x.ndim != 1 or y.ndim != 1:
        raise ValueError(
            f"outer_product takes vectors, got shapes {x.shape} and {y.shape}"
        )
    return np.outer(x, y)


def full_bilinear(x, y, w):
    """Contract a third-order tensor with two vectors.

    ``z[k] = sum_ij w[i, j, k] * x[i] * y[j]`` for ``w`` of shape
    ``(m, n, o)``, ``x`` of dim ``m`` and ``y`` of dim ``n``.
    """
    w = _as_tensor(w, "w")
    x = _as_tensor(x, "x")
    y = _as_tensor(y, "y")
    if w.ndim != 3:
        raise ValueError(f"w must be a 3-mode tensor, got shape {w.shape}")
    if x.shape != (w.shape[0],) or y.shape != (w.shape[1],):
        raise ValueError(
            f"full_bilinear with w shape {w.shape} needs x dim {w.shape[0]} "
            f"and y dim {w.shape[1]}, got {x.shape} and {y.shape}"
        )
    return np.tensordot(y, np.tensordot(x, w, axes=(0, 0)), axes=(0, 0))


def matrix_rank(a, rel_tol=1e-8):
    """Rank as the count of singular values above ``rel_tol`` times the largest."""
    a = np.asarray(a, dtype=np.float64)
    s = np.linalg.svd(a, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rel_tol * s[0]))


def tensor_to_json(w):
    """Serialize to ``{"shape": [...], "data": [...]}`` with row-major data."""
    w = _as_tensor(w, "tensor")
    return {"shape": list(w.shape), "data": w.ravel().tolist()}


def tensor_from_json(obj):
    """Inverse of :func:`tensor_to_json`."""
    shape = tuple(int(d) for d in obj["shape"])
    data = np.asarray(obj["data"], dtype=np.float64)
    expected = int(np.prod(shape))
    if data.size != expected:
        raise ValueError(
            f"data length {data.size} does not match shape {shape} "
            f"(expected {expected})"
        )
    return data.reshape(shape)
