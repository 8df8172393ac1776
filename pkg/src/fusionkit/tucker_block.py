"""Tucker-decomposition fusion and block-superdiagonal (block-term) fusion.

Tucker fusion contracts a small core tensor with two projected inputs and
maps the result to the output space:
``z = ((core x1 (x W_q)) x2 (y W_v)) x3 W_o``.

Block fusion stacks ``R`` rank-restricted cores on the superdiagonal: the
projected inputs are chunked per block, each core contracts its own chunk
pair, the per-block results are concatenated and mapped to the output
space by one stacked matrix.  The implied full bilinear tensor then has
mode-``n`` matricization rank at most ``R * R_n``.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Param
from .fusion import FusionOp
from .tensor import mode_n_product

RECONSTRUCT_ENTRY_LIMIT = 10 ** 6


def _fan_in_init(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _orthonormal_rows(rng, rows, cols):
    # QR of a Gaussian draw; returns `rows x cols` with orthonormal rows
    # (requires rows <= cols).
    q, _ = np.linalg.qr(rng.normal(size=(cols, rows)))
    return q.T


def _pair_contract(core_flat, left, right, d2, d3):
    """Contract ``core_flat`` ((d1, d2*d3)) with row-batched ``left`` (.., d1)
    and ``right`` (.., d2), giving (.., d3)."""
    u = ad.matmul(left, core_flat)
    shape = np.shape(ad.value_of(u))
    u = ad.reshape(u, shape[:-1] + (d2, d3))
    r = ad.reshape(right, np.shape(ad.value_of(right)) + (1,))
    return ad.reduce_sum(ad.mul(u, r), axis=-2)


class TuckerFusion(FusionOp):
    """Core-tensor fusion with full-rank factor matrices on each mode."""

    def __init__(self, input_dims, output_dim, seed=0, core_dims=None):
        m, n = input_dims
        if core_dims is None:
            core_dims = (min(m, 8), min(n, 8), min(output_dim, 8))
        t1, t2, t3 = core_dims
        self.input_dims = (int(m), int(n))
        self.output_dim = int(output_dim)
        self.core_dims = (int(t1), int(t2), int(t3))
        rng = np.random.default_rng(seed)
        self.core = Param(_fan_in_init(rng, t1 * t2, (t1, t2, t3)), "core")
        self.x_map = Param(_fan_in_init(rng, m, (m, t1)), "x_map")
        self.y_map = Param(_fan_in_init(rng, n, (n, t2)), "y_map")
        self.out_map = Param(_fan_in_init(rng, t3, (t3, output_dim)), "out_map")

    def params(self):
        return {
            "core": self.core,
            "x_map": self.x_map,
            "y_map": self.y_map,
            "out_map": self.out_map,
        }

    def fuse(self, x, y, train_mode=False):
        self._check_pair(x, y)
        t1, t2, t3 = self.core_dims
        left = ad.matmul(x, self.x_map)
        right = ad.matmul(y, self.y_map)
        core_flat = ad.reshape(self.core, (t1, t2 * t3))
        pre = _pair_contract(core_flat, left, right, t2, t3)
        return ad.matmul(pre, self.out_map)

    def reconstruct_tensor(self):
        """Full ``(m, n, o)`` bilinear tensor implied by the factorization."""
        w = np.asarray(self.core.value)
        w = mode_n_product(w, self.x_map.value, 1)
        w = mode_n_product(w, self.y_map.value, 2)
        return mode_n_product(w, self.out_map.value.T, 3)


class BlockFusion(FusionOp):
    """Block-superdiagonal fusion with ``blocks`` rank-restricted cores.

    ``left_map`` and ``right_map`` stack per-block projections of shape
    ``(R_1, m)`` and ``(R_2, n)``; ``out_map`` (``o x R*R_3``) maps the
    concatenated per-block contractions to the output.  Factor matrices are
    initialized with orthonormal per-block rows (QR of a seeded Gaussian)
    and are not re-projected during training.
    """

    def __init__(self, input_dims, output_dim, seed=0, blocks=4,
                 block_dims=None):
        m, n = input_dims
        if block_dims is None:
            block_dims = (min(8, m), min(8, n), min(8, output_dim))
        r1, r2, r3 = block_dims
        if blocks < 1:
            raise ValueError(f"block count must be >= 1, got {blocks}")
        if r1 > m or r2 > n:
            raise ValueError(
                f"block dims {block_dims} exceed input dims {input_dims}"
            )
        self.input_dims = (int(m), int(n))
        self.output_dim = int(output_dim)
        self.blocks = int(blocks)
        self.block_dims = (int(r1), int(r2), int(r3))
        rng = np.random.default_rng(seed)
        left = np.vstack([_orthonormal_rows(rng, r1, m) for _ in range(blocks)])
        right = np.vstack([_orthonormal_rows(rng, r2, n) for _ in range(blocks)])
        if output_dim >= r3:
            out = np.hstack(
                [_orthonormal_rows(rng, r3, output_dim).T for _ in range(blocks)]
            )
        else:
            out = rng.normal(size=(output_dim, blocks * r3)) / np.sqrt(r3)
        self.left_map = Param(left, "left_map")
        self.right_map = Param(right, "right_map")
        self.out_map = Param(out, "out_map")
        self.cores = Param(
            _fan_in_init(rng, r1 * r2, (blocks, r1, r2, r3)), "cores"
        )

    def params(self):
        return {
            "left_map": self.left_map,
            "right_map": self.right_map,
            "out_map": self.out_map,
            "cores": self.cores,
        }

    def fuse(self, x, y, train_mode=False):
        self._check_pair(x, y)
        r1, r2, r3 = self.block_dims
        xh = ad.matmul(x, ad.transpose(self.left_map))
        yh = ad.matmul(y, ad.transpose(self.right_map))
        parts = []
        for r in range(self.blocks):
            xr = ad.narrow(xh, -1, r * r1, r1)
            yr = ad.narrow(yh, -1, r * r2, r2)
            core = ad.reshape(
                ad.narrow(self.cores, 0, r, 1), (r1, r2 * r3)
            )
            parts.append(_pair_contract(core, xr, yr, r2, r3))
        zhat = ad.concat(parts, axis=-1)
        return ad.matmul(zhat, ad.transpose(self.out_map))


def reconstruct_block_tensor(op):
    """Assemble the full bilinear tensor of a :class:`BlockFusion`.

    ``W = sum_r core_r x1 L_r^T x2 R_r^T x3 O_r`` where ``L_r``/``R_r`` are
    the per-block projection rows and ``O_r`` the per-block output columns.
    Guarded to at most ``RECONSTRUCT_ENTRY_LIMIT`` entries.
    """
    m, n = op.input_dims
    o = op.output_dim
    if m * n * o > RECONSTRUCT_ENTRY_LIMIT:
        raise ValueError(
            f"reconstruction of a {m}x{n}x{o} tensor exceeds the "
            f"{RECONSTRUCT_ENTRY_LIMIT}-entry guard"
        )
    r1, r2, r3 = op.block_dims
    left = op.left_map.value
    right = op.right_map.value
    out = op.out_map.value
    cores = op.cores.value
    w = np.zeros((m, n, o))
    for r in range(op.blocks):
        term = mode_n_product(cores[r], left[r * r1:(r + 1) * r1].T, 1)
        term = mode_n_product(term, right[r * r2:(r + 1) * r2].T, 2)
        term = mode_n_product(term, out[:, r * r3:(r + 1) * r3], 3)
        w += term
    return w
