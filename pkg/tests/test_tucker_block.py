"""Tucker and block-superdiagonal fusion against tensor-level oracles."""

import numpy as np
import pytest

from fusionkit.autodiff import Param
from fusionkit.tensor import full_bilinear, matricize, matrix_rank
from fusionkit.tucker_block import (
    BlockFusion,
    TuckerFusion,
    reconstruct_block_tensor,
)


def tucker_reference(op, q, v):
    """Triple-sum oracle over the core entries."""
    t1, t2, t3 = op.core_dims
    qt = q @ op.x_map.value
    vt = v @ op.y_map.value
    pre = np.zeros(t3)
    for a in range(t1):
        for b in range(t2):
            for c in range(t3):
                pre[c] += op.core.value[a, b, c] * qt[a] * vt[b]
    return pre @ op.out_map.value


class TestTuckerFusion:
    def test_superdiagonal_identity_reduces_to_hadamard(self):
        d = 4
        op = TuckerFusion((d, d), d, seed=0, core_dims=(d, d, d))
        core = np.zeros((d, d, d))
        core[np.arange(d), np.arange(d), np.arange(d)] = 1.0
        op.core.value = core
        op.x_map.value = np.eye(d)
        op.y_map.value = np.eye(d)
        op.out_map.value = np.eye(d)
        rng = np.random.default_rng(0)
        q, v = rng.normal(size=d), rng.normal(size=d)
        np.testing.assert_allclose(op.fuse(q, v), q * v, atol=1e-12)
        np.testing.assert_allclose(op.fuse(q, v), tucker_reference(op, q, v),
                                   atol=1e-12)

    def test_zero_input(self):
        op = TuckerFusion((4, 5), 3, seed=1, core_dims=(2, 3, 2))
        np.testing.assert_array_equal(op.fuse(np.zeros(4), np.ones(5)),
                                      np.zeros(3))

    def test_matches_full_bilinear_on_reconstructed_tensor(self):
        rng = np.random.default_rng(2)
        op = TuckerFusion((3, 4), 3, seed=2, core_dims=(2, 2, 2))
        w = op.reconstruct_tensor()
        for _ in range(10):
            q, v = rng.normal(size=3), rng.normal(size=4)
            np.testing.assert_allclose(
                op.fuse(q, v), full_bilinear(q, v, w), atol=1e-9
            )

    def test_triple_sum_oracle_random_core(self):
        rng = np.random.default_rng(3)
        op = TuckerFusion((4, 4), 4, seed=3, core_dims=(2, 2, 2))
        q, v = rng.normal(size=4), rng.normal(size=4)
        np.testing.assert_allclose(op.fuse(q, v), tucker_reference(op, q, v),
                                   atol=1e-12)

    def test_shape_mismatch_rejected(self):
        op = TuckerFusion((4, 4), 3, seed=4)
        with pytest.raises(ValueError, match="input dims"):
            op.fuse(np.ones(3), np.ones(4))

    def test_bilinear_in_both_arguments(self):
        rng = np.random.default_rng(4)
        op = TuckerFusion((4, 5), 3, seed=5, core_dims=(3, 3, 3))
        x, xp = rng.normal(size=4), rng.normal(size=4)
        y = rng.normal(size=5)
        a, b = 0.7, -1.3
        lhs = op.fuse(a * x + b * xp, y)
        rhs = a * op.fuse(x, y) + b * op.fuse(xp, y)
        scale = np.abs(rhs).max() + 1.0
        np.testing.assert_allclose(lhs, rhs, atol=1e-9 * scale)


def block_reference(op, x, y):
    """Per-block triple-sum oracle following the chunked contraction."""
    r1, r2, r3 = op.block_dims
    xh = op.left_map.value @ x
    yh = op.right_map.value @ y
    parts = []
    for r in range(op.blocks):
        xr = xh[r * r1:(r + 1) * r1]
        yr = yh[r * r2:(r + 1) * r2]
        z = np.zeros(r3)
        for a in range(r1):
            for b in range(r2):
                for c in range(r3):
                    z[c] += op.cores.value[r, a, b, c] * xr[a] * yr[b]
        parts.append(z)
    return op.out_map.value @ np.concatenate(parts)


class TestBlockFusion:
    def test_single_block_equals_tucker(self):
        block = BlockFusion((5, 6), 4, seed=6, blocks=1, block_dims=(3, 3, 3))
        tucker = TuckerFusion((5, 6), 4, seed=7, core_dims=(3, 3, 3))
        tucker.core = Param(block.cores.value[0].copy(), "core")
        tucker.x_map = Param(block.left_map.value.T.copy(), "x_map")
        tucker.y_map = Param(block.right_map.value.T.copy(), "y_map")
        tucker.out_map = Param(block.out_map.value.T.copy(), "out_map")
        rng = np.random.default_rng(5)
        x, y = rng.normal(size=5), rng.normal(size=6)
        np.testing.assert_allclose(block.fuse(x, y), tucker.fuse(x, y),
                                   atol=1e-12)

    def test_zero_input(self):
        op = BlockFusion((4, 4), 3, seed=8, blocks=2, block_dims=(2, 2, 2))
        np.testing.assert_array_equal(op.fuse(np.zeros(4), np.ones(4)),
                                      np.zeros(3))

    def test_chunked_oracle(self):
        op = BlockFusion((4, 4), 3, seed=9, blocks=2, block_dims=(2, 2, 2))
        rng = np.random.default_rng(6)
        x, y = rng.normal(size=4), rng.normal(size=4)
        np.testing.assert_allclose(op.fuse(x, y), block_reference(op, x, y),
                                   atol=1e-12)

    def test_block_dims_validated(self):
        with pytest.raises(ValueError, match="exceed"):
            BlockFusion((4, 4), 3, seed=0, blocks=1, block_dims=(5, 2, 2))

    def test_batched_rows_match_vector_calls(self):
        op = BlockFusion((4, 5), 3, seed=10, blocks=2, block_dims=(2, 2, 2))
        rng = np.random.default_rng(7)
        xs = rng.normal(size=(3, 4))
        ys = rng.normal(size=(3, 5))
        batched = op.fuse(xs, ys)
        for row in range(3):
            np.testing.assert_allclose(
                batched[row], op.fuse(xs[row], ys[row]), atol=1e-12
            )


class TestReconstruction:
    def test_zero_cores_give_zero_tensor(self):
        op = BlockFusion((4, 4), 3, seed=11, blocks=2, block_dims=(2, 2, 2))
        op.cores.value = np.zeros_like(op.cores.value)
        np.testing.assert_array_equal(reconstruct_block_tensor(op),
                                      np.zeros((4, 4, 3)))

    def test_probe_equivalence_with_block_fuse(self):
        rng = np.random.default_rng(8)
        op = BlockFusion((5, 6), 4, seed=12, blocks=3, block_dims=(2, 2, 2))
        w = reconstruct_block_tensor(op)
        for _ in range(10):
            x, y = rng.normal(size=5), rng.normal(size=6)
            np.testing.assert_allclose(
                full_bilinear(x, y, w), op.fuse(x, y), atol=1e-9
            )

    def test_superdiagonal_recovered_for_identity_blocks(self):
        d = 3
        op = BlockFusion((d, d), d, seed=13, blocks=1, block_dims=(d, d, d))
        core = np.zeros((d, d, d))
        core[np.arange(d), np.arange(d), np.arange(d)] = 1.0
        op.cores.value = core[None]
        op.left_map.value = np.eye(d)
        op.right_map.value = np.eye(d)
        op.out_map.value = np.eye(d)
        np.testing.assert_allclose(reconstruct_block_tensor(op), core,
                                   atol=1e-12)

    def test_size_guard(self):
        op = BlockFusion((128, 128), 128, seed=14, blocks=1,
                         block_dims=(2, 2, 2))
        with pytest.raises(ValueError, match="guard"):
            reconstruct_block_tensor(op)

    def test_mode_rank_bounded_by_block_structure(self):
        """Each matricization of the reconstructed tensor has rank at most
        blocks * block_dim for its mode."""
        rng = np.random.default_rng(9)
        for trial in range(20):
            blocks = int(rng.integers(1, 4))
            dims = tuple(int(rng.integers(1, 4)) for _ in range(3))
            op = BlockFusion((6, 6), 4, seed=trial, blocks=blocks,
                             block_dims=dims)
            w = reconstruct_block_tensor(op)
            for mode in (1, 2, 3):
                rank = matrix_rank(matricize(w, mode).matrix)
                assert rank <= blocks * dims[mode - 1]
