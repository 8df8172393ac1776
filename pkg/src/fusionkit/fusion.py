"""Common interface for pairwise feature-fusion operators.

Every operator maps a pair of feature vectors ``(x, y)`` to a fused vector
``z`` and exposes its trainable parameters as named
:class:`~fusionkit.autodiff.Param` blocks.  All operators also accept row
batches: 2-D inputs of shape ``(B, m)`` and ``(B, n)`` fuse row-wise to
``(B, o)``.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad


class FusionOp:
    """Base class: a configured ``(x, y) -> z`` fusion operator."""

    input_dims: tuple[int, int]
    output_dim: int

    def fuse(self, x, y, train_mode=False):
        raise NotImplementedError

    def __call__(self, x, y, train_mode=False):
        return self.fuse(x, y, train_mode=train_mode)

    def params(self):
        """Named trainable parameter blocks (empty for frozen operators)."""
        return {}

    def param_count(self):
        return int(sum(p.value.size for p in self.params().values()))

    def _check_pair(self, x, y):
        xv = np.asarray(ad.value_of(x))
        yv = np.asarray(ad.value_of(y))
        m, n = self.input_dims
        if xv.ndim not in (1, 2) or yv.ndim not in (1, 2):
            raise ValueError(
                f"inputs must be vectors or row batches, got shapes "
                f"{xv.shape} and {yv.shape}"
            )
        if xv.shape[-1] != m or yv.shape[-1] != n:
            raise ValueError(
                f"{type(self).__name__} expects input dims {self.input_dims}, "
                f"got shapes {xv.shape} and {yv.shape}"
            )
        if xv.ndim != yv.ndim or (xv.ndim == 2 and xv.shape[0] != yv.shape[0]):
            raise ValueError(
                f"batch shapes must match, got {xv.shape} and {yv.shape}"
            )


def fusion_kinds():
    """Names accepted by :func:`make_fusion`."""
    return ("mcb", "mlb", "mfb", "mfh", "tucker", "block")


def make_fusion(kind, input_dims, output_dim, seed=0, **options):
    """Build a fusion operator by kind name.

    ``options`` are forwarded to the operator constructor (e.g. ``k`` and
    ``depth`` for the factorized family, ``blocks``/``block_dims`` for the
    block-term operator, ``activation`` for MLB).
    """
    from .factorized import MfbFusion, MfhFusion, MlbFusion
    from .sketch import McbFusion
    from .tucker_block import BlockFusion, TuckerFusion

    table = {
        "mcb": McbFusion,
        "mlb": MlbFusion,
        "mfb": MfbFusion,
        "mfh": MfhFusion,
        "tucker": TuckerFusion,
        "block": BlockFusion,
    }
    if kind not in table:
        raise ValueError(f"unknown fusion kind {kind!r}; choose from {fusion_kinds()}")
    return table[kind](input_dims, output_dim, seed=seed, **options)
