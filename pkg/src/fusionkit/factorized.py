"""Low-rank factorized bilinear operators: MLB, MFB, and stacked MFH.

MLB projects each input through a rank-``o`` factor matrix and multiplies
element-wise: ``z = act((X^T x) * (Y^T y))``.  MFB expands to ``k * o``
dimensions first and then sum-pools windows of ``k`` entries, so MLB is the
``k = 1`` case.  MFH chains ``p`` MFB units by element-wise multiplying each
unit's (optionally dropout-masked) expanded term into a running product,
then sum-pools the concatenation of all running products.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Param
from .fusion import FusionOp


def _fan_in_init(rng, fan_in, shape):
    # Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] keeps pre-activations O(1).
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class MlbFusion(FusionOp):
    """Low-rank bilinear fusion ``z = act((X^T x) * (Y^T y))``.

    The output dim must satisfy ``o < min(m, n)``; the whole point of the
    operator is a rank reduction of the implied ``m x n`` bilinear map.
    ``activation`` is ``"tanh"`` by default (the usual capacity boost) or
    ``"none"``, which keeps the operator exactly bilinear.
    """

    def __init__(self, input_dims, output_dim, seed=0, activation="tanh"):
        m, n = input_dims
        if output_dim >= min(m, n):
            raise ValueError(
                f"output dim {output_dim} must be < min(input dims) = {min(m, n)}"
            )
        if activation not in ("tanh", "none"):
            raise ValueError(f"unknown activation {activation!r}")
        self.input_dims = (int(m), int(n))
        self.output_dim = int(output_dim)
        self.activation = activation
        rng = np.random.default_rng(seed)
        self.x_factors = Param(_fan_in_init(rng, m, (m, output_dim)), "x_factors")
        self.y_factors = Param(_fan_in_init(rng, n, (n, output_dim)), "y_factors")

    def params(self):
        return {"x_factors": self.x_factors, "y_factors": self.y_factors}

    def fuse(self, x, y, train_mode=False):
        self._check_pair(x, y)
        z = ad.mul(ad.matmul(x, self.x_factors), ad.matmul(y, self.y_factors))
        if self.activation == "tanh":
            z = ad.tanh(z)
        return z


class MfbFusion(FusionOp):
    """Factorized bilinear pooling with ``k`` factors per output entry.

    ``expand`` produces the ``k * o`` dimensional element-wise product of the
    two projections; ``fuse`` sum-pools each contiguous window of ``k``
    entries, so ``z[i] = sum_d (x . a_{i,d}) (y . b_{i,d})`` over the window's
    factor columns.
    """

    def __init__(self, input_dims, output_dim, seed=0, k=2):
        m, n = input_dims
        if k < 1:
            raise ValueError(f"factor count k must be >= 1, got {k}")
        self.input_dims = (int(m), int(n))
        self.output_dim = int(output_dim)
        self.k = int(k)
        rng = np.random.default_rng(seed)
        width = self.k * self.output_dim
        self.x_factors = Param(_fan_in_init(rng, m, (m, width)), "x_factors")
        self.y_factors = Param(_fan_in_init(rng, n, (n, width)), "y_factors")

    def params(self):
        return {"x_factors": self.x_factors, "y_factors": self.y_factors}

    def expand(self, x, y):
        """Pre-pooling product in the expanded ``k * o`` space."""
        self._check_pair(x, y)
        return ad.mul(ad.matmul(x, self.x_factors), ad.matmul(y, self.y_factors))

    def fuse(self, x, y, train_mode=False):
        return ad.sum_pool(self.expand(x, y), self.k)


class MfhFusion(FusionOp):
    """Higher-order fusion stacking ``depth`` MFB units.

    The running product starts at all-ones, so a single unit with dropout
    disabled reduces exactly to that unit's MFB output.  Dropout applies
    inverted scaling (kept entries divided by ``1 - rate``) to each unit's
    expanded term, and only when ``train_mode`` is set.  The output is the
    sum-pooled concatenation of all running products: ``depth * o`` entries.
    """

    def __init__(self, input_dims, output_dim, seed=0, k=2, depth=2,
                 dropout_rate=0.1):
        if depth < 1:
            raise ValueError(f"depth must be >= 1, got {depth}")
        if not 0.0 <= dropout_rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {dropout_rate}")
        seeds = np.random.SeedSequence(seed).generate_state(depth + 1)
        self.input_dims = (int(input_dims[0]), int(input_dims[1]))
        self.unit_output_dim = int(output_dim)
        self.output_dim = int(depth) * int(output_dim)
        self.k = int(k)
        self.depth = int(depth)
        self.dropout_rate = float(dropout_rate)
        self.units = [
            MfbFusion(input_dims, output_dim, seed=int(seeds[i]), k=k)
            for i in range(depth)
        ]
        self._mask_rng = np.random.default_rng(int(seeds[depth]))

    def params(self):
        out = {}
        for i, unit in enumerate(self.units):
            for name, p in unit.params().items():
                out[f"unit{i}.{name}"] = p
        return out

    def fuse(self, x, y, train_mode=False):
        running = None
        stages = []
        for unit in self.units:
            term = unit.expand(x, y)
            if train_mode and self.dropout_rate > 0.0:
                keep = 1.0 - self.dropout_rate
                mask = (
                    self._mask_rng.random(np.shape(ad.value_of(term))) < keep
                ) / keep
                term = ad.mul(term, mask)
            running = term if running is None else ad.mul(running, term)
            stages.append(running)
        return ad.sum_pool(ad.concat(stages, axis=-1), self.k)
