"""Count-sketch projections and compact bilinear (MCB) fusion.

A :class:`SketchPlan` is a frozen random linear map defined by an index hash
``h`` and Rademacher signs ``s``: ``out[j] = sum_{i: h[i] = j} s[i] * x[i]``.
Plans are derived deterministically from a seed with the Philox
counter-based generator, so serializing ``(seed, input_dim, sketch_dim)``
is enough to reconstruct them bit for bit.

MCB fuses two inputs by sketching each one and circularly convolving the
sketches, which equals the count sketch of the flattened outer product
under the induced pair hash ``(h_x[i] + h_y[j]) mod d`` with sign
``s_x[i] * s_y[j]``.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .fusion import FusionOp

# Sketch dimension used by the original VQA-scale MCB deployments for
# 2048-d inputs.  Documentation only, never a default here.
MCB_VQA_SKETCH_DIM = 16000


class SketchPlan:
    """Frozen count-sketch hash and sign tables for one input space."""

    def __init__(self, input_dim, sketch_dim, seed):
        if input_dim < 1 or sketch_dim < 1:
            raise ValueError(
                f"dimensions must be positive, got input_dim={input_dim}, "
                f"sketch_dim={sketch_dim}"
            )
        self.input_dim = int(input_dim)
        self.sketch_dim = int(sketch_dim)
        self.seed = int(seed)
        rng = np.random.Generator(np.random.Philox(key=self.seed))
        self.index_map = rng.integers(0, self.sketch_dim, size=self.input_dim)
        self.sign_map = (rng.integers(0, 2, size=self.input_dim) * 2 - 1).astype(
            np.float64
        )
        self._matrix = None

    def matrix(self):
        """Dense ``(input_dim, sketch_dim)`` projection; cached."""
        if self._matrix is None:
            m = np.zeros((self.input_dim, self.sketch_dim))
            m[np.arange(self.input_dim), self.index_map] = self.sign_map
            self._matrix = m
        return self._matrix

    def to_json(self):
        return {
            "seed": self.seed,
            "input_dim": self.input_dim,
            "sketch_dim": self.sketch_dim,
        }

    @classmethod
    def from_json(cls, obj):
        return cls(obj["input_dim"], obj["sketch_dim"], obj["seed"])


def count_sketch(plan, x):
    """Project ``x`` (vector or row batch) through the plan's linear map."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != plan.input_dim:
        raise ValueError(
            f"count_sketch expects input dim {plan.input_dim}, got shape {x.shape}"
        )
    return x @ plan.matrix()


def circular_convolve(a, b):
    """FFT circular convolution: ``out[k] = sum_j a[j] * b[(k - j) mod d]``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(
            f"circular_convolve needs matching shapes, got {a.shape} and {b.shape}"
        )
    d = a.shape[-1]
    return np.fft.irfft(
        np.fft.rfft(a, axis=-1) * np.fft.rfft(b, axis=-1), n=d, axis=-1
    )


class McbFusion(FusionOp):
    """Multimodal compact bilinear pooling over two frozen sketch plans.

    The plans are not trainable; gradients pass through the sketches as
    fixed linear maps and through the convolution as circular correlation.
    ``normalize`` adds signed-square-root + L2 normalization after fusion
    (off by default; exposed because downstream users commonly apply it,
    not because the operator requires it).
    """

    def __init__(self, input_dims, output_dim, seed=0, normalize=False):
        m, n = input_dims
        seeds = np.random.SeedSequence(seed).generate_state(2)
        self.input_dims = (int(m), int(n))
        self.output_dim = int(output_dim)
        self.plan_x = SketchPlan(m, output_dim, int(seeds[0]))
        self.plan_y = SketchPlan(n, output_dim, int(seeds[1]))
        self.normalize = bool(normalize)
        self.seed = int(seed)

    def fuse(self, x, y, train_mode=False):
        self._check_pair(x, y)
        z = ad.circular_convolve(
            ad.sketch_project(self.plan_x, x),
            ad.sketch_project(self.plan_y, y),
        )
        if self.normalize:
            z = ad.l2_normalize(ad.signed_sqrt(z), axis=-1)
        return z
