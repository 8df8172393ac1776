"""Linear CCA in closed form and trainable deep CCA encoders.

``cca_fit`` solves for the top canonical pairs of two sample matrices via
the whitened cross-covariance SVD, with a ridge term on both covariance
blocks for conditioning.  Projection columns are rescaled afterwards so the
projected training views have exactly unit empirical variance per
component; the ridge therefore only perturbs directions, not the reported
normalization.

Deep CCA encodes each view with a two-layer network and maximizes the sum
of the top canonical correlations of the encoded batches.  The correlation
objective enters the autodiff graph as a single custom node with the
analytic gradient of the (truncated) singular-value sum.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Param

EIGENVALUE_FLOOR = 1e-10
DEFAULT_RIDGE = 1e-4


class CcaDegenerateWarning(UserWarning):
    """A projected component had zero variance; its correlation is reported as 0."""


def _sym_inv_sqrt(cov, view_name, ridge):
    vals, vecs = np.linalg.eigh(cov)
    top = vals.max() if vals.size else 0.0
    if ridge == 0.0 and (top <= 0.0 or vals.min() < EIGENVALUE_FLOOR * top):
        raise np.linalg.LinAlgError(
            f"{view_name} covariance is singular; pass a positive regularizer"
        )
    vals = np.maximum(vals, EIGENVALUE_FLOOR * max(top, 1.0))
    return (vecs / np.sqrt(vals)) @ vecs.T


@dataclass
class CcaSolution:
    """Fitted canonical projections, correlations, and centering means."""

    w0: np.ndarray
    w1: np.ndarray
    correlations: np.ndarray
    regularizer: float
    mean0: np.ndarray
    mean1: np.ndarray

    def to_json(self):
        return {
            "w0": self.w0.tolist(),
            "w1": self.w1.tolist(),
            "correlations": self.correlations.tolist(),
            "regularizer": self.regularizer,
            "mean0": self.mean0.tolist(),
            "mean1": self.mean1.tolist(),
        }

    @classmethod
    def from_json(cls, obj):
        return cls(
            w0=np.asarray(obj["w0"], dtype=np.float64),
            w1=np.asarray(obj["w1"], dtype=np.float64),
            correlations=np.asarray(obj["correlations"], dtype=np.float64),
            regularizer=float(obj["regularizer"]),
            mean0=np.asarray(obj["mean0"], dtype=np.float64),
            mean1=np.asarray(obj["mean1"], dtype=np.float64),
        )


def _covariances(view0, view1, ridge):
    n = view0.shape[0]
    mean0 = view0.mean(axis=0)
    mean1 = view1.mean(axis=0)
    c0 = view0 - mean0
    c1 = view1 - mean1
    s00 = c0.T @ c0 / (n - 1) + ridge * np.eye(view0.shape[1])
    s11 = c1.T @ c1 / (n - 1) + ridge * np.eye(view1.shape[1])
    s01 = c0.T @ c1 / (n - 1)
    return mean0, mean1, c0, c1, s00, s11, s01


def cca_fit(view0, view1, components, regularizer=DEFAULT_RIDGE):
    """Fit the top-``components`` canonical pairs of two sample matrices.

    Parameters
    ----------
    view0, view1 : ndarray, shape (n_samples, d0) and (n_samples, d1)
        Paired observations, one sample per row.
    components : int
        Number of canonical pairs to keep (at most ``min(d0, d1)``).
    regularizer : float
        Ridge added to both covariance blocks.  Required to be positive
        whenever a view's covariance is singular.
    """
    view0 = np.asarray(view0, dtype=np.float64)
    view1 = np.asarray(view1, dtype=np.float64)
    if view0.ndim != 2 or view1.ndim != 2 or view0.shape[0] != view1.shape[0]:
        raise ValueError(
            f"views must be sample matrices with equal sample counts, got "
            f"shapes {view0.shape} and {view1.shape}"
        )
    n = view0.shape[0]
    if n < 2:
        raise ValueError(f"need at least 2 samples, got {n}")
    if not 1 <= components <= min(view0.shape[1], view1.shape[1]):
        raise ValueError(
            f"components must be in [1, {min(view0.shape[1], view1.shape[1])}], "
            f"got {components}"
        )
    if regularizer < 0:
        raise ValueError(f"regularizer must be >= 0, got {regularizer}")

    mean0, mean1, c0, c1, s00, s11, s01 = _covariances(view0, view1, regularizer)
    k0 = _sym_inv_sqrt(s00, "view0", regularizer)
    k1 = _sym_inv_sqrt(s11, "view1", regularizer)
    u, s, vt = np.linalg.svd(k0 @ s01 @ k1)
    if s[0] > 1.0 + 1e-9 or s[-1] < -1e-9:
        raise np.linalg.LinAlgError(
            f"canonical correlations left [0, 1] ({s}); the problem is too "
            f"ill-conditioned for the given regularizer"
        )
    rho = np.clip(s[:components], 0.0, 1.0)
    w0 = k0 @ u[:, :components]
    w1 = k1 @ vt.T[:, :components]

    # Rescale so the projected training views have unit empirical variance.
    std0 = (c0 @ w0).std(axis=0, ddof=1)
    std1 = (c1 @ w1).std(axis=0, ddof=1)
    if np.any(std0 == 0.0) or np.any(std1 == 0.0):
        bad = "view0" if np.any(std0 == 0.0) else "view1"
        raise np.linalg.LinAlgError(
            f"{bad} projects to a zero-variance component; the covariance is "
            f"degenerate"
        )
    return CcaSolution(
        w0=w0 / std0,
        w1=w1 / std1,
        correlations=rho,
        regularizer=float(regularizer),
        mean0=mean0,
        mean1=mean1,
    )


def cca_correlation(solution, view0, view1):
    """Empirical per-component Pearson correlation of projected batches.

    Components whose projection has zero variance are reported as 0 with a
    :class:`CcaDegenerateWarning`.
    """
    view0 = np.asarray(view0, dtype=np.float64)
    view1 = np.asarray(view1, dtype=np.float64)
    if view0.shape[1:] != solution.mean0.shape or view1.shape[1:] != solution.mean1.shape:
        raise ValueError(
            f"batch dims {view0.shape} / {view1.shape} do not match the "
            f"fitted views ({solution.mean0.shape[0]}, {solution.mean1.shape[0]})"
        )
    p0 = (view0 - solution.mean0) @ solution.w0
    p1 = (view1 - solution.mean1) @ solution.w1
    d0 = p0 - p0.mean(axis=0)
    d1 = p1 - p1.mean(axis=0)
    var0 = (d0 * d0).sum(axis=0)
    var1 = (d1 * d1).sum(axis=0)
    out = np.zeros(solution.correlations.shape[0])
    ok = (var0 > 0.0) & (var1 > 0.0)
    if not np.all(ok):
        warnings.warn(
            "zero-variance projection; reporting correlation 0 for the "
            "degenerate components",
            CcaDegenerateWarning,
            stacklevel=2,
        )
    out[ok] = (d0 * d1).sum(axis=0)[ok] / np.sqrt(var0[ok] * var1[ok])
    return out


# ---------------------------------------------------------------------------
# deep CCA
# ---------------------------------------------------------------------------

def _corr_objective(h0, h1, components, ridge):
    """Sum of top-``components`` canonical correlations of two batches and
    its analytic gradients with respect to the (uncentered) batches."""
    n = h0.shape[0]
    _, _, c0, c1, s00, s11, s01 = _covariances(h0, h1, ridge)
    k0 = _sym_inv_sqrt(s00, "encoded view0", ridge)
    k1 = _sym_inv_sqrt(s11, "encoded view1", ridge)
    u, s, vt = np.linalg.svd(k0 @ s01 @ k1)
    c = components
    corr = float(s[:c].sum())
    uc = u[:, :c]
    vc = vt[:c].T
    delta01 = k0 @ uc @ vc.T @ k1
    delta00 = -0.5 * k0 @ uc @ np.diag(s[:c]) @ uc.T @ k0
    delta11 = -0.5 * k1 @ vc @ np.diag(s[:c]) @ vc.T @ k1
    g0 = (2.0 * c0 @ delta00 + c1 @ delta01.T) / (n - 1)
    g1 = (2.0 * c1 @ delta11 + c0 @ delta01) / (n - 1)
    # Chain through the centering of each batch.
    g0 -= g0.mean(axis=0)
    g1 -= g1.mean(axis=0)
    return corr, g0, g1


def canonical_correlation_loss(h0, h1, components, regularizer=DEFAULT_RIDGE):
    """Autodiff node for ``-(sum of top canonical correlations)`` of two
    encoded batches."""
    v0 = np.asarray(ad.value_of(h0))
    v1 = np.asarray(ad.value_of(h1))
    if v0.shape[0] != v1.shape[0]:
        raise ValueError(
            f"batches must have equal sample counts, got {v0.shape} and {v1.shape}"
        )
    if v0.shape[0] <= components + 1:
        raise ValueError(
            f"batch of {v0.shape[0]} samples is too small for {components} "
            f"components; need at least {components + 2}"
        )
    corr, g0, g1 = _corr_objective(v0, v1, components, regularizer)
    loss = np.asarray(-corr)
    return ad._make(loss, "cca-correlation", (
        (h0, lambda g: -g * g0),
        (h1, lambda g: -g * g1),
    ))


class TwoLayerEncoder:
    """Affine -> nonlinearity -> affine map that preserves the input dim."""

    def __init__(self, dim, hidden=None, activation="tanh", init="random",
                 seed=0, name="encoder"):
        if activation not in ("tanh", "linear"):
            raise ValueError(f"unknown activation {activation!r}")
        hidden = 2 * dim if hidden is None else int(hidden)
        self.dim = int(dim)
        self.hidden = hidden
        self.activation = activation
        self.name = name
        rng = np.random.default_rng(seed)
        if init == "identity":
            if hidden < dim:
                raise ValueError("identity init needs hidden >= dim")
            w1 = np.zeros((dim, hidden))
            w1[:, :dim] = np.eye(dim)
            w2 = np.zeros((hidden, dim))
            w2[:dim] = np.eye(dim)
        elif init == "random":
            w1 = rng.normal(size=(dim, hidden)) / np.sqrt(dim)
            w2 = rng.normal(size=(hidden, dim)) / np.sqrt(hidden)
        else:
            raise ValueError(f"unknown init {init!r}")
        self.w1 = Param(w1, f"{name}.w1")
        self.b1 = Param(np.zeros(hidden), f"{name}.b1")
        self.w2 = Param(w2, f"{name}.w2")
        self.b2 = Param(np.zeros(dim), f"{name}.b2")

    def params(self):
        return {p.name: p for p in (self.w1, self.b1, self.w2, self.b2)}

    def __call__(self, x):
        h = ad.add(ad.matmul(x, self.w1), self.b1)
        if self.activation == "tanh":
            h = ad.tanh(h)
        return ad.add(ad.matmul(h, self.w2), self.b2)


class DccaModel:
    """Two coordinated encoders, one per view, with output dim = input dim."""

    def __init__(self, dim_t, dim_v, hidden=None, activation="tanh",
                 init="random", seed=0):
        seeds = np.random.SeedSequence(seed).generate_state(2)
        self.encoder_t = TwoLayerEncoder(
            dim_t, hidden, activation, init, int(seeds[0]), name="t"
        )
        self.encoder_v = TwoLayerEncoder(
            dim_v, hidden, activation, init, int(seeds[1]), name="v"
        )

    def params(self):
        out = {}
        out.update(self.encoder_t.params())
        out.update(self.encoder_v.params())
        return out

    def encode_t(self, x):
        return self.encoder_t(x)

    def encode_v(self, x):
        return self.encoder_v(x)


def dcca_objective(model, batch_t, batch_v, components,
                   regularizer=DEFAULT_RIDGE):
    """Loss ``-(top-c canonical correlation sum)`` of the encoded batches and
    gradients for every encoder parameter."""
    batch_t = np.asarray(batch_t, dtype=np.float64)
    batch_v = np.asarray(batch_v, dtype=np.float64)
    params = model.params()
    with ad.record():
        ht = model.encode_t(batch_t)
        hv = model.encode_v(batch_v)
        loss = canonical_correlation_loss(ht, hv, components, regularizer)
    grads = ad.backward(loss, params)
    return float(loss.value), grads


def train_dcca(model, batch_t, batch_v, components, regularizer=DEFAULT_RIDGE,
               steps=500, lr=1e-3, optimizer="sgd"):
    """Full-batch gradient training of the coordination objective.

    Returns the per-step loss history (length ``steps``).
    """
    from .training import Optimizer

    opt = Optimizer(kind=optimizer, lr=lr)
    params = model.params()
    history = []
    for _ in range(steps):
        loss, grads = dcca_objective(
            model, batch_t, batch_v, components, regularizer
        )
        for name, p in params.items():
            p.grad = grads[name]
        opt.step(params)
        history.append(loss)
    return history
