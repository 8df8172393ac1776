"""Context matching: dot-product attention yielding context-aware queries."""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad


def context_match(context, query):
    """Return one attention-weighted summary of ``query`` per context row.

    ``S[t, l] = context[t] . query[l]`` is row-softmaxed over ``l`` and the
    weights mix the query rows, so the output is temporally aligned with the
    context (shape ``(T, d)``) and each output row is a convex combination
    of query rows.
    """
    cv = np.asarray(ad.value_of(context))
    qv = np.asarray(ad.value_of(query))
    if cv.ndim != 2 or qv.ndim != 2 or cv.shape[1] != qv.shape[1]:
        raise ValueError(
            f"context and query must share the feature dim, got shapes "
            f"{cv.shape} and {qv.shape}"
        )
    scores = ad.matmul(context, ad.transpose(query))
    weights = ad.softmax(scores, axis=-1)
    return ad.matmul(weights, query)
