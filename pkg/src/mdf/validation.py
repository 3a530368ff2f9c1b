"""Input checks shared by the estimators and the command line."""
from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

UNLABELED = -1


def check_paired(X, n_view=None):
    """Validate a ``[n x 2d]`` matrix of side-by-side EO|SAR views and split it.

    Returns ``(eo, sar)`` as float32 arrays. NaN/Inf and odd widths are errors;
    ``n_view`` pins the expected per-view width.
    """
    X = check_array(X, dtype=np.float64, ensure_all_finite=True)
    if X.shape[1] % 2:
        raise ValueError(f"paired input needs an even number of columns (EO|SAR), got {X.shape[1]}")
    d = X.shape[1] // 2
    if n_view is not None and d != n_view:
        raise ValueError(f"each view should have {n_view} columns, got {d}")
    return X[:, :d].astype(np.float32), X[:, d:].astype(np.float32)


def check_view(X, n_view: int):
    """Accept either a single view ``[n x d]`` or a paired matrix ``[n x 2d]``;
    returns ``(eo_or_None, sar_or_view)`` split accordingly."""
    X = check_array(X, dtype=np.float64, ensure_all_finite=True)
    if X.shape[1] == 2 * n_view:
        return X[:, :n_view].astype(np.float32), X[:, n_view:].astype(np.float32)
    if X.shape[1] == n_view:
        return None, X.astype(np.float32)
    raise ValueError(f"expected {n_view} (one view) or {2 * n_view} (both views) columns, "
                     f"got {X.shape[1]}")


def check_partial_labels(y, n: int):
    """Integer labels with ``-1`` marking unlabeled rows; returns an int64 array."""
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != n:
        raise ValueError(f"y must be 1-D with {n} entries, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.isfinite(y)) or not np.all(np.equal(np.mod(y, 1), 0)):
            raise ValueError("labels must be integers (use -1 for unlabeled rows)")
    y = y.astype(np.int64)
    if np.any(y < UNLABELED):
        raise ValueError("labels must be >= 0, or -1 for unlabeled rows")
    if not np.any(y != UNLABELED):
        raise ValueError("at least one labeled row is required")
    return y


def check_probability_stack(probs, n_classes=None):
    """A sequence of ``m`` arrays ``[n x k]`` (or a 3-D array ``[m x n x k]``)."""
    stack = np.asarray(probs, dtype=np.float64)
    if stack.ndim != 3:
        raise ValueError(f"expected m probability matrices of shape [n x k], got shape {stack.shape}")
    if not np.all(np.isfinite(stack)):
        raise ValueError("probability matrices contain NaN or Inf")
    if n_classes is not None and stack.shape[2] != n_classes:
        raise ValueError(f"expected {n_classes} classes, got {stack.shape[2]}")
    return stack
