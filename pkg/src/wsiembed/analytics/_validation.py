import numpy as np
from sklearn.utils.validation import check_array, check_X_y

from ..errors import NonFiniteInput, SingleClass


def check_embeddings(X, y=None):
    """Validate an (N, D) float matrix (and labels); raise NonFiniteInput on NaN/inf."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2 and not np.all(np.isfinite(X)):
        raise NonFiniteInput("embeddings contain NaN or infinite values")
    if y is None:
        return check_array(X, dtype=np.float64)
    return check_X_y(X, y, dtype=np.float64)


def binary_targets(y):
    """Return (classes, y01). Exactly two classes are required."""
    classes = np.unique(y)
    if classes.size < 2:
        raise SingleClass(f"need two classes, got {classes.tolist()}")
    if classes.size > 2:
        raise ValueError(f"probes are binary only, got {classes.size} classes")
    return classes, (y == classes[1]).astype(np.float64)
