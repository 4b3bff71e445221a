"""Seeded synthetic embedding sets with known structure, for probe checks."""

import numpy as np


def separable_blobs(n=200, dim=384, separation=6.0, seed=7, unit_norm=False):
    """Two isotropic Gaussian classes whose means are ``separation`` standard
    deviations apart along a random direction. Labels alternate so both
    classes are balanced."""
    rng = np.random.default_rng(seed)
    direction = rng.normal(size=dim)
    direction /= np.linalg.norm(direction)
    y = np.arange(n) % 2
    X = rng.normal(size=(n, dim)) + np.outer(2 * y - 1, direction) * (separation / 2)
    if unit_norm:
        X /= np.linalg.norm(X, axis=1, keepdims=True)
    return X, y


def xor_clusters(n=400, dim=16, spread=0.35, seed=7):
    """Four clusters at (+-1, +-1) in the first two coordinates; the label is
    positive when the signs agree, so no hyperplane separates the classes."""
    rng = np.random.default_rng(seed)
    corners = np.array([[1, 1], [-1, -1], [1, -1], [-1, 1]], dtype=float)
    which = np.arange(n) % 4
    X = rng.normal(scale=spread, size=(n, dim))
    X[:, :2] += corners[which]
    y = (which < 2).astype(int)
    return X, y


def random_labels(n=200, dim=384, seed=7):
    """Gaussian embeddings with labels drawn independently of them."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, dim))
    y = rng.permutation(np.arange(n) % 2)
    return X, y
