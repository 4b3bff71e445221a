"""k-means (Lloyd with k-means++ seeding) and patch-grid cluster overlays."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from PIL import Image
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_is_fitted

from ..encoder import PATCH_SIZE, make_encoder
from ..errors import TooFewPoints
from ..wsi import PatchSpec
from ._validation import check_embeddings


def _sq_distances(X, centers):
    # one column per centre; same arithmetic as the inertia computation
    return np.column_stack([((X - c) ** 2).sum(axis=1) for c in centers])


def kmeans_plusplus(X, k, rng) -> np.ndarray:
    n = len(X)
    centers = [X[rng.integers(n)]]
    closest = ((X - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = rng.choice(n, p=closest / total)
        else:
            # every point already sits on a centre
            idx = rng.integers(n)
        centers.append(X[idx])
        closest = np.minimum(closest, ((X - X[idx]) ** 2).sum(axis=1))
    return np.array(centers)


class KMeans(ClusterMixin, BaseEstimator):
    """Lloyd's algorithm; stops when assignments stop changing or after ``max_iter`` rounds.

    ``inertia_history_[t]`` is the objective after the t-th centroid update.
    Empty clusters keep their previous centre.
    """

    def __init__(self, n_clusters=8, seed=0, max_iter=100):
        self.n_clusters = n_clusters
        self.seed = seed
        self.max_iter = max_iter

    def fit(self, X, y=None):
        X = check_embeddings(X)
        n, k = len(X), self.n_clusters
        if k < 1 or n < k:
            raise TooFewPoints(f"need N >= k >= 1, got N={n}, k={k}")
        rng = np.random.default_rng(self.seed)
        centers = kmeans_plusplus(X, k, rng)
        labels = _sq_distances(X, centers).argmin(axis=1)
        history = []
        for it in range(1, self.max_iter + 1):
            for j in range(k):
                members = labels == j
                if members.any():
                    # shifting by one member keeps the mean of identical points exact
                    pts = X[members]
                    centers[j] = pts[0] + (pts - pts[0]).mean(axis=0)
            history.append(float(((X - centers[labels]) ** 2).sum(axis=1).sum()))
            new_labels = _sq_distances(X, centers).argmin(axis=1)
            if np.array_equal(new_labels, labels):
                break
            labels = new_labels
        self.cluster_centers_ = centers
        self.labels_ = labels
        self.inertia_history_ = history
        self.inertia_ = history[-1]
        self.n_iter_ = it
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "cluster_centers_")
        return _sq_distances(check_embeddings(X), self.cluster_centers_).argmin(axis=1)


def kmeans(embeddings, k, seed=0, max_iter=100) -> KMeans:
    return KMeans(n_clusters=k, seed=seed, max_iter=max_iter).fit(embeddings)


# a qualitative palette; cycles for k > 12
PALETTE = np.array(
    [
        [230, 25, 75], [60, 180, 75], [255, 225, 25], [0, 130, 200],
        [245, 130, 48], [145, 30, 180], [70, 240, 240], [240, 50, 230],
        [210, 245, 60], [250, 190, 212], [0, 128, 128], [170, 110, 40],
    ],
    dtype=np.uint8,
)


@dataclass
class ClusterMap:
    """Cluster id for every patch on a regular grid over the slide."""

    coords: list[tuple[int, int]]  # (x, y) patch origins, row-major over the grid
    labels: np.ndarray
    grid_shape: tuple[int, int]  # (grid rows, grid cols)
    inertia_history: list[float] = field(default_factory=list)

    def as_grid(self) -> np.ndarray:
        return np.asarray(self.labels).reshape(self.grid_shape)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["x", "y", "cluster"])
            for (x, y), c in zip(self.coords, self.labels):
                writer.writerow([x, y, int(c)])


def grid_specs(rows: int, cols: int, stride: int = PATCH_SIZE, size: int = PATCH_SIZE) -> tuple[list[PatchSpec], tuple[int, int]]:
    ys = range(0, rows - size + 1, stride)
    xs = range(0, cols - size + 1, stride)
    return [PatchSpec(x, y, size, size) for y in ys for x in xs], (len(ys), len(xs))


def cluster_overlay(source, k: int, seed: int = 0, stride: int = PATCH_SIZE, encoder=None, thumb: int = 28, alpha=0.5, batch=256):
    """Embed every grid patch of ``source`` (anything with ``shape`` and
    ``extract_patch``), cluster the embeddings and render a colour overlay.

    Returns ``(ClusterMap, overlay)`` where ``overlay`` is an RGB array with one
    ``thumb x thumb`` tile per patch: a downsampled view of the patch blended
    with its cluster colour.
    """
    encoder = encoder or make_encoder()
    rows, cols = source.shape
    specs, grid_shape = grid_specs(rows, cols, stride)
    if not specs:
        raise TooFewPoints(f"a {cols}x{rows} image holds no {PATCH_SIZE}x{PATCH_SIZE} patch")
    vectors, thumbs = [], []
    for start in range(0, len(specs), batch):
        patches = [source.extract_patch(s) for s in specs[start : start + batch]]
        vectors.append(encoder.embed_batch(patches))
        f = PATCH_SIZE // thumb
        thumbs.extend(p.pixels.reshape(thumb, f, thumb, f, 3).mean(axis=(1, 3)) for p in patches)
    model = kmeans(np.vstack(vectors), k, seed)
    cmap = ClusterMap([(s.x_origin, s.y_origin) for s in specs], model.labels_, grid_shape, model.inertia_history_)
    colours = PALETTE[model.labels_ % len(PALETTE)].astype(np.float64)
    tiles = (1 - alpha) * np.stack(thumbs) + alpha * colours[:, None, None, :]
    gr, gc = grid_shape
    overlay = tiles.reshape(gr, gc, thumb, thumb, 3).transpose(0, 2, 1, 3, 4).reshape(gr * thumb, gc * thumb, 3)
    return cmap, np.clip(np.rint(overlay), 0, 255).astype(np.uint8)


def save_overlay(overlay: np.ndarray, path) -> None:
    Image.fromarray(overlay, mode="RGB").save(path, format="PNG")
