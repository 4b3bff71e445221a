"""Patch encoders.

The reference encoder stands in for a real foundation model. It box-filters a
224x224 RGB patch down to 16x16x3, flattens it, multiplies by a sparse sign
projection drawn from a seeded PCG64 stream and L2-normalises the result.

All arithmetic before the final division is carried out on exact integers
(block sums are at most 196*255 and the projection entries are in {-1, 0, 1},
so every partial sum stays far below 2**53). That makes the output bitwise
reproducible regardless of BLAS kernel, batch size or thread count.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .errors import BadPatchShape, UnknownEncoder
from .wsi import Patch

PATCH_SIZE = 224
REFERENCE_NAME = "reference-v1"
DEFAULT_DIM = 384
DEFAULT_SEED = 0


@dataclass(frozen=True)
class EncoderSpec:
    name: str = REFERENCE_NAME
    dim: int = DEFAULT_DIM
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        if int(self.dim) < 1:
            raise ValueError(f"encoder dim must be >= 1, got {self.dim}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("encoder seed must fit in an unsigned 64-bit integer")

    def to_dict(self):
        return {"name": self.name, "dim": self.dim, "seed": self.seed}


class Encoder(Protocol):
    name: str
    dim: int

    def embed_batch(self, patches) -> np.ndarray: ...


def sign_projection(n_inputs: int, dim: int, seed: int) -> np.ndarray:
    """Sparse {-1, 0, +1} matrix with probabilities {1/6, 2/3, 1/6}.

    Entries come from the raw 64-bit PCG64 output (not ``Generator.integers``)
    so the matrix does not depend on numpy's sampling algorithms.
    """
    raw = np.random.PCG64(seed).random_raw(n_inputs * dim).astype(np.uint64)
    bucket = raw % np.uint64(6)
    out = np.zeros(n_inputs * dim, dtype=np.int8)
    out[bucket == 0] = -1
    out[bucket == 1] = 1
    return out.reshape(n_inputs, dim)


def _as_pixel_batch(patches) -> np.ndarray:
    """Accept Patch objects or raw arrays; return (N, 224, 224, 3) uint8."""
    if isinstance(patches, np.ndarray) and patches.ndim == 4:
        arrays = patches
        bad = None if arrays.shape[1:] == (PATCH_SIZE, PATCH_SIZE, 3) else 0
    else:
        arrays, bad = [], None
        for i, p in enumerate(patches):
            px = p.pixels if isinstance(p, Patch) else np.asarray(p)
            if px.shape != (PATCH_SIZE, PATCH_SIZE, 3) and bad is None:
                bad = i
            arrays.append(px)
        if bad is None:
            arrays = np.stack(arrays) if arrays else np.empty((0, PATCH_SIZE, PATCH_SIZE, 3), np.uint8)
    if bad is not None:
        shape = arrays[bad].shape
        raise BadPatchShape(f"patch {bad} has shape {shape}, expected (224, 224, 3)", index=bad)
    if arrays.dtype != np.uint8:
        raise BadPatchShape(f"patches must be uint8 RGB, got {arrays.dtype}", index=0)
    return arrays


class ReferenceEncoder(TransformerMixin, BaseEstimator):
    """Deterministic stand-in encoder; ``transform`` maps patches to unit vectors.

    Parameters
    ----------
    dim : int
        Output dimensionality.
    seed : int
        Seed for the projection matrix.
    grid : int
        Side of the box-filtered thumbnail; 224 must be divisible by it.
    """

    name = REFERENCE_NAME

    def __init__(self, dim=DEFAULT_DIM, seed=DEFAULT_SEED, grid=16):
        self.dim = dim
        self.seed = seed
        self.grid = grid

    def fit(self, X=None, y=None):
        if PATCH_SIZE % self.grid:
            raise ValueError(f"grid {self.grid} does not divide {PATCH_SIZE}")
        n_inputs = self.grid * self.grid * 3
        self.projection_ = sign_projection(n_inputs, int(self.dim), int(self.seed)).astype(np.float64)
        self.n_features_in_ = n_inputs
        return self

    def _block_sums(self, pixels: np.ndarray) -> np.ndarray:
        n, g = pixels.shape[0], self.grid
        b = PATCH_SIZE // g
        # rows first (contiguous, fits uint16: 14*255), then columns
        rows = pixels.reshape(n * g, b, PATCH_SIZE * 3).sum(axis=1, dtype=np.uint16)
        blocks = rows.reshape(n, g, g, b, 3).sum(axis=3, dtype=np.int64)
        # scaling by 1/(b*b*255) would map to [0, 1]; it cancels in the normalisation
        return blocks.reshape(n, g * g * 3)

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "projection_")
        pixels = _as_pixel_batch(X)
        if len(pixels) == 0:
            return np.empty((0, int(self.dim)), dtype=np.float64)
        projected = (self._block_sums(pixels).astype(np.float64) @ self.projection_).astype(np.int64)
        sq = np.einsum("ij,ij->i", projected, projected)
        out = np.empty(projected.shape, dtype=np.float64)
        nonzero = sq > 0
        out[nonzero] = projected[nonzero] / np.sqrt(sq[nonzero].astype(np.float64))[:, None]
        # inputs in the projection's null space (e.g. an all-black patch) get a fixed unit vector
        out[~nonzero] = 1.0 / np.sqrt(float(self.dim))
        return out

    def embed_batch(self, patches: Sequence) -> np.ndarray:
        return self.transform(patches)

    def embed_patch(self, patch) -> np.ndarray:
        px = patch.pixels if isinstance(patch, Patch) else np.asarray(patch)
        return self.transform(px[None, ...] if px.ndim == 3 else [px])[0]

    @property
    def spec(self) -> EncoderSpec:
        return EncoderSpec(self.name, int(self.dim), int(self.seed))


ENCODERS = {REFERENCE_NAME: ReferenceEncoder}


def register_encoder(name: str, factory) -> None:
    """Make ``factory(dim=..., seed=...)`` available under ``name``."""
    ENCODERS[name] = factory


@functools.lru_cache(maxsize=16)
def make_encoder(spec: EncoderSpec = EncoderSpec()):
    """Build (and memoise) a fitted encoder for ``spec``.

    Encoders are pure functions of their spec, so sharing instances between
    requests and threads is safe.
    """
    try:
        factory = ENCODERS[spec.name]
    except KeyError:
        raise UnknownEncoder(f"unknown encoder {spec.name!r}; available: {sorted(ENCODERS)}") from None
    return factory(dim=spec.dim, seed=spec.seed).fit()


def embed_patch(patch, encoder=None) -> np.ndarray:
    return (encoder or make_encoder()).embed_patch(patch)


def embed_batch(patches, encoder=None) -> np.ndarray:
    return (encoder or make_encoder()).embed_batch(patches)
