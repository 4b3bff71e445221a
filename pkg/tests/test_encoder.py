import hashlib
import subprocess
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from wsiembed.encoder import EncoderSpec, ReferenceEncoder, make_encoder, sign_projection
from wsiembed.errors import BadPatchShape, UnknownEncoder
from wsiembed.fixtures import synthetic_bitmap
from wsiembed.wsi import Patch, PatchSpec

# frozen from the reference pipeline (dim 384, seed 0)
GRADIENT_HEAD = [
    -0.05145183861322832,
    -0.018553535916573136,
    -0.02044675386724386,
    -0.07406851151624094,
    0.0014417582855107852,
    0.019893351697047805,
]
GRADIENT_SHA256 = "6af413ec5967fe5fe0fde4b94410bdc0c9a10e6d0c08513e3421e22d3599049f"
WHITE_SHA256 = "8cd5f14c6540e10d185f6593f876f81a1da0f63762aa32b1d31705f95f61f804"


def oracle_embed(pixels, dim=384, seed=0):
    """Straight-line float64 restatement of the pipeline, loop-based box filter."""
    proj = sign_projection(768, dim, seed).astype(np.float64)
    scaled = pixels.astype(np.float64) / 255.0
    thumb = np.empty((16, 16, 3))
    for r in range(16):
        for c in range(16):
            thumb[r, c] = scaled[r * 14 : (r + 1) * 14, c * 14 : (c + 1) * 14].mean(axis=(0, 1))
    v = thumb.reshape(-1) @ proj
    n = np.linalg.norm(v)
    return v / n if n > 0 else np.full(dim, 1 / np.sqrt(dim))


def test_zero_patch_golden(encoder):
    v = encoder.embed_patch(np.zeros((224, 224, 3), np.uint8))
    assert np.array_equal(v, np.full(384, 1 / np.sqrt(384)))


def test_gradient_patch_golden(encoder):
    v = encoder.embed_patch(synthetic_bitmap(224, 224, "gradient"))
    assert v[:6].tolist() == GRADIENT_HEAD
    assert hashlib.sha256(v.tobytes()).hexdigest() == GRADIENT_SHA256


def test_white_patch_golden(encoder):
    v = encoder.embed_patch(np.full((224, 224, 3), 255, np.uint8))
    assert hashlib.sha256(v.tobytes()).hexdigest() == WHITE_SHA256


def test_golden_stable_in_fresh_process():
    code = (
        "import hashlib, numpy as np;"
        "from wsiembed.encoder import make_encoder;"
        "from wsiembed.fixtures import synthetic_bitmap;"
        "print(hashlib.sha256(make_encoder().embed_patch(synthetic_bitmap(224,224,'gradient')).tobytes()).hexdigest())"
    )
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True)
    assert out.stdout.strip() == GRADIENT_SHA256


@pytest.mark.parametrize("pattern", ["gradient", "noise", "halves", "uniform"])
def test_matches_float_oracle(encoder, pattern):
    px = synthetic_bitmap(224, 224, pattern, seed=5)
    assert np.allclose(encoder.embed_patch(px), oracle_embed(px), rtol=0, atol=1e-12)


def test_projection_distribution():
    p = sign_projection(768, 384, 0)
    assert set(np.unique(p)) <= {-1, 0, 1}
    freq = np.array([(p == v).mean() for v in (-1, 0, 1)])
    assert np.allclose(freq, [1 / 6, 2 / 3, 1 / 6], atol=0.01)
    assert p[:2, :8].tolist() == [[0, 1, 0, 0, 0, 0, 0, 1], [0, 0, 1, 0, 0, 0, 0, 0]]
    assert not np.array_equal(p, sign_projection(768, 384, 1))


def test_deterministic(encoder, rng):
    px = rng.integers(0, 256, (224, 224, 3), dtype=np.uint8)
    assert encoder.embed_patch(px).tobytes() == encoder.embed_patch(px.copy()).tobytes()


def test_one_pixel_difference_changes_vector(encoder, rng):
    for _ in range(10):
        a = rng.integers(0, 256, (224, 224, 3), dtype=np.uint8)
        b = a.copy()
        r, c, ch = rng.integers(0, 224), rng.integers(0, 224), rng.integers(0, 3)
        b[r, c, ch] ^= 0x80
        assert not np.array_equal(encoder.embed_patch(a), encoder.embed_patch(b))


@pytest.mark.parametrize("shape", [(100, 100, 3), (224, 224), (224, 224, 4), (225, 224, 3)])
def test_bad_shape(encoder, shape):
    with pytest.raises(BadPatchShape):
        encoder.embed_patch(np.zeros(shape, np.uint8))


def test_bad_dtype(encoder):
    with pytest.raises(BadPatchShape):
        encoder.embed_batch(np.zeros((1, 224, 224, 3), np.float32))


def test_batch_reports_offending_index(encoder):
    good = np.zeros((224, 224, 3), np.uint8)
    with pytest.raises(BadPatchShape) as info:
        encoder.embed_batch([good, good, np.zeros((10, 10, 3), np.uint8), good])
    assert info.value.index == 2


def test_batch_of_copies(encoder, rng):
    px = rng.integers(0, 256, (224, 224, 3), dtype=np.uint8)
    out = encoder.embed_batch([px, px, px])
    assert out.shape == (3, 384)
    assert np.array_equal(out[0], out[1]) and np.array_equal(out[1], out[2])


def test_empty_batch(encoder):
    assert encoder.embed_batch([]).shape == (0, 384)


def test_batch_equals_singles(encoder, rng):
    patches = [Patch(PatchSpec(0, 0), rng.integers(0, 256, (224, 224, 3), dtype=np.uint8)) for _ in range(16)]
    batch = encoder.embed_batch(patches)
    for p, v in zip(patches, batch):
        assert v.tobytes() == encoder.embed_patch(p).tobytes()


def test_concurrency_does_not_change_results(encoder):
    rng = np.random.default_rng(99)
    patches = rng.integers(0, 256, (1000, 224, 224, 3), dtype=np.uint8)
    serial = [encoder.embed_patch(p) for p in patches]
    with ThreadPoolExecutor(8) as pool:
        parallel = list(pool.map(encoder.embed_patch, patches))
    assert all(a.tobytes() == b.tobytes() for a, b in zip(serial, parallel))


@settings(max_examples=60, deadline=None)
@given(arrays(np.uint8, (224, 224, 3), elements=st.integers(0, 255)))
def test_unit_norm(px):
    v = make_encoder().embed_patch(px)
    assert np.all(np.isfinite(v))
    assert abs(np.linalg.norm(v) - 1.0) <= 1e-6


def test_dim_and_seed_configurable():
    enc = make_encoder(EncoderSpec(dim=16, seed=42))
    v = enc.embed_patch(synthetic_bitmap(224, 224))
    assert v.shape == (16,)
    assert abs(np.linalg.norm(v) - 1) <= 1e-6


def test_unknown_encoder():
    with pytest.raises(UnknownEncoder):
        make_encoder(EncoderSpec(name="nope"))


def test_sklearn_transformer_contract():
    from sklearn.base import clone

    enc = ReferenceEncoder(dim=32, seed=3)
    assert enc.get_params() == {"dim": 32, "grid": 16, "seed": 3}
    X = np.random.default_rng(0).integers(0, 256, (4, 224, 224, 3), dtype=np.uint8)
    out = clone(enc).fit_transform(X)
    assert out.shape == (4, 32)
    assert np.array_equal(out, ReferenceEncoder(dim=32, seed=3).fit().transform(X))
