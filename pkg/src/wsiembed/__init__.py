"""Patch embeddings for tiled whole-slide images: service, benchmark and probe tooling."""

__version__ = "0.1.0"

from .encoder import EncoderSpec, ReferenceEncoder, embed_batch, embed_patch, make_encoder  # noqa: E402
from .wsi import (  # noqa: E402
    FrameIndex,
    Patch,
    PatchSpec,
    TiledImage,
    TransferSyntax,
    WsiMetadata,
    extract_patch,
    parse_wsi,
    read_frame,
)

__all__ = [
    "EncoderSpec",
    "FrameIndex",
    "Patch",
    "PatchSpec",
    "ReferenceEncoder",
    "TiledImage",
    "TransferSyntax",
    "WsiMetadata",
    "__version__",
    "embed_batch",
    "embed_patch",
    "extract_patch",
    "make_encoder",
    "parse_wsi",
    "read_frame",
]
