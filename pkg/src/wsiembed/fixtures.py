"""Synthetic bitmaps and container writers used by tests, the benchmark and ``make-fixtures``."""

from __future__ import annotations

import base64
import io
import struct

import numpy as np
from PIL import Image

from .wsi import (
    JPEG_BASELINE,
    SWSI_MAGIC,
    TransferSyntax,
    WsiMetadata,
)

PATTERNS = ("gradient", "uniform", "halves", "noise")


def synthetic_bitmap(rows: int, cols: int, pattern: str = "gradient", seed: int = 0, fill: int = 128) -> np.ndarray:
    """Make a (rows, cols, 3) uint8 test image.

    ``gradient`` encodes position in every pixel so misplaced bytes show up in
    equality checks; ``halves`` is black on the left and white on the right.
    """
    if pattern == "uniform":
        return np.full((rows, cols, 3), fill, dtype=np.uint8)
    if pattern == "halves":
        img = np.zeros((rows, cols, 3), dtype=np.uint8)
        img[:, cols // 2 :] = 255
        return img
    if pattern == "noise":
        return np.random.default_rng(seed).integers(0, 256, size=(rows, cols, 3), dtype=np.uint8)
    if pattern == "gradient":
        y, x = np.mgrid[0:rows, 0:cols]
        img = np.stack([x % 256, y % 256, (x // 256 + 7 * (y // 256) + seed) % 256], axis=-1)
        return img.astype(np.uint8)
    raise ValueError(f"unknown pattern {pattern!r}; choose from {PATTERNS}")


def tile_bitmap(bitmap: np.ndarray, frame_rows: int = 256, frame_cols: int = 256) -> list[np.ndarray]:
    """Split into zero-padded full-size frames, row-major."""
    rows, cols = bitmap.shape[:2]
    meta = WsiMetadata.for_tiling(rows, cols, frame_rows, frame_cols)
    frames = []
    for n in range(meta.frame_count):
        x0, y0 = meta.frame_origin(n)
        frame = np.zeros((frame_rows, frame_cols, 3), dtype=np.uint8)
        block = bitmap[y0 : y0 + frame_rows, x0 : x0 + frame_cols]
        frame[: block.shape[0], : block.shape[1]] = block
        frames.append(frame)
    return frames


def encode_image(pixels: np.ndarray, fmt: str = "png", quality: int = 95) -> bytes:
    buf = io.BytesIO()
    img = Image.fromarray(np.ascontiguousarray(pixels), mode="RGB")
    if fmt == "png":
        img.save(buf, format="PNG")
    elif fmt in ("jpeg", "jpg"):
        # 4:4:4 keeps edge colours close enough for the +-2 tolerance fixtures
        img.save(buf, format="JPEG", quality=quality, subsampling=0)
    else:
        raise ValueError(f"unsupported format {fmt!r}")
    return buf.getvalue()


def encode_base64_image(pixels: np.ndarray, fmt: str = "png", quality: int = 95) -> str:
    return base64.b64encode(encode_image(pixels, fmt, quality)).decode("ascii")


def _frame_payloads(bitmap, frame_rows, frame_cols, codec, quality):
    frames = tile_bitmap(bitmap, frame_rows, frame_cols)
    if codec is TransferSyntax.UNCOMPRESSED_RGB8:
        return [f.tobytes() for f in frames]
    return [encode_image(f, "jpeg", quality) for f in frames]


def make_swsi(
    bitmap: np.ndarray,
    frame_rows: int = 256,
    frame_cols: int = 256,
    codec: TransferSyntax | str = TransferSyntax.UNCOMPRESSED_RGB8,
    quality: int = 95,
) -> bytes:
    codec = TransferSyntax(codec)
    rows, cols = bitmap.shape[:2]
    payloads = _frame_payloads(bitmap, frame_rows, frame_cols, codec, quality)
    header = struct.pack("<5s6I", SWSI_MAGIC, rows, cols, frame_rows, frame_cols, codec.codec, len(payloads))
    table = struct.pack(f"<{len(payloads)}Q", *(len(p) for p in payloads))
    return header + table + b"".join(payloads)


# DICOM writer ------------------------------------------------------------------

_LONG = {"OB", "OW", "SQ", "UN", "UT", "UC", "UR"}


def _element(group, elem, vr, value: bytes) -> bytes:
    if len(value) % 2:
        value += b"\x00" if vr in ("UI", "OB", "OW") else b" "
    if vr in _LONG:
        return struct.pack("<HH2sHI", group, elem, vr.encode(), 0, len(value)) + value
    return struct.pack("<HH2sH", group, elem, vr.encode(), len(value)) + value


def _us(v):
    return struct.pack("<H", v)


def _ul(v):
    return struct.pack("<I", v)


def make_dicom(
    bitmap: np.ndarray,
    frame_rows: int = 256,
    frame_cols: int = 256,
    codec: TransferSyntax | str = TransferSyntax.UNCOMPRESSED_RGB8,
    quality: int = 95,
    organization: str = "TILED_FULL",
    with_offset_table: bool = True,
    uids: tuple[str, str, str] = ("1.2.826.0.1.3680043.10.1.1", "1.2.826.0.1.3680043.10.1.2", "1.2.826.0.1.3680043.10.1.3"),
) -> bytes:
    """Write a minimal explicit-VR-LE VL Whole Slide Microscopy Part-10 file."""
    codec = TransferSyntax(codec)
    rows, cols = bitmap.shape[:2]
    payloads = _frame_payloads(bitmap, frame_rows, frame_cols, codec, quality)
    study, series, instance = uids
    sop_class = "1.2.840.10008.5.1.4.1.1.77.1.6"

    meta_body = (
        _element(0x0002, 0x0001, "OB", b"\x00\x01")
        + _element(0x0002, 0x0002, "UI", sop_class.encode())
        + _element(0x0002, 0x0003, "UI", instance.encode())
        + _element(0x0002, 0x0010, "UI", codec.uid.encode())
    )
    file_meta = _element(0x0002, 0x0000, "UL", _ul(len(meta_body))) + meta_body

    photometric = b"RGB" if codec is TransferSyntax.UNCOMPRESSED_RGB8 else b"YBR_FULL"
    body = b"".join(
        [
            _element(0x0008, 0x0016, "UI", sop_class.encode()),
            _element(0x0008, 0x0018, "UI", instance.encode()),
            _element(0x0008, 0x0060, "CS", b"SM"),
            _element(0x0020, 0x000D, "UI", study.encode()),
            _element(0x0020, 0x000E, "UI", series.encode()),
            _element(0x0020, 0x9311, "CS", organization.encode()),
            _element(0x0028, 0x0002, "US", _us(3)),
            _element(0x0028, 0x0004, "CS", photometric),
            _element(0x0028, 0x0006, "US", _us(0)),
            _element(0x0028, 0x0008, "IS", str(len(payloads)).encode()),
            _element(0x0028, 0x0010, "US", _us(frame_rows)),
            _element(0x0028, 0x0011, "US", _us(frame_cols)),
            _element(0x0028, 0x0100, "US", _us(8)),
            _element(0x0028, 0x0101, "US", _us(8)),
            _element(0x0028, 0x0102, "US", _us(7)),
            _element(0x0028, 0x0103, "US", _us(0)),
            _element(0x0048, 0x0006, "UL", _ul(cols)),
            _element(0x0048, 0x0007, "UL", _ul(rows)),
        ]
    )
    if codec is TransferSyntax.UNCOMPRESSED_RGB8:
        pixel = _element(0x7FE0, 0x0010, "OW", b"".join(payloads))
    else:
        items, offsets, pos = [], [], 0
        for p in payloads:
            if len(p) % 2:
                p += b"\x00"
            offsets.append(pos)
            items.append(struct.pack("<HHI", 0xFFFE, 0xE000, len(p)) + p)
            pos += 8 + len(p)
        bot = struct.pack(f"<{len(offsets)}I", *offsets) if with_offset_table else b""
        pixel = (
            struct.pack("<HH2sHI", 0x7FE0, 0x0010, b"OB", 0, 0xFFFFFFFF)
            + struct.pack("<HHI", 0xFFFE, 0xE000, len(bot))
            + bot
            + b"".join(items)
            + struct.pack("<HHI", 0xFFFE, 0xE0DD, 0)
        )
    return b"\x00" * 128 + b"DICM" + file_meta + body + pixel


def dicom_json_metadata(meta: WsiMetadata, uids: tuple[str, str, str]) -> list[dict]:
    """DICOM JSON model (as served by WADO-RS ``/metadata``) for the attribute subset."""
    study, series, instance = uids
    photometric = "RGB" if meta.transfer_syntax is TransferSyntax.UNCOMPRESSED_RGB8 else "YBR_FULL"
    return [
        {
            "00020010": {"vr": "UI", "Value": [meta.transfer_syntax.uid]},
            "0020000D": {"vr": "UI", "Value": [study]},
            "0020000E": {"vr": "UI", "Value": [series]},
            "00080018": {"vr": "UI", "Value": [instance]},
            "00209311": {"vr": "CS", "Value": [meta.organization]},
            "00280002": {"vr": "US", "Value": [3]},
            "00280004": {"vr": "CS", "Value": [photometric]},
            "00280008": {"vr": "IS", "Value": [meta.frame_count]},
            "00280010": {"vr": "US", "Value": [meta.frame_rows]},
            "00280011": {"vr": "US", "Value": [meta.frame_cols]},
            "00280100": {"vr": "US", "Value": [8]},
            "00480006": {"vr": "UL", "Value": [meta.total_cols]},
            "00480007": {"vr": "UL", "Value": [meta.total_rows]},
        }
    ]


__all__ = [
    "JPEG_BASELINE",
    "PATTERNS",
    "dicom_json_metadata",
    "encode_base64_image",
    "encode_image",
    "make_dicom",
    "make_swsi",
    "synthetic_bitmap",
    "tile_bitmap",
]
