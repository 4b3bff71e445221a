"""Tiled whole-slide image containers: parsing, frame decoding, patch assembly.

Two container flavours are understood:

* ``SWSI``: a tiny fixture format (magic ``SWSI1``, six little-endian u32
  header fields, ``frame_count`` u64 frame lengths, then the frame payloads in
  row-major order).
* A DICOM VL Whole Slide Microscopy subset: explicit VR little endian Part-10
  files holding a single TILED_FULL level, pixel data either native
  (uncompressed RGB8) or encapsulated baseline JPEG, one fragment per frame.

Coordinates are ``(x=column, y=row)`` with the origin at the top-left pixel.
"""

from __future__ import annotations

import enum
import io
import math
import struct
from dataclasses import dataclass
from typing import Callable

import numpy as np
from PIL import Image

from .errors import (
    DecodeFailure,
    FrameOutOfRange,
    MalformedContainer,
    PatchOutOfBounds,
    UnsupportedOrganization,
    UnsupportedTransferSyntax,
)

SWSI_MAGIC = b"SWSI1"
_SWSI_HEADER = struct.Struct("<5s6I")

EXPLICIT_VR_LITTLE_ENDIAN = "1.2.840.10008.1.2.1"
JPEG_BASELINE = "1.2.840.10008.1.2.4.50"
IMPLICIT_VR_LITTLE_ENDIAN = "1.2.840.10008.1.2"


class TransferSyntax(str, enum.Enum):
    UNCOMPRESSED_RGB8 = "UncompressedRGB8"
    BASELINE_JPEG = "BaselineJpeg"

    @property
    def uid(self) -> str:
        return EXPLICIT_VR_LITTLE_ENDIAN if self is TransferSyntax.UNCOMPRESSED_RGB8 else JPEG_BASELINE

    @classmethod
    def from_uid(cls, uid: str) -> "TransferSyntax":
        uid = uid.strip().rstrip("\x00")
        if uid == EXPLICIT_VR_LITTLE_ENDIAN:
            return cls.UNCOMPRESSED_RGB8
        if uid == JPEG_BASELINE:
            return cls.BASELINE_JPEG
        raise UnsupportedTransferSyntax(f"transfer syntax {uid!r} is not supported")

    @property
    def codec(self) -> int:
        return 0 if self is TransferSyntax.UNCOMPRESSED_RGB8 else 1


@dataclass(frozen=True)
class WsiMetadata:
    total_rows: int
    total_cols: int
    frame_rows: int
    frame_cols: int
    frame_count: int
    frames_per_row: int
    transfer_syntax: TransferSyntax = TransferSyntax.UNCOMPRESSED_RGB8
    organization: str = "TILED_FULL"
    photometric: str = "RGB"
    bits_per_channel: int = 8

    def __post_init__(self):
        dims = (self.total_rows, self.total_cols, self.frame_rows, self.frame_cols)
        if min(dims) <= 0:
            raise MalformedContainer(f"all image and frame dimensions must be positive, got {dims}")
        if self.organization != "TILED_FULL":
            raise UnsupportedOrganization(f"organization {self.organization!r} is not supported")
        if self.frames_per_row != math.ceil(self.total_cols / self.frame_cols):
            raise MalformedContainer("frames_per_row inconsistent with image and frame width")
        expected = self.frames_per_row * self.frames_per_col
        if self.frame_count != expected:
            raise MalformedContainer(f"frame_count {self.frame_count} != {expected} implied by the tiling")

    @classmethod
    def for_tiling(cls, total_rows, total_cols, frame_rows=256, frame_cols=256, **kwargs) -> "WsiMetadata":
        """Build metadata from image and frame sizes, deriving the frame grid."""
        per_row = math.ceil(total_cols / frame_cols)
        count = per_row * math.ceil(total_rows / frame_rows)
        return cls(total_rows, total_cols, frame_rows, frame_cols, count, per_row, **kwargs)

    @property
    def frames_per_col(self) -> int:
        return math.ceil(self.total_rows / self.frame_rows)

    def frame_origin(self, frame_no: int) -> tuple[int, int]:
        """(x, y) of the frame's top-left pixel in image coordinates."""
        return (frame_no % self.frames_per_row) * self.frame_cols, (frame_no // self.frames_per_row) * self.frame_rows

    def to_dict(self) -> dict:
        return {
            "total_rows": self.total_rows,
            "total_cols": self.total_cols,
            "frame_rows": self.frame_rows,
            "frame_cols": self.frame_cols,
            "frame_count": self.frame_count,
            "frames_per_row": self.frames_per_row,
            "transfer_syntax": self.transfer_syntax.value,
            "organization": self.organization,
            "photometric": self.photometric,
            "bits_per_channel": self.bits_per_channel,
        }


@dataclass(frozen=True)
class FrameIndex:
    """Byte extents of each frame inside the container, row-major."""

    offsets: tuple[int, ...]
    lengths: tuple[int, ...]

    def __post_init__(self):
        if len(self.offsets) != len(self.lengths):
            raise MalformedContainer("frame offset/length tables differ in size")
        end = 0
        for off, length in zip(self.offsets, self.lengths):
            if length <= 0:
                raise MalformedContainer("empty frame payload")
            if off < end:
                raise MalformedContainer("frame extents overlap or are out of order")
            end = off + length

    def __len__(self):
        return len(self.offsets)

    def extent(self, frame_no: int) -> tuple[int, int]:
        return self.offsets[frame_no], self.lengths[frame_no]


@dataclass(frozen=True)
class PatchSpec:
    x_origin: int
    y_origin: int
    width: int = 224
    height: int = 224

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise PatchOutOfBounds(f"patch size must be positive, got {self.width}x{self.height}")

    def check_bounds(self, total_rows: int, total_cols: int) -> None:
        if (
            self.x_origin < 0
            or self.y_origin < 0
            or self.x_origin + self.width > total_cols
            or self.y_origin + self.height > total_rows
        ):
            raise PatchOutOfBounds(
                f"patch (x={self.x_origin}, y={self.y_origin}, w={self.width}, h={self.height}) "
                f"is not inside a {total_cols}x{total_rows} image"
            )


@dataclass(frozen=True, eq=False)
class Patch:
    spec: PatchSpec
    pixels: np.ndarray  # (height, width, 3) uint8

    def __post_init__(self):
        if self.pixels.shape != (self.spec.height, self.spec.width, 3) or self.pixels.dtype != np.uint8:
            raise ValueError(f"pixel array {self.pixels.shape}/{self.pixels.dtype} does not match {self.spec}")

    def tobytes(self) -> bytes:
        return self.pixels.tobytes()


# --------------------------------------------------------------------------- parsing


def parse_wsi(container) -> tuple[WsiMetadata, FrameIndex]:
    """Parse a SWSI or DICOM container held in a bytes-like object.

    The container is never modified, so the result can be shared freely
    between threads.
    """
    view = memoryview(container)
    if bytes(view[:5]) == SWSI_MAGIC:
        return _parse_swsi(view)
    if len(view) >= 132 and bytes(view[128:132]) == b"DICM":
        return _parse_dicom(view)
    raise MalformedContainer("unrecognised container: neither SWSI nor DICOM Part-10")


def _parse_swsi(view: memoryview) -> tuple[WsiMetadata, FrameIndex]:
    if len(view) < _SWSI_HEADER.size:
        raise MalformedContainer("truncated SWSI header")
    _, rows, cols, frame_rows, frame_cols, codec, count = _SWSI_HEADER.unpack_from(view, 0)
    if codec not in (0, 1):
        raise UnsupportedTransferSyntax(f"SWSI codec {codec} is not supported")
    syntax = TransferSyntax.UNCOMPRESSED_RGB8 if codec == 0 else TransferSyntax.BASELINE_JPEG
    table_end = _SWSI_HEADER.size + 8 * count
    if len(view) < table_end:
        raise MalformedContainer("truncated SWSI frame table")
    lengths = struct.unpack_from(f"<{count}Q", view, _SWSI_HEADER.size)
    if rows == 0 or cols == 0 or frame_rows == 0 or frame_cols == 0:
        raise MalformedContainer("SWSI dimensions must be positive")
    meta = WsiMetadata(
        total_rows=rows,
        total_cols=cols,
        frame_rows=frame_rows,
        frame_cols=frame_cols,
        frame_count=count,
        frames_per_row=math.ceil(cols / frame_cols),
        transfer_syntax=syntax,
    )
    offsets = []
    pos = table_end
    for length in lengths:
        offsets.append(pos)
        pos += length
    if pos != len(view):
        raise MalformedContainer(f"SWSI payload is {len(view) - table_end} bytes, frame table says {pos - table_end}")
    index = FrameIndex(tuple(offsets), tuple(lengths))
    _check_raw_lengths(meta, index)
    return meta, index


def _check_raw_lengths(meta: WsiMetadata, index: FrameIndex) -> None:
    if meta.transfer_syntax is TransferSyntax.UNCOMPRESSED_RGB8:
        want = meta.frame_rows * meta.frame_cols * 3
        if any(length != want for length in index.lengths):
            raise MalformedContainer(f"uncompressed frames must be exactly {want} bytes")


# DICOM ---------------------------------------------------------------------

_LONG_VRS = {b"OB", b"OD", b"OF", b"OL", b"OV", b"OW", b"SQ", b"SV", b"UC", b"UN", b"UR", b"UT", b"UV"}
_UNDEFINED = 0xFFFFFFFF
_ITEM = (0xFFFE, 0xE000)
_ITEM_DELIM = (0xFFFE, 0xE00D)
_SEQ_DELIM = (0xFFFE, 0xE0DD)
PIXEL_DATA = (0x7FE0, 0x0010)

# (group, element) -> keyword for the attributes we care about
DICOM_TAGS = {
    (0x0002, 0x0010): "TransferSyntaxUID",
    (0x0028, 0x0002): "SamplesPerPixel",
    (0x0028, 0x0004): "PhotometricInterpretation",
    (0x0028, 0x0008): "NumberOfFrames",
    (0x0028, 0x0010): "Rows",
    (0x0028, 0x0011): "Columns",
    (0x0028, 0x0100): "BitsAllocated",
    (0x0048, 0x0006): "TotalPixelMatrixColumns",
    (0x0048, 0x0007): "TotalPixelMatrixRows",
    (0x0020, 0x9311): "DimensionOrganizationType",
}


def _read_tag(view, pos):
    if pos + 8 > len(view):
        raise MalformedContainer("truncated DICOM element header")
    group, elem = struct.unpack_from("<HH", view, pos)
    return (group, elem)


def _read_header(view, pos):
    """Explicit VR LE element header -> (tag, vr, length, value_pos)."""
    tag = _read_tag(view, pos)
    if tag[0] == 0xFFFE:
        (length,) = struct.unpack_from("<I", view, pos + 4)
        return tag, None, length, pos + 8
    vr = bytes(view[pos + 4 : pos + 6])
    if vr in _LONG_VRS:
        if pos + 12 > len(view):
            raise MalformedContainer("truncated DICOM element header")
        (length,) = struct.unpack_from("<I", view, pos + 8)
        return tag, vr, length, pos + 12
    (length,) = struct.unpack_from("<H", view, pos + 6)
    return tag, vr, length, pos + 8


def _skip_undefined_sequence(view, pos):
    """Skip items of an undefined-length SQ starting at ``pos``; return position after the delimiter."""
    while True:
        tag, _, length, vpos = _read_header(view, pos)
        if tag == _SEQ_DELIM:
            return vpos
        if tag != _ITEM:
            raise MalformedContainer(f"unexpected tag {tag} inside sequence")
        if length != _UNDEFINED:
            pos = vpos + length
            continue
        pos = vpos
        while True:
            tag, vr, length, vpos = _read_header(view, pos)
            if tag == _ITEM_DELIM:
                pos = vpos
                break
            pos = _skip_undefined_sequence(view, vpos) if length == _UNDEFINED else vpos + length
        if pos > len(view):
            raise MalformedContainer("truncated sequence item")


def _decode_value(vr, raw: bytes):
    if vr == b"US":
        return struct.unpack("<H", raw[:2])[0]
    if vr == b"UL":
        return struct.unpack("<I", raw[:4])[0]
    return raw.decode("ascii", "replace").strip(" \x00")


def _parse_dicom(view: memoryview) -> tuple[WsiMetadata, FrameIndex]:
    attrs: dict = {}
    pos = 132
    pixel = None
    while pos < len(view):
        tag, vr, length, vpos = _read_header(view, pos)
        if tag == PIXEL_DATA:
            pixel = (length, vpos)
            break
        if length == _UNDEFINED:
            if vr not in (b"SQ", b"UN"):
                raise MalformedContainer(f"undefined length on non-sequence element {tag}")
            pos = _skip_undefined_sequence(view, vpos)
            continue
        if vpos + length > len(view):
            raise MalformedContainer(f"element {tag} runs past end of file")
        if tag in DICOM_TAGS:
            attrs[DICOM_TAGS[tag]] = _decode_value(vr, bytes(view[vpos : vpos + length]))
        if tag == (0x0002, 0x0010):
            # the dataset body must use an encoding we can walk
            uid = attrs["TransferSyntaxUID"]
            if uid not in (EXPLICIT_VR_LITTLE_ENDIAN, JPEG_BASELINE):
                raise UnsupportedTransferSyntax(f"transfer syntax {uid!r} is not supported")
        pos = vpos + length
    if pixel is None:
        raise MalformedContainer("no PixelData element")
    meta = metadata_from_attributes(attrs)
    length, vpos = pixel
    if meta.transfer_syntax is TransferSyntax.UNCOMPRESSED_RGB8:
        if length == _UNDEFINED:
            raise MalformedContainer("native pixel data cannot have undefined length")
        frame_len = meta.frame_rows * meta.frame_cols * 3
        if length < frame_len * meta.frame_count or vpos + length > len(view):
            raise MalformedContainer("native pixel data is truncated")
        offsets = tuple(vpos + i * frame_len for i in range(meta.frame_count))
        return meta, FrameIndex(offsets, (frame_len,) * meta.frame_count)
    if length != _UNDEFINED:
        raise MalformedContainer("encapsulated pixel data must have undefined length")
    return meta, _encapsulated_index(view, vpos, meta.frame_count)


def _encapsulated_index(view, pos, frame_count) -> FrameIndex:
    tag, _, bot_len, vpos = _read_header(view, pos)
    if tag != _ITEM:
        raise MalformedContainer("encapsulated pixel data must start with a basic offset table item")
    if vpos + bot_len > len(view):
        raise MalformedContainer("truncated basic offset table")
    bot = list(struct.unpack_from(f"<{bot_len // 4}I", view, vpos)) if bot_len else []
    first_item = vpos + bot_len
    pos = first_item
    fragments = []  # (item start relative to first fragment, value offset, length)
    while True:
        if pos + 8 > len(view):
            raise MalformedContainer("truncated encapsulated pixel data")
        tag, _, length, vpos = _read_header(view, pos)
        if tag == _SEQ_DELIM:
            break
        if tag != _ITEM or length == _UNDEFINED:
            raise MalformedContainer(f"bad fragment item {tag}")
        if vpos + length > len(view):
            raise MalformedContainer("truncated fragment")
        fragments.append((pos - first_item, vpos, length))
        pos = vpos + length
    if len(fragments) != frame_count:
        raise MalformedContainer(f"{len(fragments)} fragments for {frame_count} frames (one per frame required)")
    if bot:
        if len(bot) != frame_count:
            raise MalformedContainer("basic offset table size does not match NumberOfFrames")
        by_start = {start: (off, length) for start, off, length in fragments}
        try:
            extents = [by_start[b] for b in bot]
        except KeyError as exc:
            raise MalformedContainer(f"basic offset table entry {exc} does not point at a fragment") from None
    else:
        extents = [(off, length) for _, off, length in fragments]
    return FrameIndex(tuple(e[0] for e in extents), tuple(e[1] for e in extents))


def metadata_from_attributes(attrs: dict) -> WsiMetadata:
    """Validate the DICOM attribute subset (keyword -> value) and build metadata.

    Shared by the Part-10 parser and the DICOMweb metadata client.
    """
    required = [
        "Rows",
        "Columns",
        "TotalPixelMatrixRows",
        "TotalPixelMatrixColumns",
        "NumberOfFrames",
        "TransferSyntaxUID",
        "SamplesPerPixel",
        "BitsAllocated",
    ]
    missing = [k for k in required if k not in attrs]
    if missing:
        raise MalformedContainer(f"missing required attributes: {', '.join(missing)}")
    syntax = TransferSyntax.from_uid(str(attrs["TransferSyntaxUID"]))
    organization = str(attrs.get("DimensionOrganizationType", "")).strip()
    if organization != "TILED_FULL":
        raise UnsupportedOrganization(f"DimensionOrganizationType {organization or '<absent>'!r} is not supported")
    try:
        samples = int(attrs["SamplesPerPixel"])
        bits = int(attrs["BitsAllocated"])
        frame_count = int(str(attrs["NumberOfFrames"]).strip())
        rows, cols = int(attrs["TotalPixelMatrixRows"]), int(attrs["TotalPixelMatrixColumns"])
        frame_rows, frame_cols = int(attrs["Rows"]), int(attrs["Columns"])
    except (TypeError, ValueError) as exc:
        raise MalformedContainer(f"non-integer geometry attribute: {exc}") from None
    if samples != 3 or bits != 8:
        raise MalformedContainer(f"only 3-sample 8-bit images are supported (got {samples}x{bits})")
    photometric = str(attrs.get("PhotometricInterpretation", "RGB")).strip()
    if syntax is TransferSyntax.UNCOMPRESSED_RGB8 and photometric != "RGB":
        raise MalformedContainer(f"uncompressed pixel data must be RGB, got {photometric}")
    if min(rows, cols, frame_rows, frame_cols) <= 0:
        raise MalformedContainer("dimensions must be positive")
    return WsiMetadata(
        total_rows=rows,
        total_cols=cols,
        frame_rows=frame_rows,
        frame_cols=frame_cols,
        frame_count=frame_count,
        frames_per_row=math.ceil(cols / frame_cols),
        transfer_syntax=syntax,
    )


# --------------------------------------------------------------------------- frames


def decode_frame(meta: WsiMetadata, payload, frame_no: int = 0) -> np.ndarray:
    """Turn one frame payload into a (frame_rows, frame_cols, 3) uint8 array.

    Pixels outside the image (edge-frame padding) are forced to zero.
    """
    shape = (meta.frame_rows, meta.frame_cols, 3)
    if meta.transfer_syntax is TransferSyntax.UNCOMPRESSED_RGB8:
        if len(payload) != meta.frame_rows * meta.frame_cols * 3:
            raise DecodeFailure(f"frame {frame_no}: expected {np.prod(shape)} bytes, got {len(payload)}")
        frame = np.frombuffer(bytes(payload), dtype=np.uint8).reshape(shape)
    else:
        try:
            with Image.open(io.BytesIO(bytes(payload))) as img:
                if img.format != "JPEG":
                    raise DecodeFailure(f"frame {frame_no}: payload is {img.format}, not JPEG")
                frame = np.asarray(img.convert("RGB"))
        except DecodeFailure:
            raise
        except Exception as exc:
            raise DecodeFailure(f"frame {frame_no}: {exc}") from exc
        if frame.shape != shape:
            raise DecodeFailure(f"frame {frame_no}: decoded {frame.shape}, expected {shape}")
    x0, y0 = meta.frame_origin(frame_no)
    valid_w = min(meta.frame_cols, meta.total_cols - x0)
    valid_h = min(meta.frame_rows, meta.total_rows - y0)
    if valid_w < meta.frame_cols or valid_h < meta.frame_rows:
        frame = frame.copy()
        frame[valid_h:, :, :] = 0
        frame[:, valid_w:, :] = 0
    return frame


def read_frame(meta: WsiMetadata, index: FrameIndex, frame_no: int, container) -> np.ndarray:
    if not 0 <= frame_no < meta.frame_count:
        raise FrameOutOfRange(f"frame {frame_no} outside [0, {meta.frame_count})")
    off, length = index.extent(frame_no)
    if off + length > len(container):
        raise DecodeFailure(f"frame {frame_no} extends past the end of the container")
    return decode_frame(meta, memoryview(container)[off : off + length], frame_no)


def covered_frames(meta: WsiMetadata, spec: PatchSpec) -> list[int]:
    """Row-major frame numbers overlapped by an in-bounds patch."""
    spec.check_bounds(meta.total_rows, meta.total_cols)
    c0, c1 = spec.x_origin // meta.frame_cols, (spec.x_origin + spec.width - 1) // meta.frame_cols
    r0, r1 = spec.y_origin // meta.frame_rows, (spec.y_origin + spec.height - 1) // meta.frame_rows
    return [r * meta.frames_per_row + c for r in range(r0, r1 + 1) for c in range(c0, c1 + 1)]


def assemble_patch(meta: WsiMetadata, spec: PatchSpec, get_frame: Callable[[int], np.ndarray]) -> Patch:
    """Stitch a patch from whichever frames it overlaps, fetched via ``get_frame``."""
    out = np.empty((spec.height, spec.width, 3), dtype=np.uint8)
    x_end, y_end = spec.x_origin + spec.width, spec.y_origin + spec.height
    for frame_no in covered_frames(meta, spec):
        fx, fy = meta.frame_origin(frame_no)
        frame = get_frame(frame_no)
        ix0, iy0 = max(fx, spec.x_origin), max(fy, spec.y_origin)
        ix1, iy1 = min(fx + meta.frame_cols, x_end), min(fy + meta.frame_rows, y_end)
        out[iy0 - spec.y_origin : iy1 - spec.y_origin, ix0 - spec.x_origin : ix1 - spec.x_origin] = frame[
            iy0 - fy : iy1 - fy, ix0 - fx : ix1 - fx
        ]
    return Patch(spec, out)


def extract_patch(meta: WsiMetadata, index: FrameIndex, container, spec: PatchSpec) -> Patch:
    return assemble_patch(meta, spec, lambda n: read_frame(meta, index, n, container))


class TiledImage:
    """A parsed container plus its bytes; convenience wrapper over the functions above."""

    def __init__(self, container):
        self.container = container
        self.meta, self.index = parse_wsi(container)

    @classmethod
    def from_file(cls, path) -> "TiledImage":
        with open(path, "rb") as fh:
            return cls(fh.read())

    @property
    def shape(self) -> tuple[int, int]:
        return self.meta.total_rows, self.meta.total_cols

    def read_frame(self, frame_no: int) -> np.ndarray:
        return read_frame(self.meta, self.index, frame_no, self.container)

    def extract_patch(self, spec: PatchSpec) -> Patch:
        return extract_patch(self.meta, self.index, self.container, spec)

    def to_bitmap(self) -> np.ndarray:
        """Reassemble the full image (only sensible for small fixtures)."""
        spec = PatchSpec(0, 0, self.meta.total_cols, self.meta.total_rows)
        return self.extract_patch(spec).pixels
