"""File formats: binary flow containers and grayscale image sequences.

Flow container layout (little-endian): 4-byte magic ``PIEH``, width and
height as int32, then height*width interleaved (u, v) float32 pairs in
row-major order. Invalid pixels are stored as quiet-NaN pairs and come
back as mask-false on read; valid pixels round-trip bit-exactly. This is
the widely used interleaved-float flow layout, so third-party viewers can
open the files; NaN-as-invalid is this package's documented extension.

Image ingest is restricted to lossless single-channel rasters (8- or
16-bit PNG/PGM/TIFF/BMP); intensities are normalized to [0, 1] by the
full range of the stored bit depth.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FlowFormatError, SequenceError
from .flow import FlowField
from .image_core import ImageFrame

FLOW_MAGIC = b"PIEH"
MAX_FLOW_DIM = 1 << 20

IMAGE_SUFFIXES = (".png", ".pgm", ".tif", ".tiff", ".bmp")
LOSSY_SUFFIXES = (".jpg", ".jpeg", ".webp")


def write_flow(flow: FlowField, path) -> None:
    """Serialize a flow field; invalid pixels become quiet-NaN pairs."""
    path = Path(path)
    h, w = flow.shape
    data = np.empty((h, w, 2), dtype="<f4")
    data[:, :, 0] = flow.u
    data[:, :, 1] = flow.v
    data[~flow.valid] = np.nan
    with open(path, "wb") as fh:
        fh.write(FLOW_MAGIC)
        fh.write(struct.pack("<ii", w, h))
        fh.write(data.tobytes())


def read_flow(path) -> FlowField:
    """Load a flow field; NaN or non-finite pairs come back mask-false."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 12:
        raise FlowFormatError(f"{path}: file too short for a flow header")
    if raw[:4] != FLOW_MAGIC:
        raise FlowFormatError(
            f"{path}: bad magic {raw[:4]!r}, expected {FLOW_MAGIC!r}"
        )
    w, h = struct.unpack("<ii", raw[4:12])
    if w < 1 or h < 1 or w > MAX_FLOW_DIM or h > MAX_FLOW_DIM:
        raise FlowFormatError(f"{path}: unreasonable dimensions {w}x{h}")
    expected = 12 + 8 * w * h
    if len(raw) != expected:
        raise FlowFormatError(
            f"{path}: payload is {len(raw)} bytes, expected {expected} for {w}x{h}"
        )
    data = np.frombuffer(raw, dtype="<f4", offset=12).reshape(h, w, 2)
    u = data[:, :, 0].copy()
    v = data[:, :, 1].copy()
    valid = np.isfinite(u) & np.isfinite(v)
    u[~valid] = 0.0
    v[~valid] = 0.0
    return FlowField(u=u, v=v, valid=valid)


def _load_frame(path: Path) -> np.ndarray:
    if path.suffix.lower() in LOSSY_SUFFIXES:
        raise SequenceError(
            f"{path}: lossy image formats are rejected; use a lossless raster"
        )
    try:
        img = Image.open(path)
        img.load()
    except Exception as exc:
        raise SequenceError(f"{path}: unreadable image ({exc})") from exc
    if img.mode == "L":
        return np.asarray(img, dtype=np.float64) / 255.0
    if img.mode in ("I;16", "I;16B", "I;16L"):
        return np.asarray(img, dtype=np.float64) / 65535.0
    if img.mode == "I":
        arr = np.asarray(img, dtype=np.float64)
        if arr.min() < 0 or arr.max() > 65535:
            raise SequenceError(
                f"{path}: integer image values outside the 16-bit range"
            )
        return arr / 65535.0
    raise SequenceError(
        f"{path}: mode {img.mode!r} is not single-channel grayscale"
    )


def list_sequence_files(locator) -> list[Path]:
    """Resolve a directory or a text file-list into ordered image paths."""
    locator = Path(locator)
    if locator.is_dir():
        files = sorted(
            p for p in locator.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES
        )
    elif locator.is_file() and locator.suffix.lower() == ".txt":
        files = []
        base = locator.parent
        for line in locator.read_text().splitlines():
            line = line.strip()
            if not line:
                continue
            p = Path(line)
            files.append(p if p.is_absolute() else base / p)
    else:
        raise SequenceError(
            f"{locator}: expected a directory of images or a .txt file list"
        )
    if not files:
        raise SequenceError(f"{locator}: no image files found")
    return files


def read_sequence(locator) -> list[ImageFrame]:
    """Load an ordered grayscale sequence; frames must agree in size and
    there must be at least two of them."""
    files = list_sequence_files(locator)
    if len(files) < 2:
        raise SequenceError(
            f"{locator}: at least two frames are required, found {len(files)}"
        )
    frames = []
    shape = None
    for path in files:
        arr = _load_frame(path)
        if shape is None:
            shape = arr.shape
        elif arr.shape != shape:
            raise SequenceError(
                f"{path}: dimensions {arr.shape[1]}x{arr.shape[0]} do not match "
                f"the first frame's {shape[1]}x{shape[0]}"
            )
        frames.append(ImageFrame(arr))
    return frames


def write_frames(frames, directory, bit_depth: int = 16, prefix: str = "frame") -> list[Path]:
    """Write frames as lossless grayscale PNGs, zero-padded indices."""
    if bit_depth not in (8, 16):
        raise ValueError(f"bit_depth must be 8 or 16, got {bit_depth}")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, frame in enumerate(frames):
        path = directory / f"{prefix}_{i:04d}.png"
        if bit_depth == 8:
            data = np.round(frame.values * 255.0).astype(np.uint8)
            Image.fromarray(data, mode="L").save(path)
        else:
            data = np.round(frame.values * 65535.0).astype(np.uint16)
            Image.fromarray(data).save(path)
        paths.append(path)
    return paths


def write_report(rows, path_prefix) -> tuple[Path, Path]:
    """Emit a benchmark table as delimited text and as JSON.

    ``rows`` are BenchmarkRow objects. Returns the (csv_path, json_path)
    pair, both derived from ``path_prefix``.
    """
    prefix = Path(path_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    csv_path = prefix.with_suffix(".csv")
    json_path = prefix.with_suffix(".json")

    columns = [
        "algorithm",
        "aae_deg",
        "sad_deg",
        "epe_px",
        "outlier_fraction",
        "runtime_s",
        "pixel_count",
        "frame_interval",
        "error",
    ]
    lines = [",".join(columns)]
    payload = []
    for row in rows:
        if row.report is not None:
            rec = {"algorithm": row.name, **row.report.as_dict(), "error": None}
        else:
            rec = {"algorithm": row.name, "error": row.error}
        payload.append(rec)
        cells = []
        for col in columns:
            value = rec.get(col)
            if value is None:
                cells.append("")
            elif isinstance(value, float):
                cells.append(f"{value:.6g}")
            else:
                cells.append(str(value))
        lines.append(",".join(cells))
    csv_path.write_text("\n".join(lines) + "\n")
    json_path.write_text(json.dumps({"rows": payload}, indent=2) + "\n")
    return csv_path, json_path
