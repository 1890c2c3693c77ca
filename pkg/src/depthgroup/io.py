"""File formats: depth maps, label images, feature matrices, canonical JSON.

Depth on disk is either a 16-bit grayscale PNG with a JSON sidecar holding
the meters-per-unit scale, or a PFM float map. Label maps are 16-bit PNGs.
Feature / prototype files are a small binary format:

    magic b"DGF1" | u32 N | u32 d | N*d float32 row-major (little endian)
"""

from __future__ import annotations

import json
from pathlib import Path

import imageio.v3 as iio
import numpy as np

from .errors import ValidationError
from .geometry import CameraIntrinsics

FEATURE_MAGIC = b"DGF1"


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def load_intrinsics(path) -> CameraIntrinsics:
    return CameraIntrinsics.from_dict(read_json(path))


def save_intrinsics(path, intrinsics: CameraIntrinsics) -> None:
    write_json(path, intrinsics.to_dict())


def _sidecar_path(png_path) -> Path:
    p = Path(png_path)
    return p.with_suffix(p.suffix + ".json")


def save_depth_png(path, depth: np.ndarray, scale: float | None = None) -> None:
    """Write depth as 16-bit PNG plus a sidecar with the meters-per-unit scale.

    Quantization error is bounded by scale/2; pick ``scale`` accordingly or
    let it default to max(depth)/60000.
    """
    depth = np.asarray(depth, dtype=np.float64)
    finite = np.isfinite(depth)
    if scale is None:
        scale = float(depth[finite].max()) / 60000.0 if finite.any() else 1.0
        scale = scale or 1.0
    # Non-finite entries (e.g. padding) saturate to the 16-bit ceiling.
    q = np.round(np.where(finite, depth, 65535.0 * scale) / scale)
    if (q > 65535).any():
        raise ValidationError("depth does not fit in 16 bits at the given scale")
    iio.imwrite(Path(path), q.astype(np.uint16))
    write_json(_sidecar_path(path), {"scale": scale, "unit": "meters_per_unit"})


def load_depth_png(path) -> np.ndarray:
    raw = np.asarray(iio.imread(Path(path)))
    meta = read_json(_sidecar_path(path))
    return raw.astype(np.float64) * float(meta["scale"])


def save_pfm(path, data: np.ndarray) -> None:
    """Grayscale PFM, little endian, rows stored bottom-to-top."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim != 2:
        raise ValidationError("PFM writer handles single-channel maps only")
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{data.shape[1]} {data.shape[0]}\n".encode())
        f.write(b"-1.0\n")
        f.write(np.flipud(data).tobytes())


def load_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header != b"Pf":
            raise ValidationError(f"not a grayscale PFM file: header {header!r}")
        dims = f.readline().split()
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(f.read(4 * w * h), dtype=dtype).reshape(h, w)
    out = np.flipud(data).astype(np.float64)
    if abs(scale) not in (0.0, 1.0):
        out *= abs(scale)
    return out


def load_depth(path) -> np.ndarray:
    """Dispatch on extension: .pfm or 16-bit .png with sidecar."""
    p = Path(path)
    if p.suffix.lower() == ".pfm":
        return load_pfm(p)
    return load_depth_png(p)


def save_label_png(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() > 65535:
        raise ValidationError("label values must fit in uint16")
    iio.imwrite(Path(path), labels.astype(np.uint16))


def load_label_png(path) -> np.ndarray:
    return np.asarray(iio.imread(Path(path))).astype(np.int32)


def save_features(path, rows: np.ndarray) -> None:
    rows = np.asarray(rows, dtype=np.float32)
    if rows.ndim != 2:
        raise ValidationError(f"feature matrix must be 2D, got shape {rows.shape}")
    n, d = rows.shape
    with open(path, "wb") as f:
        f.write(FEATURE_MAGIC)
        f.write(np.array([n, d], dtype="<u4").tobytes())
        f.write(rows.astype("<f4").tobytes())


def load_features(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != FEATURE_MAGIC:
            raise ValidationError(f"bad feature file magic {magic!r}")
        n, d = np.frombuffer(f.read(8), dtype="<u4")
        data = np.frombuffer(f.read(4 * int(n) * int(d)), dtype="<f4")
    if data.size != int(n) * int(d):
        raise ValidationError("feature file truncated")
    return data.reshape(int(n), int(d)).astype(np.float64)
