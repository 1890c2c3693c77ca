"""Camera geometry: depth unprojection and surface normal estimation.

Coordinate convention (fixed for the whole pipeline):
    +x -> right
    +y -> up      (so points below the camera's horizon have y < 0)
    +z -> forward (optical axis; depth is the z component)

Image rows grow downward, hence the sign flip between row offsets and y.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics. All units are pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValidationError(f"focal lengths must be positive, got ({self.fx}, {self.fy})")
        if not (0 <= self.cx < self.width) or not (0 <= self.cy < self.height):
            raise ValidationError(
                f"principal point ({self.cx}, {self.cy}) outside image {self.width}x{self.height}"
            )

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            width=int(d["width"]),
            height=int(d["height"]),
        )


@dataclass
class DepthFrame:
    """One input unit: RGB image, metric depth map, and intrinsics."""

    rgb: np.ndarray  # (H, W, 3) uint8
    depth: np.ndarray  # (H, W) float, meters, strictly positive
    intrinsics: CameraIntrinsics
    frame_id: str = ""

    def __post_init__(self):
        self.rgb = np.asarray(self.rgb)
        self.depth = np.asarray(self.depth, dtype=np.float64)
        h, w = self.depth.shape
        if self.rgb.shape[:2] != (h, w) or self.rgb.ndim != 3 or self.rgb.shape[2] != 3:
            raise ValidationError(
                f"rgb shape {self.rgb.shape} does not match depth shape {self.depth.shape}"
            )
        if (h, w) != (self.intrinsics.height, self.intrinsics.width):
            raise ValidationError(
                f"image size {(h, w)} does not match intrinsics "
                f"{(self.intrinsics.height, self.intrinsics.width)}"
            )
        bad = ~np.isfinite(self.depth) | (self.depth <= 0)
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise ValidationError(
                f"depth must be finite and > 0; offending pixel (row={r}, col={c}) "
                f"has value {self.depth[r, c]}"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape


@dataclass
class PointMap:
    """Per-pixel (x, y, z) camera-frame coordinates in meters."""

    points: np.ndarray  # (H, W, 3) float64


@dataclass
class NormalMap:
    """Per-pixel unit normals oriented toward the camera.

    ``valid`` is False where the normal is undefined (image border within
    the fit window, or a degenerate neighborhood).
    """

    normals: np.ndarray  # (H, W, 3) float64
    valid: np.ndarray = field(default=None)  # (H, W) bool

    def __post_init__(self):
        if self.valid is None:
            self.valid = np.ones(self.normals.shape[:2], dtype=bool)


def unproject(frame: DepthFrame) -> PointMap:
    """Lift every pixel to 3D using the pinhole model.

    For pixel (u, v) with depth d:
        x = (u - cx) * d / fx
        y = -(v - cy) * d / fy
        z = d
    """
    k = frame.intrinsics
    h, w = frame.shape
    us = np.arange(w, dtype=np.float64)
    vs = np.arange(h, dtype=np.float64)
    d = frame.depth
    x = (us[None, :] - k.cx) * d / k.fx
    y = -(vs[:, None] - k.cy) * d / k.fy
    return PointMap(points=np.stack([x, y, d], axis=-1))


def project(points: np.ndarray, intrinsics: CameraIntrinsics):
    """Inverse of :func:`unproject`: points (..., 3) -> (u, v, d)."""
    x, y, z = points[..., 0], points[..., 1], points[..., 2]
    u = intrinsics.cx + intrinsics.fx * x / z
    v = intrinsics.cy - intrinsics.fy * y / z
    return u, v, z


def _window_sums(a: np.ndarray, r: int) -> np.ndarray:
    """Sum of ``a`` over the (2r+1)^2 window, full windows only.

    Output has the same shape as ``a``; entries within ``r`` of the border
    are computed over truncated windows and should be treated as invalid
    by the caller.
    """
    # Summed-area table with a zero pad so the subtraction indices stay simple.
    pad = np.zeros((a.shape[0] + 1, a.shape[1] + 1), dtype=np.float64)
    np.cumsum(a, axis=0, out=pad[1:, 1:])
    np.cumsum(pad[1:, 1:], axis=1, out=pad[1:, 1:])
    h, w = a.shape
    y0 = np.clip(np.arange(h) - r, 0, h)
    y1 = np.clip(np.arange(h) + r + 1, 0, h)
    x0 = np.clip(np.arange(w) - r, 0, w)
    x1 = np.clip(np.arange(w) + r + 1, 0, w)
    out = (
        pad[np.ix_(y1, x1)] - pad[np.ix_(y0, x1)] - pad[np.ix_(y1, x0)] + pad[np.ix_(y0, x0)]
    )
    return out


def compute_normals(points: PointMap, window: int = 5, degenerate_tol: float = 1e-10) -> NormalMap:
    """Per-pixel least-squares plane fit over a square pixel neighborhood.

    The normal is the eigenvector of the neighborhood's point covariance
    with the smallest eigenvalue, oriented toward the camera
    (n . p <= 0 for the pixel's own point p). Border pixels (no full
    window) and degenerate neighborhoods (near-collinear points) are
    flagged invalid.
    """
    if window % 2 != 1 or window < 3:
        raise ValidationError(f"window must be an odd integer >= 3, got {window}")
    p = points.points
    h, w, _ = p.shape
    r = window // 2
    n_pix = float(window * window)

    # First and second moments of (x, y, z) over the window.
    sums = {}
    comps = {"x": p[..., 0], "y": p[..., 1], "z": p[..., 2]}
    for name, arr in comps.items():
        sums[name] = _window_sums(arr, r)
    for (na, a), (nb, b) in [
        (("x", comps["x"]), ("x", comps["x"])),
        (("x", comps["x"]), ("y", comps["y"])),
        (("x", comps["x"]), ("z", comps["z"])),
        (("y", comps["y"]), ("y", comps["y"])),
        (("y", comps["y"]), ("z", comps["z"])),
        (("z", comps["z"]), ("z", comps["z"])),
    ]:
        sums[na + nb] = _window_sums(a * b, r)

    mean = np.stack([sums["x"], sums["y"], sums["z"]], axis=-1) / n_pix
    cov = np.empty((h, w, 3, 3), dtype=np.float64)
    pairs = [("xx", 0, 0), ("xy", 0, 1), ("xz", 0, 2), ("yy", 1, 1), ("yz", 1, 2), ("zz", 2, 2)]
    for key, i, j in pairs:
        c = sums[key] / n_pix - mean[..., i] * mean[..., j]
        cov[..., i, j] = c
        cov[..., j, i] = c

    evals, evecs = np.linalg.eigh(cov.reshape(-1, 3, 3))
    normals = evecs[:, :, 0].reshape(h, w, 3)

    # Orient toward the camera: flip where n . p > 0.
    dot = np.einsum("hwc,hwc->hw", normals, p)
    normals = np.where((dot > 0)[..., None], -normals, normals)

    valid = np.zeros((h, w), dtype=bool)
    if h > 2 * r and w > 2 * r:
        valid[r : h - r, r : w - r] = True
    # Degenerate when the two smallest eigenvalues are both ~0 relative to
    # the spread of the neighborhood (collinear points: no unique plane).
    ev = evals.reshape(h, w, 3)
    scale = np.maximum(ev[..., 2], degenerate_tol)
    valid &= ev[..., 1] / scale > degenerate_tol

    normals[~valid] = 0.0
    return NormalMap(normals=normals, valid=valid)
