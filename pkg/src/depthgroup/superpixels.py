"""SLIC superpixels and per-superpixel aggregation of 3D attributes.

The SLIC assignment itself (CIELAB color + pixel coordinate k-means) comes
from scikit-image; the connectivity pass on top is ours so that orphan
fragments get merged into their most color-similar neighbor and labels end
up contiguous, 4-connected, and deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from skimage import measure
from skimage.color import rgb2lab
from skimage.segmentation import slic as _skimage_slic

from .errors import ValidationError
from .geometry import DepthFrame, NormalMap, PointMap


@dataclass
class SuperpixelMap:
    labels: np.ndarray  # (H, W) int32, contiguous 0..count-1
    count: int


@dataclass
class SuperpixelNode:
    """Mean 3D attributes of one superpixel."""

    id: int
    centroid3d: np.ndarray  # (3,) mean (x, y, z) over member pixels
    n_y: float  # mean upward normal component over defined-normal pixels
    pixel_count: int
    mean_rgb: np.ndarray  # (3,) float
    n_y_defined: bool = True  # False when no member pixel had a defined normal


def slic_segment(
    frame: DepthFrame,
    target_count: int,
    compactness: float = 10.0,
    iterations: int = 10,
    orphan_fraction: float = 0.25,
) -> SuperpixelMap:
    """Segment the RGB image into roughly ``target_count`` superpixels.

    Connectivity is enforced afterwards: connected components smaller than
    ``orphan_fraction`` of the mean cell size are merged into the adjacent
    component with the closest mean LAB color.
    """
    if target_count < 1:
        raise ValidationError(f"target_count must be >= 1, got {target_count}")
    if compactness <= 0:
        raise ValidationError(f"compactness must be > 0, got {compactness}")
    h, w = frame.shape
    if target_count > h * w:
        raise ValidationError(f"target_count {target_count} exceeds pixel count {h * w}")

    lab = rgb2lab(frame.rgb)
    if target_count == 1:
        labels = np.zeros((h, w), dtype=np.int32)
        return SuperpixelMap(labels=labels, count=1)

    raw = _skimage_slic(
        frame.rgb,
        n_segments=target_count,
        compactness=compactness,
        max_num_iter=iterations,
        convert2lab=True,
        enforce_connectivity=False,
        start_label=0,
        channel_axis=-1,
    )
    labels = _enforce_connectivity(raw, lab, target_count, orphan_fraction)
    return SuperpixelMap(labels=labels, count=int(labels.max()) + 1)


def _enforce_connectivity(
    raw: np.ndarray, lab: np.ndarray, target_count: int, orphan_fraction: float
) -> np.ndarray:
    h, w = raw.shape
    comps = measure.label(raw, connectivity=1, background=-1)
    comps -= comps.min()  # measure.label starts at 1 when no background matched
    n = int(comps.max()) + 1

    flat = comps.ravel()
    sizes = np.bincount(flat, minlength=n).astype(np.int64)
    lab_flat = lab.reshape(-1, 3)
    color_sums = np.zeros((n, 3), dtype=np.float64)
    for c in range(3):
        color_sums[:, c] = np.bincount(flat, weights=lab_flat[:, c], minlength=n)

    # 4-adjacency between components.
    pairs = set()
    a, b = comps[:, :-1], comps[:, 1:]
    diff = a != b
    pairs.update(zip(a[diff].tolist(), b[diff].tolist()))
    a, b = comps[:-1, :], comps[1:, :]
    diff = a != b
    pairs.update(zip(a[diff].tolist(), b[diff].tolist()))
    neighbors: list[set[int]] = [set() for _ in range(n)]
    for i, j in pairs:
        neighbors[i].add(j)
        neighbors[j].add(i)

    threshold = orphan_fraction * (h * w / float(target_count))
    parent = np.arange(n)

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def merge_into_best_neighbor(comp: int) -> bool:
        root = find(comp)
        cand = {find(nb) for nb in neighbors[root]} - {root}
        if not cand:
            return False
        my_color = color_sums[root] / sizes[root]
        best, best_d = -1, np.inf
        for other in sorted(cand):
            oc = color_sums[other] / sizes[other]
            d = float(np.sum((my_color - oc) ** 2))
            if d < best_d - 1e-12 or (abs(d - best_d) <= 1e-12 and other < best):
                best, best_d = other, d
        parent[root] = best
        sizes[best] += sizes[root]
        color_sums[best] += color_sums[root]
        neighbors[best] |= neighbors[root]
        return True

    # Merge orphans smallest-first so chains of tiny fragments collapse
    # deterministically.
    alive = n
    order = sorted(range(n), key=lambda i: (sizes[i], i))
    for comp in order:
        if find(comp) != comp or sizes[comp] >= threshold:
            continue
        if merge_into_best_neighbor(comp):
            alive -= 1

    # Disconnected assignments can still leave a surplus of mid-sized
    # fragments; keep absorbing the smallest until the count contract holds.
    limit = int(np.floor(target_count * 1.2))
    while alive > max(limit, 1):
        live = [i for i in range(n) if find(i) == i]
        live.sort(key=lambda i: (sizes[i], i))
        merged_any = False
        for comp in live:
            if alive <= max(limit, 1):
                break
            if merge_into_best_neighbor(comp):
                alive -= 1
                merged_any = True
        if not merged_any:
            break

    roots = np.array([find(i) for i in range(n)])
    # Contiguous relabeling in order of first appearance (row-major scan).
    flat_m = roots[comps].ravel()
    uniq, inv = np.unique(flat_m, return_inverse=True)
    first_pos = np.full(uniq.size, flat_m.size, dtype=np.int64)
    np.minimum.at(first_pos, inv, np.arange(flat_m.size))
    order = np.argsort(first_pos, kind="stable")
    rank = np.empty(uniq.size, dtype=np.int64)
    rank[order] = np.arange(uniq.size)
    return rank[inv].reshape(h, w).astype(np.int32)


def nodes_to_dicts(nodes: list[SuperpixelNode]) -> list[dict]:
    return [
        {
            "id": n.id,
            "centroid3d": [float(v) for v in n.centroid3d],
            "n_y": n.n_y,
            "n_y_defined": n.n_y_defined,
            "pixel_count": n.pixel_count,
            "mean_rgb": [float(v) for v in n.mean_rgb],
        }
        for n in nodes
    ]


def nodes_from_dicts(records: list[dict]) -> list[SuperpixelNode]:
    return [
        SuperpixelNode(
            id=int(r["id"]),
            centroid3d=np.array(r["centroid3d"], dtype=np.float64),
            n_y=float(r["n_y"]),
            pixel_count=int(r["pixel_count"]),
            mean_rgb=np.array(r["mean_rgb"], dtype=np.float64),
            n_y_defined=bool(r["n_y_defined"]),
        )
        for r in records
    ]


def aggregate(
    spmap: SuperpixelMap, points: PointMap, normals: NormalMap, rgb: np.ndarray
) -> list[SuperpixelNode]:
    """Arithmetic means of 3D position, upward normal, and color per superpixel.

    Pixels with undefined normals are excluded from the n_y mean only; a
    superpixel with no defined normal gets n_y = 0 and is flagged.
    """
    labels = spmap.labels
    if points.points.shape[:2] != labels.shape or normals.normals.shape[:2] != labels.shape:
        raise ValidationError("superpixel map, points, and normals must share dimensions")
    n = spmap.count
    flat = labels.ravel()
    counts = np.bincount(flat, minlength=n)
    if (counts == 0).any():
        raise ValidationError("superpixel labels are not contiguous")

    pts = points.points.reshape(-1, 3)
    cent = np.stack(
        [np.bincount(flat, weights=pts[:, c], minlength=n) for c in range(3)], axis=1
    ) / counts[:, None]

    rgbf = rgb.reshape(-1, 3).astype(np.float64)
    mean_rgb = np.stack(
        [np.bincount(flat, weights=rgbf[:, c], minlength=n) for c in range(3)], axis=1
    ) / counts[:, None]

    valid = normals.valid.ravel()
    ny = normals.normals[..., 1].ravel()
    ny_counts = np.bincount(flat[valid], minlength=n)
    ny_sums = np.bincount(flat[valid], weights=ny[valid], minlength=n)
    with np.errstate(invalid="ignore"):
        ny_mean = np.where(ny_counts > 0, ny_sums / np.maximum(ny_counts, 1), 0.0)

    return [
        SuperpixelNode(
            id=i,
            centroid3d=cent[i],
            n_y=float(ny_mean[i]),
            pixel_count=int(counts[i]),
            mean_rgb=mean_rgb[i],
            n_y_defined=bool(ny_counts[i] > 0),
        )
        for i in range(n)
    ]
