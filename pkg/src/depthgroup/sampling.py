"""Positive-sample groups over a synthesized batch.

Pixel-level groups collect every occurrence of one source pixel across the
batch (its background appearances plus every visible pasted copy); members
of a group are exact geometric correspondences. Region-level groups tie
together coordinates that resolve to the same source region, whatever
context it appears in.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .synthesis import SyntheticSample, nearest_index

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SampleCoord:
    image_index: int
    row: int
    col: int


@dataclass
class GroupIndex:
    groups: list[list[SampleCoord]]
    kind: str  # "pixel" | "region"

    def total_coords(self) -> int:
        return sum(len(g) for g in self.groups)

    def row_groups(self) -> list[list[int]]:
        """Row indices under the flattened coordinate order (group-major)."""
        out, n = [], 0
        for g in self.groups:
            out.append(list(range(n, n + len(g))))
            n += len(g)
        return out

    def flatten(self) -> list[SampleCoord]:
        return [c for g in self.groups for c in g]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "groups": [
                [[c.image_index, c.row, c.col] for c in g] for g in self.groups
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroupIndex":
        return cls(
            kind=d["kind"],
            groups=[
                [SampleCoord(int(i), int(r), int(c)) for i, r, c in g] for g in d["groups"]
            ],
        )

    def at_stride(self, stride: int) -> "GroupIndex":
        """Coordinates divided by a consumer's feature-map stride.

        Sub-stride collisions inside a group are deduplicated, and groups
        that collapse below two members are dropped.
        """
        if stride < 1:
            raise ValidationError(f"stride must be >= 1, got {stride}")
        if stride == 1:
            return self
        out = []
        for g in self.groups:
            seen = set()
            reduced = []
            for c in g:
                key = (c.image_index, c.row // stride, c.col // stride)
                if key not in seen:
                    seen.add(key)
                    reduced.append(SampleCoord(*key))
            if len(reduced) >= 2:
                out.append(reduced)
        return GroupIndex(groups=out, kind=self.kind)

    def to_binary(self, path) -> None:
        """Flat little-endian table: u32 image_index, row, col, group_id."""
        rows = []
        for gid, g in enumerate(self.groups):
            for c in g:
                rows.append((c.image_index, c.row, c.col, gid))
        arr = np.array(rows, dtype="<u4").reshape(-1, 4)
        with open(path, "wb") as f:
            f.write(arr.tobytes())

    @classmethod
    def from_binary(cls, path, kind: str) -> "GroupIndex":
        raw = np.fromfile(path, dtype="<u4").reshape(-1, 4)
        groups: dict[int, list[SampleCoord]] = {}
        for i, r, c, gid in raw:
            groups.setdefault(int(gid), []).append(SampleCoord(int(i), int(r), int(c)))
        return cls(groups=[groups[k] for k in sorted(groups)], kind=kind)


def _background_images(sample: SyntheticSample) -> dict[int, list[int]]:
    by_frame: dict[int, list[int]] = {}
    for img_idx, frame_idx in enumerate(sample.background_indices):
        by_frame.setdefault(frame_idx, []).append(img_idx)
    return by_frame


def _forward_targets(affine: np.ndarray, col: int, row: int, h: int, w: int):
    """Target pixels whose inverse-mapped nearest source is exactly (row, col).

    With nearest-neighbor resampling a source pixel can own zero, one, or
    several target pixels; they all lie near the forward-mapped position,
    so a small window search suffices.
    """
    x = affine[0, 0] * col + affine[0, 1] * row + affine[0, 2]
    y = affine[1, 0] * col + affine[1, 1] * row + affine[1, 2]
    scale = np.sqrt(abs(affine[0, 0] * affine[1, 1] - affine[0, 1] * affine[1, 0]))
    rad = int(np.ceil(scale)) + 1
    cx, cy = int(np.floor(x + 0.5)), int(np.floor(y + 0.5))
    inv = np.linalg.inv(affine)
    out = []
    for tr in range(max(0, cy - rad), min(h, cy + rad + 1)):
        for tc in range(max(0, cx - rad), min(w, cx + rad + 1)):
            sx = inv[0, 0] * tc + inv[0, 1] * tr + inv[0, 2]
            sy = inv[1, 0] * tc + inv[1, 1] * tr + inv[1, 2]
            if int(np.floor(sx + 0.5)) == col and int(np.floor(sy + 0.5)) == row:
                out.append((tr, tc))
    return out


def pixel_groups(sample: SyntheticSample, budget: int, seed: int) -> GroupIndex:
    """Groups of exact pixel correspondences, at most ``budget`` coordinates.

    Source-pixel identities are drawn uniformly (seeded permutation over
    all source pixels); each identity contributes a group holding all of
    its visible occurrences, skipped when fewer than two exist.
    """
    if budget < 1:
        raise ValidationError("budget must be >= 1")
    if sample.num_images == 0:
        return GroupIndex(groups=[], kind="pixel")
    h, w = sample.depths[0].shape
    n_frames = len(sample.frame_ids)
    by_frame = _background_images(sample)

    # Invert every record once: source pixel -> visible target occurrences.
    pasted: dict[tuple[int, int, int], list[tuple[int, int, int]]] = {}
    frame_index_of = {fid: i for i, fid in enumerate(sample.frame_ids)}
    for rec in sample.records:
        if rec.visibility_mask.size == 0:
            continue
        src_frame = frame_index_of[rec.source_frame_id]
        inv = np.linalg.inv(rec.affine)
        r0, c0 = rec.visibility_offset
        rows, cols = np.nonzero(rec.visibility_mask)
        rows = rows + r0
        cols = cols + c0
        sx = nearest_index(inv[0, 0] * cols + inv[0, 1] * rows + inv[0, 2])
        sy = nearest_index(inv[1, 0] * cols + inv[1, 1] * rows + inv[1, 2])
        for tr, tc, sr, sc in zip(rows.tolist(), cols.tolist(), sy.tolist(), sx.tolist()):
            pasted.setdefault((src_frame, sr, sc), []).append((rec.image_index, tr, tc))

    # Background transforms are identity unless whole-image aug is on;
    # precompute the forward maps once per image in that case.
    identity_bg = all(np.allclose(t, np.eye(3)) for t in sample.background_transforms)

    rng = np.random.default_rng(seed)
    order = rng.permutation(n_frames * h * w)
    groups: list[list[SampleCoord]] = []
    total = 0
    for flat in order:
        if total >= budget:
            break
        f = int(flat // (h * w))
        rem = int(flat % (h * w))
        r, c = rem // w, rem % w
        occs: list[tuple[int, int, int]] = []
        for img_idx in by_frame.get(f, []):
            if identity_bg:
                cands = [(r, c)]
            else:
                cands = _forward_targets(sample.background_transforms[img_idx], c, r, h, w)
            for tr, tc in cands:
                if 0 <= tr < h and 0 <= tc < w and sample.instance_id_maps[img_idx][tr, tc] == 0:
                    occs.append((img_idx, tr, tc))
        occs.extend(pasted.get((f, r, c), []))
        if len(occs) < 2:
            continue
        if total + len(occs) > budget:
            break
        groups.append([SampleCoord(*o) for o in occs])
        total += len(occs)

    if not groups:
        logger.warning("no multi-occurrence pixel identities found; empty group index")
    return GroupIndex(groups=groups, kind="pixel")


def region_groups(sample: SyntheticSample, budget: int, seed: int) -> GroupIndex:
    """Groups of coordinates sharing one source region, across contexts.

    Coordinates are drawn uniformly over all pixels of the batch; each
    resolves through the instance/region id maps to a (frame, region) key.
    Singleton groups are dropped, so at most ``budget`` coordinates emerge.
    """
    if budget < 1:
        raise ValidationError("budget must be >= 1")
    if sample.num_images == 0:
        return GroupIndex(groups=[], kind="region")
    h, w = sample.depths[0].shape
    n = sample.num_images * h * w
    rng = np.random.default_rng(seed)
    take = min(budget, n)
    flat = rng.choice(n, size=take, replace=False) if take < n else rng.permutation(n)

    key_groups: dict[int, list[SampleCoord]] = {}
    key_order: list[int] = []
    for fidx in flat.tolist():
        img_idx = fidx // (h * w)
        rem = fidx % (h * w)
        r, c = rem // w, rem % w
        key = int(sample.region_id_maps[img_idx][r, c])
        if key < 0:
            continue  # padding introduced by whole-image augmentation
        if key not in key_groups:
            key_groups[key] = []
            key_order.append(key)
        key_groups[key].append(SampleCoord(img_idx, r, c))

    groups = [key_groups[k] for k in key_order if len(key_groups[k]) >= 2]
    return GroupIndex(groups=groups, kind="region")
