"""Two-round copy-paste training sample synthesis with depth-aware occlusion.

Regions above the size threshold are pooled from the input frames and
pasted onto fresh copies of those frames in two rounds (a light round and
a dense round). Pasting is depth-aware: only pasted pixels strictly nearer
to the camera than the background survive. Every geometric transform is a
recorded 3x3 affine so that pixel correspondences are exactly recoverable;
target pixels are mapped through the inverse affine with nearest-neighbor
rounding (floor(v + 0.5)) and no mask antialiasing.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .community import RegionMap
from .errors import ValidationError
from .geometry import DepthFrame

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PasteConfig:
    num_images: int = 8  # M source frames per sample
    min_height: int = 16  # region bbox height threshold (inclusive)
    min_width: int = 6  # region bbox width threshold (inclusive)
    height_threshold: int = 16  # h_t: vertical paste jitter around the anchor
    expectations: tuple[float, float] = (1.0, 2.0)  # pastes per region per round
    scale_range: tuple[float, float] = (0.5, 2.0)  # log-uniform resize range
    flip_prob: float = 0.5
    jitter_strength: float = 0.4  # brightness/contrast/saturation half-range
    blur_prob: float = 0.5
    blur_sigma: tuple[float, float] = (0.1, 1.0)
    whole_image_aug: bool = False  # optional full-image scale/flip after pasting

    def __post_init__(self):
        if self.num_images < 1:
            raise ValidationError("num_images must be >= 1")
        if len(self.expectations) != 2:
            raise ValidationError("expectations must hold one value per round")


@dataclass
class RegionPatch:
    """One poolable region: pixel data cropped to its bbox."""

    frame_index: int
    frame_id: str
    region_id: int
    rgb: np.ndarray  # (h, w, 3) uint8
    depth: np.ndarray  # (h, w) float64
    mask: np.ndarray  # (h, w) bool
    bbox: tuple[int, int, int, int]  # (row0, col0, row1, col1) in the source frame
    position_height: int  # anchor: original row of the region's top edge


@dataclass
class TransformRecord:
    """Provenance of one paste: source pixels -> target pixels via ``affine``."""

    source_frame_id: str
    region_id: int
    instance_id: int  # id in the target image's instance map
    image_index: int
    affine: np.ndarray  # 3x3, maps (col, row, 1) source -> target
    scale: float  # resize factor; pasted depth = source depth / scale
    visibility_offset: tuple[int, int]  # (row0, col0) of the stored mask
    visibility_mask: np.ndarray  # cropped bool array of surviving pixels

    def full_visibility(self, shape: tuple[int, int]) -> np.ndarray:
        out = np.zeros(shape, dtype=bool)
        r0, c0 = self.visibility_offset
        h, w = self.visibility_mask.shape
        out[r0 : r0 + h, c0 : c0 + w] = self.visibility_mask
        return out


@dataclass
class SyntheticSample:
    """2M composited images with exact correspondence bookkeeping."""

    images: list[np.ndarray]
    depths: list[np.ndarray]
    region_id_maps: list[np.ndarray]  # indices into region_keys
    instance_id_maps: list[np.ndarray]  # 0 = background, k = k-th paste
    records: list[TransformRecord]
    background_indices: list[int]  # frame index behind each image
    background_transforms: list[np.ndarray]  # per-image 3x3 affine
    frame_ids: list[str]
    region_keys: list[tuple[str, int]]  # global namespace over all frames' regions
    seed: int = 0

    @property
    def num_images(self) -> int:
        return len(self.images)

    def records_for_image(self, image_index: int) -> list[TransformRecord]:
        return [r for r in self.records if r.image_index == image_index]


def nearest_index(v: np.ndarray) -> np.ndarray:
    """The package-wide rounding rule: floor(v + 0.5)."""
    return np.floor(np.asarray(v) + 0.5).astype(np.int64)


def extract_regions(
    frames: list[DepthFrame], region_maps: list[RegionMap], cfg: PasteConfig
) -> list[RegionPatch]:
    """Pool every region whose bbox is at least min_height x min_width."""
    if len(frames) != len(region_maps):
        raise ValidationError("one region map per frame required")
    pool = []
    for fi, (frame, rmap) in enumerate(zip(frames, region_maps)):
        for region in rmap.regions:
            r0, c0, r1, c1 = region.bbox
            if (r1 - r0) < cfg.min_height or (c1 - c0) < cfg.min_width:
                continue
            mask = rmap.labels[r0:r1, c0:c1] == region.id
            pool.append(
                RegionPatch(
                    frame_index=fi,
                    frame_id=frame.frame_id,
                    region_id=region.id,
                    rgb=frame.rgb[r0:r1, c0:c1].copy(),
                    depth=frame.depth[r0:r1, c0:c1].copy(),
                    mask=mask,
                    bbox=region.bbox,
                    position_height=region.anchor_height,
                )
            )
    if not pool:
        logger.warning("region pool is empty; synthesis will produce zero pastes")
    return pool


def paste_affine(bbox, scale: float, flip: bool, x: int, y: int) -> np.ndarray:
    """Compose translate-to-origin, scale, optional horizontal flip, and
    translation to the paste position into one matrix (col, row, 1)."""
    r0, c0, r1, c1 = bbox
    w = c1 - c0
    w_s = max(1, int(round(w * scale)))
    to_origin = np.array([[1, 0, -c0], [0, 1, -r0], [0, 0, 1]], dtype=np.float64)
    scaling = np.array([[scale, 0, 0], [0, scale, 0], [0, 0, 1]], dtype=np.float64)
    flip_m = np.array([[-1, 0, w_s - 1], [0, 1, 0], [0, 0, 1]], dtype=np.float64)
    place = np.array([[1, 0, x], [0, 1, y], [0, 0, 1]], dtype=np.float64)
    m = place @ (flip_m if flip else np.eye(3)) @ scaling @ to_origin
    return m


def _affine_scale(affine: np.ndarray) -> float:
    det = affine[0, 0] * affine[1, 1] - affine[0, 1] * affine[1, 0]
    return float(np.sqrt(abs(det)))


def depthmix_composite(
    target_rgb: np.ndarray,
    target_depth: np.ndarray,
    region: RegionPatch,
    affine: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Paste a region with depth-aware occlusion.

    A target pixel survives iff its inverse-mapped source pixel lies on the
    region mask and the rescaled source depth is strictly smaller than the
    target depth there. Returns new (rgb, depth, visibility) arrays; the
    visibility mask is full target size.
    """
    hh, ww = target_depth.shape
    scale = _affine_scale(affine)
    r0, c0, r1, c1 = region.bbox
    corners = np.array(
        [[c0, r0, 1], [c1 - 1, r0, 1], [c0, r1 - 1, 1], [c1 - 1, r1 - 1, 1]], dtype=np.float64
    )
    mapped = corners @ affine.T
    tx0 = max(0, int(np.floor(mapped[:, 0].min())) - 1)
    tx1 = min(ww - 1, int(np.ceil(mapped[:, 0].max())) + 1)
    ty0 = max(0, int(np.floor(mapped[:, 1].min())) - 1)
    ty1 = min(hh - 1, int(np.ceil(mapped[:, 1].max())) + 1)

    rgb_out = target_rgb.copy()
    depth_out = target_depth.copy()
    vis = np.zeros((hh, ww), dtype=bool)
    if tx1 < tx0 or ty1 < ty0:
        return rgb_out, depth_out, vis

    cols, rows = np.meshgrid(np.arange(tx0, tx1 + 1), np.arange(ty0, ty1 + 1))
    inv = np.linalg.inv(affine)
    src_x = inv[0, 0] * cols + inv[0, 1] * rows + inv[0, 2]
    src_y = inv[1, 0] * cols + inv[1, 1] * rows + inv[1, 2]
    sc = nearest_index(src_x) - c0
    sr = nearest_index(src_y) - r0

    h, w = region.mask.shape
    inside = (sr >= 0) & (sr < h) & (sc >= 0) & (sc < w)
    sr_c = np.clip(sr, 0, h - 1)
    sc_c = np.clip(sc, 0, w - 1)
    on_mask = inside & region.mask[sr_c, sc_c]
    pasted_depth = region.depth[sr_c, sc_c] / scale
    visible = on_mask & (pasted_depth < depth_out[rows, cols])

    vr, vc = rows[visible], cols[visible]
    vis[vr, vc] = True
    rgb_out[vr, vc] = region.rgb[sr_c[visible], sc_c[visible]]
    depth_out[vr, vc] = pasted_depth[visible]
    return rgb_out, depth_out, vis


def _color_jitter(rgb: np.ndarray, factors: tuple[float, float, float]) -> np.ndarray:
    """Brightness, contrast, saturation multipliers applied in that order."""
    b, c, s = factors
    out = rgb.astype(np.float64) * b
    mean = out.mean()
    out = (out - mean) * c + mean
    gray = out.mean(axis=2, keepdims=True)
    out = gray + (out - gray) * s
    return np.clip(out, 0, 255).astype(np.uint8)


def _crop_mask(vis: np.ndarray) -> tuple[tuple[int, int], np.ndarray]:
    if not vis.any():
        return (0, 0), np.zeros((0, 0), dtype=bool)
    rows = np.any(vis, axis=1)
    cols = np.any(vis, axis=0)
    r0, r1 = np.where(rows)[0][[0, -1]]
    c0, c1 = np.where(cols)[0][[0, -1]]
    return (int(r0), int(c0)), vis[r0 : r1 + 1, c0 : c1 + 1].copy()


def synthesize(
    frames: list[DepthFrame],
    region_maps: list[RegionMap],
    cfg: PasteConfig,
    seed: int,
) -> SyntheticSample:
    """Generate the 2M-image training sample for one batch of M frames.

    Round r pastes floor(e_r * |pool| / M) regions, sampled with
    replacement, onto a fresh copy of every frame. Pasted depth is divided
    by the resize factor (bigger means nearer). The paste row is drawn
    within +-height_threshold of the region's scale-adjusted anchor row.
    """
    if seed is None:
        raise ValidationError("a seed is mandatory for reproducible synthesis")
    m = len(frames)
    if m != cfg.num_images:
        raise ValidationError(f"expected {cfg.num_images} frames, got {m}")
    pool = extract_regions(frames, region_maps, cfg)

    # Global region namespace: background pixels and pasted pixels share it.
    region_keys: list[tuple[str, int]] = []
    key_offset = []
    for frame, rmap in zip(frames, region_maps):
        key_offset.append(len(region_keys))
        region_keys.extend((frame.frame_id, r.id) for r in rmap.regions)

    rng = np.random.default_rng(seed)
    images, depths, rid_maps, iid_maps = [], [], [], []
    records: list[TransformRecord] = []
    bg_indices, bg_transforms = [], []

    for round_idx in range(2):
        e = cfg.expectations[round_idx]
        n_pastes = int(e * len(pool) / m) if pool else 0
        for fi, frame in enumerate(frames):
            img = frame.rgb.copy()
            dep = frame.depth.copy()
            rid = (region_maps[fi].labels + key_offset[fi]).astype(np.int32)
            iid = np.zeros(frame.shape, dtype=np.int32)
            image_index = round_idx * m + fi

            picks = rng.integers(0, len(pool), size=n_pastes) if n_pastes else []
            image_records: list[TransformRecord] = []
            for paste_no, pick in enumerate(picks, start=1):
                region = pool[int(pick)]
                lo, hi = np.log(cfg.scale_range[0]), np.log(cfg.scale_range[1])
                scale = float(np.exp(rng.uniform(lo, hi)))
                flip = bool(rng.random() < cfg.flip_prob)
                j = cfg.jitter_strength
                jitter = tuple(rng.uniform(1.0 - j, 1.0 + j, size=3))
                blur_on = bool(rng.random() < cfg.blur_prob)
                sigma = float(rng.uniform(*cfg.blur_sigma))

                pos_h = int(round(region.position_height * scale))
                x = int(rng.integers(0, frame.shape[1]))
                y = int(rng.integers(pos_h - cfg.height_threshold, pos_h + cfg.height_threshold + 1))

                patch = region
                if j > 0 or blur_on:
                    rgb_aug = _color_jitter(region.rgb, jitter) if j > 0 else region.rgb
                    if blur_on:
                        rgb_aug = np.stack(
                            [gaussian_filter(rgb_aug[..., ch].astype(np.float64), sigma) for ch in range(3)],
                            axis=-1,
                        )
                        rgb_aug = np.clip(rgb_aug, 0, 255).astype(np.uint8)
                    patch = RegionPatch(
                        frame_index=region.frame_index,
                        frame_id=region.frame_id,
                        region_id=region.region_id,
                        rgb=rgb_aug,
                        depth=region.depth,
                        mask=region.mask,
                        bbox=region.bbox,
                        position_height=region.position_height,
                    )

                affine = paste_affine(region.bbox, scale, flip, x, y)
                img, dep, vis = depthmix_composite(img, dep, patch, affine)
                iid[vis] = paste_no
                rid[vis] = key_offset[region.frame_index] + region.region_id
                image_records.append(
                    TransformRecord(
                        source_frame_id=region.frame_id,
                        region_id=region.region_id,
                        instance_id=paste_no,
                        image_index=image_index,
                        affine=affine,
                        scale=scale,
                        visibility_offset=(0, 0),
                        visibility_mask=np.zeros((0, 0), dtype=bool),
                    )
                )

            bg_affine = np.eye(3)
            if cfg.whole_image_aug:
                img, dep, rid, iid, bg_affine = _whole_image_aug(rng, cfg, img, dep, rid, iid)
                for rec in image_records:
                    rec.affine = bg_affine @ rec.affine

            # Finalize visibility against the fully composited image so that
            # later pastes occlude earlier ones.
            for rec in image_records:
                rec.visibility_offset, rec.visibility_mask = _crop_mask(iid == rec.instance_id)
            records.extend(image_records)
            images.append(img)
            depths.append(dep)
            rid_maps.append(rid)
            iid_maps.append(iid)
            bg_indices.append(fi)
            bg_transforms.append(bg_affine)

    return SyntheticSample(
        images=images,
        depths=depths,
        region_id_maps=rid_maps,
        instance_id_maps=iid_maps,
        records=records,
        background_indices=bg_indices,
        background_transforms=bg_transforms,
        frame_ids=[f.frame_id for f in frames],
        region_keys=region_keys,
        seed=seed,
    )


def save_sample(directory, sample: SyntheticSample) -> None:
    """Persist one sample: PNG images, 16-bit depth + scale sidecars,
    16-bit id maps (region ids shifted by +1 so -1 fits), record JSON."""
    from pathlib import Path

    from . import io as dio

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    import imageio.v3 as iio

    artifacts = {"images": [], "depths": [], "region_ids": [], "instance_ids": []}
    for i in range(sample.num_images):
        name = f"image_{i:03d}.png"
        iio.imwrite(directory / name, sample.images[i])
        artifacts["images"].append(name)
        name = f"depth_{i:03d}.png"
        dio.save_depth_png(directory / name, sample.depths[i])
        artifacts["depths"].append(name)
        name = f"region_id_{i:03d}.png"
        dio.save_label_png(directory / name, sample.region_id_maps[i].astype(np.int64) + 1)
        artifacts["region_ids"].append(name)
        name = f"instance_id_{i:03d}.png"
        dio.save_label_png(directory / name, sample.instance_id_maps[i])
        artifacts["instance_ids"].append(name)

    records = [
        {
            "source_frame_id": r.source_frame_id,
            "region_id": r.region_id,
            "instance_id": r.instance_id,
            "image_index": r.image_index,
            "affine": [float(v) for v in r.affine.ravel()],
            "scale": r.scale,
            "visibility_offset": list(r.visibility_offset),
            "visibility_size": list(r.visibility_mask.shape),
            "visibility_rle": _rle_encode(r.visibility_mask),
        }
        for r in sample.records
    ]
    dio.write_json(
        directory / "sample.json",
        {
            "seed": sample.seed,
            "frame_ids": sample.frame_ids,
            "background_indices": sample.background_indices,
            "background_transforms": [
                [float(v) for v in a.ravel()] for a in sample.background_transforms
            ],
            "region_keys": [[fid, int(rid)] for fid, rid in sample.region_keys],
            "records": records,
            "artifacts": artifacts,
        },
    )


def load_sample(directory) -> SyntheticSample:
    from pathlib import Path

    import imageio.v3 as iio

    from . import io as dio

    directory = Path(directory)
    meta = dio.read_json(directory / "sample.json")
    art = meta["artifacts"]
    images = [np.asarray(iio.imread(directory / n)) for n in art["images"]]
    depths = [dio.load_depth_png(directory / n) for n in art["depths"]]
    rid_maps = [dio.load_label_png(directory / n) - 1 for n in art["region_ids"]]
    iid_maps = [dio.load_label_png(directory / n) for n in art["instance_ids"]]
    records = [
        TransformRecord(
            source_frame_id=r["source_frame_id"],
            region_id=int(r["region_id"]),
            instance_id=int(r["instance_id"]),
            image_index=int(r["image_index"]),
            affine=np.array(r["affine"], dtype=np.float64).reshape(3, 3),
            scale=float(r["scale"]),
            visibility_offset=tuple(r["visibility_offset"]),
            visibility_mask=_rle_decode(r["visibility_rle"], tuple(r["visibility_size"])),
        )
        for r in meta["records"]
    ]
    return SyntheticSample(
        images=images,
        depths=depths,
        region_id_maps=[m.astype(np.int32) for m in rid_maps],
        instance_id_maps=[m.astype(np.int32) for m in iid_maps],
        records=records,
        background_indices=[int(v) for v in meta["background_indices"]],
        background_transforms=[
            np.array(a, dtype=np.float64).reshape(3, 3) for a in meta["background_transforms"]
        ],
        frame_ids=list(meta["frame_ids"]),
        region_keys=[(fid, int(rid)) for fid, rid in meta["region_keys"]],
        seed=int(meta["seed"]),
    )


def _rle_encode(mask: np.ndarray) -> list[int]:
    """Run lengths of the flattened mask, starting with a False run."""
    flat = mask.ravel()
    if flat.size == 0:
        return []
    changes = np.flatnonzero(np.diff(flat.astype(np.int8))) + 1
    bounds = np.concatenate([[0], changes, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs = [0] + runs
    return [int(v) for v in runs]


def _rle_decode(runs: list[int], shape: tuple[int, int]) -> np.ndarray:
    total = int(shape[0] * shape[1])
    flat = np.zeros(total, dtype=bool)
    pos, val = 0, False
    for run in runs:
        if val:
            flat[pos : pos + run] = True
        pos += run
        val = not val
    return flat.reshape(shape)


def _whole_image_aug(rng, cfg, img, dep, rid, iid):
    """Optional post-paste full-image scale/flip, recorded as an affine."""
    h, w = dep.shape
    scale = float(np.exp(rng.uniform(np.log(0.8), np.log(1.25))))
    flip = bool(rng.random() < cfg.flip_prob)
    affine = paste_affine((0, 0, h, w), scale, flip, 0, 0)
    inv = np.linalg.inv(affine)
    cols, rows = np.meshgrid(np.arange(w), np.arange(h))
    sx = nearest_index(inv[0, 0] * cols + inv[0, 1] * rows + inv[0, 2])
    sy = nearest_index(inv[1, 0] * cols + inv[1, 1] * rows + inv[1, 2])
    valid = (sx >= 0) & (sx < w) & (sy >= 0) & (sy < h)
    sx = np.clip(sx, 0, w - 1)
    sy = np.clip(sy, 0, h - 1)
    new_img = np.zeros_like(img)
    new_dep = np.full_like(dep, np.inf)
    new_rid = np.full_like(rid, -1)
    new_iid = np.zeros_like(iid)
    new_img[valid] = img[sy[valid], sx[valid]]
    new_dep[valid] = dep[sy[valid], sx[valid]] / scale
    new_rid[valid] = rid[sy[valid], sx[valid]]
    new_iid[valid] = iid[sy[valid], sx[valid]]
    return new_img, new_dep, new_rid, new_iid, affine
