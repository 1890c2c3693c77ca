"""Procedural urban-style scenes with exact depth and instance ground truth.

Each frame is a level ground plane seen from a camera at driving height,
a fronto-parallel back wall, and a floating box in front of the wall that
occludes both. Geometry is analytic, so the depth map, the 3D structure,
and the instance masks are known exactly; textures carry seeded noise so
superpixel boundaries have gradients to lock onto.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CameraIntrinsics, DepthFrame

GROUND, WALL, BOX = 0, 1, 2


@dataclass(frozen=True)
class SceneSpec:
    width: int = 384
    height: int = 192
    focal: float = 500.0
    camera_height: float = 1.5  # ground plane sits at y = -camera_height
    wall_z: float = 14.0
    box_z: float = 6.0
    box_center_x: float = 0.0
    box_bottom_y: float = -0.9  # above the ground: a floating, occluding face
    box_width: float = 2.4
    box_height: float = 2.0
    noise: float = 9.0


def ground_box_frame(
    frame_id: str, seed: int, spec: SceneSpec = SceneSpec()
) -> tuple[DepthFrame, np.ndarray]:
    """Render one frame; returns (frame, instance_labels)."""
    w, h = spec.width, spec.height
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    k = CameraIntrinsics(fx=spec.focal, fy=spec.focal, cx=cx, cy=cy, width=w, height=h)

    us = np.arange(w, dtype=np.float64)[None, :]
    vs = np.arange(h, dtype=np.float64)[:, None]

    depth = np.full((h, w), spec.wall_z)
    labels = np.full((h, w), WALL, dtype=np.int32)

    # Ground: ray hits y = -camera_height at z = f * camera_height / (v - cy).
    dv = vs - cy
    with np.errstate(divide="ignore"):
        z_ground = np.where(dv > 0, spec.focal * spec.camera_height / np.maximum(dv, 1e-9), np.inf)
    ground_hit = np.broadcast_to(z_ground, (h, w)) < spec.wall_z
    depth = np.where(ground_hit, np.broadcast_to(z_ground, (h, w)), depth)
    labels[ground_hit] = GROUND

    # Box: fronto-parallel rectangle at z = box_z.
    bx = (us - cx) * spec.box_z / spec.focal
    by = -(vs - cy) * spec.box_z / spec.focal
    x0 = spec.box_center_x - spec.box_width / 2.0
    x1 = spec.box_center_x + spec.box_width / 2.0
    y0 = spec.box_bottom_y
    y1 = spec.box_bottom_y + spec.box_height
    box_hit = (
        np.broadcast_to(bx >= x0, (h, w))
        & np.broadcast_to(bx <= x1, (h, w))
        & np.broadcast_to(by >= y0, (h, w))
        & np.broadcast_to(by <= y1, (h, w))
        & (spec.box_z < depth)
    )
    depth = np.where(box_hit, spec.box_z, depth)
    labels[box_hit] = BOX

    rng = np.random.default_rng(seed)
    base = {
        GROUND: np.array([105.0, 100.0, 95.0]),
        WALL: np.array([140.0, 150.0, 170.0]),
        BOX: np.array([185.0, 70.0, 60.0]),
    }
    rgb = np.zeros((h, w, 3))
    for value, color in base.items():
        rgb[labels == value] = color
    rgb += rng.normal(0.0, spec.noise, size=rgb.shape)
    # Gentle per-row shading keeps SLIC gradients smooth inside surfaces.
    rgb += (np.linspace(-12, 12, h)[:, None, None]) * np.array([1.0, 1.0, 0.8])
    rgb = np.clip(rgb, 0, 255).astype(np.uint8)

    frame = DepthFrame(rgb=rgb, depth=depth, intrinsics=k, frame_id=frame_id)
    return frame, labels


def write_scene_dataset(root, num_frames: int, seed: int = 0, spec: SceneSpec = SceneSpec()):
    """Materialize frames + manifest on disk in the pipeline's input layout."""
    from pathlib import Path

    import imageio.v3 as iio

    from . import io as dio

    root = Path(root)
    (root / "frames").mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(num_frames):
        fid = f"scene_{i:03d}"
        offset = (i - (num_frames - 1) / 2.0) * 0.8
        frame, gt = ground_box_frame(
            fid,
            seed + i,
            SceneSpec(
                width=spec.width,
                height=spec.height,
                focal=spec.focal,
                camera_height=spec.camera_height,
                wall_z=spec.wall_z,
                box_z=spec.box_z + 0.4 * (i % 3),
                box_center_x=spec.box_center_x + offset,
                box_bottom_y=spec.box_bottom_y,
                box_width=spec.box_width,
                box_height=spec.box_height,
                noise=spec.noise,
            ),
        )
        rgb_path = root / "frames" / f"{fid}_rgb.png"
        depth_path = root / "frames" / f"{fid}_depth.png"
        intr_path = root / "frames" / f"{fid}_intrinsics.json"
        gt_path = root / "frames" / f"{fid}_gt.png"
        iio.imwrite(rgb_path, frame.rgb)
        dio.save_depth_png(depth_path, frame.depth)
        dio.save_intrinsics(intr_path, frame.intrinsics)
        dio.save_label_png(gt_path, gt)
        entries.append(
            {
                "frame_id": fid,
                "rgb": f"frames/{fid}_rgb.png",
                "depth": f"frames/{fid}_depth.png",
                "intrinsics": f"frames/{fid}_intrinsics.json",
                "gt": f"frames/{fid}_gt.png",
            }
        )
    dio.write_json(root / "manifest.json", {"frames": entries, "seed": seed})
    return root / "manifest.json"
