"""Dataset manifests, the derived-artifact cache, and staleness tracking.

A manifest JSON lists the input frames (paths relative to the manifest's
directory). Every pipeline stage writes its outputs under the cache root
(env DEPTHGROUP_CACHE, else <manifest dir>/derived) together with a meta
file recording its config hash and the hash of its upstream stage; a
downstream stage refuses to run when the recorded upstream hash no longer
matches, unless forced.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

from . import io as dio
from .errors import StaleArtifactError, ValidationError
from .geometry import DepthFrame


@dataclass
class FrameEntry:
    frame_id: str
    rgb: Path
    depth: Path
    intrinsics: Path
    gt: Path | None = None


@dataclass
class Manifest:
    root: Path
    frames: list[FrameEntry]
    seed: int = 0

    @classmethod
    def load(cls, path) -> "Manifest":
        path = Path(path)
        data = dio.read_json(path)
        root = path.parent
        frames = []
        for e in data.get("frames", []):
            entry = FrameEntry(
                frame_id=e["frame_id"],
                rgb=root / e["rgb"],
                depth=root / e["depth"],
                intrinsics=root / e["intrinsics"],
                gt=root / e["gt"] if e.get("gt") else None,
            )
            for p in (entry.rgb, entry.depth, entry.intrinsics):
                if not p.exists():
                    raise ValidationError(f"manifest path does not exist: {p}")
            frames.append(entry)
        if not frames:
            raise ValidationError(f"manifest {path} lists no frames")
        return cls(root=root, frames=frames, seed=int(data.get("seed", 0)))

    def load_frame(self, entry: FrameEntry) -> DepthFrame:
        import imageio.v3 as iio
        import numpy as np

        rgb = np.asarray(iio.imread(entry.rgb))
        depth = dio.load_depth(entry.depth)
        intr = dio.load_intrinsics(entry.intrinsics)
        return DepthFrame(rgb=rgb, depth=depth, intrinsics=intr, frame_id=entry.frame_id)


def cache_root(manifest_path) -> Path:
    env = os.environ.get("DEPTHGROUP_CACHE")
    if env:
        return Path(env)
    return Path(manifest_path).parent / "derived"


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def write_stage_meta(stage_dir: Path, stage: str, config: dict, upstream_hash: str = "") -> str:
    stage_dir.mkdir(parents=True, exist_ok=True)
    own = config_hash({"stage": stage, "config": config, "upstream": upstream_hash})
    dio.write_json(
        stage_dir / "meta.json",
        {"stage": stage, "config": config, "upstream_hash": upstream_hash, "hash": own},
    )
    return own


def read_stage_hash(stage_dir: Path) -> str:
    meta_path = Path(stage_dir) / "meta.json"
    if not meta_path.exists():
        raise ValidationError(f"missing upstream stage artifacts: {stage_dir}")
    return dio.read_json(meta_path)["hash"]


def check_upstream(stage_dir: Path, upstream_dir: Path, force: bool = False) -> None:
    """Refuse when this stage's recorded upstream hash is stale."""
    meta_path = Path(stage_dir) / "meta.json"
    if not meta_path.exists():
        return
    recorded = dio.read_json(meta_path).get("upstream_hash", "")
    current = read_stage_hash(upstream_dir)
    if recorded and recorded != current and not force:
        raise StaleArtifactError(
            f"{stage_dir} was produced from upstream hash {recorded}, but the upstream "
            f"is now {current}; rerun the upstream stage or pass --force"
        )
