"""Command-line pipeline: group, synthesize, sample, loss, cluster, eval, viz.

Stages exchange artifacts on disk under the cache root (DEPTHGROUP_CACHE
or <manifest dir>/derived) and carry config hashes so a stage refuses to
consume artifacts whose upstream has since been rerun with a different
config (exit code 3; pass --force to override). Validation failures exit
with code 2.
"""

from __future__ import annotations

import functools
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import click
import numpy as np

from . import io as dio
from .boundary_graph import GraphConfig, build_graph
from .community import (
    ConnectivityGraph,
    RegionInfo,
    RegionMap,
    iterative_group,
    regions_from_communities,
)
from .errors import DepthgroupError, StaleArtifactError, ValidationError
from .geometry import compute_normals, unproject
from .manifest import (
    Manifest,
    cache_root,
    check_upstream,
    read_stage_hash,
    write_stage_meta,
)
from .superpixels import aggregate, slic_segment

# Exact map-equation solving is restricted to very small graphs inside the
# pipeline to hold the per-frame throughput budget.
PIPELINE_EXACT_MAX_NODES = 10


def _handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except StaleArtifactError as exc:
            click.echo(f"stale artifact: {exc}", err=True)
            sys.exit(3)
        except (ValidationError, DepthgroupError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)

    return wrapper


@click.group()
def main():
    """Depth-coherent region grouping and copy-paste synthesis pipeline."""


# ---------------------------------------------------------------------------
# group
# ---------------------------------------------------------------------------


def _group_one_frame(args):
    manifest_path, frame_idx, params = args
    manifest = Manifest.load(manifest_path)
    entry = manifest.frames[frame_idx]
    frame = manifest.load_frame(entry)

    points = unproject(frame)
    normals = compute_normals(points)
    spmap = slic_segment(
        frame, params["superpixels"], compactness=params["compactness"]
    )
    nodes = aggregate(spmap, points, normals, frame.rgb)
    cfg = GraphConfig(w_ocln=params["w_ocln"], w_sup=params["w_sup"], bias=params["bias"])
    graph = build_graph(spmap, nodes, cfg)
    connectivity = ConnectivityGraph.from_boundary_graph(graph)
    result = iterative_group(
        connectivity,
        t_e=params["t_e"],
        seed=params["seed"],
        exact_max_nodes=PIPELINE_EXACT_MAX_NODES,
    )
    rmap = regions_from_communities(spmap, result, frame.depth)

    out_dir = Path(params["out_dir"])
    dio.save_label_png(out_dir / f"{entry.frame_id}_regions.png", rmap.labels)
    dio.write_json(
        out_dir / f"{entry.frame_id}_regions.json",
        {
            "frame_id": entry.frame_id,
            "num_regions": len(rmap.regions),
            "regions": [
                {
                    "id": r.id,
                    "bbox": list(r.bbox),
                    "pixel_count": r.pixel_count,
                    "anchor_height": r.anchor_height,
                    "mean_depth": r.mean_depth,
                }
                for r in rmap.regions
            ],
        },
    )
    if params["save_graphs"]:
        from .superpixels import nodes_to_dicts

        dio.write_json(out_dir / f"{entry.frame_id}_graph.json", graph.to_dict())
        dio.save_label_png(out_dir / f"{entry.frame_id}_superpixels.png", spmap.labels)
        dio.write_json(out_dir / f"{entry.frame_id}_nodes.json", nodes_to_dicts(nodes))
    return entry.frame_id, len(rmap.regions)


@main.command()
@click.argument("manifest_path", type=click.Path(exists=True))
@click.option("--superpixels", default=10000, show_default=True)
@click.option("--compactness", default=10.0, show_default=True)
@click.option("--w-ocln", default=48.0, show_default=True)
@click.option("--w-sup", default=200.0, show_default=True)
@click.option("--bias", default=-4.0, show_default=True)
@click.option("--t-e", default=0.9, show_default=True)
@click.option("--seed", default=None, type=int, help="defaults to the manifest seed")
@click.option("--jobs", default=1, show_default=True, help="frame-level parallelism")
@click.option("--save-graphs", is_flag=True,
              help="also dump superpixel label maps, node tables, and boundary graphs")
@_handle_errors
def group(manifest_path, superpixels, compactness, w_ocln, w_sup, bias, t_e, seed, jobs, save_graphs):
    """Group every frame into coherent depth regions."""
    manifest = Manifest.load(manifest_path)
    seed = manifest.seed if seed is None else seed
    out_dir = cache_root(manifest_path) / "group"
    out_dir.mkdir(parents=True, exist_ok=True)
    params = {
        "superpixels": superpixels,
        "compactness": compactness,
        "w_ocln": w_ocln,
        "w_sup": w_sup,
        "bias": bias,
        "t_e": t_e,
        "seed": seed,
        "out_dir": str(out_dir),
        "save_graphs": save_graphs,
    }
    jobs_args = [(str(manifest_path), i, params) for i in range(len(manifest.frames))]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_group_one_frame, jobs_args))
    else:
        results = [_group_one_frame(a) for a in jobs_args]
    for fid, nregions in results:
        click.echo(f"{fid}: {nregions} regions")
    config = {k: v for k, v in params.items() if k not in ("out_dir",)}
    write_stage_meta(out_dir, "group", config)


def load_region_map(group_dir: Path, frame_id: str) -> RegionMap:
    labels = dio.load_label_png(Path(group_dir) / f"{frame_id}_regions.png")
    meta = dio.read_json(Path(group_dir) / f"{frame_id}_regions.json")
    regions = [
        RegionInfo(
            id=int(r["id"]),
            bbox=tuple(r["bbox"]),
            pixel_count=int(r["pixel_count"]),
            anchor_height=int(r["anchor_height"]),
            mean_depth=float(r["mean_depth"]),
        )
        for r in meta["regions"]
    ]
    return RegionMap(labels=labels, regions=regions)


# ---------------------------------------------------------------------------
# synthesize
# ---------------------------------------------------------------------------


@main.command()
@click.argument("manifest_path", type=click.Path(exists=True))
@click.option("--m", default=8, show_default=True, help="source frames per sample")
@click.option("--e1", default=1.0, show_default=True)
@click.option("--e2", default=2.0, show_default=True)
@click.option("--h-t", default=16, show_default=True)
@click.option("--min-h", default=16, show_default=True)
@click.option("--min-w", default=6, show_default=True)
@click.option("--batches", default=1, show_default=True)
@click.option("--seed", default=None, type=int)
@click.option("--force", is_flag=True)
@_handle_errors
def synthesize(manifest_path, m, e1, e2, h_t, min_h, min_w, batches, seed, force):
    """Pre-generate copy-paste training samples from grouped frames."""
    from .synthesis import PasteConfig, save_sample
    from .synthesis import synthesize as synth

    manifest = Manifest.load(manifest_path)
    seed = manifest.seed if seed is None else seed
    root = cache_root(manifest_path)
    group_dir = root / "group"
    group_hash = read_stage_hash(group_dir)
    out_dir = root / "synth"
    out_dir.mkdir(parents=True, exist_ok=True)

    cfg = PasteConfig(
        num_images=m,
        min_height=min_h,
        min_width=min_w,
        height_threshold=h_t,
        expectations=(e1, e2),
    )
    if m > len(manifest.frames):
        raise ValidationError(f"--m {m} exceeds the {len(manifest.frames)} manifest frames")

    batch_dirs = []
    for b in range(batches):
        rng = np.random.default_rng(seed + b)
        idx = (
            np.arange(m)
            if len(manifest.frames) == m
            else rng.choice(len(manifest.frames), size=m, replace=False)
        )
        frames = [manifest.load_frame(manifest.frames[int(i)]) for i in idx]
        rmaps = [load_region_map(group_dir, f.frame_id) for f in frames]
        sample = synth(frames, rmaps, cfg, seed=seed + b)
        bdir = out_dir / f"batch_{b:04d}"
        save_sample(bdir, sample)
        batch_dirs.append(bdir.name)
        click.echo(f"batch {b}: {sample.num_images} images, {len(sample.records)} pastes")

    dio.write_json(out_dir / "batches.json", {"batches": batch_dirs})
    config = {
        "m": m, "e1": e1, "e2": e2, "h_t": h_t, "min_h": min_h, "min_w": min_w,
        "batches": batches, "seed": seed,
    }
    write_stage_meta(out_dir, "synthesize", config, upstream_hash=group_hash)


# ---------------------------------------------------------------------------
# sample
# ---------------------------------------------------------------------------


@main.command()
@click.argument("manifest_path", type=click.Path(exists=True))
@click.option("--budget", default=288000, show_default=True, help="coordinates per batch")
@click.option("--kind", type=click.Choice(["pixel", "region", "both"]), default="both",
              show_default=True)
@click.option("--lambda-split", type=click.Choice(["equal"]), default="equal", show_default=True)
@click.option("--stride", default=1, show_default=True,
              help="divide exported coordinates by the consumer's feature stride")
@click.option("--seed", default=None, type=int)
@click.option("--force", is_flag=True)
@_handle_errors
def sample(manifest_path, budget, kind, lambda_split, stride, seed, force):
    """Extract positive-group indexes from synthesized batches."""
    from .sampling import pixel_groups, region_groups
    from .synthesis import load_sample

    manifest = Manifest.load(manifest_path)
    seed = manifest.seed if seed is None else seed
    root = cache_root(manifest_path)
    synth_dir = root / "synth"
    check_upstream(synth_dir, root / "group", force=force)
    synth_hash = read_stage_hash(synth_dir)
    out_dir = root / "groups"
    out_dir.mkdir(parents=True, exist_ok=True)

    kinds = ["pixel", "region"] if kind == "both" else [kind]
    per_kind = budget // len(kinds)  # equal split when both are requested

    batch_names = dio.read_json(synth_dir / "batches.json")["batches"]
    for b, bname in enumerate(batch_names):
        smp = load_sample(synth_dir / bname)
        for k in kinds:
            fn = pixel_groups if k == "pixel" else region_groups
            index = fn(smp, per_kind, seed=seed + b).at_stride(stride)
            dio.write_json(out_dir / f"{k}_{b:04d}.json", index.to_dict())
            index.to_binary(out_dir / f"{k}_{b:04d}.bin")
            click.echo(
                f"batch {b} {k}: {len(index.groups)} groups, {index.total_coords()} coords"
            )
    config = {
        "budget": budget, "kind": kind, "lambda_split": lambda_split,
        "stride": stride, "seed": seed,
    }
    write_stage_meta(out_dir, "sample", config, upstream_hash=synth_hash)


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------


@main.command()
@click.argument("manifest_path", type=click.Path(exists=True))
@click.option("--features", "features_path", required=True, type=click.Path(exists=True),
              help="feature rows matching the group tables, in order")
@click.option("--prototypes", "prototypes_path", type=click.Path(exists=True), default=None,
              help="prototype file; random unit rows when omitted")
@click.option("--tau", default=0.1, show_default=True)
@click.option("--k", default=1000, show_default=True, help="prototype count when generating")
@click.option("--lambda", "lam", default=0.5, show_default=True)
@click.option("--batch", default=0, show_default=True)
@click.option("--seed", default=None, type=int)
@click.option("--force", is_flag=True)
@_handle_errors
def loss(manifest_path, features_path, prototypes_path, tau, k, lam, batch, seed, force):
    """Swapped-prediction loss, gradients, and balancing diagnostics."""
    from .contrastive import loss_gradient, normalize_rows
    from .sampling import GroupIndex

    manifest = Manifest.load(manifest_path)
    seed = manifest.seed if seed is None else seed
    root = cache_root(manifest_path)
    groups_dir = root / "groups"
    check_upstream(groups_dir, root / "synth", force=force)
    out_dir = root / "loss"
    out_dir.mkdir(parents=True, exist_ok=True)

    z = normalize_rows(dio.load_features(features_path))
    if prototypes_path:
        c = normalize_rows(dio.load_features(prototypes_path))
    else:
        rng = np.random.default_rng(seed)
        c = normalize_rows(rng.standard_normal((k, z.shape[1])))

    indexes = []
    for kind in ("pixel", "region"):
        path = groups_dir / f"{kind}_{batch:04d}.json"
        if path.exists():
            indexes.append(GroupIndex.from_dict(dio.read_json(path)))
    if not indexes:
        raise ValidationError(f"no group tables found in {groups_dir}")
    total = sum(i.total_coords() for i in indexes)
    if total != z.shape[0]:
        raise ValidationError(
            f"feature rows ({z.shape[0]}) do not match group coordinates ({total})"
        )

    report = {"tau": tau, "lambda": lam, "kinds": {}}
    losses = {}
    offset = 0
    grads_z = np.zeros((z.shape[0], z.shape[1]), dtype=np.float32)
    for index in indexes:
        n = index.total_coords()
        zk = z[offset : offset + n]
        # 32-bit throughput path: the batch-scale matrices are N x K
        result = loss_gradient(zk, c, index.row_groups(), tau=tau, dtype=np.float32)
        info = result.sinkhorn_info
        losses[index.kind] = result.loss
        grads_z[offset : offset + n] = result.grad_z
        report["kinds"][index.kind] = {
            "loss": result.loss,
            "num_groups": len(index.groups),
            "num_coords": n,
            "sinkhorn": {
                "iterations": info.iterations,
                "row_error": info.row_error,
                "col_error": info.col_error,
                "converged": info.converged,
            },
        }
        dio.save_features(out_dir / f"grad_c_{index.kind}.bin", result.grad_c)
        offset += n

    if "pixel" in losses and "region" in losses:
        from .contrastive import combined_loss

        report["combined_loss"] = combined_loss(losses["pixel"], losses["region"], lam)
    elif losses:
        report["combined_loss"] = next(iter(losses.values()))
    dio.save_features(out_dir / "grad_z.bin", grads_z)
    dio.write_json(out_dir / "loss.json", report)
    click.echo(f"combined loss: {report['combined_loss']:.6f}")


# ---------------------------------------------------------------------------
# cluster
# ---------------------------------------------------------------------------


@main.command()
@click.argument("manifest_path", type=click.Path(exists=True))
@click.option("--prototypes", "prototypes_path", required=True, type=click.Path(exists=True))
@click.option("--classes", default=19, show_default=True)
@_handle_errors
def cluster(manifest_path, prototypes_path, classes):
    """Agglomerate prototypes down to the target class count."""
    from .contrastive import agglomerate, normalize_rows

    root = cache_root(manifest_path)
    out_dir = root / "cluster"
    out_dir.mkdir(parents=True, exist_ok=True)
    c = normalize_rows(dio.load_features(prototypes_path))
    mapping = agglomerate(c, classes)
    dio.write_json(
        out_dir / "prototype_classes.json",
        {
            "num_classes": int(mapping.max()) + 1,
            "mapping": {str(i): int(v) for i, v in enumerate(mapping)},
        },
    )
    click.echo(f"{c.shape[0]} prototypes -> {int(mapping.max()) + 1} classes")


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def _write_csv(path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    lines += [",".join(str(v) for v in row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n")


@main.command("eval-regions")
@click.argument("manifest_path", type=click.Path(exists=True))
@click.option("--force", is_flag=True)
@_handle_errors
def eval_regions(manifest_path, force):
    """Score grouped regions against ground-truth instance masks."""
    from .evaluation import _iou_matrix, bilateral_match_miou, gt_query_miou, split_connected

    manifest = Manifest.load(manifest_path)
    root = cache_root(manifest_path)
    group_dir = root / "group"
    read_stage_hash(group_dir)
    out_dir = root / "eval"
    out_dir.mkdir(parents=True, exist_ok=True)

    proposal_maps, gt_sets, per_image = [], [], []
    csv_rows = []
    for entry in manifest.frames:
        if entry.gt is None:
            continue
        rmap = load_region_map(group_dir, entry.frame_id)
        gt_labels = dio.load_label_png(entry.gt)
        masks = split_connected(gt_labels)
        values = []
        for value in np.unique(gt_labels):
            from skimage import measure

            comp = measure.label(gt_labels == value, connectivity=1)
            values.extend([int(value)] * int(comp.max()))
        proposal_maps.append(rmap.labels)
        gt_sets.append(masks)
        iou = _iou_matrix(rmap.labels, masks)
        best = iou.max(axis=0) if iou.size else np.zeros(len(masks))
        per_image.append(
            {
                "frame_id": entry.frame_id,
                "per_gt": [
                    {"label": values[i], "size": int(m.sum()), "best_iou": float(best[i])}
                    for i, m in enumerate(masks)
                ],
            }
        )
        for i, m in enumerate(masks):
            csv_rows.append([entry.frame_id, values[i], int(m.sum()), f"{best[i]:.6f}"])

    if not proposal_maps:
        raise ValidationError("no frames with ground truth in the manifest")
    metrics = {
        "gt_query_miou": gt_query_miou(proposal_maps, gt_sets),
        "bilateral_match_miou": bilateral_match_miou(proposal_maps, gt_sets),
        "per_image": per_image,
    }
    dio.write_json(out_dir / "regions_metrics.json", metrics)
    _write_csv(
        out_dir / "regions_metrics.csv",
        ["frame_id", "gt_label", "gt_size", "best_iou"],
        csv_rows,
    )
    click.echo(
        f"gt-query mIoU: {metrics['gt_query_miou']:.4f}  "
        f"bilateral mIoU: {metrics['bilateral_match_miou']:.4f}"
    )


@main.command("eval-seg")
@click.argument("manifest_path", type=click.Path(exists=True))
@click.option("--pred", "pred_dir", required=True, type=click.Path(exists=True),
              help="directory of <frame_id>.png predicted label images")
@click.option("--classes", default=19, show_default=True)
@click.option("--ignore", default=255, show_default=True)
@_handle_errors
def eval_seg(manifest_path, pred_dir, classes, ignore):
    """Hungarian-matched accuracy and mIoU for predicted label images."""
    from .evaluation import matched_metrics

    manifest = Manifest.load(manifest_path)
    root = cache_root(manifest_path)
    out_dir = root / "eval"
    out_dir.mkdir(parents=True, exist_ok=True)

    preds, gts = [], []
    for entry in manifest.frames:
        if entry.gt is None:
            continue
        pred_path = Path(pred_dir) / f"{entry.frame_id}.png"
        if not pred_path.exists():
            raise ValidationError(f"missing prediction {pred_path}")
        preds.append(dio.load_label_png(pred_path))
        gts.append(dio.load_label_png(entry.gt))
    if not preds:
        raise ValidationError("no frames with ground truth in the manifest")
    metrics = matched_metrics(preds, gts, num_classes=classes, ignore_value=ignore)
    dio.write_json(out_dir / "seg_metrics.json", metrics)
    _write_csv(
        out_dir / "seg_metrics.csv",
        ["class", "iou"],
        [[cls, f"{iou:.6f}"] for cls, iou in sorted(metrics["per_class_iou"].items())],
    )
    click.echo(f"Acc: {metrics['accuracy']:.4f}  mIoU: {metrics['miou']:.4f}")


# ---------------------------------------------------------------------------
# viz
# ---------------------------------------------------------------------------


@main.command()
@click.argument("manifest_path", type=click.Path(exists=True))
@click.option("--limit", default=4, show_default=True, help="max frames / batches to render")
@click.option("--features", "features_path", type=click.Path(exists=True), default=None)
@click.option("--feature-height", default=None, type=int)
@click.option("--feature-width", default=None, type=int)
@_handle_errors
def viz(manifest_path, limit, features_path, feature_height, feature_width):
    """Render overlays, sample grids, and PCA feature images to files."""
    from .viz import save_feature_figure, save_region_figure, save_sample_grid

    manifest = Manifest.load(manifest_path)
    root = cache_root(manifest_path)
    out_dir = root / "viz"
    out_dir.mkdir(parents=True, exist_ok=True)
    made = []

    group_dir = root / "group"
    if (group_dir / "meta.json").exists():
        for entry in manifest.frames[:limit]:
            frame = manifest.load_frame(entry)
            rmap = load_region_map(group_dir, entry.frame_id)
            path = out_dir / f"regions_{entry.frame_id}.png"
            save_region_figure(path, frame.rgb, rmap.labels)
            made.append(path)

    synth_dir = root / "synth"
    if (synth_dir / "batches.json").exists():
        from .synthesis import load_sample

        for bname in dio.read_json(synth_dir / "batches.json")["batches"][:limit]:
            smp = load_sample(synth_dir / bname)
            path = out_dir / f"sample_{bname}.png"
            save_sample_grid(path, smp)
            made.append(path)

    if features_path:
        if not feature_height or not feature_width:
            raise ValidationError("--feature-height and --feature-width are required "
                                  "to lay out the feature file as an image")
        from .contrastive import pca_rgb

        z = dio.load_features(features_path)
        if z.shape[0] != feature_height * feature_width:
            raise ValidationError("feature rows do not match the requested layout")
        img = pca_rgb(z.reshape(feature_height, feature_width, -1))
        path = out_dir / "features_pca.png"
        save_feature_figure(path, img)
        made.append(path)

    for p in made:
        click.echo(str(p))


if __name__ == "__main__":
    main()
