"""Region adjacency graph over superpixels, weighted by boundary likelihood.

Each edge weight combines two geometric cues between adjacent superpixels:

  occlusion_distance  -- 3D centroid distance normalized by joint depth;
                         large across depth discontinuities.
  support_distance    -- evidence that the lower node is low, level ground
                         and the upper node an upright object resting on it.

The weighted sum plus a bias goes through a logistic sigmoid, giving a
boundary probability in (0, 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .superpixels import SuperpixelMap, SuperpixelNode


@dataclass(frozen=True)
class GraphConfig:
    w_ocln: float = 48.0
    w_sup: float = 200.0
    bias: float = -4.0

    def __post_init__(self):
        for name in ("w_ocln", "w_sup", "bias"):
            if not np.isfinite(getattr(self, name)):
                raise ValidationError(f"{name} must be finite")


@dataclass
class BoundaryGraph:
    nodes: list[SuperpixelNode]
    edge_index: np.ndarray  # (E, 2) int, i < j
    weights: np.ndarray  # (E,) float in (0, 1)
    border_lengths: np.ndarray  # (E,) int, shared 4-adjacent pixel pairs

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    def edges(self):
        """Iterate (i, j, weight, border_length) tuples."""
        for k in range(self.edge_index.shape[0]):
            yield (
                int(self.edge_index[k, 0]),
                int(self.edge_index[k, 1]),
                float(self.weights[k]),
                int(self.border_lengths[k]),
            )

    def to_dict(self) -> dict:
        return {
            "nodes": [
                {
                    "id": n.id,
                    "centroid3d": [float(v) for v in n.centroid3d],
                    "n_y": n.n_y,
                    "pixel_count": n.pixel_count,
                    "mean_rgb": [float(v) for v in n.mean_rgb],
                }
                for n in self.nodes
            ],
            "edges": [
                {"i": i, "j": j, "weight": w, "border_length": b} for i, j, w, b in self.edges()
            ],
        }


def sigmoid(x):
    # Split by sign to stay overflow-free for large |x|.
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


# Boundary weights are contractually inside the open interval (0, 1); the
# sigmoid saturates in float64 for |x| beyond ~37, so clamp to the nearest
# representable interior values.
_W_LO = np.nextafter(0.0, 1.0)
_W_HI = np.nextafter(1.0, 0.0)


def _clamp_weight(w):
    return np.clip(w, _W_LO, _W_HI)


def occlusion_distance(a: SuperpixelNode, b: SuperpixelNode) -> float:
    """Euclidean centroid distance over joint depth. Symmetric, scale invariant."""
    za, zb = float(a.centroid3d[2]), float(b.centroid3d[2])
    if za <= 0 or zb <= 0:
        raise ValidationError("superpixel centroids must have positive depth")
    dx = float(a.centroid3d[0]) - float(b.centroid3d[0])
    dy = float(a.centroid3d[1]) - float(b.centroid3d[1])
    dz = za - zb
    return float(np.sqrt(dx * dx + dy * dy + dz * dz) / (za + zb))


def support_distance(low: SuperpixelNode, high: SuperpixelNode) -> float:
    """Ground-supports-object evidence; zero unless the lower node is below
    the camera horizon (y < 0), level (n_y > 0), and more level than the
    upper node."""
    y1 = low.centroid3d[1]
    if y1 >= 0:
        return 0.0
    return float(max(low.n_y, 0.0) * max(low.n_y - high.n_y, 0.0) * y1 * y1)


def edge_weight(a: SuperpixelNode, b: SuperpixelNode, cfg: GraphConfig) -> float:
    """sigmoid(w_ocln * occlusion + w_sup * support + bias), in (0, 1).

    Height ordering is internal: the node with smaller y plays the ground
    role; ties break on node id, making the value symmetric in (a, b).
    """
    ya, yb = a.centroid3d[1], b.centroid3d[1]
    if ya < yb or (ya == yb and a.id <= b.id):
        low, high = a, b
    else:
        low, high = b, a
    d_o = occlusion_distance(a, b)
    d_s = support_distance(low, high)
    return float(_clamp_weight(sigmoid(cfg.w_ocln * d_o + cfg.w_sup * d_s + cfg.bias)))


def adjacent_pairs(labels: np.ndarray):
    """Unique 4-adjacent label pairs (i < j) with shared border pixel counts."""
    pairs = []
    a, bb = labels[:, :-1].ravel(), labels[:, 1:].ravel()
    m = a != bb
    pairs.append(np.stack([a[m], bb[m]], axis=1))
    a, bb = labels[:-1, :].ravel(), labels[1:, :].ravel()
    m = a != bb
    pairs.append(np.stack([a[m], bb[m]], axis=1))
    if not pairs or sum(p.shape[0] for p in pairs) == 0:
        return np.zeros((0, 2), dtype=np.int64), np.zeros(0, dtype=np.int64)
    all_pairs = np.concatenate(pairs, axis=0)
    lo = all_pairs.min(axis=1)
    hi = all_pairs.max(axis=1)
    n = int(labels.max()) + 1
    codes = lo.astype(np.int64) * n + hi
    uniq, counts = np.unique(codes, return_counts=True)
    out = np.stack([uniq // n, uniq % n], axis=1)
    return out, counts


def build_graph(
    spmap: SuperpixelMap, nodes: list[SuperpixelNode], cfg: GraphConfig
) -> BoundaryGraph:
    """One weighted edge per 4-adjacent superpixel pair."""
    if len(nodes) != spmap.count:
        raise ValidationError("node list does not match superpixel count")
    edge_index, border = adjacent_pairs(spmap.labels)
    if edge_index.shape[0] == 0:
        return BoundaryGraph(
            nodes=nodes,
            edge_index=np.zeros((0, 2), dtype=np.int64),
            weights=np.zeros(0),
            border_lengths=border,
        )

    cent = np.stack([n.centroid3d for n in nodes], axis=0)
    ny = np.array([n.n_y for n in nodes])
    ids = np.arange(len(nodes))

    ia, ib = edge_index[:, 0], edge_index[:, 1]
    ca, cb = cent[ia], cent[ib]
    dx = ca[:, 0] - cb[:, 0]
    dy = ca[:, 1] - cb[:, 1]
    dz = ca[:, 2] - cb[:, 2]
    # Explicit sum keeps the float op order identical to the scalar path.
    d_o = np.sqrt(dx * dx + dy * dy + dz * dz) / (ca[:, 2] + cb[:, 2])

    ya, yb = ca[:, 1], cb[:, 1]
    a_is_low = (ya < yb) | ((ya == yb) & (ids[ia] <= ids[ib]))
    y_low = np.where(a_is_low, ya, yb)
    ny_low = np.where(a_is_low, ny[ia], ny[ib])
    ny_high = np.where(a_is_low, ny[ib], ny[ia])
    d_s = np.where(
        y_low < 0,
        np.maximum(ny_low, 0.0) * np.maximum(ny_low - ny_high, 0.0) * y_low * y_low,
        0.0,
    )

    w = _clamp_weight(sigmoid(cfg.w_ocln * d_o + cfg.w_sup * d_s + cfg.bias))
    return BoundaryGraph(
        nodes=nodes, edge_index=edge_index, weights=w, border_lengths=border
    )
