"""Coherent region grouping via map-equation community detection.

The solver minimizes the two-level map equation (description length of a
random walk, in bits) over partitions of an undirected weighted graph.
Small graphs are solved exactly by enumerating all partitions with a
subset-precompute DP; larger graphs use greedy node moves with repeated
coarsening. On top sits the iterative procedure that repeatedly halves the
community count, coarsens by averaging boundary strengths, and fixes
communities whose outward boundaries are all strong.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .superpixels import SuperpixelMap


@dataclass
class ConnectivityGraph:
    """Affinity graph: strength = 1 - boundary_weight, in [0, 1]."""

    num_nodes: int
    edge_index: np.ndarray  # (E, 2) int, i < j, no duplicates, no self-loops
    strengths: np.ndarray  # (E,) float in [0, 1]
    initial_nodes: list[list[int]] = field(default=None)

    def __post_init__(self):
        self.edge_index = np.asarray(self.edge_index, dtype=np.int64).reshape(-1, 2)
        self.strengths = np.asarray(self.strengths, dtype=np.float64).reshape(-1)
        if self.initial_nodes is None:
            self.initial_nodes = [[i] for i in range(self.num_nodes)]
        if self.edge_index.shape[0] != self.strengths.shape[0]:
            raise ValidationError("edge_index and strengths length mismatch")
        if self.strengths.size and (self.strengths.min() < 0 or self.strengths.max() > 1):
            raise ValidationError("strengths must lie in [0, 1]")
        if (self.edge_index[:, 0] == self.edge_index[:, 1]).any():
            raise ValidationError("self-loops are not allowed")

    @classmethod
    def from_boundary_graph(cls, graph) -> "ConnectivityGraph":
        return cls(
            num_nodes=graph.num_nodes,
            edge_index=graph.edge_index.copy(),
            strengths=1.0 - graph.weights,
        )


@dataclass
class CommunityResult:
    assignment: np.ndarray  # (num_nodes,) int, contiguous community ids
    num_communities: int
    codelength: float = 0.0  # map equation value in bits


def _plogp(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    nz = x > 0
    out[nz] = x[nz] * np.log2(x[nz])
    return out if out.ndim else float(out)


def map_equation(g: ConnectivityGraph, assignment) -> float:
    """Two-level map equation (bits) of a partition, computed directly.

    A graph with no positive-strength edges carries no flow; its
    description length is defined as 0.
    """
    assignment = np.asarray(assignment, dtype=np.int64)
    if assignment.shape[0] != g.num_nodes:
        raise ValidationError("assignment length does not match node count")
    w = g.strengths
    two_w = 2.0 * float(w.sum())
    if two_w <= 0:
        return 0.0
    s = np.zeros(g.num_nodes)
    np.add.at(s, g.edge_index[:, 0], w)
    np.add.at(s, g.edge_index[:, 1], w)
    p = s / two_w

    k = assignment.max() + 1
    p_mod = np.zeros(k)
    np.add.at(p_mod, assignment, p)
    cross = assignment[g.edge_index[:, 0]] != assignment[g.edge_index[:, 1]]
    q_mod = np.zeros(k)
    cw = w[cross] / two_w
    np.add.at(q_mod, assignment[g.edge_index[cross, 0]], cw)
    np.add.at(q_mod, assignment[g.edge_index[cross, 1]], cw)

    q_tot = q_mod.sum()
    return float(
        _plogp(q_tot)
        - 2.0 * _plogp(q_mod).sum()
        + _plogp(q_mod + p_mod).sum()
        - _plogp(p).sum()
    )


# ---------------------------------------------------------------------------
# exact solver (small graphs)
# ---------------------------------------------------------------------------


def _exact_min_partition(n: int, edge_index, strengths):
    """Global minimum of the map equation over all partitions of <= ~12 nodes.

    Per-block masses and internal flows are precomputed for every subset
    mask, then all partitions are enumerated as arrays of block-value sums
    with memoization on the remaining-node mask. Returns (assignment,
    codelength).
    """
    full = (1 << n) - 1
    w = np.asarray(strengths, dtype=np.float64)
    two_w = 2.0 * float(w.sum())
    s = np.zeros(n)
    np.add.at(s, edge_index[:, 0], w)
    np.add.at(s, edge_index[:, 1], w)

    # linkw[v, mask] = total weight from v into the nodes of mask.
    linkw = np.zeros((n, 1 << n))
    wmat = np.zeros((n, n))
    for (i, j), wt in zip(edge_index, w):
        wmat[i, j] += wt
        wmat[j, i] += wt
    low_idx = np.array([(m & -m).bit_length() - 1 if m else 0 for m in range(1 << n)])
    for v in range(n):
        for m in range(1, 1 << n):
            lb = low_idx[m]
            linkw[v, m] = linkw[v, m ^ (1 << lb)] + wmat[v, lb]

    mass = np.zeros(1 << n)
    intra = np.zeros(1 << n)
    for m in range(1, 1 << n):
        lb = low_idx[m]
        rest = m ^ (1 << lb)
        mass[m] = mass[rest] + s[lb]
        intra[m] = intra[rest] + linkw[lb, rest]

    p_blk = mass / two_w
    q_blk = (mass - 2.0 * intra) / two_w
    g_blk = -2.0 * _plogp(q_blk) + _plogp(q_blk + p_blk)

    memo: dict[int, tuple] = {}

    def parts(mask: int):
        hit = memo.get(mask)
        if hit is not None:
            return hit
        pivot = mask & -mask
        rest_all = mask ^ pivot
        gs, qs, segs = [], [], []
        offset = 0
        t = rest_all
        while True:
            block = t | pivot
            child = mask ^ block
            if child:
                cg, cq, _ = parts(child)
            else:
                cg = cq = np.zeros(1)
            gs.append(g_blk[block] + cg)
            qs.append(q_blk[block] + cq)
            segs.append((block, child, offset, cg.size))
            offset += cg.size
            if t == 0:
                break
            t = (t - 1) & rest_all
        res = (np.concatenate(gs), np.concatenate(qs), segs)
        memo[mask] = res
        return res

    gsum, qsum, _ = parts(full)
    const = _plogp(p_blk[[1 << v for v in range(n)]]).sum()
    codelengths = _plogp(qsum) + gsum - const
    best = int(np.argmin(codelengths))

    # Walk the memo segments back to the block decomposition.
    assignment = np.full(n, -1, dtype=np.int64)
    mask, index, label = full, best, 0
    while mask:
        segs = memo[mask][2]
        for block, child, off, length in segs:
            if off <= index < off + length:
                for v in range(n):
                    if block >> v & 1:
                        assignment[v] = label
                label += 1
                mask, index = child, index - off
                break
    return assignment, float(codelengths[best])


# ---------------------------------------------------------------------------
# greedy solver (large graphs)
# ---------------------------------------------------------------------------


class _Level:
    """One coarsening level: supernodes with masses and flow adjacency."""

    def __init__(self, p, self_flow, adj):
        self.p = p  # stationary mass per supernode
        self.self_flow = self_flow  # flow internal to the supernode
        self.adj = adj  # list of dicts: neighbor -> flow
        self.k_all = np.array([sum(a.values()) for a in adj])


def _greedy_once(level: _Level, order) -> np.ndarray:
    """Sweep single-node moves until no move lowers the codelength.

    Candidate targets are the modules of neighbors plus a fresh singleton
    module; ties break toward the lowest module id. Works on plain Python
    scalars for speed.
    """
    m = len(level.p)
    p_node = level.p.tolist()
    k_all_arr = level.k_all.tolist()
    adj = level.adj
    mod = list(range(m))
    p_mod = p_node.copy()
    q_mod = k_all_arr.copy()
    q_tot = sum(q_mod)
    sizes = [1] * m
    free: list[int] = []  # emptied module slots, reusable as fresh modules
    log2 = math.log2

    def plogp(x: float) -> float:
        return x * log2(x) if x > 1e-300 else 0.0

    improved_any = True
    while improved_any:
        improved_any = False
        for v in order:
            av = adj[v]
            a = mod[v]
            if not av and sizes[a] == 1:
                continue
            k_to: dict[int, float] = {}
            for u, f in av.items():
                mu = mod[u]
                k_to[mu] = k_to.get(mu, 0.0) + f
            k_all = k_all_arr[v]
            k_in_a = k_to.get(a, 0.0)
            pv = p_node[v]

            qa, pa = q_mod[a], p_mod[a]
            qa_out = max(qa - k_all + 2.0 * k_in_a, 0.0)
            pa_out = max(pa - pv, 0.0)
            base_a = (
                -2.0 * (plogp(qa_out) - plogp(qa)) + plogp(qa_out + pa_out) - plogp(qa + pa)
            )
            dq_a = qa_out - qa

            best_delta, best_b = -1e-12, -1
            cands = sorted(b for b in k_to if b != a)
            if sizes[a] > 1:
                cands.append(-2)  # fresh singleton module, considered last
            for b in cands:
                if b == -2:
                    qb = pb = k_in_b = 0.0
                else:
                    qb, pb, k_in_b = q_mod[b], p_mod[b], k_to.get(b, 0.0)
                dq_b = k_all - 2.0 * k_in_b
                qb_in = qb + dq_b
                delta = (
                    base_a
                    + plogp(q_tot + dq_a + dq_b)
                    - plogp(q_tot)
                    - 2.0 * (plogp(qb_in) - plogp(qb))
                    + plogp(qb_in + pb + pv)
                    - plogp(qb + pb)
                )
                if delta < best_delta:
                    best_delta, best_b = delta, b

            if best_b == -1:
                continue
            if best_b == -2:
                best_b = free.pop()  # pigeonhole: a slot is free when sizes[a] > 1
            k_in_b = k_to.get(best_b, 0.0)
            q_tot += dq_a + k_all - 2.0 * k_in_b
            q_mod[a] = qa_out
            p_mod[a] = pa_out
            q_mod[best_b] += k_all - 2.0 * k_in_b
            p_mod[best_b] += pv
            sizes[a] -= 1
            sizes[best_b] += 1
            if sizes[a] == 0:
                free.append(a)
            mod[v] = best_b
            improved_any = True
    return np.array(mod, dtype=np.int64)


def _coarsen(level: _Level, mod: np.ndarray):
    uniq, inv = np.unique(mod, return_inverse=True)
    k = uniq.size
    p = np.zeros(k)
    np.add.at(p, inv, level.p)
    self_flow = np.zeros(k)
    np.add.at(self_flow, inv, level.self_flow)
    adj = [dict() for _ in range(k)]
    for v, a in enumerate(level.adj):
        mv = inv[v]
        for u, f in a.items():
            mu = inv[u]
            if mu == mv:
                if u > v:
                    self_flow[mv] += f
            else:
                adj[mv][mu] = adj[mv].get(mu, 0.0) + f
    return _Level(p, self_flow, adj), inv


def _louvain_min(n, edge_index, strengths, order):
    w = np.asarray(strengths, dtype=np.float64)
    two_w = 2.0 * float(w.sum())
    p = np.zeros(n)
    np.add.at(p, edge_index[:, 0], w)
    np.add.at(p, edge_index[:, 1], w)
    p /= two_w
    adj = [dict() for _ in range(n)]
    for (i, j), wt in zip(edge_index, w):
        f = wt / two_w
        adj[i][j] = adj[i].get(j, 0.0) + f
        adj[j][i] = adj[j].get(i, 0.0) + f

    level = _Level(p, np.zeros(n), adj)
    mapping = np.arange(n)
    lvl_order = np.asarray(order)
    while True:
        mod = _greedy_once(level, lvl_order)
        uniq = np.unique(mod)
        if uniq.size == len(level.p):
            break
        level, inv = _coarsen(level, mod)
        mapping = inv[mapping]
        lvl_order = np.arange(len(level.p))
    return mapping


# ---------------------------------------------------------------------------
# desired-count enforcement and the public passes
# ---------------------------------------------------------------------------


def _merge_to_desired(g: ConnectivityGraph, assignment, desired):
    """Greedily merge the community pair whose merge least increases the
    map equation until the count is <= desired. Ties break on the lowest
    community id pair."""
    assignment = np.asarray(assignment, dtype=np.int64).copy()
    k = int(assignment.max()) + 1
    if k <= desired:
        return assignment
    w = g.strengths
    two_w = 2.0 * float(w.sum())
    s = np.zeros(g.num_nodes)
    np.add.at(s, g.edge_index[:, 0], w)
    np.add.at(s, g.edge_index[:, 1], w)
    p_node = s / two_w

    p_mod = np.zeros(k)
    np.add.at(p_mod, assignment, p_node)
    flow = np.zeros((k, k))
    for (i, j), wt in zip(g.edge_index, w):
        a, b = assignment[i], assignment[j]
        f = wt / two_w
        if a != b:
            flow[a, b] += f
            flow[b, a] += f
    q_mod = flow.sum(axis=1)
    alive = np.ones(k, dtype=bool)

    while int(alive.sum()) > desired:
        q_tot = q_mod[alive].sum()
        qa = q_mod[:, None]
        qb = q_mod[None, :]
        q_ab = qa + qb - 2.0 * flow
        p_ab = p_mod[:, None] + p_mod[None, :]
        delta = (
            _plogp(q_tot - 2.0 * flow)
            - _plogp(q_tot)
            - 2.0 * (_plogp(q_ab) - _plogp(qa) - _plogp(qb))
            + _plogp(q_ab + p_ab)
            - _plogp(qa + p_mod[:, None])
            - _plogp(qb + p_mod[None, :])
        )
        mask = np.triu(np.ones((k, k), dtype=bool), 1) & alive[:, None] & alive[None, :]
        delta = np.where(mask, delta, np.inf)
        a, b = np.unravel_index(int(np.argmin(delta)), delta.shape)
        q_mod[a] = q_mod[a] + q_mod[b] - 2.0 * flow[a, b]
        p_mod[a] += p_mod[b]
        flow[a, :] += flow[b, :]
        flow[:, a] += flow[:, b]
        flow[a, a] = 0.0
        flow[b, :] = 0.0
        flow[:, b] = 0.0
        alive[b] = False
        assignment[assignment == b] = a
    return assignment


def _canonical(assignment: np.ndarray) -> tuple[np.ndarray, int]:
    """Relabel so community ids appear in ascending order of first node."""
    assignment = np.asarray(assignment, dtype=np.int64)
    remap = {}
    out = np.empty_like(assignment)
    for i, a in enumerate(assignment):
        if a not in remap:
            remap[a] = len(remap)
        out[i] = remap[a]
    return out, len(remap)


def infomap_pass(
    g: ConnectivityGraph,
    desired_communities: int,
    seed: int = 0,
    exact_max_nodes: int = 12,
    restarts: int = 1,
) -> CommunityResult:
    """One community detection pass aiming for <= desired_communities.

    Graphs with at most ``exact_max_nodes`` nodes are solved exactly;
    larger graphs use the greedy search (optionally restarted with seeded
    node orders). If the optimum has more communities than desired, pairs
    are merged greedily; fewer is legitimate and left alone. A graph with
    no positive-strength edges yields all-singleton communities, and
    zero-strength nodes always stay singletons (they carry no flow, so
    their placement cannot change the codelength; isolation is the only
    deterministic choice).
    """
    if desired_communities < 1:
        raise ValidationError(f"desired_communities must be >= 1, got {desired_communities}")
    if g.num_nodes == 0:
        raise ValidationError("cannot detect communities on an empty graph")
    positive = g.strengths > 0
    if not positive.any():
        assignment = np.arange(g.num_nodes)
        return CommunityResult(assignment, g.num_nodes, map_equation(g, assignment))
    edge_index = g.edge_index[positive]
    strengths = g.strengths[positive]

    if g.num_nodes <= exact_max_nodes:
        assignment, _ = _exact_min_partition(g.num_nodes, edge_index, strengths)
    else:
        rng = np.random.default_rng(seed)
        best_assignment, best_l = None, np.inf
        for r in range(max(1, restarts)):
            order = np.arange(g.num_nodes) if r == 0 else rng.permutation(g.num_nodes)
            cand = _louvain_min(g.num_nodes, edge_index, strengths, order)
            l_val = map_equation(g, cand)
            if l_val < best_l - 1e-12:
                best_assignment, best_l = cand, l_val
        assignment = best_assignment

    degree = np.zeros(g.num_nodes)
    np.add.at(degree, edge_index[:, 0], strengths)
    np.add.at(degree, edge_index[:, 1], strengths)
    isolated = degree == 0
    if isolated.any():
        assignment = assignment.copy()
        assignment[isolated] = assignment.max() + 1 + np.arange(int(isolated.sum()))

    assignment = _merge_to_desired(g, _canonical(assignment)[0], desired_communities)
    assignment, k = _canonical(assignment)
    return CommunityResult(assignment, k, map_equation(g, assignment))


def iterative_group(
    g: ConnectivityGraph,
    t_e: float = 0.9,
    seed: int = 0,
    exact_max_nodes: int = 12,
    restarts: int = 1,
) -> CommunityResult:
    """Repeated detect/coarsen/fix loop assigning every node an ultimate id.

    Each round detects communities with a target of half the current node
    count, coarsens the graph (edge strength between two communities =
    mean of the current edge strengths linking them), then fixes and
    removes every community whose outward edges all have boundary weight
    above ``t_e`` (connection strength below 1 - t_e; vacuously true for
    isolated communities). Remaining nodes feed the next round until one
    community is left, which is then also assigned.
    """
    if not (0.0 < t_e < 1.0):
        raise ValidationError(f"t_e must lie in (0, 1), got {t_e}")
    if g.num_nodes == 0:
        raise ValidationError("cannot group an empty graph")

    n0 = g.num_nodes
    ultimate = np.full(n0, -1, dtype=np.int64)
    next_id = 0

    members = [list(m) for m in g.initial_nodes]
    edge_index = g.edge_index.copy()
    strengths = g.strengths.copy()
    num_nodes = n0
    prev_count = num_nodes + 1

    while num_nodes > 1:
        if num_nodes >= prev_count:
            raise AssertionError("node count failed to decrease; grouping cannot terminate")
        prev_count = num_nodes

        cur = ConnectivityGraph(num_nodes, edge_index, strengths, initial_nodes=members)
        res = infomap_pass(
            cur, max(1, num_nodes // 2), seed=seed,
            exact_max_nodes=exact_max_nodes, restarts=restarts,
        )
        com = res.assignment
        k = res.num_communities

        new_members = [[] for _ in range(k)]
        for v in range(num_nodes):
            new_members[com[v]].extend(members[v])

        # Mean strength of current edges between each community pair.
        sums: dict[tuple[int, int], float] = {}
        counts: dict[tuple[int, int], int] = {}
        for (i, j), st in zip(edge_index, strengths):
            a, b = int(com[i]), int(com[j])
            if a == b:
                continue
            key = (a, b) if a < b else (b, a)
            sums[key] = sums.get(key, 0.0) + float(st)
            counts[key] = counts.get(key, 0) + 1

        incident: list[list[float]] = [[] for _ in range(k)]
        coarse_edges, coarse_strengths = [], []
        for key in sorted(sums):
            mean = sums[key] / counts[key]
            if mean > 0:
                coarse_edges.append(key)
                coarse_strengths.append(mean)
            incident[key[0]].append(mean)
            incident[key[1]].append(mean)

        # Fix communities whose outward connections are all weak.
        fixed = np.zeros(k, dtype=bool)
        for a in range(k):
            if all(st < 1.0 - t_e for st in incident[a]):
                for node in new_members[a]:
                    ultimate[node] = next_id
                next_id += 1
                fixed[a] = True

        keep = np.where(~fixed)[0]
        relabel = {int(old): new for new, old in enumerate(keep)}
        members = [new_members[int(old)] for old in keep]
        kept_edges, kept_strengths = [], []
        for (a, b), st in zip(coarse_edges, coarse_strengths):
            if not fixed[a] and not fixed[b]:
                kept_edges.append((relabel[a], relabel[b]))
                kept_strengths.append(st)
        edge_index = np.array(kept_edges, dtype=np.int64).reshape(-1, 2)
        strengths = np.array(kept_strengths, dtype=np.float64)
        num_nodes = len(members)

    if num_nodes == 1:
        for node in members[0]:
            ultimate[node] = next_id
        next_id += 1

    if (ultimate < 0).any():
        raise AssertionError("some initial nodes never received an ultimate community")
    assignment, k = _canonical(ultimate)
    return CommunityResult(assignment, k, 0.0)


# ---------------------------------------------------------------------------
# pixel-level regions
# ---------------------------------------------------------------------------


@dataclass
class RegionInfo:
    id: int
    bbox: tuple[int, int, int, int]  # (row0, col0, row1, col1), exclusive stop
    pixel_count: int
    anchor_height: int  # top edge of the region mask (minimum row index)
    mean_depth: float


@dataclass
class RegionMap:
    labels: np.ndarray  # (H, W) int32 region ids, contiguous
    regions: list[RegionInfo]

    def mask(self, region_id: int) -> np.ndarray:
        return self.labels == region_id


def regions_from_communities(
    spmap: SuperpixelMap, result: CommunityResult, depth: np.ndarray
) -> RegionMap:
    """Broadcast ultimate community ids through superpixel labels."""
    if result.assignment.shape[0] != spmap.count:
        raise ValidationError("community assignment does not cover all superpixels")
    labels = result.assignment[spmap.labels].astype(np.int32)
    n = result.num_communities
    flat = labels.ravel()
    counts = np.bincount(flat, minlength=n)
    depth_sums = np.bincount(flat, weights=np.asarray(depth, dtype=np.float64).ravel(), minlength=n)

    rows = np.repeat(np.arange(labels.shape[0]), labels.shape[1])
    cols = np.tile(np.arange(labels.shape[1]), labels.shape[0])
    r0 = np.full(n, labels.shape[0], dtype=np.int64)
    r1 = np.full(n, -1, dtype=np.int64)
    c0 = np.full(n, labels.shape[1], dtype=np.int64)
    c1 = np.full(n, -1, dtype=np.int64)
    np.minimum.at(r0, flat, rows)
    np.maximum.at(r1, flat, rows)
    np.minimum.at(c0, flat, cols)
    np.maximum.at(c1, flat, cols)

    regions = [
        RegionInfo(
            id=i,
            bbox=(int(r0[i]), int(c0[i]), int(r1[i]) + 1, int(c1[i]) + 1),
            pixel_count=int(counts[i]),
            anchor_height=int(r0[i]),
            mean_depth=float(depth_sums[i] / counts[i]) if counts[i] else 0.0,
        )
        for i in range(n)
    ]
    return RegionMap(labels=labels, regions=regions)
