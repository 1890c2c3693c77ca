"""Community detection against exhaustive and transcription oracles."""

import numpy as np
import pytest

from conftest import (
    adjusted_rand_index,
    oracle_exhaustive_min,
    oracle_greedy_merge,
    oracle_map_equation,
)
from depthgroup.community import (
    CommunityResult,
    ConnectivityGraph,
    _canonical,
    infomap_pass,
    iterative_group,
    map_equation,
    regions_from_communities,
)
from depthgroup.errors import ValidationError
from depthgroup.superpixels import SuperpixelMap


def two_cliques(strength_intra=0.9, strength_bridge=0.05, size=5, jitter=None):
    edges, w = [], []
    rng = np.random.default_rng(0) if jitter else None
    for off in (0, size):
        for i in range(size):
            for j in range(i + 1, size):
                edges.append((off + i, off + j))
                w.append(strength_intra + (rng.uniform(-jitter, jitter) if jitter else 0.0))
    edges.append((0, size))
    w.append(strength_bridge)
    return ConnectivityGraph(2 * size, np.array(edges), np.array(w))


def random_graph(n, seed, density=0.6):
    """Random weighted graph with no isolated nodes (zero-flow nodes tie
    every partition containing them, so the optimum would not be unique)."""
    rng = np.random.default_rng(seed)
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < density]
    touched = {v for e in edges for v in e}
    for v in range(n):
        if v not in touched and n > 1:
            edges.append((min(v, (v + 1) % n), max(v, (v + 1) % n)))
    w = rng.uniform(0.02, 0.98, size=len(edges))
    return ConnectivityGraph(n, np.array(edges).reshape(-1, 2), np.array(w))


class TestMapEquation:
    def test_matches_textbook_evaluation(self):
        for seed in range(10):
            g = random_graph(8, seed)
            rng = np.random.default_rng(seed + 100)
            assignment = rng.integers(0, 3, size=8)
            assignment = _canonical(assignment)[0]
            expected = oracle_map_equation(
                8, [tuple(e) for e in g.edge_index], g.strengths.tolist(), assignment.tolist()
            )
            assert abs(map_equation(g, assignment) - expected) < 1e-12

    def test_edgeless_graph_is_zero(self):
        g = ConnectivityGraph(4, np.zeros((0, 2), int), np.zeros(0))
        assert map_equation(g, np.arange(4)) == 0.0


class TestInfomapPass:
    def test_single_node(self):
        g = ConnectivityGraph(1, np.zeros((0, 2), int), np.zeros(0))
        res = infomap_pass(g, 1)
        assert res.num_communities == 1
        assert res.assignment.tolist() == [0]

    def test_empty_graph_rejected(self):
        g = ConnectivityGraph(0, np.zeros((0, 2), int), np.zeros(0))
        with pytest.raises(ValidationError):
            infomap_pass(g, 1)

    def test_no_edges_gives_singletons(self):
        g = ConnectivityGraph(5, np.zeros((0, 2), int), np.zeros(0))
        res = infomap_pass(g, 2)
        assert res.num_communities == 5

    def test_zero_flow_nodes_stay_singleton(self):
        """Isolated nodes tie every placement; the deterministic rule is to
        leave them alone (given enough room under the desired count)."""
        edges = np.array([[0, 1], [1, 2], [0, 2]])
        g = ConnectivityGraph(5, edges, np.array([0.9, 0.9, 0.9]))
        res = infomap_pass(g, 4)
        assert res.assignment[0] == res.assignment[1] == res.assignment[2]
        assert res.assignment[3] != res.assignment[4]
        assert res.assignment[3] not in res.assignment[:3]

    def test_two_cliques_recovered(self):
        """The known optimum: each clique is one community."""
        g = two_cliques()
        res = infomap_pass(g, 2)
        assert res.assignment.tolist() == [0] * 5 + [1] * 5
        # equals the exhaustive optimum
        oracle_l, _ = oracle_exhaustive_min(
            10, [tuple(e) for e in g.edge_index], g.strengths.tolist()
        )
        assert abs(res.codelength - oracle_l) < 1e-9

    def test_exhaustive_equality_random_graphs(self):
        """Exact-solver result equals an independent exhaustive search,
        with the desired-count merge applied identically."""
        rng = np.random.default_rng(42)
        sizes = list(rng.integers(3, 10, size=40)) + [10, 10, 11]
        for idx, n in enumerate(sizes):
            g = random_graph(int(n), 1000 + idx)
            desired = max(1, int(n) // 2)
            res = infomap_pass(g, desired, exact_max_nodes=12)
            edges = [tuple(e) for e in g.edge_index]
            weights = g.strengths.tolist()
            _, best_assign = oracle_exhaustive_min(int(n), edges, weights)
            merged = oracle_greedy_merge(int(n), edges, weights, best_assign, desired)
            oracle_final = oracle_map_equation(int(n), edges, weights, merged)
            assert res.num_communities == max(merged) + 1, f"size {n} seed {1000 + idx}"
            assert abs(res.codelength - oracle_final) < 1e-9, f"size {n} seed {1000 + idx}"

    def test_exhaustive_equality_twelve_nodes(self):
        """The largest exactly-solved size, against the independent oracle.

        Slow (~15 s): the oracle enumerates all 4.2M partitions.
        """
        g = random_graph(12, 321)
        res = infomap_pass(g, 6, exact_max_nodes=12)
        edges = [tuple(e) for e in g.edge_index]
        weights = g.strengths.tolist()
        _, best_assign = oracle_exhaustive_min(12, edges, weights)
        merged = oracle_greedy_merge(12, edges, weights, best_assign, 6)
        assert abs(res.codelength - oracle_map_equation(12, edges, weights, merged)) < 1e-9
        assert res.num_communities == max(merged) + 1

    def test_planted_partition_ari(self):
        """4 blocks x 20 nodes, strong intra, weak inter: exact recovery."""
        for seed in range(5):
            rng = np.random.default_rng(seed)
            n = 80
            truth = np.repeat(np.arange(4), 20)
            edges, w = [], []
            for i in range(n):
                for j in range(i + 1, n):
                    edges.append((i, j))
                    if truth[i] == truth[j]:
                        w.append(0.8 + rng.uniform(-0.05, 0.05))
                    else:
                        w.append(0.05 + rng.uniform(-0.02, 0.02))
            g = ConnectivityGraph(n, np.array(edges), np.array(w))
            res = infomap_pass(g, 4, seed=seed)
            assert adjusted_rand_index(res.assignment.tolist(), truth.tolist()) >= 0.9

    def test_codelength_never_above_trivial_partitions(self):
        for seed in range(15):
            n = int(np.random.default_rng(seed).integers(4, 24))
            g = random_graph(n, seed + 500)
            res = infomap_pass(g, max(1, n // 2), seed=seed)
            singles = map_equation(g, np.arange(n))
            one = map_equation(g, np.zeros(n, int))
            assert res.codelength <= singles + 1e-9
            assert res.codelength <= one + 1e-9

    def test_determinism(self):
        g = random_graph(40, 9, density=0.2)
        a = infomap_pass(g, 10, seed=3, restarts=3)
        b = infomap_pass(g, 10, seed=3, restarts=3)
        assert np.array_equal(a.assignment, b.assignment)
        assert a.codelength == b.codelength

    def test_greedy_path_not_below_exact(self):
        """The heuristic can only do as well as the global optimum."""
        for seed in range(10):
            g = random_graph(9, seed + 77)
            exact = infomap_pass(g, 9, exact_max_nodes=12)
            greedy = infomap_pass(g, 9, exact_max_nodes=0, restarts=3)
            assert greedy.codelength >= exact.codelength - 1e-9


# ---------------------------------------------------------------------------
# literal transcription of the iterative procedure, run with the
# exhaustive-search detector (independent of the library code)
# ---------------------------------------------------------------------------


def transcribed_iterative(n, edges, weights, t_e):
    nodes = {v: [v] for v in range(n)}  # node id -> initial nodes inside
    g_edges = {tuple(sorted(e)): w for e, w in zip(edges, weights)}
    next_id = 0
    ultimate = {}

    while len(nodes) > 1:
        ids = sorted(nodes)
        remap = {v: k for k, v in enumerate(ids)}
        sub_edges = [(remap[a], remap[b]) for (a, b) in g_edges]
        sub_w = list(g_edges.values())
        _, assign = oracle_exhaustive_min(len(ids), sub_edges, sub_w)
        assign = oracle_greedy_merge(len(ids), sub_edges, sub_w, assign, max(1, len(ids) // 2))

        members = {}
        for pos, v in enumerate(ids):
            members.setdefault(assign[pos], []).append(v)

        sums, counts = {}, {}
        for (a, b), w in g_edges.items():
            ca, cb = assign[remap[a]], assign[remap[b]]
            if ca == cb:
                continue
            key = tuple(sorted((ca, cb)))
            sums[key] = sums.get(key, 0.0) + w
            counts[key] = counts.get(key, 0) + 1
        new_edges = {k: sums[k] / counts[k] for k in sums}

        new_nodes = {c: sum((nodes[v] for v in vs), []) for c, vs in members.items()}
        for c in sorted(new_nodes):
            incident = [w for (a, b), w in new_edges.items() if c in (a, b)]
            if all(w < 1.0 - t_e for w in incident):
                for init in new_nodes[c]:
                    ultimate[init] = next_id
                next_id += 1
                del new_nodes[c]
                new_edges = {k: w for k, w in new_edges.items() if c not in k}

        keep = sorted(new_nodes)
        relabel = {c: k for k, c in enumerate(keep)}
        nodes = {relabel[c]: new_nodes[c] for c in keep}
        g_edges = {
            tuple(sorted((relabel[a], relabel[b]))): w for (a, b), w in new_edges.items()
        }

    if len(nodes) == 1:
        for init in next(iter(nodes.values())):
            ultimate[init] = next_id

    out = [ultimate[v] for v in range(n)]
    remap, compact = {}, []
    for v in out:
        if v not in remap:
            remap[v] = len(remap)
        compact.append(remap[v])
    return compact


def chain_of_three():
    """Three 4-cliques in a row; the first boundary is weak (separable),
    the second strong (not separable at t_e = 0.9)."""
    rng = np.random.default_rng(5)
    edges, w = [], []
    for off in (0, 4, 8):
        for i in range(4):
            for j in range(i + 1, 4):
                edges.append((off + i, off + j))
                w.append(0.88 + rng.uniform(-0.04, 0.04))
    edges.append((3, 4))
    w.append(0.05)
    edges.append((7, 8))
    w.append(0.45)
    return ConnectivityGraph(12, np.array(edges), np.array(w))


class TestIterativeGroup:
    def test_single_node(self):
        g = ConnectivityGraph(1, np.zeros((0, 2), int), np.zeros(0))
        res = iterative_group(g, t_e=0.9)
        assert res.num_communities == 1

    def test_two_cliques_fixed_first_round(self):
        """Boundary weight 0.99 (> t_e) separates both cliques immediately."""
        g = two_cliques(strength_intra=0.9, strength_bridge=0.01, jitter=0.02)
        res = iterative_group(g, t_e=0.9)
        assert res.num_communities == 2
        assert res.assignment.tolist() == [0] * 5 + [1] * 5

    def test_chain_matches_transcription(self):
        g = chain_of_three()
        res = iterative_group(g, t_e=0.9, exact_max_nodes=12)
        expected = transcribed_iterative(
            12, [tuple(e) for e in g.edge_index], g.strengths.tolist(), 0.9
        )
        assert res.assignment.tolist() == expected

    def test_random_small_graphs_match_transcription(self):
        for seed in range(12):
            n = int(np.random.default_rng(seed).integers(4, 11))
            g = random_graph(n, seed + 2000, density=0.5)
            res = iterative_group(g, t_e=0.9, exact_max_nodes=12)
            expected = transcribed_iterative(
                n, [tuple(e) for e in g.edge_index], g.strengths.tolist(), 0.9
            )
            assert res.assignment.tolist() == expected, f"n={n} seed={seed + 2000}"

    def test_partition_property(self):
        g = random_graph(30, 11, density=0.2)
        res = iterative_group(g, t_e=0.9)
        assert res.assignment.shape == (30,)
        assert res.assignment.min() >= 0
        assert set(np.unique(res.assignment)) == set(range(res.num_communities))

    def test_determinism(self):
        g = random_graph(60, 13, density=0.15)
        a = iterative_group(g, t_e=0.9, seed=1)
        b = iterative_group(g, t_e=0.9, seed=1)
        assert np.array_equal(a.assignment, b.assignment)

    def test_bad_t_e_rejected(self):
        g = two_cliques()
        with pytest.raises(ValidationError):
            iterative_group(g, t_e=1.5)


class TestRegionsFromCommunities:
    def test_identity_assignment(self):
        labels = np.arange(12, dtype=np.int32).reshape(3, 4)
        spmap = SuperpixelMap(labels=labels, count=12)
        res = CommunityResult(assignment=np.arange(12), num_communities=12)
        rmap = regions_from_communities(spmap, res, np.ones((3, 4)))
        assert np.array_equal(rmap.labels, labels)

    def test_all_to_one(self):
        labels = np.arange(12, dtype=np.int32).reshape(3, 4)
        spmap = SuperpixelMap(labels=labels, count=12)
        res = CommunityResult(assignment=np.zeros(12, int), num_communities=1)
        rmap = regions_from_communities(spmap, res, np.full((3, 4), 2.0))
        assert (rmap.labels == 0).all()
        assert len(rmap.regions) == 1
        assert rmap.regions[0].pixel_count == 12
        assert rmap.regions[0].anchor_height == 0
        assert abs(rmap.regions[0].mean_depth - 2.0) < 1e-12

    def test_metadata_matches_brute_force(self):
        rng = np.random.default_rng(17)
        labels = rng.integers(0, 6, size=(20, 30)).astype(np.int32)
        _, labels = np.unique(labels, return_inverse=True)
        labels = labels.reshape(20, 30).astype(np.int32)
        count = labels.max() + 1
        spmap = SuperpixelMap(labels=labels, count=count)
        assignment = rng.integers(0, 3, size=count)
        assignment = _canonical(assignment)[0]
        depth = rng.uniform(1, 50, size=(20, 30))
        rmap = regions_from_communities(
            spmap, CommunityResult(assignment, assignment.max() + 1), depth
        )
        for region in rmap.regions:
            mask = rmap.labels == region.id
            rows, cols = np.nonzero(mask)
            assert region.pixel_count == mask.sum()
            assert region.bbox == (rows.min(), cols.min(), rows.max() + 1, cols.max() + 1)
            assert region.anchor_height == rows.min()
            assert abs(region.mean_depth - depth[mask].mean()) < 1e-9
