import math

import numpy as np
import pytest
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra

from resparse.graphs import WeightedGraph, generate, read_edge_list
from resparse.linalg import exact_leverage
from resparse.spanner import (
    STRETCH_CONSTANT,
    check_mod_t_diameter_induction,
    default_forest_count,
    est_cluster,
    prob_spanner,
    spanner_estimate,
    spanner_estimate_detailed,
    write_spanner_forest,
)


def multi_scale_graph(n=120, p=0.08, seed=3, span=(-6, 7)):
    rng = np.random.default_rng(0)
    base = generate("gnp", n, seed=seed, p=p)
    edges = tuple(
        (u, v, float(2.0 ** rng.integers(span[0], span[1]))) for u, v, _ in base.edges
    )
    return WeightedGraph(n, edges)


def spanner_distances(g, lengths, span):
    u, v, _ = g.endpoint_arrays()
    idx = span.edge_indices()
    if len(idx) == 0:
        return np.full((g.n, g.n), np.inf)
    data = np.concatenate([lengths[idx], lengths[idx]])
    row = np.concatenate([u[idx], v[idx]])
    col = np.concatenate([v[idx], u[idx]])
    csr = sp.csr_matrix((data, (row, col)), shape=(g.n, g.n))
    csr.sum_duplicates()
    return dijkstra(csr, directed=False)


# ---------------------------------------------------------------------------
# est_cluster


def test_single_vertex_cluster():
    part = est_cluster(WeightedGraph(1, ()), beta=1 / 3, seed=0)
    assert part.k == 1
    assert part.trees == ((),)
    assert part.diameters.tolist() == [0]


def test_two_vertex_separation_frequency():
    g = generate("path", 2)
    separated = 0
    for s in range(500):
        part = est_cluster(g, beta=1 / 3, seed=s)
        separated += part.labels[0] != part.labels[1]
    assert separated / 500 <= 1 / 3 + 0.06


def test_partition_invariants_and_diameter_certificate():
    for fam, nn, p in [("path", 200, None), ("gnp", 150, 0.05)]:
        g = generate(fam, nn, seed=5, p=p)
        bound = 4.0 * 3.0 * math.log(nn)  # c0 / beta * ln n
        for s in range(20):
            part = est_cluster(g, beta=1 / 3, seed=s)
            # disjoint cover with one tree per cluster
            assert part.labels.min() >= 0 and part.labels.max() == part.k - 1
            sizes = np.bincount(part.labels, minlength=part.k)
            assert sizes.sum() == nn
            for c, tree in enumerate(part.trees):
                assert len(tree) == sizes[c] - 1
                for parent, child in tree:
                    assert part.labels[parent] == c and part.labels[child] == c
            assert part.diameters.max() <= bound + 1e-9


def test_path_clusters_are_intervals():
    g = generate("path", 200)
    for s in range(10):
        part = est_cluster(g, beta=1 / 3, seed=s)
        for c in range(part.k):
            vs = np.nonzero(part.labels == c)[0]
            assert vs.max() - vs.min() + 1 == len(vs)


def test_separation_rate_on_path():
    g = generate("path", 200)
    seps = np.zeros(g.m)
    trials = 150
    for s in range(trials):
        part = est_cluster(g, beta=1 / 3, seed=s)
        lab = part.labels
        for j, (u, v, _) in enumerate(g.edges):
            seps[j] += lab[u] != lab[v]
    assert (seps / trials).max() <= 1 / 3 + 0.08


def test_est_cluster_rejects_bad_beta():
    with pytest.raises(ValueError):
        est_cluster(generate("path", 4), beta=0.0, seed=0)
    with pytest.raises(ValueError):
        est_cluster(generate("path", 4), beta=1.0, seed=0)


def test_est_cluster_deterministic():
    g = generate("gnp", 60, seed=2, p=0.1)
    a = est_cluster(g, beta=1 / 3, seed=9)
    b = est_cluster(g, beta=1 / 3, seed=9)
    assert np.array_equal(a.labels, b.labels)
    assert a.trees == b.trees


# ---------------------------------------------------------------------------
# prob_spanner


def test_forest_count_formula():
    assert default_forest_count(200) == math.ceil(math.log2(8 * 4 * math.log2(200)))
    assert default_forest_count(2) >= 1


def test_spanner_tree_edges_follow_cluster_membership():
    g = generate("path", 50)
    lengths = np.ones(g.m)
    contained = np.zeros(g.m)
    trials = 200
    for s in range(trials):
        span = prob_spanner(g, lengths, seed=s)
        mask = np.zeros(g.m, dtype=bool)
        mask[span.edge_indices()] = True
        contained += mask
    # each tree edge survives whenever its endpoints share a cluster
    assert (contained / trials).min() >= (1 - 1 / 3) - 0.1


def test_spanner_respects_forest_budget():
    g = multi_scale_graph()
    lengths = 1.0 / g.endpoint_arrays()[2]
    for s in range(10):
        span = prob_spanner(g, lengths, seed=s)
        assert len(span.forests) <= span.t
        assert span.total_edges <= span.t * (g.n - 1)
        span.validate_acyclic(g)


def test_spanner_scale_tags_match_lengths():
    g = multi_scale_graph()
    lengths = 1.0 / g.endpoint_arrays()[2]
    span = prob_spanner(g, lengths, seed=4)
    for forest in span.forests:
        for idx, scale in zip(forest.edge_indices, forest.scales):
            assert math.floor(math.log2(lengths[idx])) == scale
            assert scale % span.t == forest.group


def test_spanner_stretch_probability_k20():
    g = generate("complete", 20)
    lengths = np.ones(g.m)
    thresh = STRETCH_CONSTANT * math.log2(20)
    u, v, _ = g.endpoint_arrays()
    hits = np.zeros(g.m)
    trials = 100
    for s in range(trials):
        span = prob_spanner(g, lengths, seed=s)
        D = spanner_distances(g, lengths, span)
        hits += (D[u, v] / lengths) <= thresh
    assert (hits / trials).min() >= 0.5 - 0.08


def test_mod_t_diameter_induction_strict_check():
    g = multi_scale_graph()
    lengths = 1.0 / g.endpoint_arrays()[2]
    for s in range(10):
        span = prob_spanner(g, lengths, seed=s)
        check_mod_t_diameter_induction(g, lengths, span)


def test_t_override_and_determinism():
    g = multi_scale_graph(n=60, p=0.15, seed=1)
    lengths = 1.0 / g.endpoint_arrays()[2]
    span = prob_spanner(g, lengths, seed=0, t_override=3)
    assert span.t == 3
    assert all(f.group < 3 for f in span.forests)
    a = prob_spanner(g, lengths, seed=7)
    b = prob_spanner(g, lengths, seed=7)
    assert a == b
    c = prob_spanner(g, lengths, seed=7, threads=4)
    assert a == c  # thread count must not change the output


def test_prob_spanner_validates_lengths():
    g = generate("path", 5)
    with pytest.raises(ValueError):
        prob_spanner(g, np.ones(3), seed=0)
    with pytest.raises(ValueError):
        prob_spanner(g, np.array([1.0, -1.0, 1.0, 1.0]), seed=0)


# ---------------------------------------------------------------------------
# spanner_estimate


def test_tree_estimates_all_ones():
    tree = generate("path", 40)
    for s in range(10):
        est = spanner_estimate(tree, 4.0, seed=s)
        assert (est.values == 1.0).all()
        assert est.provenance == "spanner"


def test_k30_domination_and_quarter_bound():
    g = generate("complete", 30)
    exact = exact_leverage(g).values  # 2/30 per edge
    hits = 0
    for s in range(20):
        est, peel = spanner_estimate_detailed(g, 4.0, seed=s)
        off = ~peel.in_spanner
        assert (est.values[off] == 0.25).all()
        assert (exact[off] <= 0.25).all()
        if (est.values >= exact - 1e-12).all():
            hits += 1
    assert hits >= 19


def test_count_reduction_identity():
    g = generate("gnp", 100, seed=2, p=0.15)
    alpha_est = 8.0
    est, peel = spanner_estimate_detailed(g, alpha_est, seed=1)
    alpha = alpha_est / 10.0
    lhs = np.minimum(1.0, alpha * est.values).sum()
    rhs = peel.in_spanner.sum() + g.m * (alpha / alpha_est)
    assert lhs <= rhs + 1e-9


def test_peeling_stops_on_empty_residual():
    tree = generate("star", 6)
    est, peel = spanner_estimate_detailed(tree, 4.0, seed=0)
    assert (est.values == 1.0).all()
    assert peel.rounds_used < peel.k  # later rounds were no-ops


def test_alpha_est_validation():
    with pytest.raises(ValueError):
        spanner_estimate(generate("path", 4), 0.5, seed=0)


def test_spanner_estimate_deterministic():
    g = generate("gnp", 40, seed=4, p=0.2)
    a, pa = spanner_estimate_detailed(g, 4.0, seed=3)
    b, pb = spanner_estimate_detailed(g, 4.0, seed=3)
    assert np.array_equal(a.values, b.values)
    assert np.array_equal(pa.peel_round, pb.peel_round)


def test_spanner_serialization_round_trips():
    g = multi_scale_graph(n=40, p=0.2, seed=6)
    lengths = 1.0 / g.endpoint_arrays()[2]
    span = prob_spanner(g, lengths, seed=2)
    text = write_spanner_forest(g, span)
    assert "# forest" in text and "scale" in text
    back = read_edge_list(text)
    assert back.n == g.n and back.m == span.total_edges
    spanner_edges = sorted(g.edges[i] for i in span.edge_indices())
    assert sorted(back.edges) == spanner_edges
