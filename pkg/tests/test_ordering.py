import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from efieschur import cluster
from efieschur import ordering as ordmod

ALGOS = ["cm", "rcm", "king", "sloan"]


@st.composite
def graphs(draw, max_n=40):
    n = draw(st.integers(1, max_n))
    pairs = st.tuples(st.integers(0, n - 1), st.integers(0, n - 1))
    edges = draw(st.lists(pairs, max_size=3 * n))
    return cluster.NearFieldGraph.from_edges(n, edges)


def _dense(g, perm):
    # adjacency matrix with row i = old vertex perm[i]
    a = np.zeros((g.n, g.n), dtype=bool)
    for u, v in g.edges():
        a[u, v] = a[v, u] = True
    np.fill_diagonal(a, True)
    return a[np.ix_(perm, perm)]


def brute_bandwidth(g, perm):
    i, j = np.nonzero(_dense(g, perm))
    return int(np.max(np.abs(i - j)))


def brute_profile(g, perm):
    a = _dense(g, perm)
    return int(sum(i - np.flatnonzero(a[i])[0] for i in range(g.n)))


def brute_wavefront(g, perm):
    a = _dense(g, perm)
    out = []
    for i in range(g.n):
        front = [j for j in range(i, g.n) if j == i or a[j, : i + 1].any()]
        out.append(len(front))
    return out


@settings(max_examples=60, deadline=None)
@given(graphs(), st.sampled_from(ALGOS))
def test_orderings_are_permutations(g, algo):
    o = ordmod.order_graph(g, algo)
    assert sorted(o.perm.tolist()) == list(range(g.n))
    assert np.array_equal(o.perm[o.position], np.arange(g.n))


@settings(max_examples=60, deadline=None)
@given(graphs(), st.sampled_from(["none"] + ALGOS))
def test_metrics_match_brute_force(g, algo):
    o = ordmod.order_graph(g, algo)
    assert ordmod.bandwidth(g, o) == brute_bandwidth(g, o.perm)
    assert ordmod.profile(g, o) == brute_profile(g, o.perm)
    assert ordmod.wavefront(g, o).tolist() == brute_wavefront(g, o.perm)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 60), st.data())
def test_rcm_on_relabelled_path(n, data):
    perm = data.draw(st.permutations(range(n)))
    g = cluster.NearFieldGraph.from_edges(n, [(perm[i], perm[i + 1]) for i in range(n - 1)])
    for algo in ALGOS:
        assert ordmod.bandwidth(g, ordmod.order_graph(g, algo)) == 1
    start, end, dist = ordmod.pseudo_peripheral_pair(g, perm[n // 2])
    assert {start, end} == {perm[0], perm[-1]}
    assert dist[start] == n - 1


def test_rcm_reverses_cm():
    rng = np.random.default_rng(0)
    edges = [tuple(rng.integers(0, 30, 2)) for _ in range(60)]
    g = cluster.NearFieldGraph.from_edges(30, edges)
    cm = ordmod.cuthill_mckee(g).perm
    np.testing.assert_array_equal(ordmod.reverse_cuthill_mckee(g).perm, cm[::-1])


def test_rcm_not_worse_than_random_labelling():
    rng = np.random.default_rng(1)
    for _ in range(50):
        n = int(rng.integers(20, 200))
        side = int(np.ceil(np.sqrt(n)))
        # grid graph with scrambled vertex labels
        lab = rng.permutation(side * side)
        edges = []
        for r in range(side):
            for c in range(side):
                if c + 1 < side:
                    edges.append((lab[r * side + c], lab[r * side + c + 1]))
                if r + 1 < side:
                    edges.append((lab[r * side + c], lab[(r + 1) * side + c]))
        g = cluster.NearFieldGraph.from_edges(side * side, edges)
        assert ordmod.bandwidth(g, ordmod.order_graph(g, "rcm")) <= ordmod.bandwidth(g)
        assert ordmod.bandwidth(g, ordmod.order_graph(g, "rcm")) <= 2 * side


def test_disconnected_components_all_numbered():
    g = cluster.NearFieldGraph.from_edges(7, [(0, 1), (1, 2), (4, 5)])
    for algo in ALGOS:
        assert sorted(ordmod.order_graph(g, algo).perm.tolist()) == list(range(7))


def test_star_graph():
    # every ordering of a star has bandwidth >= ceil((n - 1) / 2); front-based methods finish the hub early
    n = 9
    g = cluster.NearFieldGraph.from_edges(n, [(0, i) for i in range(1, n)])
    for algo in ALGOS:
        assert ordmod.bandwidth(g, ordmod.order_graph(g, algo)) >= (n - 1 + 1) // 2
    king = ordmod.king(g).perm.tolist()
    assert king.index(0) <= 1


def test_sloan_follows_path_from_peripheral_end():
    g = cluster.NearFieldGraph.from_edges(6, [(i, i + 1) for i in range(5)])
    assert ordmod.sloan(g).perm.tolist() in ([0, 1, 2, 3, 4, 5], [5, 4, 3, 2, 1, 0])


def test_sloan_improves_profile_on_plate(plate_operator):
    tree, part, _ = plate_operator
    g = cluster.near_field_graph(part)
    assert ordmod.profile(g, ordmod.sloan(g)) <= ordmod.profile(g)


def test_apply_ordering_regroups_unknowns(plate_operator):
    tree, part, _ = plate_operator
    g = cluster.near_field_graph(part)
    o = ordmod.sloan(g)
    pp = ordmod.apply_ordering(o, tree)
    assert sorted(pp.perm.tolist()) == list(range(tree.n))
    chunks = tree.leaf_indices()
    for new, old in enumerate(o.perm):
        np.testing.assert_array_equal(pp.perm[pp.leaf_slices[new]], chunks[old])
    assert pp.graph(part).edges() == g.permuted(o.perm).edges()
    with pytest.raises(ValueError):
        ordmod.apply_ordering(ordmod.LeafOrdering(np.arange(3)), tree)


def test_bad_inputs():
    with pytest.raises(ValueError):
        ordmod.LeafOrdering(np.array([0, 0, 1]))
    g = cluster.NearFieldGraph.from_edges(3, [(0, 1)])
    with pytest.raises(ValueError):
        ordmod.order_graph(g, "amd")
