"""
Bandwidth and wavefront reducing orderings of the near-field leaf graph.

All orderings return ``LeafOrdering.perm`` with ``perm[i]`` = the original leaf
placed at new position ``i``. Ties are broken by lowest original index and
disconnected components are handled one after another, starting with the
component holding the smallest unnumbered index.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass

import numpy as np

from .cluster import NearFieldGraph

__all__ = [
    "ALGORITHMS",
    "LeafOrdering",
    "PermutedProblem",
    "identity",
    "cuthill_mckee",
    "reverse_cuthill_mckee",
    "king",
    "sloan",
    "order_graph",
    "apply_ordering",
    "bandwidth",
    "profile",
    "wavefront",
    "pseudo_peripheral_pair",
]

ALGORITHMS = ("none", "cm", "rcm", "king", "sloan")


@dataclass(frozen=True)
class LeafOrdering:
    perm: np.ndarray
    algorithm: str = "none"

    def __post_init__(self):
        p = np.asarray(self.perm, dtype=np.int64)
        if sorted(p.tolist()) != list(range(p.size)):
            raise ValueError("ordering is not a permutation")
        object.__setattr__(self, "perm", p)

    @property
    def position(self):
        """Inverse map: ``position[old]`` = new index."""
        inv = np.empty_like(self.perm)
        inv[self.perm] = np.arange(self.perm.size)
        return inv

    def __len__(self):
        return self.perm.size


def _bfs_levels(adj, root, allowed=None):
    dist = {root: 0}
    q = deque([root])
    while q:
        v = q.popleft()
        for w in adj[v]:
            w = int(w)
            if w not in dist and (allowed is None or w in allowed):
                dist[w] = dist[v] + 1
                q.append(w)
    return dist


def _component(adj, root):
    return set(_bfs_levels(adj, root))


def pseudo_peripheral_pair(g, root):
    """
    Double-BFS heuristic inside the component of ``root``: repeatedly jump to the
    lowest-degree vertex of the last level set while eccentricity grows.
    Returns ``(start, end, dist_to_end)``.
    """
    adj = g.adjacency
    deg = g.degree()
    start = root
    dist = _bfs_levels(adj, start)
    ecc = max(dist.values())
    while True:
        last = [v for v, d in dist.items() if d == ecc]
        cand = min(last, key=lambda v: (deg[v], v))
        d2 = _bfs_levels(adj, cand)
        e2 = max(d2.values())
        if e2 > ecc:
            start, dist, ecc = cand, d2, e2
            continue
        return start, cand, d2


def _components_in_order(g):
    seen = np.zeros(g.n, dtype=bool)
    comps = []
    for v in range(g.n):
        if not seen[v]:
            c = _component(g.adjacency, v)
            for u in c:
                seen[u] = True
            comps.append((v, c))
    return comps


def _start_vertex(g, comp_root):
    # lowest degree, lowest index vertex seeds the peripheral search
    comp = _component(g.adjacency, comp_root)
    deg = g.degree()
    seed = min(comp, key=lambda v: (deg[v], v))
    return pseudo_peripheral_pair(g, seed)


def identity(g):
    return LeafOrdering(np.arange(g.n), "none")


def cuthill_mckee(g):
    """Breadth-first numbering with neighbours taken by increasing degree."""
    adj = g.adjacency
    deg = g.degree()
    order = []
    done = np.zeros(g.n, dtype=bool)
    for root, _ in _components_in_order(g):
        if done[root]:
            continue
        start, _, _ = _start_vertex(g, root)
        done[start] = True
        q = deque([start])
        while q:
            v = q.popleft()
            order.append(v)
            nb = sorted((int(w) for w in adj[v] if not done[w]), key=lambda w: (deg[w], w))
            for w in nb:
                done[w] = True
                q.append(w)
    return LeafOrdering(np.array(order, dtype=np.int64), "cm")


def reverse_cuthill_mckee(g):
    return LeafOrdering(cuthill_mckee(g).perm[::-1].copy(), "rcm")


def king(g):
    """
    King's front-minimizing variant: the next vertex is the front candidate
    that brings the fewest new (not yet fronted) vertices into the front.
    """
    adj = g.adjacency
    n = g.n
    numbered = np.zeros(n, dtype=bool)
    in_front = np.zeros(n, dtype=bool)
    order = []
    for root, _ in _components_in_order(g):
        if numbered[root]:
            continue
        start, _, _ = _start_vertex(g, root)
        candidates = {start}
        in_front[start] = True
        while candidates:
            best = min(
                candidates,
                key=lambda v: (sum(1 for w in adj[v] if not in_front[w] and not numbered[w]), v),
            )
            candidates.discard(best)
            numbered[best] = True
            order.append(best)
            for w in adj[best]:
                w = int(w)
                if not numbered[w] and not in_front[w]:
                    in_front[w] = True
                    candidates.add(w)
    return LeafOrdering(np.array(order, dtype=np.int64), "king")


_INACTIVE, _PREACTIVE, _ACTIVE, _POSTACTIVE = range(4)


def sloan(g, w_degree=2, w_distance=1):
    """
    Sloan's profile/wavefront ordering. Among queued vertices the one with the
    largest ``w_distance * dist_to_end - w_degree * (current degree + 1)`` is
    numbered next; equivalently the smallest degree-increment-minus-distance
    priority is taken.
    """
    adj = g.adjacency
    deg = g.degree()
    n = g.n
    status = np.full(n, _INACTIVE, dtype=np.int8)
    order = []
    for root, _ in _components_in_order(g):
        if status[root] == _POSTACTIVE:
            continue
        start, _end, dist = _start_vertex(g, root)
        prio = {v: w_distance * d - w_degree * (deg[v] + 1) for v, d in dist.items()}
        heap = [(-prio[start], start)]
        status[start] = _PREACTIVE

        def push(v):
            heapq.heappush(heap, (-prio[v], v))

        while heap:
            p, v = heapq.heappop(heap)
            if status[v] == _POSTACTIVE or -p != prio[v]:
                continue  # stale entry
            if status[v] == _PREACTIVE:
                for w in adj[v]:
                    w = int(w)
                    if status[w] == _POSTACTIVE:
                        continue
                    prio[w] += w_degree
                    if status[w] == _INACTIVE:
                        status[w] = _PREACTIVE
                    push(w)
            status[v] = _POSTACTIVE
            order.append(v)
            for w in adj[v]:
                w = int(w)
                if status[w] != _PREACTIVE:
                    continue
                status[w] = _ACTIVE
                prio[w] += w_degree
                push(w)
                for x in adj[w]:
                    x = int(x)
                    if status[x] == _POSTACTIVE:
                        continue
                    prio[x] += w_degree
                    if status[x] == _INACTIVE:
                        status[x] = _PREACTIVE
                    push(x)
    return LeafOrdering(np.array(order, dtype=np.int64), "sloan")


def order_graph(g, algorithm):
    algorithm = algorithm.lower()
    table = {
        "none": identity,
        "cm": cuthill_mckee,
        "rcm": reverse_cuthill_mckee,
        "king": king,
        "sloan": sloan,
    }
    if algorithm not in table:
        raise ValueError(f"unknown ordering {algorithm!r}; choose from {ALGORITHMS}")
    return table[algorithm](g)


# --- quality metrics (all on the graph relabelled by the ordering) ---


def _relabelled(g, ordering):
    if ordering is None:
        return g
    perm = ordering.perm if isinstance(ordering, LeafOrdering) else np.asarray(ordering)
    return g.permuted(perm)


def bandwidth(g, ordering=None):
    h = _relabelled(g, ordering)
    return max((abs(u - v) for u, v in h.edges()), default=0)


def profile(g, ordering=None):
    """Sum over rows of (row index - smallest neighbour index), diagonal included."""
    h = _relabelled(g, ordering)
    total = 0
    for i, nb in enumerate(h.adjacency):
        lo = min(int(nb.min()) if nb.size else i, i)
        total += i - lo
    return int(total)


def wavefront(g, ordering=None):
    """
    Per-step front sizes: at step i, the vertices numbered >= i that are i itself
    or adjacent to some vertex numbered <= i. Returns the array of front sizes.
    """
    h = _relabelled(g, ordering)
    n = h.n
    # vertex j joins the front at the first step min(j, min neighbour) and leaves after step j
    enter = np.array([min([i] + [int(x) for x in h.adjacency[i]]) for i in range(n)], dtype=np.int64)
    delta = np.zeros(n + 1, dtype=np.int64)
    np.add.at(delta, enter, 1)
    np.add.at(delta, np.arange(n) + 1, -1)
    return np.cumsum(delta)[:n]


@dataclass(frozen=True)
class PermutedProblem:
    """
    Leaf structure after reordering. ``leaf_order[i]`` is the original leaf at
    new position i; ``perm`` lists basis indices grouped by the new leaf order and
    ``leaf_slices[i]`` is new leaf i's range inside ``perm``.
    """

    ordering: LeafOrdering
    perm: np.ndarray
    leaf_slices: list

    @property
    def leaf_order(self):
        return self.ordering.perm

    def near_pairs(self, partition):
        """Near pairs relabelled to the new leaf numbering."""
        pos = self.ordering.position
        return sorted((int(pos[t]), int(pos[s])) for t, s in partition.near)

    def graph(self, partition):
        return NearFieldGraph.from_edges(len(self.ordering), self.near_pairs(partition))


def apply_ordering(ordering, tree, basis=None):
    """Regroup the global unknown permutation by the new leaf order."""
    if len(ordering) != tree.n_leaves:
        raise ValueError("ordering size does not match the leaf count")
    if basis is not None and basis.n != tree.n:
        raise ValueError("basis does not match the tree")
    chunks = tree.leaf_indices()
    perm, slices, at = [], [], 0
    for leaf in ordering.perm:
        c = chunks[leaf]
        perm.append(c)
        slices.append(slice(at, at + c.size))
        at += c.size
    perm = np.concatenate(perm) if perm else np.zeros(0, dtype=np.int64)
    return PermutedProblem(ordering, perm, slices)
