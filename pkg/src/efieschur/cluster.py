"""
Oct-tree clustering of RWG unknowns, admissibility and the block partition.

Unknowns are placed at their edge midpoints. Each tree node owns a contiguous
range ``[start, stop)`` of the tree permutation ``tree.perm`` (tree position ->
basis index), so any node's unknowns are ``tree.perm[node.start:node.stop]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "Node",
    "ClusterTree",
    "BlockPartition",
    "NearFieldGraph",
    "build_tree",
    "admissible",
    "build_partition",
    "near_field_graph",
    "write_pattern",
    "read_pattern",
]

SQRT3 = np.sqrt(3.0)


@dataclass
class Node:
    id: int
    center: np.ndarray
    half_width: float
    level: int
    start: int
    stop: int
    children: list = field(default_factory=list)
    leaf_index: int = -1

    @property
    def size(self):
        return self.stop - self.start

    @property
    def is_leaf(self):
        return not self.children

    @property
    def diameter(self):
        return 2.0 * SQRT3 * self.half_width


@dataclass
class ClusterTree:
    nodes: list
    perm: np.ndarray
    leaves: list  # node ids in tree (depth-first) order
    leaf_size: int
    max_level: int | None

    @property
    def root(self):
        return self.nodes[0]

    @property
    def n(self):
        return len(self.perm)

    @property
    def n_leaves(self):
        return len(self.leaves)

    @property
    def levels(self):
        return max(nd.level for nd in self.nodes)

    def indices(self, node_id):
        nd = self.nodes[node_id]
        return self.perm[nd.start:nd.stop]

    def leaf_indices(self):
        """Basis indices of each leaf, in leaf order."""
        return [self.indices(i) for i in self.leaves]

    def nodes_per_level(self):
        counts = np.zeros(self.levels + 1, dtype=int)
        for nd in self.nodes:
            counts[nd.level] += 1
        return counts


def build_tree(basis, mesh=None, leaf_size=100, max_level=None):
    """
    Recursive octant split of the bounding cube of the basis midpoints.

    Empty octants are pruned; a node becomes a leaf when it holds at most
    ``leaf_size`` unknowns or sits at ``max_level``.
    """
    if leaf_size < 1:
        raise ValueError("leaf_size must be >= 1")
    if mesh is not None and mesh is not basis.mesh:
        raise ValueError("mesh does not belong to this basis")
    points = basis.centers
    n = len(points)
    lo, hi = points.min(axis=0), points.max(axis=0)
    center = 0.5 * (lo + hi)
    half = 0.5 * float(np.max(hi - lo))
    half = half * (1.0 + 1e-9) + 1e-12 * max(1.0, float(np.abs(center).max()))

    nodes = []
    leaves = []
    perm = np.empty(n, dtype=np.int64)
    cursor = 0

    def make(idx, c, h, level):
        nonlocal cursor
        nd = Node(len(nodes), c, h, level, cursor, cursor)
        nodes.append(nd)
        at_cap = max_level is not None and level >= max_level
        if len(idx) <= leaf_size or at_cap:
            idx = np.sort(idx)
            perm[cursor:cursor + len(idx)] = idx
            cursor += len(idx)
            nd.stop = cursor
            nd.leaf_index = len(leaves)
            leaves.append(nd.id)
            return nd.id
        p = points[idx]
        code = (
            (p[:, 0] >= c[0]).astype(int)
            + 2 * (p[:, 1] >= c[1]).astype(int)
            + 4 * (p[:, 2] >= c[2]).astype(int)
        )
        for octant in range(8):
            sub = idx[code == octant]
            if sub.size == 0:
                continue
            offs = np.array([(octant >> b) & 1 for b in range(3)], float) * 2.0 - 1.0
            child = make(sub, c + 0.5 * h * offs, 0.5 * h, level + 1)
            nd.children.append(child)
        nd.stop = cursor
        return nd.id

    make(np.arange(n), center, half, 0)
    return ClusterTree(nodes, perm, leaves, leaf_size, max_level)


def admissible(t, s, eta=1.0):
    """
    min(dia_t, dia_s) <= eta * dist(t, s) with cube diagonals as diameters and
    dist = centre distance minus both half-diagonals, floored at zero.
    """
    gap = np.linalg.norm(np.asarray(t.center) - np.asarray(s.center)) - SQRT3 * (
        t.half_width + s.half_width
    )
    gap = max(gap, 0.0)
    return bool(min(t.diameter, s.diameter) <= eta * gap)


@dataclass
class BlockPartition:
    """
    ``far`` holds admissible (t, s, level) node pairs; ``near`` holds leaf-index
    pairs (t, s) that stay dense. Together they tile the N x N matrix exactly once.
    """

    tree: ClusterTree
    far: list
    near: list
    eta: float

    def block_shape(self, t, s, kind="near"):
        tr = self.tree
        if kind == "near":
            t, s = tr.leaves[t], tr.leaves[s]
        return tr.nodes[t].size, tr.nodes[s].size

    def coverage(self):
        tot = sum(a * b for a, b in (self.block_shape(t, s) for t, s in self.near))
        tot += sum(a * b for a, b in (self.block_shape(t, s, "far") for t, s, _ in self.far))
        return tot

    def near_neighbors(self):
        nb = [[] for _ in range(self.tree.n_leaves)]
        for t, s in self.near:
            nb[t].append(s)
        return nb


def build_partition(tree, eta=1.0):
    """Dual-tree traversal from (root, root)."""
    if not eta > 0:
        raise ValueError("eta must be positive")
    nodes = tree.nodes
    far, near = [], []
    stack = [(0, 0)]
    while stack:
        ti, si = stack.pop()
        t, s = nodes[ti], nodes[si]
        if admissible(t, s, eta):
            far.append((ti, si, min(t.level, s.level)))
        elif t.is_leaf and s.is_leaf:
            near.append((t.leaf_index, s.leaf_index))
        else:
            tc = t.children or [ti]
            sc = s.children or [si]
            stack.extend((a, b) for a in tc for b in sc)
    far.sort()
    near.sort()
    return BlockPartition(tree, far, near, eta)


@dataclass
class NearFieldGraph:
    """Leaf adjacency from off-diagonal near pairs; ``adjacency[v]`` is sorted."""

    adjacency: list

    @property
    def n(self):
        return len(self.adjacency)

    def degree(self):
        return np.array([len(a) for a in self.adjacency], dtype=int)

    def edges(self):
        return [(u, v) for u, nb in enumerate(self.adjacency) for v in nb if u < v]

    @classmethod
    def from_edges(cls, n, edges):
        adj = [set() for _ in range(n)]
        for u, v in edges:
            if u != v:
                adj[u].add(v)
                adj[v].add(u)
        return cls([np.array(sorted(a), dtype=np.int64) for a in adj])

    def permuted(self, order):
        """Graph relabelled so that new vertex ``i`` is old vertex ``order[i]``."""
        order = np.asarray(order)
        new_of_old = np.empty_like(order)
        new_of_old[order] = np.arange(len(order))
        return NearFieldGraph.from_edges(
            self.n, [(new_of_old[u], new_of_old[v]) for u, v in self.edges()]
        )


def near_field_graph(partition):
    return NearFieldGraph.from_edges(partition.tree.n_leaves, partition.near)


def write_pattern(path, partition, leaf_order=None, extra=()):
    """
    Text dump of the block structure, one block per line::

        t s kind level rows cols

    Near blocks use leaf numbers (relabelled by ``leaf_order`` when given, new
    leaf ``i`` = old leaf ``leaf_order[i]``); far blocks use tree node ids.
    ``extra`` may add lines such as ``(t, s, "fill", level, rows, cols)``.
    """
    tree = partition.tree
    if leaf_order is None:
        relabel = np.arange(tree.n_leaves)
    else:
        relabel = np.empty(tree.n_leaves, dtype=int)
        relabel[np.asarray(leaf_order)] = np.arange(tree.n_leaves)
    lines = ["# t s kind level rows cols"]
    for t, s in partition.near:
        r, c = partition.block_shape(t, s)
        lvl = tree.nodes[tree.leaves[t]].level
        lines.append(f"{relabel[t]} {relabel[s]} near {lvl} {r} {c}")
    for t, s, lvl in partition.far:
        r, c = partition.block_shape(t, s, "far")
        lines.append(f"{t} {s} far {lvl} {r} {c}")
    for t, s, kind, lvl, r, c in extra:
        lines.append(f"{t} {s} {kind} {lvl} {r} {c}")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    tmp.replace(path)


def read_pattern(path):
    """Parse a pattern dump into a list of (t, s, kind, level, rows, cols) tuples."""
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        tok = line.split()
        if len(tok) != 6:
            raise ValueError(f"line {lineno}: expected 6 fields")
        out.append((int(tok[0]), int(tok[1]), tok[2], int(tok[3]), int(tok[4]), int(tok[5])))
    return out
