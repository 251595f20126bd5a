"""Connected components, distance transform, thinning and trunk/branch split."""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage as ndi
from skimage.morphology import skeletonize as _lee_skeletonize

from .errors import EmptyMask, EmptySkeleton, NotSingleComponent

MAIN = 1
BRANCH = 2

_CONNECTIVITY_RANK = {6: 1, 18: 2, 26: 3}
_OFFSETS26 = [d for d in itertools.product((-1, 0, 1), repeat=3) if d != (0, 0, 0)]


def structure(connectivity: int) -> np.ndarray:
    try:
        rank = _CONNECTIVITY_RANK[connectivity]
    except KeyError:
        raise ValueError(f"connectivity must be 6, 18 or 26, got {connectivity}") from None
    return ndi.generate_binary_structure(3, rank)


@dataclass(frozen=True)
class LabelMap:
    """Component labels 1..K, largest first; ``sizes[k-1]`` is the size of label k."""

    labels: np.ndarray
    sizes: np.ndarray

    @property
    def count(self) -> int:
        return len(self.sizes)


def connected_components(mask: np.ndarray, connectivity: int = 26) -> LabelMap:
    """Label connected foreground voxels in canonical order.

    Labels are sorted by decreasing size; equal sizes are ordered by the
    lexicographically smallest ``(x, y, z)`` voxel of each component.
    """
    mask = np.asarray(mask) != 0
    raw, k = ndi.label(mask, structure=structure(connectivity))
    if k == 0:
        return LabelMap(np.zeros(mask.shape, dtype=np.int32), np.zeros(0, dtype=np.int64))
    flat = raw.ravel(order="C")
    fg = np.flatnonzero(flat)
    lab = flat[fg]
    # C-order flat index of an [x, y, z] array is lexicographic in (x, y, z)
    first = np.full(k + 1, np.iinfo(np.int64).max, dtype=np.int64)
    np.minimum.at(first, lab, fg)
    sizes = np.bincount(lab, minlength=k + 1)
    order = np.lexsort((first[1:], -sizes[1:])) + 1
    remap = np.zeros(k + 1, dtype=np.int32)
    remap[order] = np.arange(1, k + 1, dtype=np.int32)
    labels = remap[raw]
    return LabelMap(labels, sizes[order].astype(np.int64))


def largest_component(mask: np.ndarray, connectivity: int = 26) -> np.ndarray:
    lm = connected_components(mask, connectivity)
    if lm.count == 0:
        raise EmptyMask("mask has no foreground voxels")
    return (lm.labels == 1).astype(np.uint8)


def distance_transform(mask: np.ndarray, spacing=(1.0, 1.0, 1.0), return_indices: bool = False):
    """Euclidean distance (mm) from each foreground voxel to the nearest background.

    Voxels outside the grid count as background, so a foreground voxel on
    the border is at most one voxel step away from background. Background
    voxels get 0. With ``return_indices`` the coordinates of the nearest
    background voxel (possibly just outside the grid) are returned too.
    """
    mask = np.asarray(mask) != 0
    spacing = np.asarray(spacing, dtype=np.float64)
    padded = np.pad(mask, 1, constant_values=False)
    idx = ndi.distance_transform_edt(
        padded, sampling=spacing, return_distances=False, return_indices=True
    )
    grid = np.indices(padded.shape)
    sq = np.zeros(padded.shape, dtype=np.float64)
    for axis in range(3):
        sq += ((idx[axis] - grid[axis]) * spacing[axis]) ** 2
    dist = np.sqrt(sq)[1:-1, 1:-1, 1:-1]
    if return_indices:
        return dist, idx[:, 1:-1, 1:-1, 1:-1] - 1
    return dist


def neighbor_count(skel: np.ndarray) -> np.ndarray:
    """Number of 26-neighbours inside ``skel`` for every voxel."""
    s = (np.asarray(skel) != 0).astype(np.uint8)
    return ndi.convolve(s, np.ones((3, 3, 3), dtype=np.uint8), mode="constant") - s


def _locally_connected(points: list[tuple]) -> bool:
    if len(points) <= 1:
        return True
    remaining = set(points)
    stack = [remaining.pop()]
    while stack:
        p = stack.pop()
        for d in _OFFSETS26:
            q = (p[0] + d[0], p[1] + d[1], p[2] + d[2])
            if q in remaining:
                remaining.remove(q)
                stack.append(q)
    return not remaining


def _thin_redundant(skel: np.ndarray) -> np.ndarray:
    """Remove curve voxels whose skeleton neighbours stay connected without them.

    Lee thinning can leave 3-voxel corner triangles in 26-connected curves;
    these read as spurious junctions. Degree-1 voxels are never removed, so
    endpoints survive. Scan order is fixed (C order), making the result
    deterministic.
    """
    skel = skel.copy()
    pts = set(map(tuple, np.argwhere(skel)))
    changed = True
    while changed:
        changed = False
        for p in sorted(pts):
            nbrs = [
                (p[0] + d[0], p[1] + d[1], p[2] + d[2])
                for d in _OFFSETS26
                if (p[0] + d[0], p[1] + d[1], p[2] + d[2]) in pts
            ]
            if len(nbrs) < 2 or not _locally_connected(nbrs):
                continue
            pts.remove(p)
            skel[p] = False
            changed = True
    return skel


def skeletonize(mask: np.ndarray) -> np.ndarray:
    """Thin a single 26-connected component to a one-voxel-wide curve set.

    Uses directional simple-point deletion (Lee et al. thinning, six
    sub-iterations per pass), followed by removal of redundant corner voxels.
    """
    mask = np.asarray(mask) != 0
    lm = connected_components(mask, 26)
    if lm.count != 1:
        raise NotSingleComponent(f"skeletonize needs exactly one component, got {lm.count}")
    skel = _lee_skeletonize(np.pad(mask, 1))[1:-1, 1:-1, 1:-1] != 0
    return _thin_redundant(skel).astype(np.uint8)


@dataclass
class Node:
    id: int
    kind: str  # "endpoint", "junction", "isolated" or "cycle"
    voxels: list
    radius: float


@dataclass
class Edge:
    id: int
    u: int
    v: int
    voxels: list
    radii: list

    def mean_radius(self, nodes: list[Node]) -> float:
        if self.radii:
            return float(np.mean(self.radii))
        return float(np.mean([nodes[self.u].radius, nodes[self.v].radius]))


@dataclass
class CenterlineGraph:
    nodes: list = field(default_factory=list)
    edges: list = field(default_factory=list)
    root: int = 0

    def endpoints(self) -> list[Node]:
        return [n for n in self.nodes if n.kind == "endpoint"]

    def junctions(self) -> list[Node]:
        return [n for n in self.nodes if n.kind == "junction"]

    def incident(self, node_id: int) -> list[Edge]:
        return [e for e in self.edges if node_id in (e.u, e.v)]


def build_centerline_graph(skeleton: np.ndarray, distances: np.ndarray) -> CenterlineGraph:
    """Split a skeleton into nodes (endpoints, junction clusters) and edges.

    Voxels with one skeleton neighbour are endpoints; adjacent voxels with
    three or more neighbours are merged into one junction node; runs of
    two-neighbour voxels between nodes become edges. Each voxel's radius is
    its distance-transform value. The root is the node with the largest
    radius (lowest id on ties).
    """
    pts = [tuple(int(c) for c in p) for p in np.argwhere(np.asarray(skeleton) != 0)]
    if not pts:
        raise EmptySkeleton("skeleton has no voxels")
    pset = set(pts)

    def nbrs(p):
        return [
            q for q in ((p[0] + d[0], p[1] + d[1], p[2] + d[2]) for d in _OFFSETS26) if q in pset
        ]

    adj = {p: nbrs(p) for p in pts}
    radius = {p: float(distances[p]) for p in pts}

    node_of: dict[tuple, int] = {}
    nodes: list[Node] = []
    # junction clusters first, then endpoints/isolated, all in sorted voxel order
    for p in pts:
        if len(adj[p]) >= 3 and p not in node_of:
            cluster, stack = [], [p]
            node_of[p] = len(nodes)
            while stack:
                q = stack.pop()
                cluster.append(q)
                for r in adj[q]:
                    if len(adj[r]) >= 3 and r not in node_of:
                        node_of[r] = len(nodes)
                        stack.append(r)
            cluster.sort()
            nodes.append(Node(len(nodes), "junction", cluster, max(radius[q] for q in cluster)))
    for p in pts:
        if len(adj[p]) <= 1 and p not in node_of:
            node_of[p] = len(nodes)
            kind = "endpoint" if adj[p] else "isolated"
            nodes.append(Node(len(nodes), kind, [p], radius[p]))

    edges: list[Edge] = []
    visited: set = set()
    seen_direct: set = set()

    def walk(start_node: int, first_from, first):
        chain, prev, cur = [], first_from, first
        while cur not in node_of:
            if cur in visited:
                return
            visited.add(cur)
            chain.append(cur)
            nxt = [q for q in adj[cur] if q != prev]
            if not nxt:
                break
            prev, cur = cur, nxt[0]
        end = node_of.get(cur, start_node)
        if not chain:
            key = tuple(sorted((start_node, end)))
            if key in seen_direct or start_node == end:
                return
            seen_direct.add(key)
        edges.append(
            Edge(len(edges), start_node, end, chain, [radius[q] for q in chain])
        )

    def trace_from(node: Node):
        for p in node.voxels:
            for q in adj[p]:
                if node_of.get(q) == node.id:
                    continue
                walk(node.id, p, q)

    for node in list(nodes):
        trace_from(node)
    # closed loops without any node: anchor a node at the smallest voxel
    for p in pts:
        if p not in node_of and p not in visited:
            node_of[p] = len(nodes)
            node = Node(len(nodes), "cycle", [p], radius[p])
            nodes.append(node)
            trace_from(node)

    root = max(range(len(nodes)), key=lambda i: (nodes[i].radius, -i))
    return CenterlineGraph(nodes, edges, root)


def _label_skeleton(graph: CenterlineGraph, alpha: float, shape) -> np.ndarray:
    r_max = max(
        [n.radius for n in graph.nodes] + [r for e in graph.edges for r in e.radii]
    )
    thick = {e.id for e in graph.edges if e.mean_radius(graph.nodes) >= alpha * r_max}
    main_nodes, main_edges = {graph.root}, set()
    queue = deque([graph.root])
    while queue:
        n = queue.popleft()
        for e in graph.incident(n):
            if e.id in thick and e.id not in main_edges:
                main_edges.add(e.id)
                other = e.v if e.u == n else e.u
                if other not in main_nodes:
                    main_nodes.add(other)
                    queue.append(other)
    out = np.zeros(shape, dtype=np.uint8)
    for node in graph.nodes:
        for p in node.voxels:
            out[p] = MAIN if node.id in main_nodes else BRANCH
    for e in graph.edges:
        for p in e.voxels:
            out[p] = MAIN if e.id in main_edges else BRANCH
    return out


def _absorb_into_lumen(skel_labels: np.ndarray, dist: np.ndarray, spacing) -> np.ndarray:
    """Relabel branch centreline voxels lying inside the trunk's inscribed spheres.

    A branch centreline starts at the trunk axis, so its first stretch runs
    through trunk lumen; without this, the trunk's end cap is assigned to
    the branch.
    """
    main = skel_labels == MAIN
    branch = skel_labels == BRANCH
    if not main.any() or not branch.any():
        return skel_labels
    gap, idx = ndi.distance_transform_edt(~main, sampling=spacing, return_indices=True)
    inside = branch & (gap < dist[tuple(idx)])
    out = skel_labels.copy()
    out[inside] = MAIN
    return out


def decompose_main_vs_branches(
    mask: np.ndarray, spacing=(1.0, 1.0, 1.0), alpha: float = 0.5
) -> np.ndarray:
    """Label the mask 1 (main trunk) or 2 (branch).

    The largest component is skeletonised; skeleton edges whose mean radius
    is at least ``alpha`` times the largest radius, and that connect to the
    widest node, form the trunk. Every voxel of the component takes the
    label of its nearest skeleton voxel (in mm). Smaller components are
    branches.
    """
    mask = np.asarray(mask) != 0
    if not mask.any():
        raise EmptyMask("mask has no foreground voxels")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    main = largest_component(mask).astype(bool)
    regions = np.where(mask, BRANCH, 0).astype(np.uint8)

    # work inside the component's bounding box
    nz = np.argwhere(main)
    lo, hi = nz.min(axis=0), nz.max(axis=0) + 1
    box = tuple(slice(a, b) for a, b in zip(lo, hi))
    sub = main[box]
    dist = distance_transform(sub, spacing)
    skel = skeletonize(sub)
    graph = build_centerline_graph(skel, dist)
    skel_labels = _absorb_into_lumen(_label_skeleton(graph, alpha, sub.shape), dist, spacing)
    idx = ndi.distance_transform_edt(
        skel == 0, sampling=spacing, return_distances=False, return_indices=True
    )
    nearest = skel_labels[tuple(idx)]
    regions[box][sub] = nearest[sub]
    return regions
