"""Marking, conforming mesh refinement, nodal transfer, and coarsening.

Both refinement families share one storage convention (see module ``mesh``):
a triangle's first edge ``(v0, v1)`` is its reference edge.  Newest-vertex
bisection always splits the reference edge; red/green/blue refinement
classifies the split pattern against it.  Conformity closure is the usual
fixed point: whenever any edge of a triangle is due for bisection, its
reference edge is due as well.

Coarsening inverts refinement through the genealogy arena: a sibling group
whose members are all present and all marked collapses back to its recorded
parent, provided the midpoint nodes that would disappear are not referenced
anywhere else (this is the good-to-coarsen condition, enforced by a fixed
point that drops unsafe groups).
"""

import numpy as np

from .errors import GenerationMismatch, MetadataMissing, StrategyMismatch
from .fem import FeFunction
from .geometry import lift
from .mesh import Genealogy, SurfaceMesh


class MarkSet:
    """Set of triangle ids selected by a marking criterion."""

    __slots__ = ("marked", "criterion", "theta")

    def __init__(self, marked, criterion, theta):
        m = np.unique(np.asarray(marked, dtype=np.int64))
        self.marked = m
        self.criterion = criterion
        self.theta = float(theta)

    def __len__(self):
        return len(self.marked)

    def __repr__(self):
        return (f"MarkSet({len(self.marked)} elements, {self.criterion}, "
                f"theta={self.theta})")


def _check_indicators(indicators, theta):
    eta = np.asarray(indicators, dtype=float)
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must lie in (0, 1)")
    if np.any(eta < 0.0):
        raise ValueError("indicators must be nonnegative")
    return eta


def mark_refine(indicators, theta, criterion="bulk"):
    """Elements selected for refinement.

    bulk: all elements with ``eta >= theta * eta_max``.  doerfler: the
    smallest set of largest-indicator elements whose squared sum reaches
    ``(1 - theta)`` of the squared total.  Ties broken by lower element id;
    all-zero indicators give an empty set.
    """
    eta = _check_indicators(indicators, theta)
    if criterion == "bulk":
        eta_max = eta.max(initial=0.0)
        if eta_max == 0.0:
            return MarkSet([], criterion, theta)
        return MarkSet(np.nonzero(eta >= theta * eta_max)[0], criterion, theta)
    if criterion == "doerfler":
        total = float(np.sum(eta ** 2))
        if total == 0.0:
            return MarkSet([], criterion, theta)
        order = np.lexsort((np.arange(len(eta)), -eta))
        csum = np.cumsum(eta[order] ** 2)
        target = (1.0 - theta) * total
        k = int(np.argmax(csum >= target - 1e-12 * total)) + 1
        return MarkSet(order[:k], criterion, theta)
    raise ValueError(f"unknown marking criterion {criterion!r}")


def mark_coarsen(indicators, theta_star, criterion="bulk"):
    """Elements selected for coarsening (mirror of ``mark_refine``).

    bulk: all elements with ``eta <= theta_star * eta_max``.  doerfler:
    accumulate smallest-indicator elements while the squared sum stays within
    ``theta_star`` of the squared total.
    """
    eta = _check_indicators(indicators, theta_star)
    if criterion == "bulk":
        eta_max = eta.max(initial=0.0)
        return MarkSet(np.nonzero(eta <= theta_star * eta_max)[0],
                       criterion, theta_star)
    if criterion == "doerfler":
        total = float(np.sum(eta ** 2))
        budget = theta_star * total
        order = np.lexsort((np.arange(len(eta)), eta))
        csum = np.cumsum(eta[order] ** 2)
        k = int(np.searchsorted(csum, budget * (1.0 + 1e-12), side="right"))
        return MarkSet(order[:k], criterion, theta_star)
    raise ValueError(f"unknown marking criterion {criterion!r}")


class TransferMap:
    """Resolution of every node of a new mesh in terms of the old one.

    ``source_a[i]`` is an old node id; where ``source_b[i] >= 0`` the new
    node i is the midpoint of old edge ``(source_a[i], source_b[i])`` and
    receives the endpoint average, otherwise it copies ``source_a[i]``.
    """

    __slots__ = ("source_a", "source_b", "src_generation", "dst_generation",
                 "direction")

    def __init__(self, source_a, source_b, src_generation, dst_generation,
                 direction):
        self.source_a = np.asarray(source_a, dtype=np.int64)
        self.source_b = np.asarray(source_b, dtype=np.int64)
        self.src_generation = int(src_generation)
        self.dst_generation = int(dst_generation)
        self.direction = direction


def transfer(u_old, tmap):
    """Carry nodal values through a refinement step (exact P1 interpolation
    on the pre-lift mesh: copies at retained nodes, endpoint averages at
    edge midpoints)."""
    if u_old.generation != tmap.src_generation:
        raise GenerationMismatch(
            f"function generation {u_old.generation} does not match the "
            f"transfer source {tmap.src_generation}")
    c = u_old.coefficients
    vals = c[tmap.source_a]
    has_b = tmap.source_b >= 0
    if has_b.any():
        safe = np.where(has_b, tmap.source_b, 0)
        vals = np.where(has_b, 0.5 * (vals + c[safe]), vals)
    return FeFunction(tmap.dst_generation, vals)


def _rotate_reference_first(nodes, tris):
    """Rotate triangles so the longest edge comes first.

    Ties (relative 1e-12) break toward the lowest opposite-node id, making
    the choice deterministic on symmetric meshes.
    """
    p = nodes[tris]
    lengths = np.stack([np.linalg.norm(p[:, 1] - p[:, 0], axis=1),
                        np.linalg.norm(p[:, 2] - p[:, 1], axis=1),
                        np.linalg.norm(p[:, 0] - p[:, 2], axis=1)], axis=1)
    lmax = lengths.max(axis=1, keepdims=True)
    tied = lengths >= lmax * (1.0 - 1e-12)
    opposite = tris[:, [2, 0, 1]]
    candidate = np.where(tied, opposite, np.iinfo(np.int64).max)
    j = np.argmin(candidate, axis=1)
    idx = (np.arange(3)[None, :] + j[:, None]) % 3
    return np.take_along_axis(tris, idx, axis=1)


def init_reference_edges(mesh):
    """Prepare a raw mesh for refinement.

    Rotates every triangle longest-edge-first (the standard initialization
    of the reference-edge convention) and flags the mesh as refinement-ready.
    Node ids and triangle order are untouched, so the mesh keeps its
    generation and bound functions stay valid.
    """
    if len(mesh.genealogy):
        raise ValueError("reference edges of a refined mesh are structural; "
                         "re-initializing them would corrupt the genealogy")
    rotated = _rotate_reference_first(mesh.nodes, mesh.triangles)
    out = SurfaceMesh(mesh.nodes, rotated, mesh.node_birth, mesh.tri_parent,
                      mesh.tri_slot, mesh.genealogy, mesh.strategy,
                      refedge_ready=True)
    out.generation = mesh.generation
    return out


# child tables: tokens refer to parent vertices v0..v2 and edge midpoints
# m0 = mid(v0,v1), m1 = mid(v1,v2), m2 = mid(v2,v0).  Keys are bit patterns
# of marked edges (bit j = local edge j); closure guarantees bit 0 is set.
_BISECT_TABLES = {
    0b001: (("v2", "v0", "m0"), ("v1", "v2", "m0")),
    0b011: (("v2", "v0", "m0"), ("m0", "v1", "m1"), ("v2", "m0", "m1")),
    0b101: (("m0", "v2", "m2"), ("v0", "m0", "m2"), ("v1", "v2", "m0")),
    0b111: (("m0", "v2", "m2"), ("v0", "m0", "m2"),
            ("m0", "v1", "m1"), ("v2", "m0", "m1")),
}
_RED_TABLE = (("v0", "m0", "m2"), ("m0", "v1", "m1"),
              ("m2", "m1", "v2"), ("m1", "m2", "m0"))

_TABLES = {
    "nvb": _BISECT_TABLES,
    "rgb": {**_BISECT_TABLES, 0b111: _RED_TABLE},
}


def refine(mesh, marks, strategy, birth=None):
    """Subdivide the marked triangles, with conformity closure.

    Parameters
    ----------
    mesh : SurfaceMesh
        Conforming mesh with initialized reference edges.
    marks : MarkSet
    strategy : {"nvb", "rgb"}
        nvb bisects reference edges recursively; rgb subdivides marked
        triangles into four and closes with green/blue bisections.
    birth : int, optional
        Birth tag for the created nodes (defaults to one past the current
        maximum).

    Returns
    -------
    (SurfaceMesh, TransferMap)
        The refined *pre-lift* mesh (new nodes at flat edge midpoints) and
        the nodal transfer map onto it.

    Raises
    ------
    MetadataMissing
        If the mesh's reference edges were never initialized.
    StrategyMismatch
        If the mesh was previously refined with the other strategy.
    """
    if strategy not in _TABLES:
        raise ValueError(f"unknown refinement strategy {strategy!r}")
    if not mesh.refedge_ready:
        raise MetadataMissing("reference edges are not initialized; "
                              "run init_reference_edges first")
    if mesh.strategy is not None and mesh.strategy != strategy:
        raise StrategyMismatch(
            f"mesh was refined with {mesh.strategy!r}, cannot refine with "
            f"{strategy!r}")
    m_tris = mesh.n_triangles
    if len(marks.marked) and (marks.marked[0] < 0
                              or marks.marked[-1] >= m_tris):
        raise ValueError("mark refers to a nonexistent triangle")
    identity = TransferMap(np.arange(mesh.n_nodes), np.full(mesh.n_nodes, -1),
                           mesh.generation, mesh.generation, "refine")
    if len(marks.marked) == 0:
        return mesh, identity

    te = mesh.tri_edges
    edge_marked = np.zeros(mesh.n_edges, dtype=bool)
    if strategy == "nvb":
        edge_marked[te[marks.marked, 0]] = True
    else:
        edge_marked[te[marks.marked]] = True
    # conformity closure: any marked edge forces the reference edge
    while True:
        need = edge_marked[te].any(axis=1) & ~edge_marked[te[:, 0]]
        if not need.any():
            break
        edge_marked[te[need, 0]] = True

    n_old = mesh.n_nodes
    split_edges = np.nonzero(edge_marked)[0]
    mid_of_edge = np.full(mesh.n_edges, -1, dtype=np.int64)
    mid_of_edge[split_edges] = n_old + np.arange(len(split_edges))
    endpoints = mesh.edges[split_edges]
    new_nodes = np.vstack([
        mesh.nodes,
        0.5 * (mesh.nodes[endpoints[:, 0]] + mesh.nodes[endpoints[:, 1]]),
    ])
    if birth is None:
        birth = int(mesh.node_birth.max(initial=0)) + 1
    new_birth = np.concatenate([
        mesh.node_birth,
        np.full(len(split_edges), birth, dtype=np.int64),
    ])

    has = edge_marked[te]  # (M, 3)
    pattern = (has[:, 0].astype(np.int64) + 2 * has[:, 1] + 4 * has[:, 2])
    counts = np.array([1, 2, 0, 3, 0, 3, 0, 4], dtype=np.int64)[pattern]
    offsets = np.cumsum(counts) - counts
    total = int(counts.sum())

    tri = mesh.triangles
    mids = mid_of_edge[te]
    columns = {"v0": tri[:, 0], "v1": tri[:, 1], "v2": tri[:, 2],
               "m0": mids[:, 0], "m1": mids[:, 1], "m2": mids[:, 2]}

    out_tris = np.empty((total, 3), dtype=np.int64)
    out_parent = np.empty(total, dtype=np.int64)
    out_slot = np.empty(total, dtype=np.int64)
    is_child = np.zeros(total, dtype=bool)

    # genealogy rows for split parents, in triangle order
    split = pattern != 0
    n_rows_old = len(mesh.genealogy)
    row_of = np.full(m_tris, -1, dtype=np.int64)
    row_of[split] = n_rows_old + np.arange(int(split.sum()))

    keep = np.nonzero(~split)[0]
    out_tris[offsets[keep]] = tri[keep]
    out_parent[offsets[keep]] = mesh.tri_parent[keep]
    out_slot[offsets[keep]] = mesh.tri_slot[keep]

    tables = _TABLES[strategy]
    for pat, table in tables.items():
        idx = np.nonzero(pattern == pat)[0]
        if len(idx) == 0:
            continue
        base = offsets[idx]
        for slot, tokens in enumerate(table):
            rows = base + slot
            for axis, token in enumerate(tokens):
                out_tris[rows, axis] = columns[token][idx]
            out_parent[rows] = row_of[idx]
            out_slot[rows] = slot
            is_child[rows] = True

    if strategy == "rgb":
        # keep the reference-edge = longest-edge invariant on the children
        child_rows = np.nonzero(is_child)[0]
        out_tris[child_rows] = _rotate_reference_first(new_nodes,
                                                       out_tris[child_rows])

    old = mesh.genealogy
    genealogy = Genealogy(
        verts=np.vstack([old.verts, tri[split]]),
        parent=np.concatenate([old.parent, mesh.tri_parent[split]]),
        slot=np.concatenate([old.slot, mesh.tri_slot[split]]),
        nchild=np.concatenate([old.nchild, counts[split]]),
    )
    refined = SurfaceMesh(new_nodes, out_tris, new_birth, out_parent,
                          out_slot, genealogy, strategy, refedge_ready=True)
    tmap = TransferMap(
        np.concatenate([np.arange(n_old), endpoints[:, 0]]),
        np.concatenate([np.full(n_old, -1, dtype=np.int64),
                        endpoints[:, 1]]),
        mesh.generation, refined.generation, "refine")
    return refined, tmap


def lift_new_nodes(mesh, surface, tol=1e-12):
    """Project off-surface nodes onto the surface (connectivity unchanged).

    Nodes already on the surface (within ``tol``) are left bitwise intact,
    so repeated lifting is idempotent.
    """
    d = surface.distance(mesh.nodes)
    off = np.abs(d) > tol
    if not off.any():
        return mesh
    nodes = mesh.nodes.copy()
    nodes[off] = lift(surface, mesh.nodes[off])
    return mesh.with_nodes(nodes)


def coarsen(mesh, marks, functions, strategy, protect_birth=None):
    """Collapse marked sibling groups back to their parents.

    A group collapses only if all siblings are present and marked and the
    midpoint nodes that would vanish are referenced by no surviving triangle
    (good-to-coarsen).  Function values at surviving nodes are carried over
    unchanged; surviving nodes keep their coordinates.

    Parameters
    ----------
    mesh : SurfaceMesh
    marks : MarkSet
    functions : list of FeFunction
        Bound to this mesh; restricted nodally onto the coarser mesh.
    strategy : {"nvb", "rgb"}
        Must match how the mesh was refined.
    protect_birth : int, optional
        Nodes with ``node_birth >= protect_birth`` are never removed.

    Returns
    -------
    (SurfaceMesh, list of FeFunction, int)
        The coarsened mesh, the restricted functions, and the number of
        removed nodes.
    """
    if strategy not in _TABLES:
        raise ValueError(f"unknown refinement strategy {strategy!r}")
    for u in functions:
        u.check(mesh)
    if mesh.strategy is not None and mesh.strategy != strategy:
        raise StrategyMismatch(
            f"mesh was refined with {mesh.strategy!r}, cannot coarsen with "
            f"{strategy!r}")
    gen = mesh.genealogy
    m_tris, n_nodes = mesh.n_triangles, mesh.n_nodes
    if len(marks.marked) and (marks.marked[0] < 0
                              or marks.marked[-1] >= m_tris):
        raise ValueError("mark refers to a nonexistent triangle")
    if len(gen) == 0 or len(marks.marked) == 0:
        return mesh, list(functions), 0

    marked = np.zeros(m_tris, dtype=bool)
    marked[marks.marked] = True
    tp = mesh.tri_parent
    has_parent = tp >= 0
    n_rows = len(gen)
    live = np.bincount(tp[has_parent], minlength=n_rows)
    marked_live = np.bincount(tp[has_parent & marked], minlength=n_rows)
    collapsing = (live == gen.nchild) & (marked_live == gen.nchild)
    if not collapsing.any():
        return mesh, list(functions), 0

    protected = np.zeros(n_nodes, dtype=bool)
    if protect_birth is not None:
        protected = mesh.node_birth >= protect_birth
    tri = mesh.triangles

    # fixed point: drop groups whose midpoint nodes would stay referenced
    while True:
        coll_tris = np.zeros(m_tris, dtype=bool)
        coll_tris[has_parent] = collapsing[tp[has_parent]]
        ext_ref = np.zeros(n_nodes, dtype=bool)
        ext_ref[tri[~coll_tris].ravel()] = True
        parent_used = np.zeros(n_nodes, dtype=bool)
        parent_used[gen.verts[collapsing].ravel()] = True
        blocked = ext_ref | parent_used | protected
        ct = np.nonzero(coll_tris)[0]
        child_verts = tri[ct]
        parent_verts = gen.verts[tp[ct]]
        in_parent = (child_verts[:, :, None]
                     == parent_verts[:, None, :]).any(axis=2)
        bad = (~in_parent & blocked[child_verts]).any(axis=1)
        if not bad.any():
            break
        collapsing[np.unique(tp[ct[bad]])] = False
        if not collapsing.any():
            return mesh, list(functions), 0

    rows = np.nonzero(collapsing)[0]
    new_tris_old = np.vstack([tri[~coll_tris], gen.verts[rows]])
    parent_rows_old = np.concatenate([tp[~coll_tris], gen.parent[rows]])
    new_slot = np.concatenate([mesh.tri_slot[~coll_tris], gen.slot[rows]])

    referenced = np.zeros(n_nodes, dtype=bool)
    referenced[new_tris_old.ravel()] = True
    removed = int(n_nodes - referenced.sum())
    node_map = np.cumsum(referenced) - 1

    keep_rows = ~collapsing
    row_map = np.full(n_rows, -1, dtype=np.int64)
    row_map[keep_rows] = np.arange(int(keep_rows.sum()))
    old_parent = gen.parent[keep_rows]
    safe = np.where(old_parent >= 0, old_parent, 0)
    genealogy = Genealogy(
        verts=node_map[gen.verts[keep_rows]],
        parent=np.where(old_parent >= 0, row_map[safe], -1),
        slot=gen.slot[keep_rows],
        nchild=gen.nchild[keep_rows],
    )
    safe_tp = np.where(parent_rows_old >= 0, parent_rows_old, 0)
    new_tp = np.where(parent_rows_old >= 0, row_map[safe_tp], -1)

    coarse = SurfaceMesh(mesh.nodes[referenced], node_map[new_tris_old],
                         mesh.node_birth[referenced], new_tp, new_slot,
                         genealogy, mesh.strategy, refedge_ready=True)
    restricted = [FeFunction(coarse.generation, u.coefficients[referenced])
                  for u in functions]
    return coarse, restricted, removed
