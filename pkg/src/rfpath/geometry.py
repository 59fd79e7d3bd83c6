"""Ray and mesh geometry: BVH build/traversal, occlusion, indoor filtering.

All queries run in double precision. Single-ray entry points wrap the same
vectorized kernels used for batched queries, so scalar and batch results are
bitwise identical.
"""

from dataclasses import dataclass

import numpy as np

from .config import GridSpec
from .scene import Scene, TriangleMesh

LEAF_MAX_TRIS = 4
SAH_BINS = 16
# Relative endpoint offset for occlusion segments; keeps interaction points
# from shadow-testing against their own facet.
SEGMENT_ENDPOINT_EPS = 1e-6


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray  # unit vector
    t_max: float = np.inf


@dataclass(frozen=True)
class Hit:
    t: float
    face_id: int
    barycentric: tuple[float, float]


@dataclass(frozen=True, eq=False)
class RxPoint:
    index: int  # row-major grid index, j*nx + i
    position: np.ndarray
    outdoor: bool


class Bvh:
    """Binned-SAH bounding volume hierarchy over mesh triangles.

    Triangle geometry is copied in (permuted into leaf order) so traversal
    never touches the source mesh. Immutable after build; safe to share
    across threads.
    """

    def __init__(self, node_lo, node_hi, left, right, first, count,
                 perm, v0, e1, e2, face_id):
        self.node_lo = node_lo
        self.node_hi = node_hi
        self.left = left
        self.right = right
        self.first = first
        self.count = count
        self.perm = perm
        self.v0 = v0
        self.e1 = e1
        self.e2 = e2
        self.face_id = face_id

    @property
    def n_nodes(self) -> int:
        return len(self.left)

    @property
    def n_triangles(self) -> int:
        return len(self.perm)


def mesh_arrays(mesh: TriangleMesh):
    """Stack triangle vertices into (T, 3) arrays plus per-triangle face ids."""
    tris = mesh.triangles
    v0 = np.array([t.v0 for t in tris], dtype=float).reshape(len(tris), 3)
    v1 = np.array([t.v1 for t in tris], dtype=float).reshape(len(tris), 3)
    v2 = np.array([t.v2 for t in tris], dtype=float).reshape(len(tris), 3)
    face = np.array([t.face_id for t in tris], dtype=np.int64)
    return v0, v1, v2, face


def build_bvh(mesh: TriangleMesh) -> Bvh:
    """Top-down binned SAH build (16 bins, leaf size <= 4, median fallback)."""
    v0, v1, v2, face = mesh_arrays(mesh)
    n = len(v0)
    if n == 0:
        raise ValueError("cannot build a BVH over an empty mesh")
    tri_lo = np.minimum(np.minimum(v0, v1), v2)
    tri_hi = np.maximum(np.maximum(v0, v1), v2)
    centroid = 0.5 * (tri_lo + tri_hi)

    node_lo, node_hi = [], []
    left, right, first, count = [], [], [], []
    perm: list[int] = []

    def new_node(indices):
        node_id = len(left)
        node_lo.append(tri_lo[indices].min(axis=0))
        node_hi.append(tri_hi[indices].max(axis=0))
        left.append(-1)
        right.append(-1)
        first.append(-1)
        count.append(0)
        return node_id

    def surface(lo, hi):
        d = np.maximum(hi - lo, 0.0)
        return 2.0 * (d[..., 0] * d[..., 1] + d[..., 1] * d[..., 2] + d[..., 0] * d[..., 2])

    def split(indices):
        """Return (left_indices, right_indices) by SAH, median on degenerate spread."""
        c = centroid[indices]
        extent = c.max(axis=0) - c.min(axis=0)
        axis = int(np.argmax(extent))
        if extent[axis] <= 0.0:
            half = len(indices) // 2
            return indices[:half], indices[half:]
        lo_a = c[:, axis].min()
        rel = (c[:, axis] - lo_a) / extent[axis]
        bins = np.minimum((rel * SAH_BINS).astype(np.int64), SAH_BINS - 1)

        bin_lo = np.full((SAH_BINS, 3), np.inf)
        bin_hi = np.full((SAH_BINS, 3), -np.inf)
        bin_n = np.zeros(SAH_BINS, dtype=np.int64)
        for b in range(SAH_BINS):
            sel = bins == b
            if sel.any():
                sub = indices[sel]
                bin_lo[b] = tri_lo[sub].min(axis=0)
                bin_hi[b] = tri_hi[sub].max(axis=0)
                bin_n[b] = sel.sum()

        # prefix/suffix sweeps for the SAH cost at each of the 15 split planes
        lo_l = np.minimum.accumulate(bin_lo, axis=0)
        hi_l = np.maximum.accumulate(bin_hi, axis=0)
        n_l = np.cumsum(bin_n)
        lo_r = np.minimum.accumulate(bin_lo[::-1], axis=0)[::-1]
        hi_r = np.maximum.accumulate(bin_hi[::-1], axis=0)[::-1]
        n_r = np.cumsum(bin_n[::-1])[::-1]

        costs = np.full(SAH_BINS - 1, np.inf)
        for b in range(SAH_BINS - 1):
            if n_l[b] == 0 or n_r[b + 1] == 0:
                continue
            costs[b] = surface(lo_l[b], hi_l[b]) * n_l[b] + surface(lo_r[b + 1], hi_r[b + 1]) * n_r[b + 1]
        if not np.isfinite(costs).any():
            half = len(indices) // 2
            order = np.argsort(c[:, axis], kind="stable")
            return indices[order[:half]], indices[order[half:]]
        best = int(np.argmin(costs))
        go_left = bins <= best
        return indices[go_left], indices[~go_left]

    # explicit stack; children filled in after both subtrees exist
    root_indices = np.arange(n)
    stack = [(new_node(root_indices), root_indices)]
    while stack:
        node_id, indices = stack.pop()
        if len(indices) <= LEAF_MAX_TRIS:
            first[node_id] = len(perm)
            count[node_id] = len(indices)
            perm.extend(int(i) for i in indices)
            continue
        li, ri = split(indices)
        lid = new_node(li)
        rid = new_node(ri)
        left[node_id] = lid
        right[node_id] = rid
        stack.append((rid, ri))
        stack.append((lid, li))

    perm_arr = np.asarray(perm, dtype=np.int64)
    return Bvh(
        node_lo=np.asarray(node_lo),
        node_hi=np.asarray(node_hi),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        first=np.asarray(first, dtype=np.int64),
        count=np.asarray(count, dtype=np.int64),
        perm=perm_arr,
        v0=v0[perm_arr],
        e1=v1[perm_arr] - v0[perm_arr],
        e2=v2[perm_arr] - v0[perm_arr],
        face_id=face[perm_arr],
    )


# ---------------------------------------------------------------------------
# kernels


def _moller_trumbore(origins, dirs, v0, e1, e2):
    """All-pairs ray/triangle test; returns (t, u, v, valid) of shape (R, T)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        pvec = np.cross(dirs[:, None, :], e2[None, :, :])
        det = np.einsum("ij,rij->ri", e1, pvec)
        inv = 1.0 / det
        svec = origins[:, None, :] - v0[None, :, :]
        u = np.einsum("rij,rij->ri", svec, pvec) * inv
        qvec = np.cross(svec, e1[None, :, :])
        v = np.einsum("rj,rij->ri", dirs, qvec) * inv
        t = np.einsum("ij,rij->ri", e2, qvec) * inv
    valid = (det != 0.0) & (u >= 0.0) & (v >= 0.0) & (u + v <= 1.0)
    return t, u, v, valid


def _slab_hits(origins, dirs, inv_dirs, lo, hi, t_lo, t_hi):
    """Ray/AABB slab test for one box against a subset of rays.

    Axes with zero direction are handled explicitly so boundary-origin rays
    stay conservative (counted as hits).
    """
    near = np.full(len(origins), t_lo)
    far = np.asarray(t_hi, dtype=float).copy() if np.ndim(t_hi) else np.full(len(origins), t_hi)
    for ax in range(3):
        d = dirs[:, ax]
        o = origins[:, ax]
        ta = (lo[ax] - o) * inv_dirs[:, ax]
        tb = (hi[ax] - o) * inv_dirs[:, ax]
        lo_t = np.minimum(ta, tb)
        hi_t = np.maximum(ta, tb)
        para = d == 0.0
        if para.any():
            inside = (o >= lo[ax]) & (o <= hi[ax])
            lo_t = np.where(para, np.where(inside, -np.inf, np.inf), lo_t)
            hi_t = np.where(para, np.where(inside, np.inf, -np.inf), hi_t)
        near = np.maximum(near, lo_t)
        far = np.minimum(far, hi_t)
    return near <= far


def intersect_many(bvh: Bvh, origins, dirs, t_max=np.inf):
    """Nearest hit for a batch of rays.

    Returns (hit, t, face_id, tri_index, u, v) arrays. Ties at equal t are
    broken toward the lower original triangle index, independent of
    traversal order.
    """
    origins = np.atleast_2d(np.asarray(origins, dtype=float))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    m = len(origins)
    cap = np.broadcast_to(np.asarray(t_max, dtype=float), (m,)).copy()
    with np.errstate(divide="ignore"):
        inv = 1.0 / dirs

    best_t = cap.copy()
    best_tri = np.full(m, -1, dtype=np.int64)
    best_face = np.full(m, -1, dtype=np.int64)
    best_u = np.zeros(m)
    best_v = np.zeros(m)
    found = np.zeros(m, dtype=bool)

    stack = [(0, np.arange(m))]
    while stack:
        node, idx = stack.pop()
        sub_hit = _slab_hits(origins[idx], dirs[idx], inv[idx],
                             bvh.node_lo[node], bvh.node_hi[node], 0.0, best_t[idx])
        idx = idx[sub_hit]
        if idx.size == 0:
            continue
        if bvh.left[node] < 0:
            s = bvh.first[node]
            k = bvh.count[node]
            t, u, v, valid = _moller_trumbore(
                origins[idx], dirs[idx], bvh.v0[s:s + k], bvh.e1[s:s + k], bvh.e2[s:s + k]
            )
            for col in range(k):
                tri = int(bvh.perm[s + col])
                tc = t[:, col]
                ok = valid[:, col] & (tc > 0.0) & (tc <= cap[idx])
                better = ok & (
                    (tc < best_t[idx])
                    | ((tc == best_t[idx]) & found[idx] & (tri < best_tri[idx]))
                    | ((tc == best_t[idx]) & ~found[idx])
                )
                if not better.any():
                    continue
                w = idx[better]
                best_t[w] = tc[better]
                best_tri[w] = tri
                best_face[w] = bvh.face_id[s + col]
                best_u[w] = u[better, col]
                best_v[w] = v[better, col]
                found[w] = True
        else:
            stack.append((int(bvh.right[node]), idx))
            stack.append((int(bvh.left[node]), idx))

    return found, best_t, best_face, best_tri, best_u, best_v


def intersect(bvh: Bvh, ray: Ray) -> Hit | None:
    """Nearest intersection along a single ray, or None on a miss."""
    hit, t, face, _tri, u, v = intersect_many(
        bvh, ray.origin[None, :], ray.direction[None, :], ray.t_max
    )
    if not hit[0]:
        return None
    return Hit(t=float(t[0]), face_id=int(face[0]), barycentric=(float(u[0]), float(v[0])))


def occluded_many(bvh: Bvh, p, q) -> np.ndarray:
    """True where any triangle blocks the open segment (p, q).

    Endpoints are pulled in by SEGMENT_ENDPOINT_EPS of the segment length so
    interaction points lying exactly on a surface do not occlude themselves.
    """
    p = np.atleast_2d(np.asarray(p, dtype=float))
    q = np.atleast_2d(np.asarray(q, dtype=float))
    if p.shape[0] == 1 and q.shape[0] > 1:
        p = np.broadcast_to(p, q.shape)
    d = q - p
    origins = p + SEGMENT_ENDPOINT_EPS * d
    dirs = d * (1.0 - 2.0 * SEGMENT_ENDPOINT_EPS)
    m = len(origins)
    with np.errstate(divide="ignore"):
        inv = 1.0 / dirs

    occ = np.zeros(m, dtype=bool)
    stack = [(0, np.arange(m))]
    while stack:
        node, idx = stack.pop()
        idx = idx[~occ[idx]]
        if idx.size == 0:
            continue
        sub_hit = _slab_hits(origins[idx], dirs[idx], inv[idx],
                             bvh.node_lo[node], bvh.node_hi[node], 0.0, 1.0)
        idx = idx[sub_hit]
        if idx.size == 0:
            continue
        if bvh.left[node] < 0:
            s = bvh.first[node]
            k = bvh.count[node]
            t, _u, _v, valid = _moller_trumbore(
                origins[idx], dirs[idx], bvh.v0[s:s + k], bvh.e1[s:s + k], bvh.e2[s:s + k]
            )
            blocked = (valid & (t > 0.0) & (t < 1.0)).any(axis=1)
            occ[idx[blocked]] = True
        else:
            stack.append((int(bvh.right[node]), idx))
            stack.append((int(bvh.left[node]), idx))
    return occ


def occluded(bvh: Bvh, p, q) -> bool:
    """Single-segment visibility query; symmetric in its endpoints."""
    return bool(occluded_many(bvh, np.asarray(p, float)[None, :], np.asarray(q, float)[None, :])[0])


# ---------------------------------------------------------------------------
# point-in-building tests


def _polygon_contains_point(footprint, x, y) -> bool:
    """Even-odd test with points on an edge counted as inside."""
    inside = False
    n = len(footprint)
    for i in range(n):
        ax, ay = footprint[i]
        bx, by = footprint[(i + 1) % n]
        cross = (bx - ax) * (y - ay) - (by - ay) * (x - ax)
        if (
            cross == 0.0
            and min(ax, bx) <= x <= max(ax, bx)
            and min(ay, by) <= y <= max(ay, by)
        ):
            return True
        if (ay > y) != (by > y):
            x_cross = ax + (y - ay) * (bx - ax) / (by - ay)
            if x < x_cross:
                inside = not inside
    return inside


def _polygon_contains_many(footprint, xs, ys) -> np.ndarray:
    """Vectorized even-odd test matching _polygon_contains_point exactly."""
    inside = np.zeros(len(xs), dtype=bool)
    on_edge = np.zeros(len(xs), dtype=bool)
    n = len(footprint)
    for i in range(n):
        ax, ay = footprint[i]
        bx, by = footprint[(i + 1) % n]
        cross = (bx - ax) * (ys - ay) - (by - ay) * (xs - ax)
        on_edge |= (
            (cross == 0.0)
            & (xs >= min(ax, bx)) & (xs <= max(ax, bx))
            & (ys >= min(ay, by)) & (ys <= max(ay, by))
        )
        straddles = (ay > ys) != (by > ys)
        if by != ay:
            x_cross = ax + (ys - ay) * (bx - ax) / (by - ay)
            inside ^= straddles & (xs < x_cross)
    return inside | on_edge


def point_inside_building(scene: Scene, p) -> bool:
    """True when p sits below the roof of a building whose footprint contains (x, y)."""
    x, y, z = float(p[0]), float(p[1]), float(p[2])
    for b in scene.buildings:
        if z < b.height_m and _polygon_contains_point(b.footprint, x, y):
            return True
    return False


def filter_outdoor_receivers(scene: Scene, grid: GridSpec) -> list[RxPoint]:
    """Classify every grid point; only outdoor points get traced downstream."""
    pos = grid.positions()
    xs, ys = pos[:, 0], pos[:, 1]
    indoor = np.zeros(len(pos), dtype=bool)
    for b in scene.buildings:
        if b.height_m > grid.height_m:
            indoor |= _polygon_contains_many(b.footprint, xs, ys)
    return [
        RxPoint(index=i, position=pos[i], outdoor=bool(not indoor[i]))
        for i in range(len(pos))
    ]
