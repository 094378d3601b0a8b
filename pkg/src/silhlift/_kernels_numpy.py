"""Pure-numpy implementations of the hot kernels.

These define the reference semantics. The numba twins in
``_kernels_numba`` must match them on every tested input; the dispatch
module ``kernels`` picks one of the two at import time.

Conventions shared by both backends:
  * image rasters are indexed [row, col] = [y, x], pixel centers at
    integer coordinates
  * voxel grids are linearized x-fastest: flat = ix + G*(iy + G*iz)
  * half-up rounding (floor(u + 0.5)) everywhere a continuous image
    coordinate is snapped to a pixel, so backends agree at .5 exactly
"""

import numpy as np


def rasterize_triangles(tri_uv, width, height):
    """Binary coverage mask of 2D triangles over a width x height raster.

    tri_uv: (F, 3, 2) float64 vertex positions in pixel coordinates.
    A pixel is set when its center lies inside (or exactly on the edge
    of) at least one triangle. Triangles with exactly zero signed area
    contribute nothing.
    """
    tri_uv = np.asarray(tri_uv, dtype=np.float64)
    mask = np.zeros((height, width), dtype=bool)
    for f in range(tri_uv.shape[0]):
        ax, ay = tri_uv[f, 0]
        bx, by = tri_uv[f, 1]
        cx, cy = tri_uv[f, 2]
        area2 = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if area2 == 0.0:
            continue
        if area2 < 0.0:
            bx, by, cx, cy = cx, cy, bx, by
        x0 = max(int(np.floor(min(ax, bx, cx))), 0)
        x1 = min(int(np.ceil(max(ax, bx, cx))), width - 1)
        y0 = max(int(np.floor(min(ay, by, cy))), 0)
        y1 = min(int(np.ceil(max(ay, by, cy))), height - 1)
        if x1 < x0 or y1 < y0:
            continue
        xs = np.arange(x0, x1 + 1, dtype=np.float64)
        ys = np.arange(y0, y1 + 1, dtype=np.float64)
        px, py = np.meshgrid(xs, ys)
        e0 = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
        e1 = (cx - bx) * (py - by) - (cy - by) * (px - bx)
        e2 = (ax - cx) * (py - cy) - (ay - cy) * (px - cx)
        inside = (e0 >= 0.0) & (e1 >= 0.0) & (e2 >= 0.0)
        mask[y0:y1 + 1, x0:x1 + 1] |= inside
    return mask


def ray_mesh_first_hit(origins, direction, vertices, triangles, t_min):
    """Smallest ray parameter t > t_min where each ray meets the mesh.

    All rays share one direction. Returns (N,) float64 with +inf for
    rays that hit nothing. Moller-Trumbore with a 1e-12 parallelism
    guard; intersections on triangle edges count as hits.
    """
    origins = np.asarray(origins, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    vertices = np.asarray(vertices, dtype=np.float64)
    triangles = np.asarray(triangles, dtype=np.int64)
    n = origins.shape[0]
    best = np.full(n, np.inf)
    if triangles.shape[0] == 0:
        return best
    a = vertices[triangles[:, 0]]
    e1 = vertices[triangles[:, 1]] - a
    e2 = vertices[triangles[:, 2]] - a
    pvec = np.cross(direction, e2)
    det = np.einsum("fj,fj->f", e1, pvec)
    ok = np.abs(det) > 1e-12
    inv_det = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    for i in range(n):
        tvec = origins[i] - a
        u = np.einsum("fj,fj->f", tvec, pvec) * inv_det
        qvec = np.cross(tvec, e1)
        v = (qvec @ direction) * inv_det
        t = np.einsum("fj,fj->f", e2, qvec) * inv_det
        hit = ok & (u >= 0.0) & (v >= 0.0) & (u + v <= 1.0) & (t > t_min)
        if np.any(hit):
            best[i] = np.min(t[hit])
    return best


def dda_ray_argmin(origins, direction, grid_origin, spacing, res, values_flat):
    """Traverse each line through a res^3 voxel grid, tracking the argmin
    of a per-voxel value field along the way.

    origins: (N, 3) points on the lines, direction: (3,) shared line
    direction (traversal runs toward +direction, so with the viewing
    axis as direction the first strict minimum is the camera-nearest
    one). Returns (hit (N,) bool, best_flat (N,) int64); best_flat is
    -1 where the line misses the grid.
    """
    origins = np.asarray(origins, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    grid_origin = np.asarray(grid_origin, dtype=np.float64)
    n = origins.shape[0]
    lo = grid_origin
    hi = grid_origin + res * spacing

    t0 = np.full(n, -np.inf)
    t1 = np.full(n, np.inf)
    for a in range(3):
        d = direction[a]
        o = origins[:, a]
        if d == 0.0:
            outside = (o < lo[a]) | (o > hi[a])
            t0[outside] = np.inf
            t1[outside] = -np.inf
        else:
            ta = (lo[a] - o) / d
            tb = (hi[a] - o) / d
            t0 = np.maximum(t0, np.minimum(ta, tb))
            t1 = np.minimum(t1, np.maximum(ta, tb))
    hit = t0 <= t1
    best_flat = np.full(n, -1, dtype=np.int64)
    best_val = np.full(n, np.inf)
    if not np.any(hit):
        return hit, best_flat

    idx = np.nonzero(hit)[0]
    entry = origins[idx] + t0[idx, None] * direction[None, :]
    vox = np.floor((entry - lo[None, :]) / spacing).astype(np.int64)
    np.clip(vox, 0, res - 1, out=vox)

    step = np.zeros(3, dtype=np.int64)
    tdelta = np.full(3, np.inf)
    for a in range(3):
        if direction[a] > 0.0:
            step[a] = 1
        elif direction[a] < 0.0:
            step[a] = -1
        if direction[a] != 0.0:
            tdelta[a] = spacing / abs(direction[a])

    tmax = np.full((idx.shape[0], 3), np.inf)
    for a in range(3):
        if direction[a] != 0.0:
            nxt = vox[:, a] + (1 if direction[a] > 0.0 else 0)
            bound = lo[a] + nxt * spacing
            tmax[:, a] = (bound - origins[idx, a]) / direction[a]

    texit = t1[idx]
    active = np.ones(idx.shape[0], dtype=bool)
    while np.any(active):
        ai = np.nonzero(active)[0]
        flat = vox[ai, 0] + res * (vox[ai, 1] + res * vox[ai, 2])
        vals = values_flat[flat]
        gi = idx[ai]
        better = vals < best_val[gi]
        best_val[gi[better]] = vals[better]
        best_flat[gi[better]] = flat[better]

        axis = np.argmin(tmax[ai], axis=1)
        done = tmax[ai, axis] > texit[ai]
        vox[ai, axis] += step[axis]
        oob = (vox[ai, axis] < 0) | (vox[ai, axis] > res - 1)
        tmax[ai, axis] += tdelta[axis]
        active[ai[done | oob]] = False
    return hit, best_flat


def _point_tri_sqdist_pairs(p, a, b, c):
    """Squared distance for each (point, triangle) pair. All (N, 3)."""
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)

    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    with np.errstate(divide="ignore", invalid="ignore"):
        v_ab = d1 / (d1 - d3)
        w_ac = d2 / (d2 - d6)
        w_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        denom = va + vb + vc
        v_in = vb / denom
        w_in = vc / denom

    def sq(x):
        return np.einsum("ij,ij->i", x, x)

    r_a = sq(ap)
    r_b = sq(bp)
    r_c = sq(cp)
    r_ab = sq(ap - np.clip(np.nan_to_num(v_ab), 0.0, 1.0)[:, None] * ab)
    r_ac = sq(ap - np.clip(np.nan_to_num(w_ac), 0.0, 1.0)[:, None] * ac)
    bc = c - b
    r_bc = sq(bp - np.clip(np.nan_to_num(w_bc), 0.0, 1.0)[:, None] * bc)
    closest = a + np.nan_to_num(v_in)[:, None] * ab + np.nan_to_num(w_in)[:, None] * ac
    r_in = sq(p - closest)

    cond_a = (d1 <= 0.0) & (d2 <= 0.0)
    cond_b = (d3 >= 0.0) & (d4 <= d3)
    cond_ab = (vc <= 0.0) & (d1 >= 0.0) & (d3 <= 0.0)
    cond_c = (d6 >= 0.0) & (d5 <= d6)
    cond_ac = (vb <= 0.0) & (d2 >= 0.0) & (d6 <= 0.0)
    cond_bc = (va <= 0.0) & ((d4 - d3) >= 0.0) & ((d5 - d6) >= 0.0)
    degenerate = denom == 0.0
    r_degen = np.minimum(np.minimum(r_ab, r_ac), r_bc)

    return np.select(
        [cond_a, cond_b, cond_ab, cond_c, cond_ac, cond_bc, degenerate],
        [r_a, r_b, r_ab, r_c, r_ac, r_bc, r_degen],
        default=r_in,
    )


def point_mesh_sqdist_brute(points, vertices, triangles):
    """Exact min squared point-triangle distance over every triangle."""
    points = np.asarray(points, dtype=np.float64)
    vertices = np.asarray(vertices, dtype=np.float64)
    triangles = np.asarray(triangles, dtype=np.int64)
    n = points.shape[0]
    f = triangles.shape[0]
    if f == 0:
        return np.full(n, np.inf)
    a = vertices[triangles[:, 0]]
    b = vertices[triangles[:, 1]]
    c = vertices[triangles[:, 2]]
    out = np.empty(n)
    # chunk the points so the (chunk*F, 3) temporaries stay small
    chunk = max(1, int(1_000_000 // max(f, 1)))
    for s in range(0, n, chunk):
        e = min(n, s + chunk)
        m = e - s
        p = np.repeat(points[s:e], f, axis=0)
        aa = np.tile(a, (m, 1))
        bb = np.tile(b, (m, 1))
        cc = np.tile(c, (m, 1))
        d = _point_tri_sqdist_pairs(p, aa, bb, cc).reshape(m, f)
        out[s:e] = d.min(axis=1)
    return out


def point_mesh_sqdist_grid(points, vertices, triangles, grid_min, cell_size,
                           dims, cell_start, cell_tris):
    """Grid-indexed variant. The pure-numpy backend just runs the
    exhaustive scan; the index only pays off under numba."""
    return point_mesh_sqdist_brute(points, vertices, triangles)


def cone_field_values(grid_origin, spacing, res, motion, translation,
                      signed_px, outside_px):
    """Sample a per-pixel signed silhouette distance at every projected
    voxel center of a res^3 grid.

    motion/translation: the 2x3 / 2-vector scaled-orthographic camera.
    signed_px: (H, W) signed pixel distance to the silhouette boundary,
    negative on foreground. outside_px: (H, W) unsigned pixel distance
    to the nearest foreground pixel. In-raster points snap to the
    nearest pixel of signed_px; points off the pixel-center rectangle
    get outside_px at the clamped pixel plus the Euclidean excess, which
    keeps them positive. Returns (res^3,) float64, x-fastest order.
    """
    grid_origin = np.asarray(grid_origin, dtype=np.float64)
    motion = np.asarray(motion, dtype=np.float64)
    translation = np.asarray(translation, dtype=np.float64)
    h, w = signed_px.shape
    coords = (np.arange(res, dtype=np.float64) + 0.5) * spacing
    x = grid_origin[0] + coords
    y = grid_origin[1] + coords
    z = grid_origin[2] + coords
    zz, yy, xx = np.meshgrid(z, y, x, indexing="ij")
    xx, yy, zz = xx.ravel(), yy.ravel(), zz.ravel()
    # elementwise, in the numba twin's association order (not matmul),
    # so both backends round identically
    u = motion[0, 0] * xx + motion[0, 1] * yy + motion[0, 2] * zz + translation[0]
    v = motion[1, 0] * xx + motion[1, 1] * yy + motion[1, 2] * zz + translation[1]
    cu = np.clip(u, 0.0, w - 1.0)
    cv = np.clip(v, 0.0, h - 1.0)
    du = u - cu
    dv = v - cv
    excess = np.sqrt(du * du + dv * dv)
    px = np.floor(cu + 0.5).astype(np.int64)
    py = np.floor(cv + 0.5).astype(np.int64)
    inraster = excess == 0.0
    vals = np.where(inraster, signed_px[py, px], outside_px[py, px] + excess)
    return vals
