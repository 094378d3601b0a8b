"""Numba twins of the kernels in ``_kernels_numpy``.

Same signatures, same conventions (x-fastest voxel linearization,
half-up pixel rounding, inclusive triangle edges). fastmath stays off
so both backends keep plain IEEE semantics.
"""

import numpy as np
import numba
from numba import njit

jit = numba.njit(cache=True, nogil=True)


@jit
def rasterize_triangles(tri_uv, width, height):
    mask = np.zeros((height, width), dtype=np.bool_)
    for f in range(tri_uv.shape[0]):
        ax = tri_uv[f, 0, 0]
        ay = tri_uv[f, 0, 1]
        bx = tri_uv[f, 1, 0]
        by = tri_uv[f, 1, 1]
        cx = tri_uv[f, 2, 0]
        cy = tri_uv[f, 2, 1]
        area2 = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if area2 == 0.0:
            continue
        if area2 < 0.0:
            tx, ty = bx, by
            bx, by = cx, cy
            cx, cy = tx, ty
        x0 = max(int(np.floor(min(ax, min(bx, cx)))), 0)
        x1 = min(int(np.ceil(max(ax, max(bx, cx)))), width - 1)
        y0 = max(int(np.floor(min(ay, min(by, cy)))), 0)
        y1 = min(int(np.ceil(max(ay, max(by, cy)))), height - 1)
        for py in range(y0, y1 + 1):
            for px in range(x0, x1 + 1):
                fx = float(px)
                fy = float(py)
                e0 = (bx - ax) * (fy - ay) - (by - ay) * (fx - ax)
                e1 = (cx - bx) * (fy - by) - (cy - by) * (fx - bx)
                e2 = (ax - cx) * (fy - cy) - (ay - cy) * (fx - cx)
                if e0 >= 0.0 and e1 >= 0.0 and e2 >= 0.0:
                    mask[py, px] = True
    return mask


@jit
def ray_mesh_first_hit(origins, direction, vertices, triangles, t_min):
    n = origins.shape[0]
    nf = triangles.shape[0]
    best = np.full(n, np.inf)
    dx = direction[0]
    dy = direction[1]
    dz = direction[2]
    for i in range(n):
        ox = origins[i, 0]
        oy = origins[i, 1]
        oz = origins[i, 2]
        for f in range(nf):
            a0 = triangles[f, 0]
            a1 = triangles[f, 1]
            a2 = triangles[f, 2]
            ax = vertices[a0, 0]
            ay = vertices[a0, 1]
            az = vertices[a0, 2]
            e1x = vertices[a1, 0] - ax
            e1y = vertices[a1, 1] - ay
            e1z = vertices[a1, 2] - az
            e2x = vertices[a2, 0] - ax
            e2y = vertices[a2, 1] - ay
            e2z = vertices[a2, 2] - az
            px = dy * e2z - dz * e2y
            py = dz * e2x - dx * e2z
            pz = dx * e2y - dy * e2x
            det = e1x * px + e1y * py + e1z * pz
            if abs(det) <= 1e-12:
                continue
            inv = 1.0 / det
            tx = ox - ax
            ty = oy - ay
            tz = oz - az
            u = (tx * px + ty * py + tz * pz) * inv
            if u < 0.0:
                continue
            qx = ty * e1z - tz * e1y
            qy = tz * e1x - tx * e1z
            qz = tx * e1y - ty * e1x
            v = (qx * dx + qy * dy + qz * dz) * inv
            if v < 0.0 or u + v > 1.0:
                continue
            t = (e2x * qx + e2y * qy + e2z * qz) * inv
            if t > t_min and t < best[i]:
                best[i] = t
    return best


@jit
def dda_ray_argmin(origins, direction, grid_origin, spacing, res, values_flat):
    n = origins.shape[0]
    hit = np.zeros(n, dtype=np.bool_)
    best_flat = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        t0 = -np.inf
        t1 = np.inf
        miss = False
        for a in range(3):
            d = direction[a]
            o = origins[i, a]
            lo = grid_origin[a]
            hi = grid_origin[a] + res * spacing
            if d == 0.0:
                if o < lo or o > hi:
                    miss = True
            else:
                ta = (lo - o) / d
                tb = (hi - o) / d
                if ta < tb:
                    if ta > t0:
                        t0 = ta
                    if tb < t1:
                        t1 = tb
                else:
                    if tb > t0:
                        t0 = tb
                    if ta < t1:
                        t1 = ta
        if miss or t0 > t1:
            continue
        hit[i] = True

        vx = int(np.floor((origins[i, 0] + t0 * direction[0] - grid_origin[0]) / spacing))
        vy = int(np.floor((origins[i, 1] + t0 * direction[1] - grid_origin[1]) / spacing))
        vz = int(np.floor((origins[i, 2] + t0 * direction[2] - grid_origin[2]) / spacing))
        if vx < 0:
            vx = 0
        if vx > res - 1:
            vx = res - 1
        if vy < 0:
            vy = 0
        if vy > res - 1:
            vy = res - 1
        if vz < 0:
            vz = 0
        if vz > res - 1:
            vz = res - 1

        tmx = np.inf
        tmy = np.inf
        tmz = np.inf
        tdx = np.inf
        tdy = np.inf
        tdz = np.inf
        sx = 0
        sy = 0
        sz = 0
        if direction[0] > 0.0:
            sx = 1
        elif direction[0] < 0.0:
            sx = -1
        if direction[1] > 0.0:
            sy = 1
        elif direction[1] < 0.0:
            sy = -1
        if direction[2] > 0.0:
            sz = 1
        elif direction[2] < 0.0:
            sz = -1
        if direction[0] != 0.0:
            nxt = vx + (1 if direction[0] > 0.0 else 0)
            tmx = (grid_origin[0] + nxt * spacing - origins[i, 0]) / direction[0]
            tdx = spacing / abs(direction[0])
        if direction[1] != 0.0:
            nxt = vy + (1 if direction[1] > 0.0 else 0)
            tmy = (grid_origin[1] + nxt * spacing - origins[i, 1]) / direction[1]
            tdy = spacing / abs(direction[1])
        if direction[2] != 0.0:
            nxt = vz + (1 if direction[2] > 0.0 else 0)
            tmz = (grid_origin[2] + nxt * spacing - origins[i, 2]) / direction[2]
            tdz = spacing / abs(direction[2])

        best_val = np.inf
        while True:
            flat = vx + res * (vy + res * vz)
            v = values_flat[flat]
            if v < best_val:
                best_val = v
                best_flat[i] = flat

            if tmx <= tmy and tmx <= tmz:
                if tmx > t1:
                    break
                vx += sx
                if vx < 0 or vx > res - 1:
                    break
                tmx += tdx
            elif tmy <= tmz:
                if tmy > t1:
                    break
                vy += sy
                if vy < 0 or vy > res - 1:
                    break
                tmy += tdy
            else:
                if tmz > t1:
                    break
                vz += sz
                if vz < 0 or vz > res - 1:
                    break
                tmz += tdz
    return hit, best_flat


@jit
def _pt_tri_sq(px, py, pz, ax, ay, az, bx, by, bz, cx, cy, cz):
    abx = bx - ax
    aby = by - ay
    abz = bz - az
    acx = cx - ax
    acy = cy - ay
    acz = cz - az
    apx = px - ax
    apy = py - ay
    apz = pz - az
    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    bpx = px - bx
    bpy = py - by
    bpz = pz - bz
    d3 = abx * bpx + aby * bpy + abz * bpz
    d4 = acx * bpx + acy * bpy + acz * bpz
    cpx = px - cx
    cpy = py - cy
    cpz = pz - cz
    d5 = abx * cpx + aby * cpy + abz * cpz
    d6 = acx * cpx + acy * cpy + acz * cpz
    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    if d1 <= 0.0 and d2 <= 0.0:
        return apx * apx + apy * apy + apz * apz
    if d3 >= 0.0 and d4 <= d3:
        return bpx * bpx + bpy * bpy + bpz * bpz
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        den = d1 - d3
        v = 0.0 if den == 0.0 else d1 / den
        v = min(1.0, max(0.0, v))
        rx = apx - v * abx
        ry = apy - v * aby
        rz = apz - v * abz
        return rx * rx + ry * ry + rz * rz
    if d6 >= 0.0 and d5 <= d6:
        return cpx * cpx + cpy * cpy + cpz * cpz
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        den = d2 - d6
        w = 0.0 if den == 0.0 else d2 / den
        w = min(1.0, max(0.0, w))
        rx = apx - w * acx
        ry = apy - w * acy
        rz = apz - w * acz
        return rx * rx + ry * ry + rz * rz
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        den = (d4 - d3) + (d5 - d6)
        w = 0.0 if den == 0.0 else (d4 - d3) / den
        w = min(1.0, max(0.0, w))
        bcx = cx - bx
        bcy = cy - by
        bcz = cz - bz
        rx = bpx - w * bcx
        ry = bpy - w * bcy
        rz = bpz - w * bcz
        return rx * rx + ry * ry + rz * rz
    denom = va + vb + vc
    if denom == 0.0:
        best = np.inf
        den = d1 - d3
        v = 0.0 if den == 0.0 else d1 / den
        v = min(1.0, max(0.0, v))
        rx = apx - v * abx
        ry = apy - v * aby
        rz = apz - v * abz
        r = rx * rx + ry * ry + rz * rz
        if r < best:
            best = r
        den = d2 - d6
        w = 0.0 if den == 0.0 else d2 / den
        w = min(1.0, max(0.0, w))
        rx = apx - w * acx
        ry = apy - w * acy
        rz = apz - w * acz
        r = rx * rx + ry * ry + rz * rz
        if r < best:
            best = r
        den = (d4 - d3) + (d5 - d6)
        w = 0.0 if den == 0.0 else (d4 - d3) / den
        w = min(1.0, max(0.0, w))
        bcx = cx - bx
        bcy = cy - by
        bcz = cz - bz
        rx = bpx - w * bcx
        ry = bpy - w * bcy
        rz = bpz - w * bcz
        r = rx * rx + ry * ry + rz * rz
        if r < best:
            best = r
        return best
    v = vb / denom
    w = vc / denom
    qx = ax + v * abx + w * acx
    qy = ay + v * aby + w * acy
    qz = az + v * abz + w * acz
    rx = px - qx
    ry = py - qy
    rz = pz - qz
    return rx * rx + ry * ry + rz * rz


@jit
def point_mesh_sqdist_brute(points, vertices, triangles):
    n = points.shape[0]
    nf = triangles.shape[0]
    out = np.full(n, np.inf)
    for i in range(n):
        px = points[i, 0]
        py = points[i, 1]
        pz = points[i, 2]
        best = np.inf
        for f in range(nf):
            a = triangles[f, 0]
            b = triangles[f, 1]
            c = triangles[f, 2]
            d = _pt_tri_sq(px, py, pz,
                           vertices[a, 0], vertices[a, 1], vertices[a, 2],
                           vertices[b, 0], vertices[b, 1], vertices[b, 2],
                           vertices[c, 0], vertices[c, 1], vertices[c, 2])
            if d < best:
                best = d
        out[i] = best
    return out


@jit
def point_mesh_sqdist_grid(points, vertices, triangles, grid_min, cell_size,
                           dims, cell_start, cell_tris):
    """Exact nearest-triangle distance via expanding Chebyshev rings over
    a uniform cell grid. Triangles are binned by bounding box, so every
    triangle near the query is reachable; a ring at distance r only gets
    pruned once (r-1)*cell_size already exceeds the best distance, which
    keeps the result identical to the exhaustive scan."""
    n = points.shape[0]
    out = np.full(n, np.inf)
    nf = triangles.shape[0]
    if nf == 0:
        return out
    stamp = np.full(nf, -1, dtype=np.int64)
    dx = dims[0]
    dy = dims[1]
    dz = dims[2]
    for i in range(n):
        px = points[i, 0]
        py = points[i, 1]
        pz = points[i, 2]
        cxi = int(np.floor((px - grid_min[0]) / cell_size))
        cyi = int(np.floor((py - grid_min[1]) / cell_size))
        czi = int(np.floor((pz - grid_min[2]) / cell_size))
        rmax = 0
        for a in range(3):
            ci = cxi if a == 0 else (cyi if a == 1 else czi)
            da = dx if a == 0 else (dy if a == 1 else dz)
            far = max(abs(ci - 0), abs(da - 1 - ci))
            if far > rmax:
                rmax = far
        best = np.inf
        for r in range(rmax + 1):
            if r > 0:
                lb = (r - 1) * cell_size
                if lb * lb > best:
                    break
            x0 = max(cxi - r, 0)
            x1 = min(cxi + r, dx - 1)
            y0 = max(cyi - r, 0)
            y1 = min(cyi + r, dy - 1)
            z0 = max(czi - r, 0)
            z1 = min(czi + r, dz - 1)
            for cz2 in range(z0, z1 + 1):
                for cy2 in range(y0, y1 + 1):
                    for cx2 in range(x0, x1 + 1):
                        cheb = max(abs(cx2 - cxi), max(abs(cy2 - cyi), abs(cz2 - czi)))
                        if cheb != r:
                            continue
                        cell = cx2 + dx * (cy2 + dy * cz2)
                        for k in range(cell_start[cell], cell_start[cell + 1]):
                            f = cell_tris[k]
                            if stamp[f] == i:
                                continue
                            stamp[f] = i
                            a = triangles[f, 0]
                            b = triangles[f, 1]
                            c = triangles[f, 2]
                            d = _pt_tri_sq(px, py, pz,
                                           vertices[a, 0], vertices[a, 1], vertices[a, 2],
                                           vertices[b, 0], vertices[b, 1], vertices[b, 2],
                                           vertices[c, 0], vertices[c, 1], vertices[c, 2])
                            if d < best:
                                best = d
        out[i] = best
    return out


@jit
def cone_field_values(grid_origin, spacing, res, motion, translation,
                      signed_px, outside_px):
    h = signed_px.shape[0]
    w = signed_px.shape[1]
    out = np.empty(res * res * res)
    m00 = motion[0, 0]
    m01 = motion[0, 1]
    m02 = motion[0, 2]
    m10 = motion[1, 0]
    m11 = motion[1, 1]
    m12 = motion[1, 2]
    t0 = translation[0]
    t1 = translation[1]
    idx = 0
    for iz in range(res):
        z = grid_origin[2] + (iz + 0.5) * spacing
        for iy in range(res):
            y = grid_origin[1] + (iy + 0.5) * spacing
            for ix in range(res):
                x = grid_origin[0] + (ix + 0.5) * spacing
                u = m00 * x + m01 * y + m02 * z + t0
                v = m10 * x + m11 * y + m12 * z + t1
                cu = min(max(u, 0.0), w - 1.0)
                cv = min(max(v, 0.0), h - 1.0)
                du = u - cu
                dv = v - cv
                excess = np.sqrt(du * du + dv * dv)
                pxi = int(np.floor(cu + 0.5))
                pyi = int(np.floor(cv + 0.5))
                if excess == 0.0:
                    out[idx] = signed_px[pyi, pxi]
                else:
                    out[idx] = outside_px[pyi, pxi] + excess
                idx += 1
    return out
