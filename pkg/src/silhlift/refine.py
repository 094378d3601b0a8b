"""Silhouette-consistency refinement of factorized cameras.

Factorization fits keypoints only; here each camera is nudged so that
every projected mean-shape keypoint also lands inside the instance's
silhouette. The energy is the visible-keypoint squared reprojection
error plus a weighted sum, over all keypoints (occluded ones included),
of an unsigned distance field to the foreground (zero inside, Euclidean
outside). Projected gradient descent with backtracking keeps the motion
block a scaled rotation and never accepts an energy increase. The same
descent also bootstraps cameras for images outside the factorization
set.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import InputDataError, SilhliftError
from .sfm import camera_from_motion, project_to_scaled_rotation
from .util import thread_map


class DistanceField:
    """Bilinear unsigned Euclidean distance to a mask's foreground, in
    pixels: exactly 0 at foreground pixel centers, positive elsewhere.

    Samples live on integer pixel centers; between-centers lookup is
    bilinear. Points off the raster are clamped to the pixel-center
    rectangle and charged the clamped value plus the Euclidean excess,
    which keeps the field finite and coercive. Pixel-center pairs obey
    |f(p)-f(q)| <= |p-q| (triangle inequality of the exact distances);
    between centers the bilinear patch bounds per-axis slopes by 1, so
    continuous queries obey the L1 form |f(p)-f(q)| <= |p-q|_1."""

    def __init__(self, mask):
        mask = np.asarray(mask, dtype=bool)
        if mask.ndim != 2:
            raise InputDataError("mask must be 2D")
        if not mask.any():
            raise InputDataError("mask has no foreground")
        self.height, self.width = mask.shape
        self.dist = ndimage.distance_transform_edt(~mask).astype(np.float64)

    def value_and_grad(self, uv):
        """uv: (K, 2) pixel coordinates (x, y). Returns ((K,), (K, 2))."""
        uv = np.atleast_2d(np.asarray(uv, dtype=np.float64))
        xmax = float(self.width - 1)
        ymax = float(self.height - 1)
        cx = np.clip(uv[:, 0], 0.0, xmax)
        cy = np.clip(uv[:, 1], 0.0, ymax)

        x0 = np.clip(np.floor(cx).astype(np.int64), 0, max(self.width - 2, 0))
        y0 = np.clip(np.floor(cy).astype(np.int64), 0, max(self.height - 2, 0))
        x1 = np.minimum(x0 + 1, self.width - 1)
        y1 = np.minimum(y0 + 1, self.height - 1)
        fx = cx - x0
        fy = cy - y0
        d00 = self.dist[y0, x0]
        d01 = self.dist[y0, x1]
        d10 = self.dist[y1, x0]
        d11 = self.dist[y1, x1]
        val = (1 - fy) * ((1 - fx) * d00 + fx * d01) + fy * ((1 - fx) * d10 + fx * d11)
        gx = (1 - fy) * (d01 - d00) + fy * (d11 - d10)
        gy = (1 - fx) * (d10 - d00) + fx * (d11 - d01)

        # off-raster: clamped axes contribute through the excess term only
        ex = uv[:, 0] - cx
        ey = uv[:, 1] - cy
        excess = np.hypot(ex, ey)
        off = excess > 0.0
        if np.any(off):
            gx = np.where(uv[:, 0] != cx, 0.0, gx)
            gy = np.where(uv[:, 1] != cy, 0.0, gy)
            safe = np.where(off, excess, 1.0)
            gx = gx + np.where(off, ex / safe, 0.0)
            gy = gy + np.where(off, ey / safe, 0.0)
            val = val + excess
        return val, np.stack([gx, gy], axis=1)

    def value(self, uv):
        return self.value_and_grad(uv)[0]


def distance_transform(mask):
    """Unsigned pixel-distance field to the mask foreground."""
    return DistanceField(mask)


def _energy_terms(m, t, s, xy, vis, fld, lam):
    proj = (m @ s).T + t                    # (K, 2)
    diff = proj[vis] - xy[vis]
    e_kp = float(np.sum(diff * diff))
    fval, fgrad = fld.value_and_grad(proj)
    energy = e_kp + lam * float(np.sum(fval))

    g_uv = lam * fgrad                      # (K, 2): d energy / d projection
    g_uv[vis] += 2.0 * diff
    g_t = g_uv.sum(axis=0)
    g_m = g_uv.T @ s.T                      # (2, 3)
    return energy, g_m, g_t


def refinement_energy(camera, shape_s, keypoints_xy, keypoints_vis, field, lam=1.0):
    """Visible-keypoint squared residual + lam * sum of field values at
    ALL projected shape points (occluded keypoints must still land on
    the silhouette)."""
    s = np.asarray(shape_s, dtype=np.float64)
    xy = np.asarray(keypoints_xy, dtype=np.float64)
    vis = np.asarray(keypoints_vis, dtype=bool)
    energy, _, _ = _energy_terms(camera.M, camera.T, s, xy, vis, field, lam)
    return energy


def energy_gradients(m, t, shape_s, keypoints_xy, keypoints_vis, field, lam=1.0):
    """(energy, dE/dM (2,3), dE/dT (2,)) at an unconstrained (M, T);
    the ambient-space gradient that the finite-difference check probes."""
    s = np.asarray(shape_s, dtype=np.float64)
    xy = np.asarray(keypoints_xy, dtype=np.float64)
    vis = np.asarray(keypoints_vis, dtype=bool)
    return _energy_terms(np.asarray(m, dtype=np.float64),
                         np.asarray(t, dtype=np.float64), s, xy, vis, field, lam)


@dataclass
class RefineResult:
    camera: object
    energy: float
    initial_energy: float
    iterations: int
    accepted_steps: int
    trace: list


def refine_camera(camera, mask, keypoints_xy, keypoints_vis, shape_s,
                  lam=1.0, max_iters=300, tol=1e-8, step0=None,
                  field=None):
    """Projected gradient descent on one camera.

    The translation moves along the unit gradient direction by a pixel
    step (default 1e-2 of the mask raster diagonal); the motion block
    moves by that step divided by |S|_F so projections shift comparably,
    then is projected back onto scaled rotations before evaluation. A
    step is halved (at most 30 times) until the energy strictly
    decreases; no decrease ends the descent. The lowest-energy iterate
    is returned; with no accepted step the input camera comes back
    unchanged, so the final energy never exceeds the initial one."""
    fld = field if field is not None else DistanceField(mask)
    s = np.asarray(shape_s, dtype=np.float64)
    xy = np.asarray(keypoints_xy, dtype=np.float64)
    vis = np.asarray(keypoints_vis, dtype=bool)

    if step0 is None:
        step0 = 1e-2 * float(np.hypot(fld.width, fld.height))
    step_m0 = step0 / max(float(np.linalg.norm(s)), 1e-12)

    m = camera.M.copy()
    t = camera.T.copy()
    energy, g_m, g_t = _energy_terms(m, t, s, xy, vis, fld, lam)
    initial = energy
    trace = [energy]
    accepted = 0
    it = 0
    for it in range(1, max_iters + 1):
        if not (np.all(np.isfinite(g_m)) and np.all(np.isfinite(g_t))):
            raise SilhliftError(
                "non-finite gradient at iteration %d: M=%r T=%r" % (it, m.tolist(), t.tolist()))
        gm_norm = float(np.linalg.norm(g_m))
        gt_norm = float(np.linalg.norm(g_t))
        if gm_norm == 0.0 and gt_norm == 0.0:
            break
        dir_m = g_m / gm_norm if gm_norm > 0 else np.zeros_like(g_m)
        dir_t = g_t / gt_norm if gt_norm > 0 else np.zeros_like(g_t)
        factor = 1.0
        took = False
        for _ in range(30):
            m_try = project_to_scaled_rotation(m - factor * step_m0 * dir_m)
            t_try = t - factor * step0 * dir_t
            e_try, gm_try, gt_try = _energy_terms(m_try, t_try, s, xy, vis, fld, lam)
            if e_try < energy:
                m, t = m_try, t_try
                energy, g_m, g_t = e_try, gm_try, gt_try
                took = True
                accepted += 1
                break
            factor *= 0.5
        trace.append(energy)
        if not took:
            break
        prev = trace[-2]
        if prev - energy <= tol * max(prev, 1e-30):
            break

    cam_out = camera if accepted == 0 else camera_from_motion(m, t)
    return RefineResult(camera=cam_out, energy=energy, initial_energy=initial,
                        iterations=it, accepted_steps=accepted, trace=trace)


def estimate_camera_for_new_image(shape_s, mask, keypoints_xy, keypoints_vis,
                                  lam=1.0, max_iters=300, tol=1e-8, step0=None):
    """Camera for an image that was not in the factorization set: start
    from an axis-aligned view (M = alpha0 [I2 0]) scaled so the shape
    footprint matches the mask extent, T at the mask centroid, then run
    the same descent."""
    vis = np.asarray(keypoints_vis, dtype=bool)
    if not vis.any():
        raise InputDataError("underdetermined: no visible keypoints")
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise InputDataError("mask has no foreground")
    s = np.asarray(shape_s, dtype=np.float64)
    rows, cols = np.nonzero(mask)
    cx, cy = float(cols.mean()), float(rows.mean())
    mask_rms = float(np.sqrt(np.mean((cols - cx) ** 2 + (rows - cy) ** 2)))
    shape_rms = float(np.sqrt(np.mean(np.sum(s * s, axis=0))))
    alpha0 = max(mask_rms, 1e-12) / max(shape_rms, 1e-12)
    cam0 = camera_from_motion(alpha0 * np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
                              np.array([cx, cy]))
    return refine_camera(cam0, mask, keypoints_xy, keypoints_vis, s,
                         lam=lam, max_iters=max_iters, tol=tol, step0=step0)


def refine_collection(collection, shape, cameras, obs, lam=1.0,
                      max_iters=300, tol=1e-8):
    """Refine every factorized camera against its instance's silhouette.
    `obs` supplies the instance order and keypoint columns matching
    `cameras`. Returns (cameras, results) in the same order."""
    by_id = {inst.id: inst for inst in collection.instances}
    subset = obs.columns

    def one(pair):
        iid, cam = pair
        inst = by_id[iid]
        xy, vis = inst.keypoint_arrays(subset)
        return refine_camera(cam, inst.mask, xy, vis, shape.S,
                             lam=lam, max_iters=max_iters, tol=tol)

    results = thread_map(one, list(zip(obs.ids, cameras)))
    return [r.camera for r in results], results
