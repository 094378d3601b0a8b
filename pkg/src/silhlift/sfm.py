"""Rigid factorization of keypoint tracks under scaled-orthographic
cameras.

The observation matrix stacks two rows (x, y) per instance over the
keypoint columns, with missing entries flagged. Factorization recovers a
single class mean shape S (3xK) and one camera per instance, where each
camera's 2x3 motion block is a scaled rotation (M Mt = alpha^2 I). The
solver alternates least-squares updates with a projection onto scaled
rotations, keeping the objective monotone; the output gauge is fixed to
zero shape centroid and unit mean keypoint radius.
"""

import json
from dataclasses import dataclass

import numpy as np

from .errors import InputDataError, SilhliftError

_MOTION_TOL = 1e-8


def project_to_scaled_rotation(m_raw):
    """Nearest (Frobenius) 2x3 matrix with M Mt = alpha^2 I, alpha > 0.

    SVD of the input with both singular values replaced by their mean.
    """
    m_raw = np.asarray(m_raw, dtype=np.float64)
    if not np.all(np.isfinite(m_raw)):
        raise SilhliftError("non-finite motion block")
    u, s, vt = np.linalg.svd(m_raw, full_matrices=False)
    alpha = 0.5 * (s[0] + s[1])
    if alpha <= 0.0:
        raise SilhliftError("degenerate motion block")
    return alpha * (u @ vt)


def decompose_motion(m):
    """Split a scaled-rotation block into (R, alpha). The third row of R
    is the viewing axis (cross product of the first two)."""
    m = np.asarray(m, dtype=np.float64)
    alpha = np.sqrt(np.sum(m * m) / 2.0)
    if alpha <= 0.0:
        raise SilhliftError("degenerate motion block")
    gram = m @ m.T
    if np.linalg.norm(gram - alpha**2 * np.eye(2)) > 1e-6 * alpha**2:
        raise SilhliftError("motion block violates the scaled-rotation constraint")
    r12 = m / alpha
    r3 = np.cross(r12[0], r12[1])
    return np.vstack([r12, r3]), float(alpha)


def recompose_motion(rotation, alpha):
    return alpha * np.asarray(rotation, dtype=np.float64)[:2]


@dataclass(frozen=True, eq=False)
class ScaledOrthoCamera:
    M: np.ndarray      # (2, 3)
    T: np.ndarray      # (2,)
    R: np.ndarray      # (3, 3)
    alpha: float

    def __post_init__(self):
        gram = self.M @ self.M.T
        if np.linalg.norm(gram - self.alpha**2 * np.eye(2)) > _MOTION_TOL * self.alpha**2:
            raise SilhliftError("camera motion block is not a scaled rotation")
        if np.linalg.norm(self.R @ self.R.T - np.eye(3)) > _MOTION_TOL:
            raise SilhliftError("camera rotation is not orthonormal")

    @property
    def viewing_axis(self):
        return self.R[2]

    def project(self, points):
        """points: (3,) or (N, 3) or shape matrix (3, K) -> pixel coords."""
        points = np.asarray(points, dtype=np.float64)
        if points.ndim == 2 and points.shape[0] == 3 and points.shape[1] != 3:
            return (self.M @ points).T + self.T
        return points @ self.M.T + self.T


def camera_from_motion(m, t):
    rotation, alpha = decompose_motion(m)
    return ScaledOrthoCamera(M=np.array(m, dtype=np.float64),
                             T=np.array(t, dtype=np.float64),
                             R=rotation, alpha=alpha)


def camera_from_rotation(rotation, alpha, t):
    rotation = np.asarray(rotation, dtype=np.float64)
    return ScaledOrthoCamera(M=alpha * rotation[:2],
                             T=np.array(t, dtype=np.float64),
                             R=rotation, alpha=float(alpha))


def mirror_camera(cam, width):
    """Camera observing the left-right flipped raster: first row of R
    negated (third follows to keep det +1), T_x reflected."""
    m = np.vstack([-cam.M[0], cam.M[1]])
    t = np.array([float(width - 1) - cam.T[0], cam.T[1]])
    return camera_from_motion(m, t)


@dataclass
class MeanShape:
    S: np.ndarray               # (3, K)
    keypoint_names: tuple = ()

    @property
    def n_points(self):
        return self.S.shape[1]


@dataclass
class ObservationMatrix:
    entries: np.ndarray        # (2N, K') floats
    observed: np.ndarray       # (2N, K') bools
    ids: list                  # N instance ids, row pair order
    columns: tuple             # original keypoint indices of the K' columns
    excluded: tuple = ()       # ids dropped for having < 3 observed subset keypoints

    @property
    def n_instances(self):
        return self.entries.shape[0] // 2


def build_observation_matrix(collection, subset=None):
    """Stack keypoint observations, two rows per instance, columns
    restricted to the given keypoint subset (default: schema.sfm_subset).
    Instances with fewer than 3 observed subset keypoints are excluded
    and reported in .excluded."""
    if subset is None:
        subset = collection.schema.sfm_subset
    subset = tuple(subset)
    rows = []
    obs_rows = []
    ids = []
    excluded = []
    for inst in collection.instances:
        xy, vis = inst.keypoint_arrays(subset)
        if int(vis.sum()) < 3:
            excluded.append(inst.id)
            continue
        rows.append(np.where(vis, xy[:, 0], 0.0))
        rows.append(np.where(vis, xy[:, 1], 0.0))
        obs_rows.append(vis)
        obs_rows.append(vis)
        ids.append(inst.id)
    if not ids:
        raise InputDataError("no instance has 3 observed keypoints in the subset")
    return ObservationMatrix(
        entries=np.array(rows, dtype=np.float64),
        observed=np.array(obs_rows, dtype=bool),
        ids=ids, columns=subset, excluded=tuple(excluded))


def reprojection_error(w, shape, cameras):
    """Sum of squared residuals over observed entries of W against the
    cameras' projections of the mean shape."""
    total = 0.0
    s = shape.S
    for n, cam in enumerate(cameras):
        proj = cam.M @ s + cam.T[:, None]
        for r, row in enumerate((2 * n, 2 * n + 1)):
            mask = w.observed[row]
            diff = w.entries[row, mask] - proj[r, mask]
            total += float(diff @ diff)
    return total


def _instance_residual(wx, wy, vis, m, t, s):
    proj = m @ s[:, vis] + t[:, None]
    dx = wx[vis] - proj[0]
    dy = wy[vis] - proj[1]
    return float(dx @ dx + dy @ dy)


def _normalize_gauge(s, motions, translations):
    """Zero shape centroid, unit mean keypoint radius; cameras absorb the
    change so every projection is preserved."""
    centroid = s.mean(axis=1)
    s = s - centroid[:, None]
    radius = float(np.mean(np.linalg.norm(s, axis=0)))
    if radius > 0.0:
        s = s / radius
    for n in range(len(motions)):
        translations[n] = translations[n] + motions[n] @ centroid
        if radius > 0.0:
            motions[n] = motions[n] * radius
    return s


def rigid_factorization(w, max_iters=500, tol=1e-9, seed=0):
    """Alternating factorization of W into mean shape + cameras.

    Per outer iteration: per-instance unconstrained [M T] least squares
    followed by projection onto scaled rotations (kept only when it does
    not worsen that instance's residual, so the objective never
    increases), then a least-squares shape update over observed entries,
    then gauge renormalization. Fully deterministic; `seed` is accepted
    for interface stability but no step draws randomness.

    Returns (MeanShape, cameras, info) where info carries the objective
    trace and iteration count.
    """
    entries = w.entries
    observed = w.observed
    n = w.n_instances
    k = entries.shape[1]

    never = ~observed.any(axis=0)
    if never.any():
        raise SilhliftError("keypoint never observed: column %d" % int(np.nonzero(never)[0][0]))

    # shape init: rank-3 truncation of the mean-filled, centered matrix
    filled = entries.copy()
    row_mean = np.zeros(2 * n)
    for r in range(2 * n):
        vals = entries[r, observed[r]]
        row_mean[r] = vals.mean()
        filled[r, ~observed[r]] = row_mean[r]
    centered = filled - row_mean[:, None]
    _, sing, vt = np.linalg.svd(centered, full_matrices=False)
    ncomp = min(3, vt.shape[0])
    s = np.zeros((3, k))
    s[:ncomp] = np.sqrt(sing[:ncomp])[:, None] * vt[:ncomp]

    # camera init: identity rotation at the observed centroid/spread
    motions = []
    translations = []
    for i in range(n):
        vis = observed[2 * i]
        wx = entries[2 * i, vis]
        wy = entries[2 * i + 1, vis]
        cx, cy = wx.mean(), wy.mean()
        spread = np.sqrt(np.mean((wx - cx) ** 2 + (wy - cy) ** 2))
        alpha0 = max(spread, 1e-12)
        motions.append(alpha0 * np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))
        translations.append(np.array([cx, cy]))
    s = _normalize_gauge(s, motions, translations)

    def objective():
        total = 0.0
        for i in range(n):
            total += _instance_residual(entries[2 * i], entries[2 * i + 1],
                                        observed[2 * i], motions[i], translations[i], s)
        return total

    trace = [objective()]
    for it in range(max_iters):
        # cameras: unconstrained LS, project, refit T, keep if not worse
        for i in range(n):
            vis = observed[2 * i]
            nobs = int(vis.sum())
            design = np.hstack([s[:, vis].T, np.ones((nobs, 1))])
            sol_x, _, _, _ = np.linalg.lstsq(design, entries[2 * i, vis], rcond=None)
            sol_y, _, _, _ = np.linalg.lstsq(design, entries[2 * i + 1, vis], rcond=None)
            m_raw = np.vstack([sol_x[:3], sol_y[:3]])
            try:
                m_new = project_to_scaled_rotation(m_raw)
            except SilhliftError:
                continue
            proj = m_new @ s[:, vis]
            t_new = np.array([np.mean(entries[2 * i, vis] - proj[0]),
                              np.mean(entries[2 * i + 1, vis] - proj[1])])
            old = _instance_residual(entries[2 * i], entries[2 * i + 1], vis,
                                     motions[i], translations[i], s)
            new = _instance_residual(entries[2 * i], entries[2 * i + 1], vis,
                                     m_new, t_new, s)
            if new <= old:
                motions[i] = m_new
                translations[i] = t_new

        # shape: per-column LS over the instances that observe it
        for col in range(k):
            blocks = []
            rhs = []
            for i in range(n):
                if observed[2 * i, col]:
                    blocks.append(motions[i])
                    rhs.append(entries[2 * i, col] - translations[i][0])
                    rhs.append(entries[2 * i + 1, col] - translations[i][1])
            a = np.vstack(blocks)
            b = np.array(rhs)
            s[:, col], _, _, _ = np.linalg.lstsq(a, b, rcond=None)

        s = _normalize_gauge(s, motions, translations)
        err = objective()
        if not np.isfinite(err):
            raise SilhliftError("factorization diverged at iteration %d" % it)
        prev = trace[-1]
        trace.append(err)
        if prev - err <= tol * max(prev, 1e-30):
            break

    cameras = [camera_from_motion(motions[i], translations[i]) for i in range(n)]
    names = tuple(str(c) for c in w.columns)
    shape = MeanShape(S=s, keypoint_names=names)
    info = {"objective_trace": trace, "iterations": len(trace) - 1,
            "excluded": w.excluded}
    return shape, cameras, info


def _rot_y(deg):
    a = np.deg2rad(deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rot_x(deg):
    a = np.deg2rad(deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _rot_z(deg):
    a = np.deg2rad(deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class ViewpointAngles:
    azimuth: float
    elevation: float
    roll: float
    gimbal_locked: bool = False


def _wrap_angle(deg):
    deg = float(deg)
    while deg <= -180.0:
        deg += 360.0
    while deg > 180.0:
        deg -= 360.0
    return deg


def camera_to_viewpoint_angles(cam):
    """Euler split R = Rz(roll) Rx(elevation) Ry(azimuth): azimuth about
    the world up-axis (y), elevation about the lateral axis, roll about
    the viewing axis. At elevation +-90 the split degenerates; roll is
    reported as 0 and the result is flagged."""
    r = cam.R
    sin_el = np.clip(r[2, 1], -1.0, 1.0)
    elevation = np.rad2deg(np.arcsin(sin_el))
    if abs(sin_el) >= 1.0 - 1e-12:
        azimuth = np.rad2deg(np.arctan2(r[0, 2], r[0, 0]))
        return ViewpointAngles(_wrap_angle(azimuth), _wrap_angle(elevation), 0.0, True)
    azimuth = np.rad2deg(np.arctan2(-r[2, 0], r[2, 2]))
    roll = np.rad2deg(np.arctan2(-r[0, 1], r[1, 1]))
    return ViewpointAngles(_wrap_angle(azimuth), _wrap_angle(elevation),
                           _wrap_angle(roll), False)


def viewpoint_angles_to_rotation(azimuth, elevation, roll):
    return _rot_z(roll) @ _rot_x(elevation) @ _rot_y(azimuth)


def geodesic_angle_deg(ra, rb):
    """Angle of the relative rotation ra rb^T, degrees in [0, 180]."""
    rel = np.asarray(ra) @ np.asarray(rb).T
    c = np.clip((np.trace(rel) - 1.0) / 2.0, -1.0, 1.0)
    return float(np.rad2deg(np.arccos(c)))


@dataclass
class GaugeAlignment:
    rotation: np.ndarray       # (3, 3) orthogonal, possibly a reflection
    scale: float
    translation: np.ndarray    # (3,)
    shape: MeanShape           # estimate mapped into the reference frame
    cameras: list              # estimate cameras, compensated
    residual: float            # Frobenius distance after alignment

    def apply_points(self, points):
        """Map (N, 3) estimate-frame points into the reference frame."""
        return np.asarray(points) @ (self.scale * self.rotation).T + self.translation


def align_gauge(estimated, reference):
    """Similarity (rotation/reflection + scale + translation) aligning an
    estimated (MeanShape, cameras) pair onto a reference one, by
    orthogonal Procrustes on the shapes. Cameras are compensated so that
    every projection is unchanged.
    """
    est_shape, est_cams = estimated
    ref_shape, ref_cams = reference
    a = np.asarray(est_shape.S, dtype=np.float64)
    b = np.asarray(ref_shape.S, dtype=np.float64)
    if a.shape != b.shape:
        raise SilhliftError("shapes disagree on keypoint count")
    ac = a - a.mean(axis=1, keepdims=True)
    bc = b - b.mean(axis=1, keepdims=True)
    for name, mat in (("estimated", ac), ("reference", bc)):
        sv = np.linalg.svd(mat, compute_uv=False)
        if sv[2] <= 1e-9 * max(sv[0], 1e-30):
            raise SilhliftError("gauge underdetermined: %s shape is rank-deficient" % name)
    u, sing, vt = np.linalg.svd(bc @ ac.T)
    omega = u @ vt
    scale = float(np.sum(sing) / np.sum(ac * ac))
    translation = b.mean(axis=1) - scale * omega @ a.mean(axis=1)

    aligned_s = scale * omega @ a + translation[:, None]
    residual = float(np.linalg.norm(aligned_s - b))
    aligned_cams = []
    for cam in est_cams:
        m = (cam.M @ omega.T) / scale
        t = cam.T - m @ translation
        aligned_cams.append(camera_from_motion(m, t))
    return GaugeAlignment(rotation=omega, scale=scale, translation=translation,
                          shape=MeanShape(S=aligned_s, keypoint_names=est_shape.keypoint_names),
                          cameras=aligned_cams, residual=residual)


def cameras_to_json(shape, cameras, ids, refined=None, energies=None):
    doc = {"S": [[float(x) for x in row] for row in shape.S], "cameras": []}
    for i, (iid, cam) in enumerate(zip(ids, cameras)):
        entry = {
            "id": iid,
            "M": [[float(x) for x in row] for row in cam.M],
            "T": [float(x) for x in cam.T],
            "R": [[float(x) for x in row] for row in cam.R],
            "alpha": float(cam.alpha),
        }
        if refined is not None and refined[i]:
            entry["refined"] = True
            if energies is not None:
                entry["energy"] = float(energies[i])
        doc["cameras"].append(entry)
    return doc


def save_cameras(path, shape, cameras, ids, refined=None, energies=None):
    from .util import dump_json
    dump_json(cameras_to_json(shape, cameras, ids, refined, energies), path)


def load_cameras(path):
    """Returns (MeanShape, {id: ScaledOrthoCamera}, ordered ids)."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise InputDataError("cannot read camera file: %s" % exc)
    except json.JSONDecodeError as exc:
        raise InputDataError("camera file is not valid JSON: %s" % exc)
    if "S" not in doc or "cameras" not in doc:
        raise InputDataError("camera file missing 'S' or 'cameras'")
    shape = MeanShape(S=np.array(doc["S"], dtype=np.float64))
    cams = {}
    ids = []
    for entry in doc["cameras"]:
        cam = ScaledOrthoCamera(
            M=np.array(entry["M"], dtype=np.float64),
            T=np.array(entry["T"], dtype=np.float64),
            R=np.array(entry["R"], dtype=np.float64),
            alpha=float(entry["alpha"]))
        cams[entry["id"]] = cam
        ids.append(entry["id"])
    return shape, cams, ids
