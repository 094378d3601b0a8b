"""Imprinted visual-hull carving on a voxel grid.

A reconstruction proposal intersects the silhouette cones of a
reference instance and two surrogate instances seen from other
principal directions (plus the left-right mirrors of all three), then
re-imprints the reference silhouette: every back-projected foreground
ray must keep at least one occupied voxel, placed where the pooled
signed cone distance is smallest. The imprint has a closed form: carve
everything with positive pooled distance, then re-occupy each ray's
argmin voxel (ties to the camera-nearest one).
"""

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import dataset, kernels
from .errors import InputDataError, SilhliftError
from .sfm import camera_from_motion, mirror_camera
from .util import rng_for, thread_map


# ---------------------------------------------------------------------------
# voxel grid and labelings

@dataclass(frozen=True)
class VoxelGrid:
    """Axis-aligned cube of res^3 voxels. Voxel (ix, iy, iz) spans
    origin + [i, i+1) * spacing per axis; flat index = ix + res*(iy +
    res*iz), x fastest."""
    res: int
    origin: tuple          # world coords of the min corner
    spacing: float

    def __post_init__(self):
        if self.res <= 0 or self.spacing <= 0.0:
            raise InputDataError("voxel grid needs positive resolution and spacing")

    @property
    def side(self):
        return self.res * self.spacing

    def centers(self):
        """(res^3, 3) voxel centers in flat order."""
        coords = (np.arange(self.res, dtype=np.float64) + 0.5) * self.spacing
        x = self.origin[0] + coords
        y = self.origin[1] + coords
        z = self.origin[2] + coords
        zz, yy, xx = np.meshgrid(z, y, x, indexing="ij")
        return np.stack([xx.ravel(), yy.ravel(), zz.ravel()], axis=1)

    def flat_index(self, ix, iy, iz):
        return ix + self.res * (iy + self.res * iz)


def default_grid(res=96, side=2.4):
    """Cube of the given world side centered on the origin; the default
    comfortably contains the unit-mean-radius shapes the factorization
    gauge produces."""
    half = side / 2.0
    return VoxelGrid(res=int(res), origin=(-half, -half, -half), spacing=side / float(res))


@dataclass
class VoxelLabeling:
    grid: VoxelGrid
    occupancy: np.ndarray          # (res^3,) bool, flat order

    def occupancy3d(self):
        g = self.grid.res
        return self.occupancy.reshape(g, g, g)    # [iz, iy, ix]

    @property
    def count(self):
        return int(self.occupancy.sum())


# ---------------------------------------------------------------------------
# signed cone fields

@dataclass
class SignedConeField:
    grid: VoxelGrid
    values: np.ndarray             # (res^3,) float64, world units
    instance_id: str


def _signed_pixel_distance(mask):
    """Per-pixel signed Euclidean distance to the silhouette boundary:
    negative on foreground. Also returns the unsigned outside distance
    used for off-raster extrapolation."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise InputDataError("mask has no foreground")
    d_out = ndimage.distance_transform_edt(~mask).astype(np.float64)
    if (~mask).any():
        d_in = ndimage.distance_transform_edt(mask).astype(np.float64)
    else:
        d_in = np.full(mask.shape, np.inf)
    return d_out - d_in, d_out


def cone_signed_field(inst, cam, grid):
    """Sample the instance's signed silhouette distance at every voxel
    center's projection, in world units (pixel distances divided by the
    camera scale so fields from different images pool meaningfully).
    Negative exactly where the projection lands on foreground; off-raster
    projections are positive."""
    signed_px, outside_px = _signed_pixel_distance(inst.mask)
    vals = kernels.cone_field_values(np.asarray(grid.origin), grid.spacing, grid.res,
                                     cam.M, cam.T, signed_px, outside_px)
    return SignedConeField(grid=grid, values=vals / cam.alpha, instance_id=inst.id)


def pooled_distance(fields):
    """Voxelwise max over the fields (carving keeps only voxels every
    cone agrees are inside)."""
    if not fields:
        raise InputDataError("no cone fields given")
    grid = fields[0].grid
    for f in fields[1:]:
        if f.grid != grid:
            raise InputDataError("cone fields live on different grids")
    out = fields[0].values.copy()
    for f in fields[1:]:
        np.maximum(out, f.values, out=out)
    return out


def plain_visual_hull(fields, grid=None):
    """Occupancy = pooled distance < 0. The unconstrained minimizer of
    the carving energy."""
    cbar = pooled_distance(fields)
    if grid is not None and fields[0].grid != grid:
        raise InputDataError("cone fields live on a different grid")
    return VoxelLabeling(grid=fields[0].grid, occupancy=cbar < 0.0)


# ---------------------------------------------------------------------------
# reference rays and imprinting

def _reference_rays(mask, cam, grid):
    """Back-project the reference foreground into world-space ray
    origins, one ray per mask block of roughly one voxel footprint
    (alpha * spacing pixels). Returns (N, 3) origins; direction is the
    camera viewing axis."""
    m = np.asarray(mask, dtype=bool)
    h, w = m.shape
    b = max(1, int(np.floor(cam.alpha * grid.spacing + 0.5)))
    hp = (h + b - 1) // b
    wp = (w + b - 1) // b
    padded = np.zeros((hp * b, wp * b), dtype=bool)
    padded[:h, :w] = m
    pooled = padded.reshape(hp, b, wp, b).any(axis=(1, 3))
    bi, bj = np.nonzero(pooled)
    u = np.stack([bj * b + (b - 1) / 2.0, bi * b + (b - 1) / 2.0], axis=1)
    return (u - cam.T) @ cam.M / cam.alpha**2


def imprint_labeling(cbar, origins, direction, grid):
    """Closed-form constrained minimizer: occupy every voxel with
    negative pooled distance, then force each ray's argmin voxel on.
    Traversal follows the viewing axis, so argmin ties resolve to the
    camera-nearest voxel. Returns (occupancy, per-ray hit mask)."""
    occ = cbar < 0.0
    if origins.shape[0] == 0:
        return occ, np.zeros(0, dtype=bool)
    hit, best = kernels.dda_ray_argmin(origins, direction, np.asarray(grid.origin),
                                       grid.spacing, grid.res, cbar)
    occ[best[hit]] = True
    return occ, hit


def imprinted_visual_hull(fields, ref_inst, ref_cam, grid=None):
    """Visual hull that cannot lose the reference silhouette: every
    foreground ray of the reference keeps its best voxel even where the
    surrogates disagree. Returns (VoxelLabeling, stats dict)."""
    if not any(f.instance_id == ref_inst.id for f in fields):
        raise SilhliftError("reference cone field missing from the field set")
    cbar = pooled_distance(fields)
    grid = fields[0].grid if grid is None else grid
    if grid != fields[0].grid:
        raise InputDataError("cone fields live on a different grid")
    origins = _reference_rays(ref_inst.mask, ref_cam, grid)
    occ, hit = imprint_labeling(cbar, origins, ref_cam.viewing_axis, grid)
    n_rays = int(origins.shape[0])
    n_miss = int(n_rays - hit.sum())
    if n_rays > 0 and n_miss > 0.01 * n_rays:
        raise SilhliftError(
            "grid too small: %d of %d reference rays miss the voxel grid" % (n_miss, n_rays))
    stats = {"n_rays": n_rays, "n_missed": n_miss}
    return VoxelLabeling(grid=grid, occupancy=occ), stats


def check_imprint_coverage(labeling, ref_inst, ref_cam):
    """(covered, hit, total) reference rays: every ray that intersects
    the grid should traverse >= 1 occupied voxel."""
    origins = _reference_rays(ref_inst.mask, ref_cam, labeling.grid)
    if origins.shape[0] == 0:
        return 0, 0, 0
    cost = np.where(labeling.occupancy, 0.0, 1.0)
    hit, best = kernels.dda_ray_argmin(origins, ref_cam.viewing_axis,
                                       np.asarray(labeling.grid.origin),
                                       labeling.grid.spacing, labeling.grid.res, cost)
    covered = int(np.sum(hit & (best >= 0) & (cost[np.maximum(best, 0)] == 0.0)))
    return covered, int(hit.sum()), int(origins.shape[0])


def hull_energy(cbar, occupancy):
    """Carving objective: sum of pooled distances over occupied voxels."""
    return float(np.sum(cbar[occupancy]))


# ---------------------------------------------------------------------------
# principal directions, clusters, triplets

@dataclass
class PrincipalDirections:
    axes: np.ndarray               # (3, 3), rows, descending variance
    explained: np.ndarray          # (3,) eigenvalues
    degenerate_variance: bool = False


def principal_directions(shape):
    """Covariance eigenvectors of the mean-shape keypoints, descending
    variance, each axis signed so its largest-magnitude component is
    positive. A nearly planar shape gets its third axis from the cross
    product and a degenerate-variance flag."""
    s = np.asarray(shape.S, dtype=np.float64)
    c = s - s.mean(axis=1, keepdims=True)
    cov = c @ c.T / s.shape[1]
    w, v = np.linalg.eigh(cov)
    order = [2, 1, 0]
    axes = v[:, order].T.copy()
    explained = w[order].copy()
    top = max(explained[0], 1e-300)
    if explained[1] <= 1e-8 * top:
        raise SilhliftError("degenerate shape: keypoints nearly collinear")
    degenerate = explained[2] <= 1e-8 * top
    if degenerate:
        third = np.cross(axes[0], axes[1])
        axes[2] = third / np.linalg.norm(third)
    for i in range(3):
        j = int(np.argmax(np.abs(axes[i])))
        if axes[i, j] < 0:
            axes[i] = -axes[i]
    return PrincipalDirections(axes=axes, explained=explained,
                               degenerate_variance=degenerate)


@dataclass
class DirectionCluster:
    axis: int                      # 0..2
    sign: int                      # +1 / -1
    members: list = field(default_factory=list)   # (instance id, residual deg)

    @property
    def ids(self):
        return [m[0] for m in self.members]


def cluster_by_direction(cameras, dirs, threshold_deg=15.0):
    """Assign each camera to the signed principal axis nearest its
    viewing direction, keeping it only within the angular threshold.
    `cameras` maps instance id -> camera (or is an (id, camera) list).
    Returns the 6 clusters in (axis, +/-) order; cameras farther than
    the threshold from every signed axis join none."""
    items = list(cameras.items()) if isinstance(cameras, dict) else list(cameras)
    clusters = [DirectionCluster(axis=j, sign=s) for j in range(3) for s in (1, -1)]
    for iid, cam in items:
        view = cam.viewing_axis
        best = None
        for j in range(3):
            c = float(np.clip(np.dot(view, dirs.axes[j]), -1.0, 1.0))
            for s, cs in ((1, c), (-1, -c)):
                ang = float(np.degrees(np.arccos(np.clip(cs, -1.0, 1.0))))
                if best is None or ang < best[0]:
                    best = (ang, j, s)
        ang, j, s = best
        if ang <= threshold_deg:
            clusters[2 * j + (0 if s > 0 else 1)].members.append((iid, ang))
    return clusters


@dataclass(frozen=True)
class Triplet:
    reference_id: str
    surrogates: tuple = ()         # 0 or 2 instance ids
    axes: tuple = ()               # principal-axis index of each surrogate
    note: str = ""                 # "", "single-axis", "unconstrained", "rotational"


def _axis_pools(clusters, excluded):
    """Surrogate candidates per principal axis (both signs pooled),
    minus the excluded ids."""
    pools = [[], [], []]
    for cl in clusters:
        for iid, _ in cl.members:
            if iid not in excluded:
                pools[cl.axis].append(iid)
    return pools


def sample_triplet(reference_id, clusters, rng):
    """Two surrogates from two distinct principal axes: the axis pair is
    drawn with probability proportional to member counts (without
    replacement), then one uniform member per axis. The reference and
    its mirror are never eligible."""
    excluded = {reference_id, dataset.mirror_id(reference_id)}
    pools = _axis_pools(clusters, excluded)
    counts = np.array([len(p) for p in pools], dtype=np.float64)
    populated = np.nonzero(counts)[0]
    if populated.size < 2:
        raise SilhliftError("insufficient coverage: need members on 2 principal axes")
    p1 = counts / counts.sum()
    a1 = int(rng.choice(3, p=p1))
    rest = counts.copy()
    rest[a1] = 0.0
    a2 = int(rng.choice(3, p=rest / rest.sum()))
    s1 = pools[a1][int(rng.integers(len(pools[a1])))]
    s2 = pools[a2][int(rng.integers(len(pools[a2])))]
    return Triplet(reference_id=reference_id, surrogates=(s1, s2), axes=(a1, a2))


def _rotation_about_axis(axis, deg):
    a = np.asarray(axis, dtype=np.float64)
    a = a / np.linalg.norm(a)
    t = np.deg2rad(deg)
    c, s = np.cos(t), np.sin(t)
    cross = np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])
    return c * np.eye(3) + s * cross + (1.0 - c) * np.outer(a, a)


def synthesize_rotational_surrogates(inst, cam, dirs, schema, world_up=(0.0, 1.0, 0.0)):
    """Views of a rotationally symmetric object spun in 45-degree steps
    about its symmetry axis (the principal axis most aligned with the
    world up direction). The silhouette is reused unchanged; only the
    camera composes with the rotation. Returns 8 (instance, camera)
    pairs, k=0 being the original."""
    if not schema.rotational_symmetric:
        raise SilhliftError("class %r is not rotational-symmetric" % schema.class_name)
    up = np.asarray(world_up, dtype=np.float64)
    axis = dirs.axes[int(np.argmax(np.abs(dirs.axes @ up)))]
    views = []
    for k in range(8):
        rot = _rotation_about_axis(axis, 45.0 * k)
        views.append((inst, camera_from_motion(cam.M @ rot, cam.T)))
    return views


# ---------------------------------------------------------------------------
# per-reference reconstruction

@dataclass
class Proposal:
    labeling: VoxelLabeling
    triplet: Triplet
    n_rays: int
    n_missed: int


def reconstruct_instance(reference_id, collection, cameras, dirs, clusters,
                         n_samples=20, grid=None, seed=0, imprint=True):
    """Carve reconstruction proposals for one reference instance.

    Regular classes draw `n_samples` surrogate triplets and carve each
    from six cones (reference, two surrogates, and the mirrors of all
    three). Rotationally symmetric classes instead emit one proposal
    from the 8 spin-synthesized views. With surrogates on only one
    principal axis both come from it ("single-axis"); with none, the
    proposal is the reference's own imprinted single-view hull
    ("unconstrained"). `imprint=False` drops the reference re-imprint
    and returns plain hulls of the same cone sets (the ablation path).
    Deterministic for a given seed: the triplet stream depends only on
    (seed, reference id), and carving is pure, so worker count never
    changes the output."""
    if grid is None:
        grid = default_grid()
    by_id = {inst.id: inst for inst in collection.instances}
    if reference_id not in by_id:
        raise InputDataError("unknown reference instance %r" % reference_id)
    if reference_id not in cameras:
        raise InputDataError("no camera for reference instance %r" % reference_id)
    ref = by_id[reference_id]
    ref_cam = cameras[reference_id]
    schema = collection.schema

    def inst_and_cam(iid):
        if iid in by_id:
            inst = by_id[iid]
        else:
            inst = dataset.mirror_instance(by_id[dataset.mirror_id(iid)], schema)
        if iid in cameras:
            cam = cameras[iid]
        else:
            cam = mirror_camera(cameras[dataset.mirror_id(iid)], inst.width)
        return inst, cam

    def hull(fields):
        if imprint:
            return imprinted_visual_hull(fields, ref, ref_cam, grid)
        return plain_visual_hull(fields, grid), {"n_rays": 0, "n_missed": 0}

    if schema.rotational_symmetric:
        views = synthesize_rotational_surrogates(ref, ref_cam, dirs, schema)
        fields = [cone_signed_field(i, c, grid) for i, c in views]
        lab, stats = hull(fields)
        trip = Triplet(reference_id=reference_id, note="rotational")
        return [Proposal(lab, trip, stats["n_rays"], stats["n_missed"])]

    excluded = {reference_id, dataset.mirror_id(reference_id)}
    pools = _axis_pools(clusters, excluded)
    populated = [j for j in range(3) if pools[j]]

    if not populated:
        fields = [cone_signed_field(ref, ref_cam, grid)]
        lab, stats = hull(fields)
        trip = Triplet(reference_id=reference_id, note="unconstrained")
        return [Proposal(lab, trip, stats["n_rays"], stats["n_missed"])]

    rng = rng_for(seed, "carve", reference_id)
    triplets = []
    for _ in range(int(n_samples)):
        if len(populated) >= 2:
            triplets.append(sample_triplet(reference_id, clusters, rng))
        else:
            j = populated[0]
            pool = pools[j]
            if len(pool) >= 2:
                pick = rng.choice(len(pool), size=2, replace=False)
                surrogates = (pool[int(pick[0])], pool[int(pick[1])])
            else:
                surrogates = (pool[0], pool[0])
            triplets.append(Triplet(reference_id=reference_id, surrogates=surrogates,
                                    axes=(j, j), note="single-axis"))

    def carve_one(trip):
        pairs = [(ref, ref_cam)]
        for sid in trip.surrogates:
            pairs.append(inst_and_cam(sid))
        mirrored = [(dataset.mirror_instance(i, schema), mirror_camera(c, i.width))
                    for i, c in pairs]
        fields = [cone_signed_field(i, c, grid) for i, c in pairs + mirrored]
        lab, stats = hull(fields)
        return Proposal(lab, trip, stats["n_rays"], stats["n_missed"])

    return thread_map(carve_one, triplets)


# ---------------------------------------------------------------------------
# serialization

_MAGIC = b"CVXL"


def save_labeling(path, lab):
    """Compact occupancy file: magic, u32 resolution, 3x f64 origin, f64
    spacing (little-endian), then the flat occupancy bitmap packed 8
    voxels per byte, LSB first."""
    bits = np.packbits(lab.occupancy.astype(np.uint8), bitorder="little")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", lab.grid.res))
        fh.write(struct.pack("<3d", *lab.grid.origin))
        fh.write(struct.pack("<d", lab.grid.spacing))
        fh.write(bits.tobytes())


def load_labeling(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 40 or blob[:4] != _MAGIC:
        raise InputDataError("not a voxel occupancy file: %s" % path)
    res = struct.unpack_from("<I", blob, 4)[0]
    origin = struct.unpack_from("<3d", blob, 8)
    spacing = struct.unpack_from("<d", blob, 32)[0]
    n = res**3
    need = 40 + (n + 7) // 8
    if len(blob) < need:
        raise InputDataError("voxel occupancy file truncated: %s" % path)
    bits = np.frombuffer(blob[40:need], dtype=np.uint8)
    occ = np.unpackbits(bits, bitorder="little")[:n].astype(bool)
    return VoxelLabeling(grid=VoxelGrid(res=res, origin=tuple(origin), spacing=spacing),
                         occupancy=occ)


def save_voxel_points(path, lab):
    """Occupied voxel centers as 'x y z' text lines, flat order."""
    centers = lab.grid.centers()[lab.occupancy]
    with open(path, "w") as fh:
        for x, y, z in centers:
            fh.write("%.17g %.17g %.17g\n" % (x, y, z))
