"""Ranking of carved reconstruction proposals.

Good reconstructions of an object class should silhouette like the
class: each proposal is projected orthographically along the principal
directions and compared, pixel for pixel, against an average mask
pooled from the real silhouettes clustered on that direction. Masks and
projections are first normalized to a canonical square raster (centroid
centered, foreground bounding-box diagonal at 80% of the side) so
per-image scale and placement drop out. The score is the mean absolute
difference averaged over the directions that have data; lower is
better.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InputDataError
from .util import dump_json

CANONICAL_RES = 128


def canonicalize_mask(mask, res=CANONICAL_RES):
    """Nearest-neighbor resample of a binary mask into the canonical
    frame: foreground centroid at the raster center, bounding-box
    diagonal scaled to 0.8 * res. Returns float64 in {0, 1}."""
    m = np.asarray(mask, dtype=bool)
    rows, cols = np.nonzero(m)
    if rows.size == 0:
        raise InputDataError("mask has no foreground")
    cy, cx = float(rows.mean()), float(cols.mean())
    h = float(rows.max() - rows.min() + 1)
    w = float(cols.max() - cols.min() + 1)
    scale = 0.8 * res / float(np.hypot(h, w))
    half = (res - 1) / 2.0
    axis = np.arange(res, dtype=np.float64)
    sy = np.floor(cy + (axis - half) / scale + 0.5).astype(np.int64)
    sx = np.floor(cx + (axis - half) / scale + 0.5).astype(np.int64)
    ok_y = (sy >= 0) & (sy < m.shape[0])
    ok_x = (sx >= 0) & (sx < m.shape[1])
    out = np.zeros((res, res), dtype=np.float64)
    yy = sy[ok_y][:, None]
    xx = sx[ok_x][None, :]
    sub = m[yy, xx].astype(np.float64)
    out[np.ix_(ok_y, ok_x)] = sub
    return out


@dataclass
class AverageMask:
    axis: int
    sign: int
    raster: np.ndarray             # (res, res) float64 in [0, 1]
    count: int


def average_mask(cluster, masks, canonical_res=CANONICAL_RES):
    """Pixelwise mean of the cluster members' canonicalized masks.
    `masks` maps instance id -> binary mask."""
    ids = cluster.ids
    if not ids:
        raise InputDataError("no members in direction cluster (%d, %+d)"
                             % (cluster.axis, cluster.sign))
    acc = np.zeros((canonical_res, canonical_res), dtype=np.float64)
    for iid in ids:
        acc += canonicalize_mask(masks[iid], canonical_res)
    return AverageMask(axis=cluster.axis, sign=cluster.sign,
                       raster=acc / len(ids), count=len(ids))


def average_masks_by_axis(clusters, masks, canonical_res=CANONICAL_RES):
    """One average mask per principal axis that has any members: of the
    two signed clusters on an axis the larger one is used (ties go to
    the positive side). Axes with no members are skipped."""
    by_axis = {}
    for cl in clusters:
        by_axis.setdefault(cl.axis, []).append(cl)
    out = []
    for axis in sorted(by_axis):
        best = None
        for cl in by_axis[axis]:
            if cl.members and (best is None or len(cl.members) > len(best.members)):
                best = cl
        if best is not None:
            out.append(average_mask(best, masks, canonical_res))
    return out


def _axis_basis(direction):
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    up = np.array([0.0, 1.0, 0.0])
    if abs(float(d @ up)) > 0.9:
        up = np.array([1.0, 0.0, 0.0])
    e1 = np.cross(up, d)
    e1 = e1 / np.linalg.norm(e1)
    e2 = np.cross(d, e1)
    return e1, e2


def project_occupancy_raster(labeling, direction):
    """Binary orthographic footprint of the occupied voxels on the plane
    perpendicular to `direction`, sampled at voxel spacing. For a grid
    axis this is exactly the column-wise OR."""
    occ = labeling.occupancy
    if not occ.any():
        raise InputDataError("empty labeling")
    e1, e2 = _axis_basis(direction)
    pts = labeling.grid.centers()[occ]
    u = pts @ e1
    v = pts @ e2
    iu = np.floor((u - u.min()) / labeling.grid.spacing + 0.5).astype(np.int64)
    iv = np.floor((v - v.min()) / labeling.grid.spacing + 0.5).astype(np.int64)
    raster = np.zeros((int(iv.max()) + 1, int(iu.max()) + 1), dtype=bool)
    raster[iv, iu] = True
    return raster


def project_labeling(labeling, direction, canonical_res=CANONICAL_RES):
    """Canonicalized orthographic projection of a labeling, comparable
    with an AverageMask raster."""
    return canonicalize_mask(project_occupancy_raster(labeling, direction),
                             canonical_res)


def score_proposal(labeling, avg_masks, dirs, canonical_res=CANONICAL_RES):
    """Mean absolute pixel difference between the proposal's projection
    and the average mask, averaged over the available directions. Zero
    iff every projection reproduces its average mask exactly."""
    if not avg_masks:
        raise InputDataError("no average masks available")
    total = 0.0
    for am in avg_masks:
        direction = am.sign * dirs.axes[am.axis]
        proj = project_labeling(labeling, direction, canonical_res)
        total += float(np.mean(np.abs(proj - am.raster)))
    return total / len(avg_masks)


def select_best(proposals, avg_masks, dirs, canonical_res=CANONICAL_RES):
    """Scores every proposal's labeling; returns (best index, indices in
    ascending score order, scores). Ties keep the lower index."""
    if not proposals:
        raise InputDataError("no proposals to rank")
    scores = [score_proposal(p.labeling, avg_masks, dirs, canonical_res)
              for p in proposals]
    order = sorted(range(len(proposals)), key=lambda i: (scores[i], i))
    return order[0], order, scores


def rank_report(reference_id, proposals, order, scores):
    """JSON-ready record of a ranked proposal list."""
    entries = []
    for i in order:
        trip = proposals[i].triplet
        entries.append({
            "index": i,
            "score": float(scores[i]),
            "surrogates": list(trip.surrogates),
            "axes": list(trip.axes),
            "note": trip.note,
        })
    return {"reference": reference_id, "best": order[0], "proposals": entries}


def save_rank_report(path, reports):
    dump_json({"rankings": reports}, path)
