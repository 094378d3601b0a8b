import json

import numpy as np
import pytest

from silhlift import carve, rank
from silhlift.errors import InputDataError

import oracles


def _random_mask(rng, h, w):
    while True:
        m = rng.random((h, w)) < 0.35
        if m.any():
            return m


def _labeling(occ3d):
    occ3d = np.asarray(occ3d, dtype=bool)
    res = occ3d.shape[0]
    grid = carve.VoxelGrid(res=res, origin=(-res / 2.0, -res / 2.0, -res / 2.0),
                           spacing=1.0)
    return carve.VoxelLabeling(grid=grid, occupancy=occ3d.ravel())


# ---------------------------------------------------------------------------
# canonicalization

def test_canonicalize_postconditions():
    rng = np.random.default_rng(0)
    for _ in range(10):
        mask = _random_mask(rng, int(rng.integers(8, 40)), int(rng.integers(8, 40)))
        out = rank.canonicalize_mask(mask, res=64)
        assert out.shape == (64, 64)
        assert set(np.unique(out)).issubset({0.0, 1.0})
        rows, cols = np.nonzero(out > 0)
        assert rows.size > 0
        # centroid near the raster center
        assert abs(rows.mean() - 31.5) < 2.5
        assert abs(cols.mean() - 31.5) < 2.5
        # bounding-box diagonal near 80% of the side
        h = rows.max() - rows.min() + 1
        w = cols.max() - cols.min() + 1
        assert np.hypot(h, w) == pytest.approx(0.8 * 64, rel=0.12)


def test_canonicalize_invariant_to_2x_nearest_upscale():
    rng = np.random.default_rng(1)
    for _ in range(10):
        mask = _random_mask(rng, 15, 21)
        up = np.kron(mask, np.ones((2, 2), dtype=bool))
        a = rank.canonicalize_mask(mask)
        b = rank.canonicalize_mask(up)
        assert np.array_equal(a, b)


def test_canonicalize_invariant_to_padding_and_shift():
    rng = np.random.default_rng(2)
    mask = _random_mask(rng, 12, 12)
    padded = np.zeros((40, 40), dtype=bool)
    padded[17:29, 5:17] = mask
    assert np.array_equal(rank.canonicalize_mask(mask), rank.canonicalize_mask(padded))


def test_canonicalize_empty_mask():
    with pytest.raises(InputDataError):
        rank.canonicalize_mask(np.zeros((5, 5), dtype=bool))


# ---------------------------------------------------------------------------
# average masks

def _cluster(axis, sign, ids):
    cl = carve.DirectionCluster(axis=axis, sign=sign)
    cl.members = [(i, 1.0) for i in ids]
    return cl


def test_average_mask_is_pixelwise_mean():
    rng = np.random.default_rng(3)
    masks = {"a": _random_mask(rng, 20, 20), "b": _random_mask(rng, 17, 23)}
    am = rank.average_mask(_cluster(1, -1, ["a", "b"]), masks, canonical_res=64)
    expect = 0.5 * (rank.canonicalize_mask(masks["a"], 64)
                    + rank.canonicalize_mask(masks["b"], 64))
    assert np.array_equal(am.raster, expect)
    assert (am.axis, am.sign, am.count) == (1, -1, 2)
    with pytest.raises(InputDataError):
        rank.average_mask(_cluster(0, 1, []), masks)


def test_average_masks_by_axis_prefers_larger_sign():
    rng = np.random.default_rng(4)
    masks = {k: _random_mask(rng, 16, 16) for k in "abcde"}
    clusters = [
        _cluster(0, 1, ["a"]),
        _cluster(0, -1, ["b", "c"]),      # larger -> wins axis 0
        _cluster(1, 1, ["d"]),
        _cluster(1, -1, ["e"]),           # tie -> positive side wins
        _cluster(2, 1, []),
        _cluster(2, -1, []),              # empty axis skipped
    ]
    out = rank.average_masks_by_axis(clusters, masks, canonical_res=64)
    assert [(am.axis, am.sign) for am in out] == [(0, -1), (1, 1)]
    assert out[0].count == 2


# ---------------------------------------------------------------------------
# occupancy projection

def test_projection_matches_column_or_oracle_on_grid_axes():
    rng = np.random.default_rng(5)
    for trial in range(12):
        occ3d = rng.random((6, 6, 6)) < 0.25
        if not occ3d.any():
            occ3d[2, 3, 1] = True
        lab = _labeling(occ3d)
        for axis in range(3):
            for sign in (1, -1):
                direction = sign * np.eye(3)[axis]
                got = rank.project_occupancy_raster(lab, direction)
                expect = oracles.crop_true(oracles.axis_projection_or(occ3d, axis, sign))
                assert np.array_equal(got, expect), (trial, axis, sign)


def test_projection_single_voxel_and_empty():
    occ3d = np.zeros((4, 4, 4), dtype=bool)
    occ3d[1, 2, 3] = True
    lab = _labeling(occ3d)
    out = rank.project_occupancy_raster(lab, (0.3, 0.5, 0.81))
    assert out.shape == (1, 1) and out[0, 0]
    with pytest.raises(InputDataError):
        rank.project_occupancy_raster(_labeling(np.zeros((4, 4, 4), dtype=bool)),
                                      (0.0, 0.0, 1.0))


def test_projection_oblique_direction_counts_silhouette():
    # a full cube projected along a diagonal yields a hexagonal footprint
    # strictly larger than the axis view
    occ3d = np.ones((8, 8, 8), dtype=bool)
    lab = _labeling(occ3d)
    axis_view = rank.project_occupancy_raster(lab, (0.0, 0.0, 1.0))
    diag_view = rank.project_occupancy_raster(lab, np.ones(3) / np.sqrt(3.0))
    assert axis_view.sum() == 64
    assert diag_view.sum() > axis_view.sum()


# ---------------------------------------------------------------------------
# scoring

def _box_labeling(res=12, ext=(5, 4, 3)):
    occ3d = np.zeros((res, res, res), dtype=bool)
    cx = res // 2
    occ3d[cx - ext[2]:cx + ext[2], cx - ext[1]:cx + ext[1], cx - ext[0]:cx + ext[0]] = True
    return _labeling(occ3d)


def _self_avg_masks(lab, dirs, res=64):
    out = []
    for axis in range(3):
        proj = rank.project_labeling(lab, dirs.axes[axis], res)
        out.append(rank.AverageMask(axis=axis, sign=1, raster=proj, count=1))
    return out


def test_score_zero_iff_projections_match_exactly():
    dirs = carve.PrincipalDirections(axes=np.eye(3), explained=np.array([3.0, 2.0, 1.0]))
    lab = _box_labeling()
    avg = _self_avg_masks(lab, dirs)
    assert rank.score_proposal(lab, avg, dirs, canonical_res=64) == 0.0
    # flipping one voxel that changes a silhouette makes the score positive
    occ3d = lab.occupancy3d().copy()
    occ3d[0, 0, 0] = True
    worse = _labeling(occ3d)
    assert rank.score_proposal(worse, avg, dirs, canonical_res=64) > 0.0
    with pytest.raises(InputDataError):
        rank.score_proposal(lab, [], dirs)


def test_score_prefers_matching_shape():
    dirs = carve.PrincipalDirections(axes=np.eye(3), explained=np.array([3.0, 2.0, 1.0]))
    box = _box_labeling()
    avg = _self_avg_masks(box, dirs)
    # an L-shaped labeling silhouettes differently
    occ3d = box.occupancy3d().copy()
    occ3d[6:, :, 6:] = False
    lshape = _labeling(occ3d)
    assert (rank.score_proposal(lshape, avg, dirs, canonical_res=64)
            > rank.score_proposal(box, avg, dirs, canonical_res=64))


def test_select_best_orders_and_breaks_ties_by_index():
    dirs = carve.PrincipalDirections(axes=np.eye(3), explained=np.array([3.0, 2.0, 1.0]))
    box = _box_labeling()
    avg = _self_avg_masks(box, dirs)
    occ3d = box.occupancy3d().copy()
    occ3d[0:2, 0:2, 0:2] = True
    noisy = _labeling(occ3d)
    trip = carve.Triplet(reference_id="r")
    proposals = [carve.Proposal(noisy, trip, 0, 0),
                 carve.Proposal(box, trip, 0, 0),
                 carve.Proposal(box, trip, 0, 0)]
    best, order, scores = rank.select_best(proposals, avg, dirs, canonical_res=64)
    assert best == 1
    assert order == [1, 2, 0]
    assert scores[1] == scores[2] == 0.0
    assert scores[0] > 0.0
    with pytest.raises(InputDataError):
        rank.select_best([], avg, dirs)


def test_rank_report_round_trip(tmp_path):
    dirs = carve.PrincipalDirections(axes=np.eye(3), explained=np.array([3.0, 2.0, 1.0]))
    box = _box_labeling()
    avg = _self_avg_masks(box, dirs)
    trip = carve.Triplet(reference_id="r", surrogates=("s1", "s2"), axes=(0, 1))
    proposals = [carve.Proposal(box, trip, 10, 0)]
    best, order, scores = rank.select_best(proposals, avg, dirs, canonical_res=64)
    rep = rank.rank_report("r", proposals, order, scores)
    assert rep["reference"] == "r"
    assert rep["best"] == 0
    assert rep["proposals"][0]["surrogates"] == ["s1", "s2"]
    path = str(tmp_path / "rank.json")
    rank.save_rank_report(path, [rep])
    data = json.load(open(path))
    assert data["rankings"][0]["reference"] == "r"
