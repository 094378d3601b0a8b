import numpy as np
import pytest

from silhlift import dataset, sfm, shapes
from silhlift.errors import InputDataError, SilhliftError

import oracles


def random_camera(rng, alpha_range=(20.0, 80.0)):
    r = oracles.random_rotation(rng)
    alpha = rng.uniform(*alpha_range)
    t = rng.uniform(50.0, 150.0, size=2)
    return sfm.camera_from_rotation(r, alpha, t)


def observation_from_cameras(s_true, cams, observed=None):
    """Stack exact projections into an ObservationMatrix."""
    rows = []
    for cam in cams:
        p = cam.project(s_true)     # (K, 2)
        rows.append(p[:, 0])
        rows.append(p[:, 1])
    entries = np.array(rows)
    if observed is None:
        observed = np.ones_like(entries, dtype=bool)
    entries = np.where(observed, entries, 0.0)
    return sfm.ObservationMatrix(entries=entries, observed=observed,
                                 ids=["v%d" % i for i in range(len(cams))],
                                 columns=tuple(range(s_true.shape[1])))


# ---------------------------------------------------------------------------
# projection onto scaled rotations

def test_project_to_scaled_rotation_fixed_point():
    rng = np.random.default_rng(0)
    for _ in range(50):
        cam = random_camera(rng)
        m = sfm.project_to_scaled_rotation(cam.M)
        assert np.allclose(m, cam.M, rtol=1e-12, atol=1e-10)


def test_project_to_scaled_rotation_is_nearest():
    # the projection must beat a cloud of random scaled rotations in
    # Frobenius distance
    rng = np.random.default_rng(1)
    for _ in range(20):
        m_raw = rng.normal(size=(2, 3)) * rng.uniform(0.5, 10.0)
        m_proj = sfm.project_to_scaled_rotation(m_raw)
        d_proj = np.linalg.norm(m_raw - m_proj)
        for _ in range(200):
            cam = random_camera(rng, alpha_range=(0.1, 12.0))
            assert d_proj <= np.linalg.norm(m_raw - cam.M) + 1e-9


def test_project_to_scaled_rotation_rejects_degenerate():
    with pytest.raises(SilhliftError):
        sfm.project_to_scaled_rotation(np.zeros((2, 3)))
    with pytest.raises(SilhliftError):
        sfm.project_to_scaled_rotation(np.array([[np.nan, 0, 0], [0, 1, 0]]))


def test_decompose_recompose_round_trip():
    rng = np.random.default_rng(2)
    for _ in range(50):
        cam = random_camera(rng)
        r, a = sfm.decompose_motion(cam.M)
        assert a == pytest.approx(cam.alpha, rel=1e-12)
        assert np.allclose(r, cam.R, atol=1e-10)
        assert np.allclose(sfm.recompose_motion(r, a), cam.M, atol=1e-10)
        # r is a proper rotation
        assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-10)


def test_camera_validation_rejects_bad_motion():
    with pytest.raises(SilhliftError):
        sfm.ScaledOrthoCamera(M=np.array([[1.0, 0.0, 0.0], [0.5, 1.0, 0.0]]),
                              T=np.zeros(2), R=np.eye(3), alpha=1.0)


def test_viewing_axis_and_depth_convention():
    rng = np.random.default_rng(3)
    cam = random_camera(rng)
    assert np.allclose(cam.viewing_axis, cam.R[2])
    # a point farther along the viewing axis projects identically
    p = rng.normal(size=3)
    q = p + 5.0 * cam.viewing_axis
    assert np.allclose(cam.project(p), cam.project(q), atol=1e-9)


def test_mirror_camera_matches_mirrored_projection():
    rng = np.random.default_rng(4)
    width = 100
    for _ in range(20):
        cam = random_camera(rng)
        mc = sfm.mirror_camera(cam, width)
        pts = rng.normal(size=(6, 3))
        uv = cam.project(pts)
        # the mirrored camera sees the same points on the flipped raster
        uv_m = mc.project(pts)
        assert np.allclose(uv_m[:, 0], (width - 1.0) - uv[:, 0], atol=1e-9)
        assert np.allclose(uv_m[:, 1], uv[:, 1], atol=1e-9)
        assert np.linalg.det(mc.R) == pytest.approx(1.0, abs=1e-10)
        # involution
        back = sfm.mirror_camera(mc, width)
        assert np.allclose(back.M, cam.M, atol=1e-12)
        assert np.allclose(back.T, cam.T, atol=1e-12)


# ---------------------------------------------------------------------------
# observation stacking

def _toy_collection(n, k_visible_short=None):
    schema = dataset.ClassSchema("toy", tuple("abcdef"), (0, 1, 2, 3, 4, 5),
                                 (0, 1, 2, 3, 4, 5))
    mask = np.zeros((4, 4), dtype=bool)
    mask[1:3, 1:3] = True
    insts = []
    for i in range(n):
        kps = []
        for j in range(6):
            vis = True
            if k_visible_short is not None and i == k_visible_short and j >= 2:
                vis = False
            kps.append(dataset.KeypointObservation(j, float(j), float(i), vis))
        insts.append(dataset.Instance(id="i%d" % i, class_name="toy",
                                      mask=mask, keypoints=tuple(kps)))
    return dataset.AnnotatedCollection(schema=schema, instances=insts)


def test_build_observation_matrix_shapes():
    col = _toy_collection(4)
    w = sfm.build_observation_matrix(col)
    assert w.entries.shape == (8, 6)
    assert w.n_instances == 4
    assert w.ids == ["i0", "i1", "i2", "i3"]
    assert w.columns == (0, 1, 2, 3, 4, 5)
    assert w.excluded == ()


def test_build_observation_matrix_excludes_sparse_instances():
    col = _toy_collection(4, k_visible_short=2)
    w = sfm.build_observation_matrix(col)
    assert w.excluded == ("i2",)
    assert w.ids == ["i0", "i1", "i3"]
    assert w.entries.shape == (6, 6)


def test_build_observation_matrix_needs_one_instance():
    col = _toy_collection(1, k_visible_short=0)
    with pytest.raises(InputDataError):
        sfm.build_observation_matrix(col)


# ---------------------------------------------------------------------------
# factorization

def test_factorization_recovers_noiseless_geometry():
    rng = np.random.default_rng(5)
    s_true = shapes.box_keypoints((0.8, 0.55, 0.35)).T
    cams_true = [random_camera(rng) for _ in range(10)]
    w = observation_from_cameras(s_true, cams_true)
    shape, cams, info = sfm.rigid_factorization(w)
    assert info["objective_trace"][-1] < 1e-12
    ga = sfm.align_gauge((shape, cams), (sfm.MeanShape(S=s_true), []))
    assert ga.residual < 1e-6
    for cam, ct in zip(ga.cameras, cams_true):
        assert sfm.geodesic_angle_deg(cam.R, ct.R) < 1e-3


def test_factorization_objective_never_increases():
    rng = np.random.default_rng(6)
    for trial in range(8):
        n, k = int(rng.integers(4, 9)), int(rng.integers(5, 11))
        s_true = rng.normal(size=(3, k))
        cams_true = [random_camera(rng) for _ in range(n)]
        observed = rng.random((2 * n, k)) < 0.8
        observed[0::2] &= observed[1::2]
        observed[1::2] = observed[0::2]
        # ensure every instance keeps >= 3 and every column >= 1
        observed[:, :3] = True
        w = observation_from_cameras(s_true, cams_true, observed)
        # noise makes the guard matter
        w.entries[w.observed] += rng.normal(size=int(w.observed.sum())) * 2.0
        shape, cams, info = sfm.rigid_factorization(w, max_iters=60)
        trace = info["objective_trace"]
        assert all(b <= a * (1 + 1e-12) + 1e-9 for a, b in zip(trace, trace[1:]))
        assert len(cams) == n


def test_factorization_handles_missing_data():
    rng = np.random.default_rng(7)
    s_true = shapes.box_keypoints((0.7, 0.5, 0.4)).T
    cams_true = [random_camera(rng) for _ in range(14)]
    observed = np.ones((28, 8), dtype=bool)
    # hide a third of the entries, pairwise by instance
    for i in range(14):
        hide = rng.choice(8, size=2, replace=False)
        observed[2 * i, hide] = observed[2 * i + 1, hide] = False
    w = observation_from_cameras(s_true, cams_true, observed)
    shape, cams, info = sfm.rigid_factorization(w)
    assert info["objective_trace"][-1] < 1e-10
    ga = sfm.align_gauge((shape, cams), (sfm.MeanShape(S=s_true), []))
    for cam, ct in zip(ga.cameras, cams_true):
        assert sfm.geodesic_angle_deg(cam.R, ct.R) < 0.1


def test_factorization_rejects_never_observed_column():
    rng = np.random.default_rng(8)
    s_true = rng.normal(size=(3, 5))
    cams_true = [random_camera(rng) for _ in range(4)]
    observed = np.ones((8, 5), dtype=bool)
    observed[:, 4] = False
    w = observation_from_cameras(s_true, cams_true, observed)
    with pytest.raises(SilhliftError):
        sfm.rigid_factorization(w)


def test_factorization_gauge_postconditions():
    rng = np.random.default_rng(9)
    s_true = rng.normal(size=(3, 7))
    cams_true = [random_camera(rng) for _ in range(6)]
    w = observation_from_cameras(s_true, cams_true)
    shape, cams, _ = sfm.rigid_factorization(w)
    # zero centroid, unit mean radius
    assert np.allclose(shape.S.mean(axis=1), 0.0, atol=1e-9)
    assert np.mean(np.linalg.norm(shape.S, axis=0)) == pytest.approx(1.0, abs=1e-9)


def test_reprojection_error_matches_objective():
    rng = np.random.default_rng(10)
    s_true = rng.normal(size=(3, 6))
    cams_true = [random_camera(rng) for _ in range(5)]
    w = observation_from_cameras(s_true, cams_true)
    shape, cams, info = sfm.rigid_factorization(w, max_iters=20)
    err = sfm.reprojection_error(w, shape, cams)
    assert err == pytest.approx(info["objective_trace"][-1], rel=1e-9, abs=1e-12)


# ---------------------------------------------------------------------------
# viewpoint angles

def test_euler_round_trip():
    rng = np.random.default_rng(11)
    for _ in range(200):
        az = rng.uniform(-179.0, 180.0)
        el = rng.uniform(-89.0, 89.0)
        ro = rng.uniform(-179.0, 180.0)
        r = sfm.viewpoint_angles_to_rotation(az, el, ro)
        cam = sfm.camera_from_rotation(r, 1.0, np.zeros(2))
        ang = sfm.camera_to_viewpoint_angles(cam)
        assert not ang.gimbal_locked
        assert ang.azimuth == pytest.approx(az, abs=1e-8)
        assert ang.elevation == pytest.approx(el, abs=1e-8)
        assert ang.roll == pytest.approx(ro, abs=1e-8)


def test_euler_gimbal_lock_flagged():
    r = sfm.viewpoint_angles_to_rotation(40.0, 90.0, 0.0)
    cam = sfm.camera_from_rotation(r, 1.0, np.zeros(2))
    ang = sfm.camera_to_viewpoint_angles(cam)
    assert ang.gimbal_locked
    assert ang.roll == 0.0
    # the synthesized rotation still reproduces the original
    back = sfm.viewpoint_angles_to_rotation(ang.azimuth, ang.elevation, ang.roll)
    assert sfm.geodesic_angle_deg(back, r) < 1e-6


def test_angle_wrapping():
    r = sfm.viewpoint_angles_to_rotation(270.0, 10.0, 0.0)
    ang = sfm.camera_to_viewpoint_angles(sfm.camera_from_rotation(r, 1.0, np.zeros(2)))
    assert ang.azimuth == pytest.approx(-90.0, abs=1e-9)


def test_geodesic_angle():
    rng = np.random.default_rng(12)
    for _ in range(30):
        r = oracles.random_rotation(rng)
        # acos conditioning near zero angle limits accuracy to ~sqrt(eps)
        assert sfm.geodesic_angle_deg(r, r) < 1e-5
        axis = rng.normal(size=3)
        deg = rng.uniform(0.0, 179.0)
        r2 = oracles.rotation_axis_angle(axis, deg) @ r
        assert sfm.geodesic_angle_deg(r2, r) == pytest.approx(deg, abs=1e-5)


# ---------------------------------------------------------------------------
# gauge alignment

def test_align_gauge_recovers_similarity():
    rng = np.random.default_rng(13)
    for reflect in (False, True):
        a = rng.normal(size=(3, 9))
        omega = oracles.random_rotation(rng)
        if reflect:
            omega = omega @ np.diag([1.0, 1.0, -1.0])
        scale = rng.uniform(0.2, 5.0)
        t = rng.normal(size=3)
        b = scale * omega @ a + t[:, None]
        cams = [random_camera(rng) for _ in range(3)]
        ga = sfm.align_gauge((sfm.MeanShape(S=a), cams), (sfm.MeanShape(S=b), []))
        assert ga.residual < 1e-9
        assert ga.scale == pytest.approx(scale, rel=1e-9)
        assert np.allclose(ga.rotation, omega, atol=1e-9)
        # compensated cameras keep projections of corresponding points
        pts_a = rng.normal(size=(5, 3))
        pts_b = ga.apply_points(pts_a)
        for cam, comp in zip(cams, ga.cameras):
            assert np.allclose(cam.project(pts_a), comp.project(pts_b), atol=1e-6)


def test_align_gauge_rejects_rank_deficient():
    rng = np.random.default_rng(14)
    flat = rng.normal(size=(3, 8))
    flat[2] = 0.0               # planar shape
    good = rng.normal(size=(3, 8))
    with pytest.raises(SilhliftError):
        sfm.align_gauge((sfm.MeanShape(S=flat), []), (sfm.MeanShape(S=good), []))
    with pytest.raises(SilhliftError):
        sfm.align_gauge((sfm.MeanShape(S=good), []), (sfm.MeanShape(S=flat), []))


def test_align_gauge_shape_mismatch():
    a = sfm.MeanShape(S=np.random.default_rng(0).normal(size=(3, 5)))
    b = sfm.MeanShape(S=np.random.default_rng(1).normal(size=(3, 6)))
    with pytest.raises(SilhliftError):
        sfm.align_gauge((a, []), (b, []))


# ---------------------------------------------------------------------------
# serialization

def test_camera_io_round_trip(tmp_path):
    rng = np.random.default_rng(15)
    s = sfm.MeanShape(S=rng.normal(size=(3, 6)), keypoint_names=tuple("abcdef"))
    cams = [random_camera(rng) for _ in range(4)]
    ids = ["a", "b", "c", "d"]
    path = str(tmp_path / "cams.json")
    sfm.save_cameras(path, s, cams, ids, refined=[True] * 4,
                     energies=[1.0, 2.0, 3.0, 4.0])
    shape, by_id, order = sfm.load_cameras(path)
    assert order == ids
    assert np.allclose(shape.S, s.S)
    for iid, cam in zip(ids, cams):
        assert np.allclose(by_id[iid].M, cam.M)
        assert np.allclose(by_id[iid].T, cam.T)
        assert by_id[iid].alpha == pytest.approx(cam.alpha)


def test_load_cameras_rejects_bad_files(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{}")
    with pytest.raises(InputDataError):
        sfm.load_cameras(str(p))
    with pytest.raises(InputDataError):
        sfm.load_cameras(str(tmp_path / "missing.json"))
