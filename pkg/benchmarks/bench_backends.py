"""Side-by-side timing of the numba and numpy kernel backends.

Imports both implementation modules directly, bypassing the
SILHLIFT_BACKEND dispatch, so one run times identical workloads on each
backend and cross-checks that their outputs agree.

    python benchmarks/bench_backends.py
    python benchmarks/bench_backends.py --grid-res 128 --repeats 7 --csv out.csv
"""

import argparse
import sys
import time

import numpy as np

from silhlift import _kernels_numpy
from silhlift import carve, dataset, meshkit, refine, sfm, shapes

try:
    from silhlift import _kernels_numba
except ImportError:
    _kernels_numba = None


def _time_best(fn, args, repeats):
    """Best wall time over `repeats` calls, after one warmup call (the
    warmup also triggers jit compilation). Returns (seconds, result)."""
    result = fn(*args)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, result


def _agree(a, b):
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        return False
    if a.dtype == bool or b.dtype == bool:
        return bool(np.array_equal(a, b))
    return bool(np.allclose(a, b, rtol=1e-10, atol=1e-12, equal_nan=True))


def build_workloads(args):
    """One realistically sized input tuple per kernel entry point."""
    rng = np.random.default_rng(0)
    mesh = shapes.ellipsoid_mesh((0.85, 0.6, 0.42), subdiv=args.subdiv)
    kps = shapes.ellipsoid_keypoints((0.85, 0.6, 0.42))
    raster = args.raster
    rot = sfm.viewpoint_angles_to_rotation(25.0, 12.0, 0.0)
    alpha = 0.6 * raster / mesh.bbox_diagonal()
    center = (raster - 1) / 2.0
    cam = sfm.camera_from_rotation(rot, alpha, np.array([center, center]))
    inst = dataset.render_synthetic_instance(mesh, kps, cam, (raster, raster),
                                             instance_id="bench")

    tri_uv = mesh.vertices @ cam.M.T + cam.T
    tri_uv = tri_uv[mesh.triangles]

    # visibility-style rays: points near the surface, shared direction
    pts = meshkit.sample_surface_points(mesh, args.rays, rng)
    toward = -cam.viewing_axis
    t_min = 1e-4 * mesh.bbox_diagonal()

    grid = carve.default_grid(args.grid_res, 2.4)
    field = carve.cone_signed_field(inst, cam, grid)
    signed_px, outside_px = carve._signed_pixel_distance(inst.mask)

    # imprint-style lines: spread across the grid cross-section
    span = grid.side
    offsets = rng.uniform(-span / 2, span / 2, size=(args.rays, 3))
    origins = offsets - cam.viewing_axis * (2.0 * span)

    qpts = rng.uniform(-1.0, 1.0, size=(args.points, 3))
    idx = meshkit._build_cell_index(mesh)

    f = mesh.n_triangles
    return [
        ("rasterize_triangles", "%d tris at %d^2" % (f, raster),
         (tri_uv, raster, raster)),
        ("ray_mesh_first_hit", "%d rays x %d tris" % (args.rays, f),
         (pts, toward, mesh.vertices, mesh.triangles, t_min)),
        ("dda_ray_argmin", "%d lines in %d^3" % (args.rays, grid.res),
         (origins, cam.viewing_axis, np.asarray(grid.origin), grid.spacing,
          grid.res, field.values)),
        ("cone_field_values", "%d^3 voxels" % grid.res,
         (np.asarray(grid.origin), grid.spacing, grid.res, cam.M, cam.T,
          signed_px, outside_px)),
        ("point_mesh_sqdist_brute", "%d pts x %d tris" % (args.points, f),
         (qpts, mesh.vertices, mesh.triangles)),
        ("point_mesh_sqdist_grid", "%d pts, cell index" % args.points,
         (qpts, mesh.vertices, mesh.triangles, idx["grid_min"],
          idx["cell_size"], idx["dims"], idx["cell_start"], idx["cell_tris"])),
    ]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--raster", type=int, default=256)
    ap.add_argument("--grid-res", type=int, default=96)
    ap.add_argument("--rays", type=int, default=20000)
    ap.add_argument("--points", type=int, default=20000)
    ap.add_argument("--subdiv", type=int, default=3,
                    help="icosphere subdivisions for the benchmark mesh")
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--csv", help="also write the table as CSV")
    args = ap.parse_args(argv)

    if _kernels_numba is None:
        print("numba backend unavailable (import failed); timing numpy only")

    rows = []
    for name, size, work in build_workloads(args):
        t_np, r_np = _time_best(getattr(_kernels_numpy, name), work, args.repeats)
        if _kernels_numba is not None:
            t_nb, r_nb = _time_best(getattr(_kernels_numba, name), work, args.repeats)
            if isinstance(r_np, tuple):
                ok = all(_agree(x, y) for x, y in zip(r_np, r_nb))
            else:
                ok = _agree(r_np, r_nb)
            rows.append((name, size, t_np * 1e3, t_nb * 1e3, t_np / t_nb, ok))
        else:
            rows.append((name, size, t_np * 1e3, None, None, True))

    print("%-26s %-22s %10s %10s %8s %6s"
          % ("kernel", "workload", "numpy ms", "numba ms", "speedup", "agree"))
    bad = False
    for name, size, t_np, t_nb, speed, ok in rows:
        bad = bad or not ok
        print("%-26s %-22s %10.2f %10s %8s %6s"
              % (name, size, t_np,
                 "-" if t_nb is None else "%.2f" % t_nb,
                 "-" if speed is None else "%.1fx" % speed,
                 "yes" if ok else "NO"))

    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write("kernel,workload,numpy_ms,numba_ms,speedup,agree\n")
            for name, size, t_np, t_nb, speed, ok in rows:
                fh.write("%s,%s,%.4f,%s,%s,%s\n"
                         % (name, size.replace(",", ";"), t_np,
                            "" if t_nb is None else "%.4f" % t_nb,
                            "" if speed is None else "%.2f" % speed,
                            "yes" if ok else "no"))
        print("wrote %s" % args.csv)
    return 1 if bad else 0


if __name__ == "__main__":
    sys.exit(main())
