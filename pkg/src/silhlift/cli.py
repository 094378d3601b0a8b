"""The silhlift command line tool.

Subcommands walk the pipeline end to end: `synth` renders a labeled
mesh bundle into a silhouette manifest plus a ground-truth bundle,
`cameras` factorizes and refines cameras, `reconstruct` carves/ranks/
exports proposals, `evaluate` scores reconstructions against ground
truth, and `cluster` groups meshes by the symmetric distance. Every
command is deterministic given (inputs, config, seed): reruns write
byte-identical outputs regardless of worker count, and the effective
configuration is echoed into each output directory. Exit codes: 0 ok,
1 internal failure, 2 bad input or usage.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import carve, dataset, meshkit, rank, refine, sfm, shapes
from .errors import InputDataError, SilhliftError
from .util import dump_json, rng_for

DEFAULTS = {
    "seed": 0,
    "grid_res": 96,
    "grid_side": 2.4,
    "threshold_deg": 15.0,
    "samples": 20,
    "lambda": 1.0,
    "selection": "ranked",
    "refine": True,
    "imprint": True,
    "canonical_res": 128,
    "rms_samples": 20000,
    "views": 5,
    "raster": 192,
    "k": 5,
    "view_list": None,
}

_CONFIG_KEYS = set(DEFAULTS)


def _load_config_file(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise InputDataError("cannot read config file: %s" % exc)
    except json.JSONDecodeError as exc:
        raise InputDataError("config file is not valid JSON: %s" % exc)
    unknown = set(doc) - _CONFIG_KEYS
    if unknown:
        raise InputDataError("unknown config keys: %s" % ", ".join(sorted(unknown)))
    return doc


def resolve_config(args):
    """CLI flags > config file > built-in defaults."""
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        cfg.update(_load_config_file(args.config))
    overrides = {
        "seed": args.seed,
        "grid_res": args.grid_res,
        "threshold_deg": args.threshold_deg,
        "samples": args.samples,
        "lambda": getattr(args, "lambda_", None),
        "selection": args.selection,
        "rms_samples": getattr(args, "rms_samples", None),
        "views": getattr(args, "views", None),
        "raster": getattr(args, "raster", None),
        "k": getattr(args, "k", None),
    }
    for key, val in overrides.items():
        if val is not None:
            cfg[key] = val
    if getattr(args, "no_refine", False):
        cfg["refine"] = False
    if getattr(args, "no_imprint", False):
        cfg["imprint"] = False

    if cfg["grid_res"] < 8:
        raise InputDataError("grid resolution must be >= 8")
    if cfg["samples"] < 1:
        raise InputDataError("need at least 1 proposal sample")
    if not (0.0 < cfg["threshold_deg"] < 90.0):
        raise InputDataError("clustering threshold must be in (0, 90) degrees")
    if cfg["selection"] not in ("ranked", "random", "oracle"):
        raise InputDataError("selection must be ranked, random, or oracle")
    if cfg["lambda"] < 0.0:
        raise InputDataError("lambda must be nonnegative")
    if cfg["seed"] < 0:
        raise InputDataError("seed must be nonnegative")
    if cfg["rms_samples"] < 1 or cfg["views"] < 1 or cfg["raster"] < 32 or cfg["k"] < 1:
        raise InputDataError("rms-samples/views/k must be >= 1 and raster >= 32")
    if cfg["view_list"] is not None:
        if not isinstance(cfg["view_list"], list) or not cfg["view_list"]:
            raise InputDataError("view_list must be a nonempty list of view dicts")
        for entry in cfg["view_list"]:
            if not isinstance(entry, dict) or "azimuth" not in entry or "elevation" not in entry:
                raise InputDataError("each view needs 'azimuth' and 'elevation'")
    return cfg


def _prepare_out(cfg, args, command):
    out = args.out
    os.makedirs(out, exist_ok=True)
    echo = {"command": command, "config": cfg}
    for name in ("manifest", "cameras", "recon", "gt", "bundle"):
        if getattr(args, name, None):
            echo[name] = getattr(args, name)
    dump_json(echo, os.path.join(out, "config.json"))
    return out


# ---------------------------------------------------------------------------
# cameras

def cmd_cameras(args, cfg):
    collection = dataset.load_collection(args.manifest)
    out = _prepare_out(cfg, args, "cameras")
    obs = sfm.build_observation_matrix(collection)
    if obs.excluded:
        print("excluded (fewer than 3 observed keypoints): %s"
              % ", ".join(obs.excluded))
    shape, cams, info = sfm.rigid_factorization(obs, seed=cfg["seed"])
    trace = info["objective_trace"]
    print("class %s: %d instances, factorization %.6g -> %.6g in %d iterations"
          % (collection.schema.class_name, len(obs.ids), trace[0], trace[-1],
             info["iterations"]))

    refined_flags = None
    energies = None
    if cfg["refine"]:
        cams, results = refine.refine_collection(
            collection, shape, cams, obs, lam=cfg["lambda"])
        refined_flags = [True] * len(cams)
        energies = [r.energy for r in results]
        drops = [r.initial_energy - r.energy for r in results]
        print("refinement: mean energy drop %.6g over %d cameras"
              % (float(np.mean(drops)), len(cams)))

    path = os.path.join(out, "cameras.json")
    sfm.save_cameras(path, shape, cams, obs.ids, refined=refined_flags,
                     energies=energies)
    print("wrote %s" % path)
    return 0


# ---------------------------------------------------------------------------
# reconstruct

def _score_or_inf(proposal, avg_masks, dirs, canonical_res):
    try:
        return rank.score_proposal(proposal.labeling, avg_masks, dirs, canonical_res)
    except InputDataError:
        return float("inf")


def _load_gt(gt_dir):
    path = os.path.join(gt_dir, "gt.json")
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise InputDataError("cannot read ground truth: %s" % exc)
    except json.JSONDecodeError as exc:
        raise InputDataError("ground truth is not valid JSON: %s" % exc)
    meshes = {}
    for entry in doc["meshes"]:
        meshes[entry["id"]] = meshkit.load_obj(os.path.join(gt_dir, entry["file"]))
    instances = {}
    for entry in doc["instances"]:
        cam = sfm.camera_from_rotation(np.array(entry["R"], dtype=np.float64),
                                       float(entry["alpha"]),
                                       np.array(entry["T"], dtype=np.float64))
        instances[entry["id"]] = {
            "mesh_id": entry["mesh_id"],
            "camera": cam,
            "keypoints3d": np.array(entry["keypoints3d"], dtype=np.float64),
        }
    return meshes, instances


def _align_to_instance(shape, gt_entry):
    """Similarity mapping gauge world coordinates into the ground-truth
    model frame of one instance, from keypoint correspondence."""
    ref_shape = sfm.MeanShape(S=gt_entry["keypoints3d"].T)
    return sfm.align_gauge((shape, []), (ref_shape, []))


def _aligned_mesh(mesh, alignment):
    return meshkit.TriangleMesh(vertices=alignment.apply_points(mesh.vertices),
                                triangles=mesh.triangles.copy())


def cmd_reconstruct(args, cfg):
    collection = dataset.load_collection(args.manifest)
    out = _prepare_out(cfg, args, "reconstruct")
    shape, cams_by_id, cam_ids = sfm.load_cameras(args.cameras)
    known = {inst.id for inst in collection.instances}
    missing = [iid for iid in cam_ids if iid not in known]
    if missing:
        raise InputDataError("camera file has ids not in the manifest: %s"
                             % ", ".join(missing))
    if shape.S.shape[1] != len(collection.schema.sfm_subset):
        raise InputDataError("camera file shape does not match the schema subset")

    gt_meshes = gt_instances = None
    if cfg["selection"] == "oracle":
        if not args.gt:
            raise InputDataError("oracle selection requires --gt")
        gt_meshes, gt_instances = _load_gt(args.gt)

    grid = carve.default_grid(cfg["grid_res"], cfg["grid_side"])
    dirs = carve.principal_directions(shape)

    # mirrored views join the surrogate pool alongside the originals
    by_id = {inst.id: inst for inst in collection.instances}
    cam_items = []
    masks = {}
    for iid in cam_ids:
        inst = by_id[iid]
        cam = cams_by_id[iid]
        mid = dataset.mirror_id(iid)
        cam_items.append((iid, cam))
        cam_items.append((mid, sfm.mirror_camera(cam, inst.width)))
        masks[iid] = inst.mask
        masks[mid] = inst.mask[:, ::-1]
    clusters = carve.cluster_by_direction(cam_items, dirs, cfg["threshold_deg"])
    avg_masks = rank.average_masks_by_axis(clusters, masks, cfg["canonical_res"])

    lab_dir = os.path.join(out, "labelings")
    mesh_dir = os.path.join(out, "meshes")
    os.makedirs(lab_dir, exist_ok=True)
    os.makedirs(mesh_dir, exist_ok=True)

    reports = []
    summary = []
    for rid in cam_ids:
        proposals = carve.reconstruct_instance(
            rid, collection, cams_by_id, dirs, clusters,
            n_samples=cfg["samples"], grid=grid, seed=cfg["seed"],
            imprint=cfg["imprint"])
        scores = [_score_or_inf(p, avg_masks, dirs, cfg["canonical_res"])
                  for p in proposals] if avg_masks else [0.0] * len(proposals)
        order = sorted(range(len(proposals)), key=lambda i: (scores[i], i))

        if cfg["selection"] == "ranked":
            chosen = order[0]
        elif cfg["selection"] == "random":
            rng = rng_for(cfg["seed"], "selection", rid)
            chosen = int(rng.integers(len(proposals)))
        else:
            if rid not in gt_instances:
                raise InputDataError("no ground truth for instance %r" % rid)
            entry = gt_instances[rid]
            gt_mesh = gt_meshes[entry["mesh_id"]]
            alignment = _align_to_instance(shape, entry)
            best_err = None
            chosen = 0
            for i, p in enumerate(proposals):
                if not p.labeling.occupancy.any():
                    continue
                m = _aligned_mesh(meshkit.extract_surface(p.labeling), alignment)
                err = meshkit.symmetric_distance(
                    m, gt_mesh, gt_mesh.bbox_diagonal(),
                    n_samples=cfg["rms_samples"], seed=cfg["seed"])
                if best_err is None or err < best_err:
                    best_err, chosen = err, i

        safe = rid.replace(os.sep, "_")
        for i, p in enumerate(proposals):
            carve.save_labeling(os.path.join(lab_dir, "%s_p%02d.cvxl" % (safe, i)), p.labeling)
        chosen_lab = proposals[chosen].labeling
        mesh_path = ""
        if chosen_lab.occupancy.any():
            mesh_path = os.path.join(mesh_dir, "%s.obj" % safe)
            meshkit.save_obj(mesh_path, meshkit.extract_surface(chosen_lab))
        reports.append(rank.rank_report(rid, proposals, order, scores))
        summary.append({
            "reference": rid,
            "chosen": chosen,
            "score": float(scores[chosen]),
            "note": proposals[chosen].triplet.note,
            "n_proposals": len(proposals),
            "labeling": "labelings/%s_p%02d.cvxl" % (safe, chosen),
            "mesh": ("meshes/%s.obj" % safe) if mesh_path else "",
        })
        print("%s: %d proposals, chose %d (%s score %.6g)"
              % (rid, len(proposals), chosen, cfg["selection"], scores[chosen]))

    rank.save_rank_report(os.path.join(out, "ranking.json"), reports)
    dump_json({"instances": summary}, os.path.join(out, "summary.json"))
    print("wrote %s" % out)
    return 0


# ---------------------------------------------------------------------------
# evaluate

def _wrapped_abs(deg_a, deg_b):
    d = abs(float(deg_a) - float(deg_b)) % 360.0
    return min(d, 360.0 - d)


def cmd_evaluate(args, cfg):
    out = _prepare_out(cfg, args, "evaluate")
    gt_meshes, gt_instances = _load_gt(args.gt)
    shape, cams_by_id, cam_ids = sfm.load_cameras(args.cameras)
    mesh_dir = os.path.join(args.recon, "meshes")

    rows = []
    ang_rows = []
    skipped = []
    per_class = []
    for rid in cam_ids:
        if rid not in gt_instances:
            skipped.append(rid)
            continue
        entry = gt_instances[rid]
        gt_mesh = gt_meshes[entry["mesh_id"]]
        alignment = _align_to_instance(shape, entry)

        est_cam = cams_by_id[rid]
        aligned_cam = sfm.align_gauge((shape, [est_cam]),
                                      (sfm.MeanShape(S=entry["keypoints3d"].T), [])).cameras[0]
        gt_ang = sfm.camera_to_viewpoint_angles(entry["camera"])
        est_ang = sfm.camera_to_viewpoint_angles(aligned_cam)
        ang_rows.append({
            "id": rid,
            "azimuth_err": _wrapped_abs(est_ang.azimuth, gt_ang.azimuth),
            "elevation_err": _wrapped_abs(est_ang.elevation, gt_ang.elevation),
            "roll_err": _wrapped_abs(est_ang.roll, gt_ang.roll),
            "rotation_err": sfm.geodesic_angle_deg(aligned_cam.R, entry["camera"].R),
        })

        mesh_path = os.path.join(mesh_dir, "%s.obj" % rid.replace(os.sep, "_"))
        if not os.path.exists(mesh_path):
            skipped.append(rid)
            continue
        recon = _aligned_mesh(meshkit.load_obj(mesh_path), alignment)
        report = meshkit.mesh_distance_report(
            rid, recon, gt_mesh, gt_mesh.bbox_diagonal(),
            n_samples=cfg["rms_samples"], seed=cfg["seed"])
        rows.append(report)
        per_class.append(report["symmetric_pct"])

    if skipped:
        print("warning: skipped (missing ground truth or mesh): %s"
              % ", ".join(sorted(set(skipped))), file=sys.stderr)

    meshkit.save_distance_csv(os.path.join(out, "distances.csv"), rows)
    summary = {
        "n_evaluated": len(rows),
        "n_skipped": len(set(skipped)),
        "mean_symmetric_pct": float(np.mean(per_class)) if per_class else None,
        "median_azimuth_err": float(np.median([r["azimuth_err"] for r in ang_rows])) if ang_rows else None,
        "median_elevation_err": float(np.median([r["elevation_err"] for r in ang_rows])) if ang_rows else None,
        "median_roll_err": float(np.median([r["roll_err"] for r in ang_rows])) if ang_rows else None,
        "median_rotation_err": float(np.median([r["rotation_err"] for r in ang_rows])) if ang_rows else None,
        "angles": ang_rows,
    }
    dump_json(summary, os.path.join(out, "evaluation.json"))
    if per_class:
        print("mean symmetric distance: %.2f%% over %d instances"
              % (summary["mean_symmetric_pct"], len(rows)))
    if ang_rows:
        print("median angle errors: azimuth %.2f deg, elevation %.2f deg, roll %.2f deg"
              % (summary["median_azimuth_err"], summary["median_elevation_err"],
                 summary["median_roll_err"]))
    return 0


# ---------------------------------------------------------------------------
# synth

def cmd_synth(args, cfg):
    bundle = shapes.load_bundle(args.bundle)
    out = _prepare_out(cfg, args, "synth")
    gt_dir = os.path.join(out, "gt")
    os.makedirs(gt_dir, exist_ok=True)

    k = len(bundle.keypoint_names)
    schema = dataset.ClassSchema(
        class_name=bundle.class_name,
        keypoint_names=tuple(bundle.keypoint_names),
        mirror_map=tuple(bundle.mirror_map),
        sfm_subset=tuple(range(k)),
        rotational_symmetric=bundle.rotational_symmetric)
    problems = schema.validate()
    if problems:
        raise InputDataError("bundle schema: " + "; ".join(problems))

    raster = int(cfg["raster"])
    center = (raster - 1) / 2.0
    view_list = cfg["view_list"]
    n_views = len(view_list) if view_list else int(cfg["views"])
    instances = []
    gt_instances = []
    gt_meshes = []
    for mesh_id, mesh, kps in bundle.meshes:
        fname = "%s.obj" % mesh_id
        meshkit.save_obj(os.path.join(gt_dir, fname), mesh)
        gt_meshes.append({"id": mesh_id, "file": fname})
        diag = mesh.bbox_diagonal()
        for v in range(n_views):
            if view_list:
                spec = view_list[v]
                azim = float(spec["azimuth"])
                elev = float(spec["elevation"])
                roll = float(spec.get("roll", 0.0))
                alpha = 0.6 * raster / diag * float(spec.get("scale", 1.0))
                t = np.array([center, center])
            else:
                rng = rng_for(cfg["seed"], "synth", mesh_id, str(v))
                azim = float(rng.uniform(0.0, 360.0))
                elev = float(np.clip(rng.normal(10.0, 15.0), -20.0, 60.0))
                roll = 0.0
                alpha = 0.6 * raster / diag * float(rng.uniform(0.85, 1.0))
                t = np.array([center, center]) + rng.uniform(-0.05, 0.05, size=2) * raster
            rot = sfm.viewpoint_angles_to_rotation(azim, elev, roll)
            cam = sfm.camera_from_rotation(rot, alpha, t)
            iid = "%s_v%d" % (mesh_id, v)
            inst = dataset.render_synthetic_instance(
                mesh, kps, cam, (raster, raster), instance_id=iid,
                class_name=bundle.class_name)
            instances.append(inst)
            gt_instances.append({
                "id": iid,
                "mesh_id": mesh_id,
                "R": [[float(x) for x in row] for row in cam.R],
                "T": [float(x) for x in cam.T],
                "alpha": float(cam.alpha),
                "keypoints3d": [[float(x) for x in row] for row in kps],
            })

    collection = dataset.AnnotatedCollection(schema=schema, instances=instances)
    dataset.save_collection(collection, os.path.join(out, "manifest.json"))
    dump_json({"class_name": bundle.class_name, "meshes": gt_meshes,
               "instances": gt_instances}, os.path.join(gt_dir, "gt.json"))
    print("wrote %d instances (%d meshes x %d views) to %s"
          % (len(instances), len(bundle.meshes), n_views, out))
    return 0


# ---------------------------------------------------------------------------
# cluster

def cmd_cluster(args, cfg):
    bundle = shapes.load_bundle(args.bundle)
    out = _prepare_out(cfg, args, "cluster")
    names = [mesh_id for mesh_id, _, _ in bundle.meshes]
    meshes = [mesh for _, mesh, _ in bundle.meshes]
    if cfg["k"] > len(meshes):
        raise InputDataError("k=%d exceeds the %d meshes" % (cfg["k"], len(meshes)))
    matrix = meshkit.pairwise_distance_matrix(
        meshes, n_samples=cfg["rms_samples"], seed=cfg["seed"])
    result = meshkit.kmedoids(matrix, cfg["k"], seed=cfg["seed"])
    report = {
        "medoids": [names[i] for i in result.medoids],
        "sizes": result.sizes,
        "cost": result.cost,
        "assignment": {names[i]: int(result.assignment[i]) for i in range(len(names))},
    }
    dump_json(report, os.path.join(out, "clusters.json"))
    for mid, size in zip(report["medoids"], result.sizes):
        print("medoid %s: %d members" % (mid, size))
    return 0


# ---------------------------------------------------------------------------
# parser and entry point

def build_parser():
    parser = argparse.ArgumentParser(
        prog="silhlift",
        description="dense 3D shape from class-labeled silhouettes and keypoints")
    sub = parser.add_subparsers(dest="command", required=True)

    def shared(p):
        p.add_argument("--seed", type=int, default=None, help="root RNG seed")
        p.add_argument("--grid-res", type=int, default=None, help="voxels per grid axis")
        p.add_argument("--threshold-deg", type=float, default=None,
                       help="direction clustering threshold (degrees)")
        p.add_argument("--samples", type=int, default=None,
                       help="reconstruction proposals per reference")
        p.add_argument("--lambda", dest="lambda_", type=float, default=None,
                       help="silhouette penalty weight in refinement")
        p.add_argument("--selection", choices=["ranked", "random", "oracle"],
                       default=None, help="which proposal to export")
        p.add_argument("--no-refine", action="store_true",
                       help="skip silhouette-based camera refinement")
        p.add_argument("--no-imprint", action="store_true",
                       help="plain visual hulls without reference imprinting")
        p.add_argument("--rms-samples", type=int, default=None,
                       help="surface samples per directed mesh distance")
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("cameras", help="factorize and refine cameras")
    p.add_argument("manifest", help="collection manifest JSON")
    shared(p)
    p.set_defaults(func=cmd_cameras)

    p = sub.add_parser("reconstruct", help="carve, rank, and export proposals")
    p.add_argument("manifest", help="collection manifest JSON")
    p.add_argument("--cameras", required=True, help="camera JSON from `cameras`")
    p.add_argument("--gt", default=None, help="ground-truth dir (oracle selection)")
    shared(p)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("evaluate", help="score reconstructions against ground truth")
    p.add_argument("--recon", required=True, help="reconstruction output dir")
    p.add_argument("--gt", required=True, help="ground-truth dir from `synth`")
    p.add_argument("--cameras", required=True, help="camera JSON from `cameras`")
    shared(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", help="render a labeled mesh bundle to a manifest")
    p.add_argument("bundle", help="bundle.json (or its directory)")
    p.add_argument("--views", type=int, default=None, help="views per mesh")
    p.add_argument("--raster", type=int, default=None, help="square image size")
    shared(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("cluster", help="k-medoids over pairwise mesh distances")
    p.add_argument("bundle", help="bundle.json (or its directory)")
    p.add_argument("-k", type=int, default=None, help="number of clusters")
    shared(p)
    p.set_defaults(func=cmd_cluster)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        return int(args.func(args, cfg) or 0)
    except InputDataError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2
    except SilhliftError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    except OSError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
