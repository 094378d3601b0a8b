"""Annotated silhouette collections.

An instance is a binary figure-ground mask plus sparse 2D keypoint
annotations; a collection groups instances of one object class under a
schema (keypoint names, left-right mirror pairing, the keypoint subset
used for rigid factorization, rotational symmetry flag). Collections
load from a single JSON manifest; masks come from image files or inline
run-length encoding. Also provides left-right mirroring and a synthetic
renderer used by the test oracles and ``silhlift synth``.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import InputDataError, SilhliftError

MIRROR_SUFFIX = "~m"


@dataclass(frozen=True)
class KeypointObservation:
    index: int
    x: float
    y: float
    visible: bool


@dataclass(frozen=True)
class ClassSchema:
    class_name: str
    keypoint_names: tuple
    mirror_map: tuple
    sfm_subset: tuple
    rotational_symmetric: bool = False

    @property
    def n_keypoints(self):
        return len(self.keypoint_names)

    def validate(self):
        k = self.n_keypoints
        problems = []
        if sorted(self.mirror_map) != list(range(k)):
            problems.append("mirror_map is not a permutation of [0,%d)" % k)
        else:
            for i, j in enumerate(self.mirror_map):
                if self.mirror_map[j] != i:
                    problems.append("mirror_map is not an involution at index %d" % i)
                    break
        if len(self.sfm_subset) == 0:
            problems.append("sfm_subset is empty")
        if any(i < 0 or i >= k for i in self.sfm_subset):
            problems.append("sfm_subset index out of range")
        if len(set(self.sfm_subset)) != len(self.sfm_subset):
            problems.append("sfm_subset has duplicates")
        return problems


@dataclass(eq=False)
class Instance:
    id: str
    class_name: str
    mask: np.ndarray  # (H, W) bool
    keypoints: tuple  # K KeypointObservation, ordered by index
    mirrored: bool = False
    occluded: bool = False

    @property
    def width(self):
        return self.mask.shape[1]

    @property
    def height(self):
        return self.mask.shape[0]

    def keypoint_arrays(self, subset=None):
        """(xy (K', 2) float64, visible (K',) bool) for the given keypoint
        index subset (default: all, in index order)."""
        if subset is None:
            subset = range(len(self.keypoints))
        xy = np.array([[self.keypoints[i].x, self.keypoints[i].y] for i in subset],
                      dtype=np.float64)
        vis = np.array([self.keypoints[i].visible for i in subset], dtype=bool)
        return xy, vis


@dataclass
class AnnotatedCollection:
    schema: ClassSchema
    instances: list = field(default_factory=list)

    def __len__(self):
        return len(self.instances)

    def by_id(self, instance_id):
        for inst in self.instances:
            if inst.id == instance_id:
                return inst
        raise KeyError(instance_id)

    @property
    def ids(self):
        return [inst.id for inst in self.instances]


def rle_encode(mask):
    """Row-major run lengths alternating background/foreground, starting
    with background (first run may be 0)."""
    flat = np.asarray(mask, dtype=bool).ravel()
    if flat.size == 0:
        return []
    changes = np.nonzero(flat[1:] != flat[:-1])[0] + 1
    bounds = np.concatenate([[0], changes, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs = [0] + runs
    return [int(r) for r in runs]


def rle_decode(runs, width, height):
    total = sum(runs)
    if total != width * height:
        raise InputDataError("rle runs sum to %d, raster is %dx%d" % (total, width, height))
    flat = np.zeros(width * height, dtype=bool)
    pos = 0
    fg = False
    for run in runs:
        if run < 0:
            raise InputDataError("negative rle run")
        if fg:
            flat[pos:pos + run] = True
        pos += run
        fg = not fg
    return flat.reshape(height, width)


def _load_mask(entry, base_dir, instance_id):
    if isinstance(entry, str):
        path = os.path.join(base_dir, entry)
        try:
            from PIL import Image
            img = np.asarray(Image.open(path))
        except (OSError, ValueError) as exc:
            raise InputDataError("instance %r: mask file %r unreadable (%s)"
                                 % (instance_id, entry, exc))
        if img.ndim == 3:
            img = img[..., 0]
        return img != 0
    if isinstance(entry, dict) and "rle" in entry:
        try:
            return rle_decode(entry["rle"], int(entry["width"]), int(entry["height"]))
        except KeyError as exc:
            raise InputDataError("instance %r: rle mask missing %s" % (instance_id, exc))
    raise InputDataError("instance %r: mask must be a path or an rle object" % instance_id)


def _canonical_keypoints(entries, k, instance_id):
    obs = {}
    for e in entries:
        try:
            i = int(e["i"])
        except (KeyError, TypeError, ValueError):
            raise InputDataError("instance %r: keypoint entry without index" % instance_id)
        if i < 0 or i >= k:
            raise InputDataError("instance %r: keypoint index %d out of range [0,%d)"
                                 % (instance_id, i, k))
        if i in obs:
            raise InputDataError("instance %r: duplicate keypoint index %d" % (instance_id, i))
        visible = bool(e.get("visible", True))
        if visible:
            try:
                x = float(e["x"])
                y = float(e["y"])
            except (KeyError, TypeError, ValueError):
                raise InputDataError("instance %r: visible keypoint %d lacks coordinates"
                                     % (instance_id, i))
        else:
            x = 0.0
            y = 0.0
        obs[i] = KeypointObservation(i, x, y, visible)
    return tuple(obs.get(i, KeypointObservation(i, 0.0, 0.0, False)) for i in range(k))


def load_collection(manifest_path):
    """Read a manifest, validate it, decode masks, and drop instances
    flagged occluded."""
    try:
        with open(manifest_path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise InputDataError("cannot read manifest: %s" % exc)
    except json.JSONDecodeError as exc:
        raise InputDataError("manifest is not valid JSON: %s" % exc)

    for key in ("class", "keypoints", "mirror_map", "instances"):
        if key not in doc:
            raise InputDataError("manifest missing %r" % key)
    names = tuple(str(n) for n in doc["keypoints"])
    k = len(names)
    schema = ClassSchema(
        class_name=str(doc["class"]),
        keypoint_names=names,
        mirror_map=tuple(int(i) for i in doc["mirror_map"]),
        sfm_subset=tuple(int(i) for i in doc.get("sfm_subset", range(k))),
        rotational_symmetric=bool(doc.get("rotational_symmetric", False)),
    )
    problems = schema.validate()
    if problems:
        raise InputDataError("schema: " + "; ".join(problems))

    base_dir = os.path.dirname(os.path.abspath(manifest_path))
    instances = []
    seen = set()
    for entry in doc["instances"]:
        iid = str(entry.get("id", ""))
        if not iid:
            raise InputDataError("instance without id")
        if iid in seen:
            raise InputDataError("duplicate instance id %r" % iid)
        seen.add(iid)
        if bool(entry.get("occluded", False)):
            continue
        mask = _load_mask(entry.get("mask"), base_dir, iid)
        kps = _canonical_keypoints(entry.get("keypoints", []), k, iid)
        instances.append(Instance(
            id=iid, class_name=schema.class_name, mask=mask, keypoints=kps,
            mirrored=bool(entry.get("mirrored", False)),
            occluded=False,
        ))
    return AnnotatedCollection(schema=schema, instances=instances)


def save_collection(collection, manifest_path):
    """Write a manifest with inline RLE masks. load_collection of the
    result reproduces the collection exactly."""
    doc = {
        "class": collection.schema.class_name,
        "keypoints": list(collection.schema.keypoint_names),
        "mirror_map": list(collection.schema.mirror_map),
        "sfm_subset": list(collection.schema.sfm_subset),
        "rotational_symmetric": collection.schema.rotational_symmetric,
        "instances": [],
    }
    for inst in collection.instances:
        kps = []
        for kp in inst.keypoints:
            if kp.visible:
                kps.append({"i": kp.index, "x": kp.x, "y": kp.y, "visible": True})
            else:
                kps.append({"i": kp.index, "visible": False})
        doc["instances"].append({
            "id": inst.id,
            "mask": {"rle": rle_encode(inst.mask),
                     "width": inst.width, "height": inst.height},
            "occluded": inst.occluded,
            "mirrored": inst.mirrored,
            "keypoints": kps,
        })
    from .util import dump_json
    dump_json(doc, manifest_path)


def validate_collection(collection):
    """Diagnostic pass; returns a list of violation strings (empty iff
    the collection is valid)."""
    report = ["schema: " + p for p in collection.schema.validate()]
    k = collection.schema.n_keypoints
    for inst in collection.instances:
        if inst.class_name != collection.schema.class_name:
            report.append("%s: class %r differs from schema %r"
                          % (inst.id, inst.class_name, collection.schema.class_name))
        if inst.mask.ndim != 2 or inst.mask.dtype != np.bool_:
            report.append("%s: mask is not a 2D boolean raster" % inst.id)
        elif not inst.mask.any():
            report.append("%s: empty mask" % inst.id)
        if len(inst.keypoints) != k:
            report.append("%s: %d keypoints, schema has %d"
                          % (inst.id, len(inst.keypoints), k))
        for slot, kp in enumerate(inst.keypoints):
            if kp.index != slot:
                report.append("%s: keypoint slot %d holds index %d" % (inst.id, slot, kp.index))
                break
            if kp.index < 0 or kp.index >= k:
                report.append("%s: keypoint index %d out of range" % (inst.id, kp.index))
                break
            if kp.visible and not (np.isfinite(kp.x) and np.isfinite(kp.y)):
                report.append("%s: keypoint %d has non-finite coordinates" % (inst.id, kp.index))
    return report


def mirror_id(instance_id):
    if instance_id.endswith(MIRROR_SUFFIX):
        return instance_id[:-len(MIRROR_SUFFIX)]
    return instance_id + MIRROR_SUFFIX


def mirror_instance(inst, schema):
    """Left-right flip: mask columns reversed, visible keypoints moved to
    x' = width-1-x and re-indexed through the schema's mirror pairing.
    An involution, ids included ("~m" suffix toggles)."""
    width = inst.width
    flipped = {}
    for kp in inst.keypoints:
        j = schema.mirror_map[kp.index]
        if kp.visible:
            flipped[j] = KeypointObservation(j, float(width - 1) - kp.x, kp.y, True)
        else:
            flipped[j] = KeypointObservation(j, 0.0, 0.0, False)
    kps = tuple(flipped[i] for i in range(schema.n_keypoints))
    return Instance(
        id=mirror_id(inst.id),
        class_name=inst.class_name,
        mask=inst.mask[:, ::-1].copy(),
        keypoints=kps,
        mirrored=not inst.mirrored,
        occluded=inst.occluded,
    )


def augment_with_mirrors(collection):
    """Collection with each instance followed by its mirrored copy."""
    out = []
    for inst in collection.instances:
        out.append(inst)
        out.append(mirror_instance(inst, collection.schema))
    return AnnotatedCollection(schema=collection.schema, instances=out)


def render_synthetic_instance(mesh, keypoints3d, camera, raster,
                              instance_id="synthetic", class_name="synthetic"):
    """Orthographic render of a closed mesh into an Instance.

    The mask covers every pixel whose center falls inside a projected
    triangle. Keypoint pixels are the exact camera projections; a
    keypoint is visible unless the mesh intersects its view ray nearer
    to the camera by more than 1e-4 of the mesh bounding-box diagonal.
    """
    width, height = raster
    keypoints3d = np.asarray(keypoints3d, dtype=np.float64)
    verts = np.asarray(mesh.vertices, dtype=np.float64)
    tris = np.asarray(mesh.triangles, dtype=np.int64)

    uv_verts = verts @ camera.M.T + camera.T
    mask = kernels.rasterize_triangles(uv_verts[tris], width, height)
    if not mask.any():
        raise SilhliftError("object out of frame: instance %r" % instance_id)

    uv = keypoints3d @ camera.M.T + camera.T
    diag = float(np.linalg.norm(verts.max(axis=0) - verts.min(axis=0)))
    eps_vis = 1e-4 * diag
    toward_camera = -camera.R[2]
    first_hit = kernels.ray_mesh_first_hit(keypoints3d, toward_camera, verts, tris, eps_vis)
    visible = ~np.isfinite(first_hit)

    kps = []
    for i in range(keypoints3d.shape[0]):
        if visible[i]:
            kps.append(KeypointObservation(i, float(uv[i, 0]), float(uv[i, 1]), True))
        else:
            kps.append(KeypointObservation(i, 0.0, 0.0, False))
    return Instance(id=instance_id, class_name=class_name, mask=mask,
                    keypoints=tuple(kps))
