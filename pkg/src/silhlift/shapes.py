"""Synthetic closed meshes with labeled 3D keypoints.

These drive the self-contained demo and test pipelines: box and
ellipsoid class suites (same family, mildly jittered proportions, so a
rigid class mean is a good fit), and a winged-box construction whose
thin protrusions vanish from most silhouettes. Every generator is
deterministic given its seed.
"""

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import InputDataError
from .meshkit import TriangleMesh, load_obj, save_obj
from .util import dump_json, rng_for

# cube corner b = bx + 2*by + 4*bz, coordinate sign = 2*bit - 1
_CUBE_TRIS = np.array([
    (0, 6, 2), (0, 4, 6),      # -x
    (1, 3, 7), (1, 7, 5),      # +x
    (0, 5, 4), (0, 1, 5),      # -y
    (2, 6, 7), (2, 7, 3),      # +y
    (0, 3, 1), (0, 2, 3),      # -z
    (4, 5, 7), (4, 7, 6),      # +z
], dtype=np.int64)


def box_corners(half_sizes, center=(0.0, 0.0, 0.0)):
    """(8, 3) corners in bit order (x bit fastest)."""
    half = np.asarray(half_sizes, dtype=np.float64)
    center = np.asarray(center, dtype=np.float64)
    corners = np.empty((8, 3))
    for b in range(8):
        sign = np.array([(b >> a) & 1 for a in range(3)], dtype=np.float64) * 2.0 - 1.0
        corners[b] = center + sign * half
    return corners


def box_mesh(half_sizes, center=(0.0, 0.0, 0.0)):
    return TriangleMesh(vertices=box_corners(half_sizes, center),
                        triangles=_CUBE_TRIS.copy())


def _icosahedron():
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array([
        (-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
        (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
        (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1),
    ], dtype=np.float64)
    v /= np.linalg.norm(v[0])
    f = np.array([
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ], dtype=np.int64)
    return v, f


def _subdivide(vertices, faces):
    cache = {}
    verts = [tuple(p) for p in vertices]

    def midpoint(i, j):
        key = (min(i, j), max(i, j))
        if key not in cache:
            p = (np.asarray(verts[i]) + np.asarray(verts[j])) / 2.0
            p = p / np.linalg.norm(p)
            cache[key] = len(verts)
            verts.append(tuple(p))
        return cache[key]

    out = []
    for (a, b, c) in faces:
        ab = midpoint(a, b)
        bc = midpoint(b, c)
        ca = midpoint(c, a)
        out.extend([(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)])
    return np.array(verts, dtype=np.float64), np.array(out, dtype=np.int64)


def ellipsoid_mesh(radii, center=(0.0, 0.0, 0.0), subdiv=2):
    v, f = _icosahedron()
    for _ in range(int(subdiv)):
        v, f = _subdivide(v, f)
    v = v * np.asarray(radii, dtype=np.float64) + np.asarray(center, dtype=np.float64)
    return TriangleMesh(vertices=v, triangles=f)


def concatenate_meshes(meshes):
    verts = []
    tris = []
    offset = 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + offset)
        offset += m.n_vertices
    return TriangleMesh(vertices=np.concatenate(verts, axis=0),
                        triangles=np.concatenate(tris, axis=0))


def winged_box_mesh(body_half=(0.4, 0.4, 0.4), wing_span=(0.4, 0.9),
                    wing_half_y=0.15, wing_half_z=0.025):
    """A cube with two thin lateral fins: the fins show up along the
    body axis views but vanish into the body's silhouette from the
    front/top, which is exactly the situation silhouette imprinting is
    for."""
    x0, x1 = wing_span
    cx = 0.5 * (x0 + x1)
    hx = 0.5 * (x1 - x0)
    body = box_mesh(body_half)
    wing_p = box_mesh((hx, wing_half_y, wing_half_z), center=(cx, 0.0, 0.0))
    wing_m = box_mesh((hx, wing_half_y, wing_half_z), center=(-cx, 0.0, 0.0))
    return concatenate_meshes([body, wing_p, wing_m])


# ---------------------------------------------------------------------------
# keypoint layouts (x-mirror symmetric, so left-right pairing is exact)

_SIGN_CHAR = {1.0: "p", -1.0: "m"}


def box_keypoint_layout():
    names = []
    mirror = []
    for b in range(8):
        sx, sy, sz = [(b >> a) & 1 for a in range(3)]
        names.append("corner_%s%s%s" % (_SIGN_CHAR[2.0 * sx - 1.0],
                                        _SIGN_CHAR[2.0 * sy - 1.0],
                                        _SIGN_CHAR[2.0 * sz - 1.0]))
        mirror.append(b ^ 1)
    return names, mirror


def box_keypoints(half_sizes, center=(0.0, 0.0, 0.0)):
    return box_corners(half_sizes, center)


def ellipsoid_keypoint_layout():
    names = ["pole_xp", "pole_xm", "pole_yp", "pole_ym", "pole_zp", "pole_zm"]
    mirror = [1, 0, 2, 3, 4, 5]
    for b in range(8):
        sx, sy, sz = [(b >> a) & 1 for a in range(3)]
        names.append("oct_%s%s%s" % (_SIGN_CHAR[2.0 * sx - 1.0],
                                     _SIGN_CHAR[2.0 * sy - 1.0],
                                     _SIGN_CHAR[2.0 * sz - 1.0]))
        mirror.append(6 + (b ^ 1))
    return names, mirror


def ellipsoid_keypoints(radii, center=(0.0, 0.0, 0.0)):
    r = np.asarray(radii, dtype=np.float64)
    c = np.asarray(center, dtype=np.float64)
    poles = np.array([
        (r[0], 0, 0), (-r[0], 0, 0),
        (0, r[1], 0), (0, -r[1], 0),
        (0, 0, r[2]), (0, 0, -r[2]),
    ], dtype=np.float64)
    octs = box_corners(r / np.sqrt(3.0))      # on the ellipsoid surface
    return np.vstack([poles + c, octs + c])


# ---------------------------------------------------------------------------
# class bundles: a set of same-family meshes with labeled keypoints

@dataclass
class ShapeBundle:
    class_name: str
    keypoint_names: list
    mirror_map: list
    rotational_symmetric: bool
    meshes: list                   # (mesh_id, TriangleMesh, (K, 3) keypoints)


def make_class_bundle(kind, n_meshes, seed=0, class_name=None,
                      base_half=(0.85, 0.6, 0.42), jitter=0.12):
    """n same-family shapes with per-axis proportions jittered by up to
    +-jitter. Distinct base extents keep the principal directions
    unambiguous across the class."""
    if kind not in ("box", "ellipsoid"):
        raise InputDataError("unknown shape kind %r" % kind)
    class_name = class_name or kind
    rng = rng_for(seed, "shapes", kind, class_name)
    if kind == "box":
        names, mirror = box_keypoint_layout()
    else:
        names, mirror = ellipsoid_keypoint_layout()
    meshes = []
    for i in range(int(n_meshes)):
        half = np.asarray(base_half) * (1.0 + jitter * (2.0 * rng.random(3) - 1.0))
        if kind == "box":
            mesh = box_mesh(half)
            kps = box_keypoints(half)
        else:
            mesh = ellipsoid_mesh(half)
            kps = ellipsoid_keypoints(half)
        meshes.append(("%s%02d" % (class_name, i), mesh, kps))
    return ShapeBundle(class_name=class_name, keypoint_names=names,
                       mirror_map=mirror, rotational_symmetric=False,
                       meshes=meshes)


def make_winged_bundle(n_plain=4, seed=0, class_name="winged"):
    """One winged box plus plain boxes of the same body. Surrogates
    carve the wings away; the reference silhouette has to imprint them
    back."""
    names, mirror = box_keypoint_layout()
    rng = rng_for(seed, "shapes", "winged", class_name)
    body = (0.4, 0.4, 0.4)
    meshes = [("winged00", winged_box_mesh(body_half=body), box_keypoints(body))]
    for i in range(int(n_plain)):
        half = np.asarray(body) * (1.0 + 0.05 * (2.0 * rng.random(3) - 1.0))
        meshes.append(("plain%02d" % i, box_mesh(half), box_keypoints(half)))
    return ShapeBundle(class_name=class_name, keypoint_names=names,
                       mirror_map=mirror, rotational_symmetric=False,
                       meshes=meshes)


def save_bundle(out_dir, bundle):
    """OBJ file per mesh plus a bundle.json with the keypoint labels."""
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for mesh_id, mesh, kps in bundle.meshes:
        fname = mesh_id + ".obj"
        save_obj(os.path.join(out_dir, fname), mesh)
        entries.append({"id": mesh_id, "file": fname,
                        "keypoints": [[float(x) for x in row] for row in kps]})
    doc = {
        "class_name": bundle.class_name,
        "keypoint_names": list(bundle.keypoint_names),
        "mirror_map": [int(i) for i in bundle.mirror_map],
        "rotational_symmetric": bool(bundle.rotational_symmetric),
        "meshes": entries,
    }
    path = os.path.join(out_dir, "bundle.json")
    dump_json(doc, path)
    return path


def load_bundle(path):
    """Read a bundle.json (or the directory holding one)."""
    if os.path.isdir(path):
        path = os.path.join(path, "bundle.json")
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise InputDataError("cannot read bundle: %s" % exc)
    except json.JSONDecodeError as exc:
        raise InputDataError("bundle is not valid JSON: %s" % exc)
    for key in ("class_name", "keypoint_names", "mirror_map", "meshes"):
        if key not in doc:
            raise InputDataError("bundle missing %r" % key)
    base = os.path.dirname(os.path.abspath(path))
    k = len(doc["keypoint_names"])
    meshes = []
    for entry in doc["meshes"]:
        kps = np.asarray(entry["keypoints"], dtype=np.float64)
        if kps.shape != (k, 3):
            raise InputDataError(
                "mesh %r: expected %d 3D keypoints, got shape %s"
                % (entry.get("id", "?"), k, kps.shape))
        mesh = load_obj(os.path.join(base, entry["file"]))
        meshes.append((entry["id"], mesh, kps))
    return ShapeBundle(class_name=doc["class_name"],
                       keypoint_names=list(doc["keypoint_names"]),
                       mirror_map=[int(i) for i in doc["mirror_map"]],
                       rotational_symmetric=bool(doc.get("rotational_symmetric", False)),
                       meshes=meshes)
