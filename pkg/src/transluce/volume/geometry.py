"""Scene geometry: analytic spheres and watertight triangle meshes."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import NotWatertight


@dataclass(frozen=True, eq=False)
class Sphere:
    center: tuple = (0.0, 0.0, 0.0)
    radius: float = 0.25
    watertight: bool = field(default=True, init=False)

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "radius", float(self.radius))
        if self.radius <= 0:
            raise ValueError("sphere radius must be positive")

    def transformed(self, rotation=None, scale=1.0, translation=(0.0, 0.0, 0.0)) -> "Sphere":
        c = np.asarray(self.center) * scale
        if rotation is not None:
            c = np.asarray(rotation) @ c
        return Sphere(tuple(c + np.asarray(translation)), self.radius * scale)


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray
    indices: np.ndarray
    normals: np.ndarray
    watertight: bool = field(default=False, init=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.ascontiguousarray(self.indices, dtype=np.int64).reshape(-1, 3)
        n = np.ascontiguousarray(self.normals, dtype=np.float64).reshape(-1, 3)
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError("triangle indices out of range")
        if len(n) != len(v):
            raise ValueError("need one normal per vertex")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "indices", f)
        object.__setattr__(self, "normals", n)
        object.__setattr__(self, "watertight", is_watertight(f))

    @classmethod
    def from_faces(cls, vertices, indices, normals=None) -> "TriangleMesh":
        v = np.asarray(vertices, dtype=np.float64)
        f = np.asarray(indices, dtype=np.int64)
        if signed_volume(v, f) < 0:
            f = f[:, ::-1].copy()
        if normals is None:
            normals = vertex_normals(v, f)
        return cls(v, f, normals)

    def transformed(self, rotation=None, scale=1.0, translation=(0.0, 0.0, 0.0)) -> "TriangleMesh":
        r = np.eye(3) if rotation is None else np.asarray(rotation, dtype=np.float64)
        v = (self.vertices * scale) @ r.T + np.asarray(translation)
        n = self.normals @ r.T
        return TriangleMesh(v, self.indices, n)

    def normalized_to_cube(self, size=0.5) -> "TriangleMesh":
        lo, hi = self.vertices.min(0), self.vertices.max(0)
        s = size / float(np.max(hi - lo))
        return TriangleMesh((self.vertices - (lo + hi) / 2) * s, self.indices, self.normals)


def is_watertight(indices: np.ndarray) -> bool:
    """Closed and consistently oriented: every directed edge appears once and
    its reverse appears once."""
    if len(indices) == 0:
        return False
    f = np.asarray(indices)
    e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    fwd = {tuple(x) for x in e.tolist()}
    if len(fwd) != len(e):
        return False
    return all((b, a) in fwd for a, b in fwd)


def signed_volume(v, f) -> float:
    a, b, c = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
    return float(np.sum(np.einsum("ij,ij->i", a, np.cross(b, c))) / 6.0)


def vertex_normals(v, f) -> np.ndarray:
    fn = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    n = np.zeros_like(v)
    for k in range(3):
        np.add.at(n, f[:, k], fn)
    ln = np.linalg.norm(n, axis=1, keepdims=True)
    return n / np.where(ln == 0, 1, ln)


def require_watertight(geom):
    if not geom.watertight:
        raise NotWatertight("volumetric tracing needs a closed, consistently oriented mesh")


# --- procedural shapes ---------------------------------------------------------

def icosphere(subdivisions=3):
    t = (1 + 5 ** 0.5) / 2
    v = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
         (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    f = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
         (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
         (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(p, dtype=np.float64) / np.linalg.norm(p) for p in v]
    for _ in range(subdivisions):
        cache = {}

        def mid(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        nf = []
        for a, b, c in f:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            nf += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        f = nf
    return np.array(verts), np.array(f, dtype=np.int64)


def superquadric(exponent=2.0, axes=(1.0, 1.0, 1.0), subdivisions=3) -> TriangleMesh:
    """Superellipsoid |x/a|^p + |y/b|^p + |z/c|^p = 1 tessellated from an
    icosphere, so the result is watertight by construction."""
    d, f = icosphere(subdivisions)
    a = np.asarray(axes, dtype=np.float64)
    p = float(exponent)
    r = np.sum(np.abs(d / a) ** p, axis=1) ** (-1.0 / p)
    v = d * r[:, None]
    grad = p * np.abs(v / a) ** (p - 1) * np.sign(v) / a
    n = grad / np.linalg.norm(grad, axis=1, keepdims=True)
    return TriangleMesh.from_faces(v, f, n)


# --- readers ---------------------------------------------------------------------

def load_obj(path) -> TriangleMesh:
    """Positions, optional normals and (fan-triangulated) faces."""
    pos, nrm, faces, fnorm = [], [], [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            pos.append([float(x) for x in parts[1:4]])
        elif parts[0] == "vn":
            nrm.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            idx = []
            nid = []
            for tok in parts[1:]:
                fields = tok.split("/")
                i = int(fields[0])
                idx.append(i - 1 if i > 0 else len(pos) + i)
                if len(fields) == 3 and fields[2]:
                    j = int(fields[2])
                    nid.append(j - 1 if j > 0 else len(nrm) + j)
            for k in range(1, len(idx) - 1):
                faces.append((idx[0], idx[k], idx[k + 1]))
                if len(nid) == len(idx):
                    fnorm.append((nid[0], nid[k], nid[k + 1]))
    v = np.array(pos, dtype=np.float64)
    f = np.array(faces, dtype=np.int64)
    normals = None
    if nrm and len(fnorm) == len(faces):
        acc = np.zeros_like(v)
        nv = np.array(nrm, dtype=np.float64)
        for tri, tn in zip(faces, fnorm):
            for a, b in zip(tri, tn):
                acc[a] += nv[b]
        ln = np.linalg.norm(acc, axis=1, keepdims=True)
        normals = acc / np.where(ln == 0, 1, ln)
    return TriangleMesh.from_faces(v, f, normals)


def load_stl(path) -> TriangleMesh:
    """Binary STL; coincident corners are welded so closure can be checked."""
    data = Path(path).read_bytes()
    (count,) = struct.unpack_from("<I", data, 80)
    rec = np.frombuffer(data, dtype=np.dtype([("n", "<f4", 3), ("v", "<f4", (3, 3)),
                                              ("attr", "<u2")]), count=count, offset=84)
    corners = rec["v"].reshape(-1, 3).astype(np.float64)
    uniq, inv = np.unique(corners, axis=0, return_inverse=True)
    return TriangleMesh.from_faces(uniq, inv.reshape(-1, 3))


def write_stl(path, mesh: TriangleMesh):
    f = mesh.indices
    v = mesh.vertices
    fn = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    fn /= np.linalg.norm(fn, axis=1, keepdims=True)
    with open(path, "wb") as fh:
        fh.write(b"\0" * 80)
        fh.write(struct.pack("<I", len(f)))
        for k in range(len(f)):
            fh.write(struct.pack("<3f", *fn[k]))
            for i in f[k]:
                fh.write(struct.pack("<3f", *v[i]))
            fh.write(b"\0\0")


def load_mesh(path) -> TriangleMesh:
    suffix = Path(path).suffix.lower()
    if suffix == ".obj":
        return load_obj(path)
    if suffix == ".stl":
        return load_stl(path)
    raise ValueError(f"unsupported mesh format {suffix!r}")


# --- BVH -------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Bvh:
    bmin: np.ndarray   # (nodes, 3)
    bmax: np.ndarray   # (nodes, 3)
    meta: np.ndarray   # (nodes, 4): left, right, first triangle, count
    tris: np.ndarray   # triangles reordered to leaf ranges


def build_bvh(mesh: TriangleMesh, leaf_size=4) -> Bvh:
    v, f = mesh.vertices, mesh.indices
    tri_v = v[f]
    lo_t, hi_t = tri_v.min(1), tri_v.max(1)
    cent = tri_v.mean(1)
    order = np.arange(len(f))
    bmin, bmax, meta = [], [], []

    def node(start, end):
        idx = order[start:end]
        k = len(bmin)
        bmin.append(lo_t[idx].min(0))
        bmax.append(hi_t[idx].max(0))
        meta.append([-1, -1, start, end - start])
        if end - start <= leaf_size:
            return k
        c = cent[idx]
        axis = int(np.argmax(c.max(0) - c.min(0)))
        sorted_idx = idx[np.argsort(c[:, axis], kind="stable")]
        order[start:end] = sorted_idx
        mid = (start + end) // 2
        left = node(start, mid)
        right = node(mid, end)
        meta[k] = [left, right, start, 0]
        return k

    node(0, len(f))
    return Bvh(np.array(bmin), np.array(bmax), np.array(meta, dtype=np.int64),
               np.ascontiguousarray(f[order]))
