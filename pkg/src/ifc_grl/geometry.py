"""
Per-object meshes: OBJ loading, surface point sampling and duplicate removal.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Hashable, Iterable, List, Sequence, Tuple, Union

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_POINTS = 1024
SIGNATURE_TOLERANCE = 1e-3
SIGNATURE_BINS = 32
SIGNATURE_PAIR_SAMPLES = 128
_PCA_SAMPLES = 2048
_SIGNATURE_SEED = 0x5EED


class GeometryError(Exception):
    pass


class IndexOutOfRange(GeometryError):
    pass


class EmptyMesh(GeometryError):
    pass


class ZeroAreaMesh(GeometryError):
    pass


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray  # (V, 3) float64
    faces: np.ndarray     # (F, 3) int64, 0-based

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise IndexOutOfRange("face index outside vertex list")
        if f.size and np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
            raise GeometryError("degenerate face with repeated vertex index")
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    def transformed(self, rotation=None, translation=None, scale: float = 1.0) -> "TriangleMesh":
        v = self.vertices * scale
        if rotation is not None:
            v = v @ np.asarray(rotation, dtype=np.float64).T
        if translation is not None:
            v = v + np.asarray(translation, dtype=np.float64)
        return TriangleMesh(v, self.faces)

    def triangle_areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.faces[:, i]] for i in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray  # (N, 3)

    def __len__(self) -> int:
        return len(self.points)


def load_obj(text: str) -> TriangleMesh:
    """Parse ``v`` and ``f`` records; polygons are fan-triangulated.

    Face indices may be negative (relative to the end of the vertex list so
    far) and may carry ``/vt/vn`` suffixes, which are ignored. Faces with a
    repeated vertex are dropped.
    """
    vertices: List[Tuple[float, float, float]] = []
    faces: List[Tuple[int, int, int]] = []
    dropped = 0
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        tag = parts[0]
        if tag == "v":
            if len(parts) < 4:
                raise GeometryError(f"line {lineno}: vertex needs 3 coordinates")
            vertices.append((float(parts[1]), float(parts[2]), float(parts[3])))
        elif tag == "f":
            idx = []
            for item in parts[1:]:
                k = int(item.split("/")[0])
                k = k - 1 if k > 0 else len(vertices) + k
                if k < 0 or k >= len(vertices):
                    raise IndexOutOfRange(f"line {lineno}: vertex index {item} out of range")
                idx.append(k)
            if len(idx) < 3:
                raise GeometryError(f"line {lineno}: face needs at least 3 vertices")
            for j in range(1, len(idx) - 1):
                tri = (idx[0], idx[j], idx[j + 1])
                if len(set(tri)) < 3:
                    dropped += 1
                    continue
                faces.append(tri)
    if dropped:
        logger.debug("dropped %d degenerate faces", dropped)
    if not vertices or not faces:
        raise EmptyMesh("OBJ has no vertices or no faces")
    return TriangleMesh(np.array(vertices), np.array(faces))


def load_obj_file(path: Union[str, Path]) -> TriangleMesh:
    return load_obj(Path(path).read_text(encoding="utf-8", errors="replace"))


def sample_surface(mesh: TriangleMesh, n: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Area-weighted uniform surface samples; returns (points, face index per point)."""
    areas = mesh.triangle_areas()
    total = areas.sum()
    if not total > 0:
        raise ZeroAreaMesh("mesh has zero surface area")
    face_idx = rng.choice(len(areas), size=n, p=areas / total)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    tri = mesh.vertices[mesh.faces[face_idx]]  # (n, 3, 3)
    points = ((1.0 - r1)[:, None] * tri[:, 0]
              + (r1 * (1.0 - r2))[:, None] * tri[:, 1]
              + (r1 * r2)[:, None] * tri[:, 2])
    return points, face_idx


def normalize_points(points: np.ndarray) -> np.ndarray:
    """Center on the centroid and scale into the unit sphere (max norm 1)."""
    centered = points - points.mean(axis=0)
    radius = np.linalg.norm(centered, axis=1).max()
    if radius > 0:
        centered = centered / radius
    return centered


def sample_point_cloud(mesh: TriangleMesh, n: int = DEFAULT_POINTS, seed=0) -> PointCloud:
    rng = np.random.default_rng(seed)
    points, _ = sample_surface(mesh, n, rng)
    return PointCloud(normalize_points(points))


def _principal_axes(samples: np.ndarray) -> np.ndarray:
    """Rows are principal axes (largest variance first), signs fixed by skewness."""
    centered = samples - samples.mean(axis=0)
    cov = centered.T @ centered / len(centered)
    _, vecs = np.linalg.eigh(cov)
    axes = vecs[:, ::-1].T.copy()
    skew = ((centered @ axes.T) ** 3).sum(axis=0)
    axes[skew < 0] *= -1
    return axes


def shape_signature(mesh: TriangleMesh, bins: int = SIGNATURE_BINS) -> np.ndarray:
    """Rigid-motion invariant descriptor of a mesh.

    First three entries: extents of the mesh vertices along the principal
    axes of area-weighted surface samples, sorted descending. Remaining
    ``bins`` entries: histogram of pairwise distances between 128 surface
    samples over [0, d_max], normalized to sum to d_max so that both parts
    carry model units. Uniform scaling therefore changes the signature.
    """
    rng = np.random.default_rng(_SIGNATURE_SEED)
    samples, _ = sample_surface(mesh, _PCA_SAMPLES, rng)
    axes = _principal_axes(samples)
    used = mesh.vertices[np.unique(mesh.faces)]
    proj = (used - samples.mean(axis=0)) @ axes.T
    extents = np.sort(proj.max(axis=0) - proj.min(axis=0))[::-1]

    pts = samples[:SIGNATURE_PAIR_SAMPLES]
    diff = pts[:, None, :] - pts[None, :, :]
    iu = np.triu_indices(len(pts), k=1)
    dists = np.sqrt((diff ** 2).sum(axis=-1))[iu]
    dmax = dists.max()
    if dmax > 0:
        hist, _ = np.histogram(dists, bins=bins, range=(0.0, dmax))
        hist = hist / hist.sum() * dmax
    else:
        hist = np.zeros(bins)
    return np.concatenate([extents, hist])


def signature_distance(a: np.ndarray, b: np.ndarray) -> float:
    """L2 distance relative to the larger signature norm (unit-free)."""
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale == 0:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


def deduplicate(objects: Iterable[Tuple[Hashable, TriangleMesh]],
                tolerance: float = SIGNATURE_TOLERANCE,
                bins: int = SIGNATURE_BINS) -> list:
    """Ids surviving a greedy ascending-id scan; later congruent copies are dropped."""
    survivors: list = []
    kept_sigs: List[np.ndarray] = []
    for object_id, mesh in sorted(objects, key=lambda item: item[0]):
        sig = shape_signature(mesh, bins)
        if any(signature_distance(sig, other) < tolerance for other in kept_sigs):
            continue
        survivors.append(object_id)
        kept_sigs.append(sig)
    return survivors


def box_mesh(size: Sequence[float] = (1.0, 1.0, 1.0), origin: Sequence[float] = (0.0, 0.0, 0.0)) -> TriangleMesh:
    """Axis-aligned box as 12 triangles."""
    sx, sy, sz = size
    ox, oy, oz = origin
    v = np.array([[x, y, z] for x in (0, sx) for y in (0, sy) for z in (0, sz)], dtype=np.float64)
    v += (ox, oy, oz)
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    faces = [t for a, b, c, d in quads for t in ((a, b, c), (a, c, d))]
    return TriangleMesh(v, np.array(faces))


def cylinder_mesh(radius: float, height: float, segments: int = 16) -> TriangleMesh:
    """Closed prism approximating a cylinder along z."""
    ang = np.linspace(0.0, 2 * np.pi, segments, endpoint=False)
    ring = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    bottom = np.column_stack([ring, np.zeros(segments)])
    top = np.column_stack([ring, np.full(segments, height)])
    v = np.vstack([bottom, top, [[0, 0, 0], [0, 0, height]]])
    cb, ct = 2 * segments, 2 * segments + 1
    faces = []
    for i in range(segments):
        j = (i + 1) % segments
        faces += [(i, j, segments + j), (i, segments + j, segments + i),
                  (cb, j, i), (ct, segments + i, segments + j)]
    return TriangleMesh(v, np.array(faces))


def format_obj(mesh: TriangleMesh) -> str:
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces.tolist()]
    return "\n".join(lines) + "\n"
