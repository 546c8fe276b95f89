"""Surface voxelization of meshes and point clouds.

Models are scaled into the cube [-0.5, 0.5]^3, surface samples are binned
into voxels, and each occupied voxel carries the normalized average normal
of its samples.  Coordinates are integer ``(x, y, z)`` rows; a set is kept
sorted by ``(z, y, x)`` so that data-index order is canonical.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

MAX_RESOLUTION = 65536
_NORMAL_EPS = 1e-8


def is_power_of_two(x: int) -> bool:
    return x > 0 and (x & (x - 1)) == 0


@dataclass
class InputModel:
    """A triangle mesh/soup (``triangles`` non-empty) or a point cloud."""

    vertices: np.ndarray
    triangles: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))
    point_normals: np.ndarray | None = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.triangles.size and (
            self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)
        ):
            raise ValueError("triangle index out of range")
        if self.point_normals is not None:
            nrm = np.asarray(self.point_normals, dtype=np.float64).reshape(-1, 3)
            if len(nrm) != len(self.vertices):
                raise ValueError("point_normals must match vertices")
            if len(nrm) and np.abs(np.linalg.norm(nrm, axis=1) - 1.0).max() > 1e-6:
                raise ValueError("point_normals must have unit length")
            self.point_normals = nrm

    @property
    def is_point_cloud(self) -> bool:
        return len(self.triangles) == 0

    def transformed(self, matrix: np.ndarray) -> "InputModel":
        """Apply a 3x3 rotation (normals are rotated alongside)."""
        matrix = np.asarray(matrix, dtype=np.float64)
        normals = None if self.point_normals is None else self.point_normals @ matrix.T
        return InputModel(self.vertices @ matrix.T, self.triangles.copy(), normals)


@dataclass
class SparseVoxelSet:
    """Occupied voxels of one model at one resolution.

    ``coords`` is ``(n, d)`` int64 with column 0 = x; ``features`` is
    ``(n, c)``.  Rows are kept in canonical ``(z, y, x)`` lexicographic order.
    """

    resolution: int
    coords: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.int64)
        if coords.ndim != 2 or coords.shape[1] not in (2, 3):
            raise ValueError("coords must be (n, 2) or (n, 3)")
        feats = np.asarray(self.features, dtype=np.float32)
        if feats.ndim == 1:
            feats = feats[:, None]
        if len(feats) != len(coords):
            raise ValueError("one feature row per voxel required")
        if len(coords) == 0:
            raise ValueError("voxel set must be non-empty")
        if not 1 <= self.resolution <= MAX_RESOLUTION:
            raise ValueError(f"resolution {self.resolution} out of range")
        if coords.min() < 0 or coords.max() >= self.resolution:
            raise ValueError("voxel coordinate out of range")
        keys = linear_keys(coords, self.resolution)
        order = np.argsort(keys, kind="stable")
        if np.any(np.diff(keys[order]) == 0):
            raise ValueError("duplicate voxel coordinates")
        self.coords = coords[order]
        self.features = np.ascontiguousarray(feats[order])

    @property
    def dim(self) -> int:
        return self.coords.shape[1]

    @property
    def n(self) -> int:
        return len(self.coords)

    @property
    def channels(self) -> int:
        return self.features.shape[1]

    @property
    def level(self) -> int:
        return int(self.resolution).bit_length() - 1

    def __len__(self):
        return self.n


def linear_keys(coords: np.ndarray, resolution: int) -> np.ndarray:
    """Row-major key with x fastest, i.e. ``(z, y, x)`` lexicographic order."""
    coords = np.asarray(coords, dtype=np.int64)
    key = np.zeros(len(coords), dtype=np.int64)
    for axis in range(coords.shape[1] - 1, -1, -1):
        key = key * resolution + coords[:, axis]
    return key


def _unit_rows(v: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(v, axis=1, keepdims=True)
    out = np.zeros_like(v)
    ok = norm[:, 0] >= _NORMAL_EPS
    out[ok] = v[ok] / norm[ok]
    return out


def normalize_model(model: InputModel) -> InputModel:
    """Center on the bounding-box center and scale to a sphere of radius 0.5.

    The cube [-0.5, 0.5]^3 then contains the model under any rotation
    about the origin.
    """
    if len(model.vertices) == 0:
        raise ValueError("empty input")
    v = model.vertices
    center = 0.5 * (v.min(axis=0) + v.max(axis=0))
    v = v - center
    radius = np.linalg.norm(v, axis=1).max()
    if radius > 0:
        v = v * (0.5 / radius)
    return InputModel(v, model.triangles.copy(), model.point_normals)


def sample_surface(model: InputModel, samples_per_triangle: np.ndarray,
                   rng: np.random.Generator):
    """Uniform barycentric samples; returns (points, normals)."""
    tri = model.vertices[model.triangles]
    counts = np.asarray(samples_per_triangle, dtype=np.int64)
    idx = np.repeat(np.arange(len(tri)), counts)
    r1 = rng.random(len(idx))
    r2 = rng.random(len(idx))
    s = np.sqrt(r1)
    a, b, c = tri[idx, 0], tri[idx, 1], tri[idx, 2]
    pts = (1 - s)[:, None] * a + (s * (1 - r2))[:, None] * b + (s * r2)[:, None] * c
    face_n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    return pts, _unit_rows(face_n)[idx]


def voxelize(model: InputModel, resolution: int, samples_per_area: float = 4.0,
             dilate: bool = False, rng: np.random.Generator | int | None = 0,
             finest_resolution: int | None = None) -> SparseVoxelSet:
    """Voxelize the surface of a normalized model.

    Each triangle gets ``ceil(samples_per_area * area * finest**2)`` samples
    (at least one); point clouds use their points directly.  With ``dilate``
    the samples move along their normal by half a finest-level voxel.
    """
    if not is_power_of_two(resolution) or not 4 <= resolution <= MAX_RESOLUTION:
        raise ValueError(f"resolution must be a power of two in [4, 65536], got {resolution}")
    finest = finest_resolution or resolution
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    if np.abs(model.vertices).max(initial=0.0) > 0.5 + 1e-9:
        raise ValueError("model is not normalized into the unit cube")

    if model.is_point_cloud:
        if model.point_normals is None:
            raise ValueError("point cloud input requires point_normals")
        pts, nrm = model.vertices, model.point_normals
    else:
        tri = model.vertices[model.triangles]
        area = 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)
        degenerate = area <= 0
        if degenerate.any():
            logger.warning("skipped %d degenerate triangles", int(degenerate.sum()))
        counts = np.ceil(samples_per_area * area * finest**2).astype(np.int64)
        counts = np.maximum(counts, 1)
        counts[degenerate] = 0
        pts, nrm = sample_surface(model, counts, rng)
    if len(pts) == 0:
        raise ValueError("no surface samples generated")
    if dilate:
        pts = pts + nrm * (1.0 / (2.0 * finest))

    cells = np.floor((pts + 0.5) * resolution).astype(np.int64)
    np.clip(cells, 0, resolution - 1, out=cells)
    return _aggregate(cells, nrm, resolution)


def _aggregate(cells: np.ndarray, values: np.ndarray, resolution: int) -> SparseVoxelSet:
    keys = linear_keys(cells, resolution)
    uniq, first, inverse = np.unique(keys, return_index=True, return_inverse=True)
    sums = np.zeros((len(uniq), values.shape[1]), dtype=np.float64)
    np.add.at(sums, inverse.ravel(), values)
    return SparseVoxelSet(resolution, cells[first], _unit_rows(sums))


def coarsen(s: SparseVoxelSet) -> SparseVoxelSet:
    """Halve the resolution; a parent is occupied iff any child is."""
    if s.resolution < 4:
        raise ValueError("cannot coarsen below resolution 2")
    return _aggregate(s.coords // 2, s.features.astype(np.float64), s.resolution // 2)


def hierarchy(s: SparseVoxelSet, coarsest: int = 4) -> list[SparseVoxelSet]:
    """``[s, coarsen(s), ...]`` down to ``coarsest`` resolution, finest first."""
    levels = [s]
    while levels[-1].resolution > coarsest:
        levels.append(coarsen(levels[-1]))
    return levels


# -- file readers -------------------------------------------------------------

def read_obj(path) -> InputModel:
    verts, normals, faces = [], [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "vn":
                normals.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = []
                for tok in parts[1:]:
                    i = int(tok.split("/")[0])
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                # fan triangulation of polygons
                faces.extend([idx[0], idx[k], idx[k + 1]] for k in range(1, len(idx) - 1))
    if not verts:
        raise ValueError(f"{path}: no vertices")
    point_normals = None
    if not faces and normals:
        if len(normals) != len(verts):
            raise ValueError(f"{path}: vn count does not match v count")
        point_normals = _unit_rows(np.asarray(normals, dtype=np.float64))
    return InputModel(np.asarray(verts), np.asarray(faces, dtype=np.int64).reshape(-1, 3),
                      point_normals)


def read_off(path) -> InputModel:
    with open(path) as fh:
        tokens = []
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                tokens.extend(line.split())
    if not tokens:
        raise ValueError(f"{path}: empty file")
    # header may be "OFF" alone or glued to the counts ("OFF8 6 0")
    head = tokens.pop(0)
    if head != "OFF":
        if not head.startswith("OFF"):
            raise ValueError(f"{path}: missing OFF header")
        tokens.insert(0, head[3:])
    nv, nf = int(tokens[0]), int(tokens[1])
    pos = 3
    verts = np.asarray(tokens[pos:pos + 3 * nv], dtype=np.float64).reshape(nv, 3)
    pos += 3 * nv
    faces = []
    for _ in range(nf):
        k = int(tokens[pos])
        idx = [int(t) for t in tokens[pos + 1:pos + 1 + k]]
        pos += 1 + k
        faces.extend([idx[0], idx[j], idx[j + 1]] for j in range(1, k - 1))
    return InputModel(verts, np.asarray(faces, dtype=np.int64).reshape(-1, 3))


def read_xyz(path) -> InputModel:
    data = np.loadtxt(path, ndmin=2)
    if data.shape[1] != 6:
        raise ValueError(f"{path}: expected 6 floats per line")
    return InputModel(data[:, :3], point_normals=_unit_rows(data[:, 3:]))


def read_model(path) -> InputModel:
    suffix = Path(path).suffix.lower()
    readers = {".obj": read_obj, ".off": read_off, ".xyz": read_xyz}
    if suffix not in readers:
        raise ValueError(f"unsupported model format: {suffix}")
    return readers[suffix](path)


def write_off(path, model: InputModel) -> None:
    with open(path, "w") as fh:
        fh.write(f"OFF\n{len(model.vertices)} {len(model.triangles)} 0\n")
        for v in model.vertices:
            fh.write(f"{v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for t in model.triangles:
            fh.write(f"3 {t[0]} {t[1]} {t[2]}\n")
