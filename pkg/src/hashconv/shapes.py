"""Procedural test meshes and rotations."""

from __future__ import annotations

import numpy as np

from .voxel import InputModel


def icosphere(subdivisions: int = 3, radius: float = 0.5) -> InputModel:
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
             (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
             (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.asarray(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return InputModel(np.asarray(verts) * radius, np.asarray(faces))


def box(size=(1.0, 1.0, 1.0)) -> InputModel:
    """Axis-aligned box centred at the origin, outward-facing triangles."""
    sx, sy, sz = (0.5 * np.asarray(size, dtype=np.float64))
    v = np.array([[-sx, -sy, -sz], [sx, -sy, -sz], [sx, sy, -sz], [-sx, sy, -sz],
                  [-sx, -sy, sz], [sx, -sy, sz], [sx, sy, sz], [-sx, sy, sz]])
    f = [(0, 2, 1), (0, 3, 2), (4, 5, 6), (4, 6, 7), (0, 1, 5), (0, 5, 4),
         (2, 3, 7), (2, 7, 6), (1, 2, 6), (1, 6, 5), (0, 4, 7), (0, 7, 3)]
    return InputModel(v, np.asarray(f))


def pyramid(base: float = 1.0, height: float = 1.0) -> InputModel:
    """Square pyramid, apex on +z."""
    h = 0.5 * base
    v = np.array([[-h, -h, -height / 2], [h, -h, -height / 2], [h, h, -height / 2],
                  [-h, h, -height / 2], [0.0, 0.0, height / 2]])
    f = [(0, 2, 1), (0, 3, 2), (0, 1, 4), (1, 2, 4), (2, 3, 4), (3, 0, 4)]
    return InputModel(v, np.asarray(f))


def quad(z: float = 0.25, half: float = 0.25) -> InputModel:
    """Axis-aligned square at height ``z`` facing +z."""
    v = np.array([[-half, -half, z], [half, -half, z], [half, half, z], [-half, half, z]])
    return InputModel(v, np.array([(0, 1, 2), (0, 2, 3)]))


def rotation_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation (QR of a Gaussian matrix)."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def upright_poses(count: int = 12) -> list[np.ndarray]:
    """``count`` rotations evenly spaced about the upright (z) axis."""
    return [rotation_z(2 * np.pi * k / count) for k in range(count)]
