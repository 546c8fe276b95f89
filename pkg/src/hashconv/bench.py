"""Memory benchmark: PSH table sizes against an octree leaf-count estimate."""

from __future__ import annotations

import csv
from dataclasses import astuple, dataclass

import numpy as np

from . import psh as psh_mod
from ._parallel import pmap
from .shapes import icosphere
from .voxel import SparseVoxelSet, coarsen, read_model, normalize_model, voxelize

CSV_HEADER = ["N", "n", "m", "r", "octants", "bytes_H", "bytes_Phi", "bytes_T", "bytes_D"]


@dataclass
class BenchRow:
    N: int
    n: int
    m: int
    r: int
    octants: int
    bytes_H: int
    bytes_Phi: int
    bytes_T: int
    bytes_D: int


def sphere_shell(resolution: int, radius: float = 0.5) -> SparseVoxelSet:
    """Voxels whose cube meets the sphere of ``radius`` centred in the unit cube.

    Exact: a cube intersects the sphere surface iff its nearest point is
    inside and its farthest corner outside (or on) the sphere.
    """
    h = 1.0 / resolution
    edges = (np.arange(resolution + 1) * h) - 0.5
    lo, hi = edges[:-1], edges[1:]
    near = np.where(lo > 0, lo, np.where(hi < 0, hi, 0.0)) ** 2
    far = np.maximum(lo ** 2, hi ** 2)
    r2 = radius * radius
    chunks, normals = [], []
    for z in range(resolution):
        near_sum = near[None, :, None] + near[None, None, :]   # (1, y, x)
        far_sum = far[None, :, None] + far[None, None, :]
        hit = (near_sum + near[z] <= r2) & (far_sum + far[z] >= r2)
        ys, xs = np.nonzero(hit[0])
        if len(xs):
            c = np.stack([xs, ys, np.full_like(xs, z)], axis=1)
            chunks.append(c)
            center = (c + 0.5) * h - 0.5
            normals.append(center / np.linalg.norm(center, axis=1, keepdims=True))
    return SparseVoxelSet(resolution, np.concatenate(chunks), np.concatenate(normals))


def estimate_octants(parent_count: int) -> int:
    """Leaf octants when every surface-touching parent spawns 8 children."""
    return 8 * parent_count


def bench_row(s: SparseVoxelSet, seed: int = 0) -> BenchRow:
    table = psh_mod.build_psh(s, seed=seed)
    parents = coarsen(s).n if s.resolution >= 4 else s.n
    b = table.nbytes()
    return BenchRow(s.resolution, s.n, table.m, table.r, estimate_octants(parents),
                    b["H"], b["Phi"], b["T"], b["D"])


def shape_at(shape: str, resolution: int, path=None, seed: int = 0) -> SparseVoxelSet:
    if shape == "shell":
        return sphere_shell(resolution)
    if shape == "sphere":
        return voxelize(icosphere(5), resolution, rng=seed)
    if shape == "file":
        if path is None:
            raise ValueError("shape 'file' needs a model path")
        return voxelize(normalize_model(read_model(path)), resolution, rng=seed)
    raise ValueError(f"unknown shape {shape!r}")


def run_bench(shape: str, resolutions, path=None, seed: int = 0) -> list[BenchRow]:
    return pmap(lambda N: bench_row(shape_at(shape, N, path, seed), seed), list(resolutions))


def loglog_slope(x, y) -> float:
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def summarize(rows: list[BenchRow]) -> dict[str, float]:
    N = [r.N for r in rows]
    return {
        "slope_n": loglog_slope(N, [r.n for r in rows]),
        "slope_slack": loglog_slope(N, [max(r.m - r.n, 1) for r in rows]),
        "slope_octants": loglog_slope(N, [r.octants for r in rows]),
        "max_load_ratio": max(r.m / r.n for r in rows),
    }


def write_csv(path, rows: list[BenchRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in rows:
            w.writerow(astuple(r))
