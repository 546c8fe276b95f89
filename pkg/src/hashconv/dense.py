"""Brute-force dense-grid reference ops for tests and validation.

Everything here is written as direct loops over the zero-filled grid, with
no hashing and no column matrices, so it can check the sparse operators
independently.  Grids are stored ``values[c, z, y, x]`` (``[c, y, x]`` in
2D); positions are passed as ``(x, y, z)`` tuples.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .batch import SuperPsh
from .voxel import SparseVoxelSet

MAX_ORACLE_RESOLUTION = 32


@dataclass
class DenseGrid:
    values: np.ndarray    # (c, res, ..., res)
    occupied: np.ndarray  # (res, ..., res) bool

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.occupied.ndim

    @property
    def resolution(self) -> int:
        return self.occupied.shape[0]

    def inside(self, p) -> bool:
        return all(0 <= x < self.resolution for x in p)

    def get(self, p) -> np.ndarray:
        """Feature vector at ``p``; zeros outside the domain."""
        if not self.inside(p):
            return np.zeros(self.channels, self.values.dtype)
        return self.values[(slice(None),) + tuple(p[::-1])]

    def is_occupied(self, p) -> bool:
        return self.inside(p) and bool(self.occupied[tuple(p[::-1])])


def empty_grid(resolution: int, channels: int, dim: int = 3, dtype=np.float64) -> DenseGrid:
    if resolution > MAX_ORACLE_RESOLUTION:
        raise ValueError(f"dense oracle is capped at {MAX_ORACLE_RESOLUTION}^d")
    return DenseGrid(np.zeros((channels,) + (resolution,) * dim, dtype),
                     np.zeros((resolution,) * dim, bool))


def densify(s: SparseVoxelSet, dtype=np.float64) -> DenseGrid:
    g = empty_grid(s.resolution, s.channels, s.dim, dtype)
    for p, f in zip(s.coords, s.features):
        key = tuple(p[::-1])
        g.values[(slice(None),) + key] = f
        g.occupied[key] = True
    return g


def densify_model(sp: SuperPsh, v: int, features=None, dtype=np.float64) -> DenseGrid:
    """Dense grid of model ``v`` (1-based) from a super table's columns."""
    X = sp.D if features is None else features
    pos, model = sp.column_positions()
    g = empty_grid(sp.resolution, X.shape[0], sp.dim, dtype)
    for col in np.flatnonzero(model == v):
        key = tuple(pos[col][::-1])
        g.values[(slice(None),) + key] = X[:, col]
        g.occupied[key] = True
    return g


def sparsify(g: DenseGrid) -> SparseVoxelSet:
    coords = [p for p in all_positions(g.resolution, g.dim) if g.is_occupied(p)]
    feats = [g.get(p) for p in coords]
    return SparseVoxelSet(g.resolution, np.array(coords).reshape(-1, g.dim), np.array(feats))


def all_positions(resolution: int, dim: int) -> list[tuple]:
    return [p[::-1] for p in product(range(resolution), repeat=dim)]


def field(p, kernel_size: int, stride: int, padding: int) -> list[tuple]:
    """Receptive-field voxels of output ``p``, x varying fastest."""
    dim = len(p)
    if stride == 1:
        origin = [x - (kernel_size - 1) // 2 for x in p]
    else:
        origin = [x * stride - padding for x in p]
    out = []
    for t in product(range(kernel_size), repeat=dim):
        t = t[::-1]
        out.append(tuple(origin[a] + t[a] for a in range(dim)))
    return out


def im2col(g: DenseGrid, kernel_size: int, stride: int, padding: int, positions) -> np.ndarray:
    k = kernel_size ** g.dim
    cols = np.zeros((g.channels * k, len(positions)), g.values.dtype)
    for j, p in enumerate(positions):
        for t, q in enumerate(field(p, kernel_size, stride, padding)):
            for c in range(g.channels):
                cols[c * k + t, j] = g.get(q)[c] if g.is_occupied(q) else 0.0
    return cols


def col2im(cols: np.ndarray, resolution: int, channels: int, dim: int,
           kernel_size: int, stride: int, padding: int, positions) -> DenseGrid:
    g = empty_grid(resolution, channels, dim, cols.dtype)
    k = kernel_size ** dim
    for j, p in enumerate(positions):
        for t, q in enumerate(field(p, kernel_size, stride, padding)):
            if g.inside(q):
                for c in range(channels):
                    g.values[(c,) + tuple(q[::-1])] += cols[c * k + t, j]
    return g


def kernel_tensor(W: np.ndarray, in_channels: int, kernel_size: int, dim: int) -> np.ndarray:
    """Reshape a kernel matrix to ``[out, in, kz, ky, kx]``."""
    return W.reshape((W.shape[0], in_channels) + (kernel_size,) * dim)


def conv(g: DenseGrid, kernel: np.ndarray, stride: int, padding: int, positions) -> np.ndarray:
    """Direct convolution sum at each output position; returns ``(c_out, len(positions))``."""
    F = kernel.shape[-1]
    out = np.zeros((kernel.shape[0], len(positions)), np.result_type(g.values, kernel))
    for j, p in enumerate(positions):
        for q, t in zip(field(p, F, stride, padding), product(range(F), repeat=g.dim)):
            if not g.is_occupied(q):
                continue
            x = g.get(q)
            for n in range(g.channels):
                # t is (kz, ky, kx) because product varies the last index fastest
                out[:, j] += kernel[(slice(None), n) + t] * x[n]
    return out


def transposed_conv(g: DenseGrid, kernel: np.ndarray, stride: int, padding: int,
                    positions, fine: DenseGrid) -> np.ndarray:
    """Scatter every coarse input through the kernel onto the fine grid.

    Only voxels occupied in ``fine`` receive output; returns a grid with
    ``kernel.shape[1]`` channels.
    """
    F = kernel.shape[-1]
    out = empty_grid(fine.resolution, kernel.shape[1], g.dim, np.result_type(g.values, kernel))
    for p in positions:
        if not g.is_occupied(p):
            continue
        x = g.get(p)
        for q, t in zip(field(p, F, stride, padding), product(range(F), repeat=g.dim)):
            if not fine.is_occupied(q):
                continue
            for o in range(kernel.shape[0]):
                out.values[(slice(None),) + tuple(q[::-1])] += kernel[(o, slice(None)) + t] * x[o]
    out.occupied[...] = fine.occupied
    return out


def max_pool(g: DenseGrid, kernel_size: int, stride: int, padding: int, positions):
    vals = np.zeros((g.channels, len(positions)), g.values.dtype)
    switches = np.full((g.channels, len(positions)), -1, np.int64)
    for j, p in enumerate(positions):
        for c in range(g.channels):
            best = None
            for t, q in enumerate(field(p, kernel_size, stride, padding)):
                if g.is_occupied(q):
                    v = g.get(q)[c]
                    if best is None or v > best:
                        best, switches[c, j] = v, t
            vals[c, j] = 0.0 if best is None else best
    return vals, switches


def avg_pool(g: DenseGrid, kernel_size: int, stride: int, padding: int, positions):
    vals = np.zeros((g.channels, len(positions)), g.values.dtype)
    for j, p in enumerate(positions):
        for q in field(p, kernel_size, stride, padding):
            if g.is_occupied(q):
                vals[:, j] += g.get(q)
    return vals / kernel_size ** g.dim


def max_unpool(values, switches, kernel_size, stride, padding, positions, fine: DenseGrid):
    out = empty_grid(fine.resolution, values.shape[0], fine.dim, values.dtype)
    for j, p in enumerate(positions):
        cells = field(p, kernel_size, stride, padding)
        for c in range(values.shape[0]):
            if switches[c, j] >= 0:
                q = cells[switches[c, j]]
                out.values[(c,) + tuple(q[::-1])] += values[c, j]
    out.occupied[...] = fine.occupied
    return out


def avg_unpool(values, kernel_size, stride, padding, positions, fine: DenseGrid):
    out = empty_grid(fine.resolution, values.shape[0], fine.dim, values.dtype)
    k = kernel_size ** fine.dim
    for j, p in enumerate(positions):
        for q in field(p, kernel_size, stride, padding):
            if fine.is_occupied(q):
                out.values[(slice(None),) + tuple(q[::-1])] += values[:, j] / k
    out.occupied[...] = fine.occupied
    return out


def shift(g: DenseGrid, offset) -> DenseGrid:
    """Translate contents by ``offset`` (x, y, z); content leaving the domain is lost."""
    out = empty_grid(g.resolution, g.channels, g.dim, g.values.dtype)
    for p in all_positions(g.resolution, g.dim):
        if g.is_occupied(p):
            q = tuple(p[a] + offset[a] for a in range(g.dim))
            if out.inside(q):
                out.values[(slice(None),) + tuple(q[::-1])] = g.get(p)
                out.occupied[tuple(q[::-1])] = True
    return out
