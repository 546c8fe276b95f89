"""Voxelize a sphere, hash it, and look a few voxels up.

Walks through the storage side of the library: a mesh becomes a sparse set
of surface voxels with averaged normals, the set gets a perfect spatial
hash, and lookups either land on a data column or come back empty.
"""

import numpy as np

from hashconv import build_psh, hierarchy, query, validate, voxelize
from hashconv.psh import psh_from_offsets, query_many
from hashconv.shapes import icosphere
from hashconv.voxel import SparseVoxelSet

sphere = icosphere(4)
s = voxelize(sphere, 64, rng=0)
print(f"sphere at 64^3: {s.n} surface voxels out of {64 ** 3} cells")

table = build_psh(s, seed=0)
print(f"hash table {table.m_bar}^3 = {table.m} slots, offset table {table.r_bar}^3 = {table.r}")
print(f"load factor n/m = {table.n / table.m:.3f}, validate -> {validate(table, s) or 'ok'}")

# every stored voxel maps back to its own column; the centre of the sphere is empty
idx = query_many(table, s.coords)
assert np.array_equal(idx, np.arange(s.n))
print("centre voxel (32, 32, 32) ->", query(table, (32, 32, 32)))
print("first voxel", tuple(int(x) for x in s.coords[0]), "-> column", query(table, s.coords[0]),
      "normal", np.round(table.D[:, 0], 3))

# coarser levels halve the resolution; each gets its own table
for level in hierarchy(s, coarsest=4):
    t = build_psh(level)
    print(f"  res {level.resolution:3d}: n={level.n:6d} m={t.m:6d}")

# A small 2D case with hand-picked offsets.  The 7x5 domain is stored at side 7.
pixels = [(2, 0), (1, 1), (2, 1), (3, 1), (4, 2), (2, 3), (4, 3), (3, 4)]
small = SparseVoxelSet(7, pixels, np.arange(8, dtype=np.float32)[:, None])
t = psh_from_offsets(small, 3, 2, [(1, 0), (0, 1), (2, 1), (1, 2)])
print("\n2D hash table (data index per slot, -1 empty), rows are y:")
print(t.grid(t.H))
print("query (3, 1) ->", query(t, (3, 1)))
