"""Pack several models into one mini-batch and address voxels by model.

Each model keeps its own small hash tables; a batch lays them end to end
and records where each one starts.
"""

import numpy as np

from hashconv import batch_levels, locate, psh_hierarchy, voxelize
from hashconv.batch import model_slice
from hashconv.shapes import box, icosphere, pyramid

models = [icosphere(3), box((0.8, 0.6, 0.4)), pyramid(0.8, 0.8)]
hierarchies = [psh_hierarchy(voxelize(m, 32, rng=0), coarsest=4) for m in models]
levels = batch_levels(hierarchies)

for sp in levels:
    print(f"res {sp.resolution:2d}: per-model n={sp.n.tolist()}  M={sp.M.tolist()}  N={sp.N.tolist()}")

finest = levels[0]
pos, owner = finest.column_positions()
for v in (1, 2, 3):
    col = int(np.flatnonzero(owner == v)[0])
    p = tuple(int(x) for x in pos[col])
    print(f"model {v} voxel {p} -> column {locate(finest, v, p)}")

# a voxel of model 1 is not automatically a voxel of model 2
p = tuple(int(x) for x in pos[np.flatnonzero(owner == 1)[0]])
print(f"same position in model 2 -> {locate(finest, 2, p)}")

# slicing the batch back apart gives the original tables bit for bit
back = model_slice(finest, 2)
assert np.array_equal(back.H, hierarchies[1][0].H)
print("model 2 sliced back out: identical tables")
