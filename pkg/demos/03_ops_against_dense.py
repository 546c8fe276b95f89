"""Sparse convolution and pooling agree with a dense brute-force reference.

Builds a small random batch, runs each hashed operator and compares against
direct loops over a zero-filled grid.  Errors should sit at rounding level.
"""

import numpy as np

from hashconv import ConvSpec, batch_levels, ops, psh_hierarchy
from hashconv import dense
from hashconv.voxel import SparseVoxelSet

rng = np.random.default_rng(0)


def random_set(n, res=16, channels=4):
    keys = rng.choice(res ** 3, size=n, replace=False)
    coords = np.stack([(keys // res ** a) % res for a in range(3)], axis=1)
    return SparseVoxelSet(res, coords, rng.standard_normal((n, channels)))


fine, coarse = batch_levels([psh_hierarchy(random_set(n), coarsest=8) for n in (150, 90)])
X = fine.D.astype(np.float64)


def model_view(sp, v):
    pos, owner = sp.column_positions()
    cols = np.flatnonzero(owner == v)
    return cols, [tuple(int(x) for x in pos[c]) for c in cols]


def err(a, b):
    return np.abs(a - b).max() / np.abs(b).max()


conv = ConvSpec(3, 1, 0, 4, 5)
W = rng.standard_normal((5, 4 * 27))
Y, _ = ops.conv_forward(fine, fine, W, conv, X)

pool = ConvSpec(2, 2, 0, 4, 4)
P, switches = ops.max_pool(fine, coarse, pool, X)
A = ops.avg_pool(fine, coarse, pool, X)

for v in (1, 2):
    g = dense.densify_model(fine, v, X)
    cols, positions = model_view(fine, v)
    ref = dense.conv(g, dense.kernel_tensor(W, 4, 3, 3), 1, 0, positions)
    print(f"model {v}: conv 3x3x3 relative error {err(Y[:, cols], ref):.1e}")
    ccols, cpos = model_view(coarse, v)
    ref_max, ref_sw = dense.max_pool(g, 2, 2, 0, cpos)
    print(f"         max pool error {err(P[:, ccols], ref_max):.1e}, "
          f"switches match: {np.array_equal(switches[:, ccols], ref_sw)}")
    print(f"         avg pool error {err(A[:, ccols], dense.avg_pool(g, 2, 2, 0, cpos)):.1e}")

# hash2col and col2hash are adjoint: <hash2col(X), Z> == <X, col2hash(Z)>
cols = ops.hash2col(fine, fine, conv, X)
Z = rng.standard_normal(cols.shape)
lhs, rhs = np.sum(cols * Z), np.sum(X * ops.col2hash(Z, fine, fine, conv))
print(f"adjoint gap {abs(lhs - rhs) / abs(lhs):.1e}")
