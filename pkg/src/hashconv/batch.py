"""Mini-batch super tables: per-model PSH tables laid end to end.

Accumulated index arrays ``M``, ``R``, ``N`` carry a leading zero, so model
``v`` (1-based) owns ``H[M[v-1]:M[v]]``, ``phi[R[v-1]:R[v]]`` and data
columns ``N[v-1]:N[v]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .psh import EMPTY, PshLevel


@dataclass
class SuperPsh:
    dim: int
    resolution: int
    H: np.ndarray       # (M[b],) int32
    phi: np.ndarray     # (R[b], dim) uint8
    T: np.ndarray       # (M[b], dim) uint16
    V: np.ndarray       # (M[b],) int32, 1-based model ordinal per slot
    M: np.ndarray       # (b+1,) int64
    R: np.ndarray
    N: np.ndarray
    m_bar: np.ndarray   # (b,) per-model table sides
    r_bar: np.ndarray
    n: np.ndarray
    D: np.ndarray       # (c, N[b])

    @property
    def b(self) -> int:
        return len(self.n)

    @property
    def level(self) -> int:
        return int(self.resolution).bit_length() - 1

    @property
    def columns(self) -> int:
        return int(self.N[-1])

    def column_positions(self) -> tuple[np.ndarray, np.ndarray]:
        """Voxel coordinate and 1-based model of every data column."""
        cached = getattr(self, "_columns", None)
        if cached is None:
            slots = np.flatnonzero(self.H != EMPTY)
            v = self.V[slots].astype(np.int64)
            col = self.N[v - 1] + self.H[slots]
            pos = np.empty((self.columns, self.dim), dtype=np.int64)
            model = np.empty(self.columns, dtype=np.int64)
            pos[col] = self.T[slots]
            model[col] = v
            cached = (pos, model)
            object.__setattr__(self, "_columns", cached)
        return cached


def _accumulate(sizes) -> np.ndarray:
    return np.concatenate(([0], np.cumsum(np.asarray(sizes, dtype=np.int64))))


def build_super(levels: list[PshLevel]) -> SuperPsh:
    if not levels:
        raise ValueError("empty batch")
    first = levels[0]
    for lv in levels[1:]:
        if lv.dim != first.dim:
            raise ValueError("mixed dimensions in batch")
        if lv.resolution != first.resolution:
            raise ValueError("mixed resolutions in batch")
        if lv.channels != first.channels:
            raise ValueError("mixed channel counts in batch")
    M = _accumulate([lv.m for lv in levels])
    R = _accumulate([lv.r for lv in levels])
    N = _accumulate([lv.n for lv in levels])
    V = np.concatenate([np.full(lv.m, k + 1, dtype=np.int32) for k, lv in enumerate(levels)])
    return SuperPsh(
        dim=first.dim,
        resolution=first.resolution,
        H=np.concatenate([lv.H for lv in levels]).astype(np.int32),
        phi=np.concatenate([lv.phi for lv in levels]),
        T=np.concatenate([lv.T for lv in levels]),
        V=V, M=M, R=R, N=N,
        m_bar=np.array([lv.m_bar for lv in levels], dtype=np.int64),
        r_bar=np.array([lv.r_bar for lv in levels], dtype=np.int64),
        n=np.array([lv.n for lv in levels], dtype=np.int64),
        D=np.concatenate([lv.D for lv in levels], axis=1),
    )


def locate_many(sp: SuperPsh, v, p) -> np.ndarray:
    """Global data column of voxel ``p`` in model ``v`` (1-based), or -1.

    ``v`` broadcasts against the rows of ``p``.  Rows outside the domain
    return -1 rather than wrapping.
    """
    p = np.asarray(p, dtype=np.int64).reshape(-1, sp.dim)
    v = np.broadcast_to(np.asarray(v, dtype=np.int64), (len(p),))
    inside = np.all((p >= 0) & (p < sp.resolution), axis=1)
    q = np.where(inside[:, None], p, 0)
    k = v - 1
    m_bar = sp.m_bar[k][:, None]
    r_bar = sp.r_bar[k][:, None]
    i_phi = sp.R[k] + _flat_var(q % r_bar, r_bar[:, 0])
    off = sp.phi[i_phi].astype(np.int64)
    i_h = sp.M[k] + _flat_var((q % m_bar + off) % m_bar, m_bar[:, 0])
    local = sp.H[i_h].astype(np.int64)
    hit = inside & (local != EMPTY) & np.all(sp.T[i_h] == q, axis=1)
    return np.where(hit, sp.N[k] + local, EMPTY)


def _flat_var(q: np.ndarray, side: np.ndarray) -> np.ndarray:
    """Like ``flat_index`` but with a per-row side length."""
    out = np.zeros(len(q), dtype=np.int64)
    for axis in range(q.shape[1] - 1, -1, -1):
        out = out * side + q[:, axis]
    return out


def locate(sp: SuperPsh, v: int, p) -> int | None:
    if not 1 <= v <= sp.b:
        raise ValueError(f"model ordinal {v} outside 1..{sp.b}")
    i = int(locate_many(sp, v, np.asarray(p).reshape(1, -1))[0])
    return None if i == EMPTY else i


def model_slice(sp: SuperPsh, v: int) -> PshLevel:
    """Recover model ``v``'s own PSH tables (bit-exact copies)."""
    k = v - 1
    m0, m1 = sp.M[k], sp.M[k + 1]
    r0, r1 = sp.R[k], sp.R[k + 1]
    n0, n1 = sp.N[k], sp.N[k + 1]
    return PshLevel(sp.dim, sp.resolution, int(sp.n[k]), int(sp.m_bar[k]), int(sp.r_bar[k]),
                    sp.H[m0:m1].copy(), sp.phi[r0:r1].copy(), sp.T[m0:m1].copy(),
                    sp.D[:, n0:n1].copy())


def psh_hierarchy(s, coarsest: int = 4, seed: int = 0) -> list[PshLevel]:
    """PSH of ``s`` and each coarsened level down to ``coarsest``, finest first."""
    from .psh import build_psh
    from .voxel import hierarchy

    return [build_psh(level, seed=seed) for level in hierarchy(s, coarsest)]


def batch_levels(hierarchies: list[list[PshLevel]]) -> list[SuperPsh]:
    """Per-level super tables for a batch of per-model hierarchies."""
    depth = {len(h) for h in hierarchies}
    if len(depth) != 1:
        raise ValueError("all models need the same number of levels")
    return [build_super([h[i] for h in hierarchies]) for i in range(depth.pop())]
