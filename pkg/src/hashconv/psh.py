"""Perfect spatial hashing of one sparse voxel set at one resolution.

A voxel ``p`` lands in hash slot ``h(p) = (p mod m + phi[p mod r]) mod m``
(componentwise, ``m``/``r`` being the per-axis hash and offset table sizes).
Slots hold data indices into the compact feature array, or -1.  Position
tags store the voxel that owns each slot so that queries for empty voxels
aliasing onto an occupied slot are rejected.

Every d-dimensional table is stored flat with x varying fastest.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass

import numpy as np
from numba import njit

from .voxel import SparseVoxelSet

logger = logging.getLogger(__name__)

EMPTY = -1
TAG_SENTINEL = 0xFFFF
MAX_OFFSET = 255
DEFAULT_MAX_RESOLUTION = 32768
MAGIC = b"PSH1"
VERSION = 1
_HEADER = struct.Struct("<4s7I")
_COUNT = struct.Struct("<I")

# previously used offsets tried per offset cell before the exhaustive scan
_REUSE_TRIES = 32


class ConstructionError(RuntimeError):
    pass


@dataclass
class PshLevel:
    dim: int
    resolution: int
    n: int
    m_bar: int
    r_bar: int
    H: np.ndarray    # (m,) int32
    phi: np.ndarray  # (r, dim) uint8
    T: np.ndarray    # (m, dim) uint16
    D: np.ndarray    # (c, n) float32

    @property
    def m(self) -> int:
        return self.m_bar ** self.dim

    @property
    def r(self) -> int:
        return self.r_bar ** self.dim

    @property
    def channels(self) -> int:
        return self.D.shape[0]

    def grid(self, table: np.ndarray) -> np.ndarray:
        """View a flat table as a d-dim array indexed ``[x, y(, z)]``."""
        side = self.m_bar if len(table) == self.m else self.r_bar
        return _as_grid(table, side, self.dim)

    def nbytes(self) -> dict[str, int]:
        return {"H": self.H.nbytes, "Phi": self.phi.nbytes, "T": self.T.nbytes, "D": self.D.nbytes}


def _as_grid(table: np.ndarray, side: int, dim: int) -> np.ndarray:
    # flat index = x + side*y + side^2*z  ->  C-order array [z, y, x] -> transpose to [x, y, z]
    arr = table.reshape((side,) * dim + table.shape[1:])
    axes = tuple(range(dim))[::-1] + tuple(range(dim, arr.ndim))
    return arr.transpose(axes)


def h0(p, m_bar: int) -> np.ndarray:
    return np.asarray(p, dtype=np.int64) % m_bar


def h1(p, r_bar: int) -> np.ndarray:
    return np.asarray(p, dtype=np.int64) % r_bar


def flat_index(q: np.ndarray, side: int) -> np.ndarray:
    """Flatten d-dim cell coordinates (last axis) with x fastest."""
    q = np.asarray(q, dtype=np.int64)
    out = np.zeros(q.shape[:-1], dtype=np.int64)
    for axis in range(q.shape[-1] - 1, -1, -1):
        out = out * side + q[..., axis]
    return out


def unflatten_index(i, side: int, dim: int) -> np.ndarray:
    i = np.asarray(i, dtype=np.int64)
    out = np.empty(i.shape + (dim,), dtype=np.int64)
    for axis in range(dim):
        out[..., axis] = i % side
        i = i // side
    return out


def hash_slot(p, m_bar: int, r_bar: int, phi: np.ndarray) -> np.ndarray:
    """Flat hash-table slot of each coordinate row in ``p``."""
    p = np.asarray(p, dtype=np.int64)
    off = phi[flat_index(h1(p, r_bar), r_bar)].astype(np.int64)
    return flat_index((h0(p, m_bar) + off) % m_bar, m_bar)


def query_many(psh: PshLevel, p) -> np.ndarray:
    """Data index for each row of ``p`` (in range), -1 where unoccupied."""
    p = np.asarray(p, dtype=np.int64).reshape(-1, psh.dim)
    slots = hash_slot(p, psh.m_bar, psh.r_bar, psh.phi)
    idx = psh.H[slots].astype(np.int64)
    hit = (idx != EMPTY) & np.all(psh.T[slots] == p, axis=1)
    return np.where(hit, idx, EMPTY)


def query(psh: PshLevel, p) -> int | None:
    i = int(query_many(psh, np.asarray(p).reshape(1, -1))[0])
    return None if i == EMPTY else i


def smallest_hash_dim(n: int, dim: int) -> int:
    """Smallest integer side with ``side**dim > n``."""
    side = max(1, int(round(n ** (1.0 / dim))) - 1)
    while side ** dim <= n:
        side += 1
    while side > 1 and (side - 1) ** dim > n:
        side -= 1
    return side


def initial_offset_dim(n: int, dim: int) -> int:
    """Smallest integer side with ``side**dim >= n / (2*dim)``."""
    side = max(1, int(math.floor((n / (2 * dim)) ** (1.0 / dim))) - 1)
    while side ** dim * 2 * dim < n:
        side += 1
    return side


def _coprime_at_least(r_bar: int, m_bar: int) -> int:
    while math.gcd(r_bar, m_bar) != 1:
        r_bar += 1
    return r_bar


def _check_input(s: SparseVoxelSet, allow_max_resolution: bool) -> None:
    if s.n >= 2 ** 31:
        raise ValueError("too many voxels for 32-bit data indices")
    if s.resolution > 65536:
        raise ValueError("resolution exceeds 16-bit position tags")
    if s.resolution > DEFAULT_MAX_RESOLUTION and not allow_max_resolution:
        raise ValueError("resolution 65536 makes the tag sentinel ambiguous; "
                         "pass allow_max_resolution=True to accept that")


def _assemble(s: SparseVoxelSet, m_bar: int, r_bar: int, phi: np.ndarray,
              slots: np.ndarray) -> PshLevel:
    d = s.dim
    H = np.full(m_bar ** d, EMPTY, dtype=np.int32)
    H[slots] = np.arange(s.n, dtype=np.int32)
    T = np.full((m_bar ** d, d), TAG_SENTINEL, dtype=np.uint16)
    T[slots] = s.coords.astype(np.uint16)
    D = np.ascontiguousarray(s.features.T.astype(np.float32))
    return PshLevel(d, s.resolution, s.n, m_bar, r_bar, H, phi.astype(np.uint8), T, D)


def psh_from_offsets(s: SparseVoxelSet, m_bar: int, r_bar: int, phi,
                     allow_max_resolution: bool = False) -> PshLevel:
    """Assemble a PSH from a caller-supplied offset table.

    ``phi`` is ``(r_bar**d, d)`` flat (x fastest).  Raises
    ``ConstructionError`` if the offsets do not give a perfect hash.
    """
    _check_input(s, allow_max_resolution)
    phi = np.asarray(phi, dtype=np.int64).reshape(r_bar ** s.dim, s.dim)
    if phi.min() < 0 or phi.max() > MAX_OFFSET:
        raise ValueError("offsets must fit in 8 bits")
    if m_bar ** s.dim <= s.n:
        raise ValueError("hash table too small")
    slots = hash_slot(s.coords, m_bar, r_bar, phi)
    if len(np.unique(slots)) != s.n:
        raise ConstructionError("offset table does not give a perfect hash")
    return _assemble(s, m_bar, r_bar, phi, slots)


@njit(cache=True)
def _splitmix(state):
    state = (state + np.uint64(0x9E3779B97F4A7C15)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    z = state
    z = ((z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    z = ((z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    return state, z ^ (z >> np.uint64(31))


@njit(cache=True)
def _fits(base, members, offset, m_bar, weights, occupied, out):
    d = base.shape[1]
    for i in range(len(members)):
        s = 0
        for a in range(d):
            s += ((base[members[i], a] + offset[a]) % m_bar) * weights[a]
        if occupied[s]:
            return False
        out[i] = s
    return True


@njit(cache=True)
def _greedy(base, members_sorted, starts, cell_order, m_bar, n_cells, side,
            reuse_tries, seed):
    """Place offset cells in the given order; returns (ok, phi, slots)."""
    n, d = base.shape
    weights = np.empty(d, np.int64)
    scan_w = np.empty(d, np.int64)
    w, sw = 1, 1
    for a in range(d):
        weights[a] = w
        scan_w[a] = sw
        w *= m_bar
        sw *= side
    n_scan = sw
    occupied = np.zeros(w, np.bool_)
    phi = np.zeros((n_cells, d), np.int64)
    slots = np.empty(n, np.int64)
    max_used = min(n_scan, len(cell_order))
    used = np.empty((max_used, d), np.int64)
    perm = np.empty(max_used, np.int64)
    seen = np.zeros(n_scan, np.bool_)
    n_used = 0
    state = np.uint64(seed)
    offset = np.empty(d, np.int64)
    cand = np.empty(d, np.int64)
    buf = np.empty(n, np.int64)
    free = np.arange(w)
    where = np.arange(w)
    n_free = w

    for ci in range(len(cell_order)):
        c = cell_order[ci]
        members = members_sorted[starts[c]:starts[c + 1]]
        k = len(members)
        # members sharing a base residue can never be separated by an offset
        for i in range(k):
            for j in range(i + 1, k):
                same = True
                for a in range(d):
                    if base[members[i], a] != base[members[j], a]:
                        same = False
                        break
                if same:
                    return False, phi, slots
        found = False
        tries = min(reuse_tries, n_used)
        for t in range(tries):
            state, rnd = _splitmix(state)
            j = t + np.int64(rnd % np.uint64(n_used - t))
            perm[t], perm[j] = perm[j], perm[t]
            for a in range(d):
                offset[a] = used[perm[t], a]
            if _fits(base, members, offset, m_bar, weights, occupied, buf):
                found = True
                break
        if not found:
            # expected scan length ~ (m/free)^k; enumerating free slots costs ~free
            expected = 1.0
            for i in range(k):
                expected *= w / max(n_free, 1)
                if expected > n_free:
                    break
            state, rnd = _splitmix(state)
            start = np.int64(rnd % np.uint64(n_scan))
            if expected <= n_free:
                for q in range(n_scan):
                    r = (start + q) % n_scan
                    for a in range(d):
                        offset[a] = r % side
                        r //= side
                    if _fits(base, members, offset, m_bar, weights, occupied, buf):
                        found = True
                        break
            else:
                best = n_scan
                for fi in range(n_free):
                    r = free[fi]
                    key = 0
                    for a in range(d):
                        o = (r % m_bar - base[members[0], a]) % m_bar
                        r //= m_bar
                        cand[a] = o
                        key += o * scan_w[a]
                        if o >= side:
                            key = 2 * n_scan
                            break
                    if key < n_scan:
                        key = (key - start) % n_scan
                    if key >= best:
                        continue
                    if _fits(base, members, cand, m_bar, weights, occupied, buf):
                        best = key
                        for a in range(d):
                            offset[a] = cand[a]
                if best < n_scan:
                    found = True
                    _fits(base, members, offset, m_bar, weights, occupied, buf)
            if found:
                key = 0
                for a in range(d):
                    key += offset[a] * scan_w[a]
                if not seen[key]:
                    seen[key] = True
                    for a in range(d):
                        used[n_used, a] = offset[a]
                    perm[n_used] = n_used
                    n_used += 1
        if not found:
            return False, phi, slots
        for a in range(d):
            phi[c, a] = offset[a]
        for i in range(k):
            occupied[buf[i]] = True
            slots[members[i]] = buf[i]
            # swap-remove from the free list
            fi = where[buf[i]]
            last = free[n_free - 1]
            free[fi] = last
            where[last] = fi
            n_free -= 1
    return True, phi, slots


def _try_offsets(coords: np.ndarray, m_bar: int, r_bar: int,
                 rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray] | None:
    d = coords.shape[1]
    base = coords % m_bar
    cell = flat_index(coords % r_bar, r_bar)
    counts = np.bincount(cell, minlength=r_bar ** d)
    # largest cells first; ties by ascending cell index
    cell_order = np.lexsort((np.arange(len(counts)), -counts))
    cell_order = cell_order[counts[cell_order] > 0]
    members_sorted = np.argsort(cell, kind="stable")
    starts = np.concatenate(([0], np.cumsum(counts)))
    seed = int(rng.integers(0, 2 ** 63))
    ok, phi, slots = _greedy(base, members_sorted, starts, cell_order, m_bar,
                             r_bar ** d, min(m_bar, MAX_OFFSET + 1), _REUSE_TRIES, seed)
    return (phi, slots) if ok else None


def build_psh(s: SparseVoxelSet, seed: int = 0, allow_max_resolution: bool = False) -> PshLevel:
    """Greedy perfect-hash construction with a near-minimal hash table.

    The offset table starts at the smallest size holding ``n / (2d)`` cells
    and grows by a factor 2^(1/d) per axis on failure.
    """
    _check_input(s, allow_max_resolution)
    d, n = s.dim, s.n
    m_bar = smallest_hash_dim(n, d)
    r_bar = _coprime_at_least(initial_offset_dim(n, d), m_bar)
    limit = max(m_bar, s.resolution)
    rng = np.random.default_rng(seed)
    while True:
        result = _try_offsets(s.coords, m_bar, r_bar, rng)
        if result is not None:
            phi, slots = result
            return _assemble(s, m_bar, r_bar, phi, slots)
        grown = max(r_bar + 1, math.ceil(r_bar * 2 ** (1.0 / d)))
        logger.debug("PSH construction failed at r=%d, retrying with r=%d", r_bar, grown)
        r_bar = _coprime_at_least(grown, m_bar)
        if r_bar > limit:
            raise ConstructionError("hash construction diverged")


def to_voxel_set(psh: PshLevel) -> SparseVoxelSet:
    slots = np.flatnonzero(psh.H != EMPTY)
    order = np.argsort(psh.H[slots])
    slots = slots[order]
    return SparseVoxelSet(psh.resolution, psh.T[slots].astype(np.int64), psh.D.T.copy())


def validate(psh: PshLevel, s: SparseVoxelSet | None = None) -> list[str]:
    """List every violated structural invariant (empty list means valid)."""
    problems = []
    d = psh.dim
    if psh.H.shape != (psh.m,):
        problems.append(f"H has shape {psh.H.shape}, expected ({psh.m},)")
        return problems
    if psh.T.shape != (psh.m, d) or psh.phi.shape != (psh.r, d):
        problems.append("T or phi has the wrong shape")
        return problems
    if psh.D.shape[1] != psh.n:
        problems.append(f"D has {psh.D.shape[1]} columns, expected {psh.n}")
    if not np.all(np.isfinite(psh.D)):
        problems.append("D holds non-finite values")
    if not (psh.m_bar ** d > psh.n and (psh.m_bar == 1 or (psh.m_bar - 1) ** d <= psh.n)):
        problems.append(f"hash side {psh.m_bar} is not the smallest with side^{d} > n={psh.n}")
    if psh.phi.dtype != np.uint8:
        problems.append("offsets are not 8-bit")
    if psh.resolution > 65536:
        problems.append("resolution exceeds 16-bit tags")

    used = psh.H[psh.H != EMPTY].astype(np.int64)
    if np.any(psh.H < EMPTY):
        problems.append("H holds negative values other than -1")
    if len(used) != psh.n:
        problems.append(f"H holds {len(used)} data indices, expected {psh.n}")
    if len(used) and (used.min() < 0 or used.max() >= psh.n):
        problems.append("H data index out of [0, n)")
    if len(np.unique(used)) != len(used):
        problems.append("bijectivity: duplicate data index in H")

    live = psh.H != EMPTY
    tags = psh.T.astype(np.int64)
    if np.any(tags[live] >= psh.resolution):
        problems.append("position tag outside the domain")
    if np.any(psh.T[~live] != TAG_SENTINEL):
        problems.append("redundant slot without sentinel tag")
    # tags of live slots must hash back to their own slot
    live_slots = np.flatnonzero(live)
    if len(live_slots):
        back = hash_slot(tags[live], psh.m_bar, psh.r_bar, psh.phi)
        if np.any(back != live_slots):
            problems.append("perfectness: tag does not hash to its own slot")

    if s is not None:
        if s.n != psh.n:
            problems.append(f"voxel set has {s.n} voxels, PSH has {psh.n}")
        else:
            slots = hash_slot(s.coords, psh.m_bar, psh.r_bar, psh.phi)
            idx = psh.H[slots].astype(np.int64)
            if np.any(idx == EMPTY):
                problems.append("perfectness: occupied voxel maps to an empty slot")
            if np.any(tags[slots] != s.coords):
                problems.append("perfectness: tag mismatch for an occupied voxel")
            if len(np.unique(idx)) != s.n or np.any(np.sort(idx) != np.arange(s.n)):
                problems.append("bijectivity: voxels do not map onto [0, n)")
            elif psh.D.shape == (s.channels, s.n) and not np.array_equal(
                    psh.D[:, idx], s.features.T.astype(psh.D.dtype)):
                problems.append("data array does not match voxel features")
    return problems


# -- .psh container -------------------------------------------------------------

def level_to_bytes(psh: PshLevel) -> bytes:
    header = _HEADER.pack(MAGIC, VERSION, psh.dim, psh.resolution, psh.n,
                          psh.m_bar, psh.r_bar, psh.channels)
    return b"".join([
        header,
        psh.H.astype("<i4").tobytes(),
        psh.phi.astype(np.uint8).tobytes(),
        psh.T.astype("<u2").tobytes(),
        np.ascontiguousarray(psh.D, dtype="<f4").tobytes(),
    ])


def level_from_bytes(buf: bytes, offset: int = 0) -> tuple[PshLevel, int]:
    if len(buf) - offset < _HEADER.size:
        raise ValueError("truncated .psh block header")
    magic, version, d, res, n, m_bar, r_bar, c = _HEADER.unpack_from(buf, offset)
    if magic != MAGIC:
        raise ValueError("bad .psh magic")
    if version != VERSION:
        raise ValueError(f"unsupported .psh version {version}")
    if d not in (2, 3):
        raise ValueError(f"bad dimension {d}")
    offset += _HEADER.size
    m, r = m_bar ** d, r_bar ** d
    sizes = [4 * m, d * r, 2 * d * m, 4 * c * n]
    if len(buf) - offset < sum(sizes):
        raise ValueError("truncated .psh block")
    H = np.frombuffer(buf, "<i4", m, offset).astype(np.int32)
    offset += sizes[0]
    phi = np.frombuffer(buf, np.uint8, d * r, offset).reshape(r, d).copy()
    offset += sizes[1]
    T = np.frombuffer(buf, "<u2", d * m, offset).reshape(m, d).astype(np.uint16)
    offset += sizes[2]
    D = np.frombuffer(buf, "<f4", c * n, offset).reshape(c, n).astype(np.float32)
    offset += sizes[3]
    return PshLevel(d, res, n, m_bar, r_bar, H, phi, T, D), offset


def dumps(levels: list[PshLevel]) -> bytes:
    """Level-count header followed by blocks, finest first."""
    return _COUNT.pack(len(levels)) + b"".join(level_to_bytes(p) for p in levels)


def loads(buf: bytes) -> list[PshLevel]:
    if buf[:4] == MAGIC:
        level, end = level_from_bytes(buf, 0)
        levels = [level]
    else:
        if len(buf) < _COUNT.size:
            raise ValueError("truncated .psh file")
        (count,) = _COUNT.unpack_from(buf, 0)
        offset, levels = _COUNT.size, []
        for _ in range(count):
            level, offset = level_from_bytes(buf, offset)
            levels.append(level)
        end = offset
    if end != len(buf):
        raise ValueError("trailing bytes after .psh blocks")
    return levels


def save(path, levels: list[PshLevel]) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(levels))


def load(path) -> list[PshLevel]:
    with open(path, "rb") as fh:
        return loads(fh.read())
