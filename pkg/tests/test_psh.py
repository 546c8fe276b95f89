import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hashconv import psh
from hashconv.psh import (EMPTY, TAG_SENTINEL, ConstructionError, build_psh, h0, h1,
                          psh_from_offsets, query, query_many, validate)
from hashconv.voxel import SparseVoxelSet

from _util import WORKED_PHI, worked_set, random_set


def unoccupied(rng, s, count):
    occupied = {tuple(p) for p in s.coords}
    out = []
    while len(out) < count:
        p = tuple(int(x) for x in rng.integers(0, s.resolution, s.dim))
        if p not in occupied:
            out.append(p)
    return np.array(out)


class TestHashFunctions:
    def test_h0_h1(self):
        assert h0((3, 1), 3).tolist() == [0, 1]
        assert h1((3, 1), 2).tolist() == [1, 1]
        assert h0((0, 0, 0), 7).tolist() == [0, 0, 0]

    def test_sizes(self):
        assert psh.smallest_hash_dim(8, 2) == 3
        assert psh.smallest_hash_dim(1, 3) == 2
        assert psh.smallest_hash_dim(9, 2) == 4
        assert psh.initial_offset_dim(8, 2) == 2
        for n in range(1, 3000, 37):
            m = psh.smallest_hash_dim(n, 3)
            assert m ** 3 > n >= (m - 1) ** 3


class TestWorkedExample:
    def test_injected_offsets(self):
        t = psh_from_offsets(worked_set(), 3, 2, WORKED_PHI)
        H, T = t.grid(t.H), t.grid(t.T)
        assert tuple(t.grid(t.phi)[1, 1]) == (1, 2)
        assert query(t, (3, 1)) == 3
        assert H[1, 0] == 3 and tuple(T[1, 0]) == (3, 1)
        assert H[2, 1] == EMPTY
        assert validate(t, worked_set()) == []

    def test_built_sizes(self):
        t = build_psh(worked_set())
        assert (t.m_bar, t.r_bar) == (3, 2)
        assert validate(t, worked_set()) == []

    def test_bad_offsets_rejected(self):
        with pytest.raises(ConstructionError):
            psh_from_offsets(worked_set(), 3, 2, [(0, 0)] * 4)


class TestBuild:
    def test_single_voxel(self):
        s = SparseVoxelSet(8, [[3, 4, 5]], [[1.0, 0, 0]])
        t = build_psh(s)
        assert t.m_bar == 2
        assert query(t, (3, 4, 5)) == 0

    def test_random_500(self):
        rng = np.random.default_rng(5)
        s = random_set(rng, 32, 500)
        for seed in (0, 1, 2):
            t = build_psh(s, seed=seed)
            np.testing.assert_array_equal(query_many(t, s.coords), np.arange(500))
            assert np.all(query_many(t, unoccupied(rng, s, 500)) == EMPTY)

    def test_tag_rejects_alias(self):
        # (0,0) and (3,0) share a slot for m=3 when they share an offset cell;
        # only (0,0) is stored, so (3,0) must come back empty
        s = SparseVoxelSet(8, [(0, 0)], [[1.0]])
        t = psh_from_offsets(s, 2, 1, [(0, 0)])
        assert psh.hash_slot([[2, 0]], 2, 1, t.phi)[0] == psh.hash_slot([[0, 0]], 2, 1, t.phi)[0]
        assert query(t, (0, 0)) == 0
        assert query(t, (2, 0)) is None

    def test_redundant_tags_are_sentinel(self):
        t = build_psh(random_set(np.random.default_rng(0), 16, 100))
        assert np.all(t.T[t.H == EMPTY] == TAG_SENTINEL)

    def test_data_in_canonical_order(self):
        s = random_set(np.random.default_rng(1), 16, 50)
        t = build_psh(s)
        np.testing.assert_array_equal(t.D, s.features.T)
        np.testing.assert_array_equal(psh.to_voxel_set(t).coords, s.coords)

    def test_deterministic(self):
        s = random_set(np.random.default_rng(2), 32, 2000)
        a, b = build_psh(s, seed=9), build_psh(s, seed=9)
        assert psh.dumps([a]) == psh.dumps([b])

    def test_near_minimal(self):
        rng = np.random.default_rng(3)
        for n in (1000, 2500, 7000):
            t = build_psh(random_set(rng, 64, n))
            assert t.m / n <= 1.35

    def test_max_resolution_needs_flag(self):
        s = SparseVoxelSet(65536, [[65535, 0, 7]], [[1.0]])
        with pytest.raises(ValueError):
            build_psh(s)
        t = build_psh(s, allow_max_resolution=True)
        assert query(t, (65535, 0, 7)) == 0

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from([(2, 4), (2, 16), (3, 4), (3, 8), (3, 16)]),
           st.floats(0.01, 1.0), st.integers(0, 1000))
    def test_perfect_and_sound(self, data_seed, shape, fill, seed):
        dim, res = shape
        rng = np.random.default_rng(data_seed)
        n = max(1, int(fill * res ** dim))
        s = random_set(rng, res, n, channels=1, dim=dim)
        t = build_psh(s, seed=seed)
        assert validate(t, s) == []
        grid = np.indices((res,) * dim).reshape(dim, -1).T[:, ::-1]
        got = query_many(t, grid)
        occupied = {tuple(p) for p in s.coords}
        mask = np.array([tuple(p) in occupied for p in grid])
        assert np.all(got[~mask] == EMPTY)
        assert sorted(got[mask].tolist()) == list(range(n))


class TestValidate:
    def test_duplicate_index(self):
        s = random_set(np.random.default_rng(4), 16, 60)
        t = build_psh(s)
        live = np.flatnonzero(t.H != EMPTY)
        t.H[live[0]] = t.H[live[1]]
        assert any("bijectivity" in p for p in validate(t, s))

    def test_corrupt_tag(self):
        s = random_set(np.random.default_rng(4), 16, 60)
        t = build_psh(s)
        live = np.flatnonzero(t.H != EMPTY)
        t.T[live[0]] = (t.T[live[0]] + 1) % 16
        assert any("perfectness" in p for p in validate(t, s))

    def test_wrong_hash_side(self):
        t = build_psh(random_set(np.random.default_rng(4), 16, 60))
        t.m_bar += 1
        assert validate(t)


class TestContainer:
    def test_round_trip_multilevel(self, tmp_path):
        rng = np.random.default_rng(6)
        levels = [build_psh(random_set(rng, r, 40, channels=3)) for r in (16, 8)]
        psh.save(tmp_path / "a.psh", levels)
        back = psh.load(tmp_path / "a.psh")
        assert psh.dumps(back) == psh.dumps(levels)
        for a, b in zip(levels, back):
            for name in ("H", "phi", "T", "D"):
                np.testing.assert_array_equal(getattr(a, name), getattr(b, name))

    def test_header_layout(self):
        t = build_psh(worked_set())
        raw = psh.level_to_bytes(t)
        assert raw[:4] == b"PSH1"
        fields = np.frombuffer(raw[4:32], "<u4").tolist()
        assert fields == [1, 2, 7, 8, 3, 2, 1]
        assert len(raw) == 32 + 4 * 9 + 2 * 4 + 2 * 2 * 9 + 4 * 8
        # a bare block is accepted as a one-level file
        assert psh.dumps(psh.loads(raw)) == psh.dumps([t])

    def test_corrupt(self):
        t = build_psh(worked_set())
        raw = psh.dumps([t])
        with pytest.raises(ValueError):
            psh.loads(raw[:-3])
        with pytest.raises(ValueError):
            psh.loads(raw + b"\0")
        with pytest.raises(ValueError):
            psh.loads(b"\x01\0\0\0XXXX" + raw[8:])
