import csv

import numpy as np

from hashconv import bench
from hashconv.voxel import coarsen


class TestSphereShell:
    def test_matches_brute_force(self):
        N = 16
        s = bench.sphere_shell(N)
        expect = set()
        for x in range(N):
            for y in range(N):
                for z in range(N):
                    lo = np.array([x, y, z]) / N - 0.5
                    hi = lo + 1.0 / N
                    near = np.clip(0.0, lo, hi)
                    corners = np.array([[a, b, c] for a in (lo[0], hi[0]) for b in (lo[1], hi[1])
                                        for c in (lo[2], hi[2])])
                    if np.linalg.norm(near) <= 0.5 <= np.linalg.norm(corners, axis=1).max():
                        expect.add((x, y, z))
        assert set(map(tuple, s.coords)) == expect

    def test_unit_normals(self):
        s = bench.sphere_shell(32)
        np.testing.assert_allclose(np.linalg.norm(s.features, axis=1), 1, atol=1e-5)


class TestRows:
    def test_row_fields(self):
        s = bench.sphere_shell(32)
        row = bench.bench_row(s)
        assert row.N == 32 and row.n == s.n and row.m > row.n
        assert row.octants == 8 * coarsen(s).n
        assert row.bytes_H == 4 * row.m
        assert row.bytes_Phi == 3 * row.r
        assert row.bytes_T == 6 * row.m
        assert row.bytes_D == 4 * 3 * row.n

    def test_csv(self, tmp_path):
        rows = bench.run_bench("shell", [16, 32])
        bench.write_csv(tmp_path / "b.csv", rows)
        with open(tmp_path / "b.csv") as fh:
            data = list(csv.reader(fh))
        assert data[0] == ["N", "n", "m", "r", "octants", "bytes_H", "bytes_Phi", "bytes_T", "bytes_D"]
        assert [int(r[0]) for r in data[1:]] == [16, 32]

    def test_surface_scaling(self):
        rows = bench.run_bench("shell", [32, 64, 128])
        s = bench.summarize(rows)
        assert abs(s["slope_n"] - 2) <= 0.15
        assert abs(s["slope_octants"] - 2) <= 0.15
        assert s["max_load_ratio"] <= 1.35
        assert all(r.octants > r.m for r in rows)

    def test_slope_fit(self):
        assert bench.loglog_slope([1, 2, 4], [3, 12, 48]) == np.float64(2.0) or abs(
            bench.loglog_slope([1, 2, 4], [3, 12, 48]) - 2) < 1e-12

    def test_mesh_sphere(self):
        a, b = bench.shape_at("sphere", 32), bench.shape_at("sphere", 64)
        assert 3 <= b.n / a.n <= 5
