import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hashconv.shapes import icosphere, quad, random_rotation
from hashconv.voxel import (InputModel, SparseVoxelSet, coarsen, hierarchy, normalize_model,
                            read_model, voxelize, write_off)

from _util import random_set


class TestNormalize:
    def test_single_point_goes_to_origin(self):
        out = normalize_model(InputModel([[5.0, 5.0, 5.0]]))
        np.testing.assert_array_equal(out.vertices, [[0.0, 0.0, 0.0]])

    def test_two_points(self):
        out = normalize_model(InputModel([[0.0, 0, 0], [2.0, 0, 0]]))
        np.testing.assert_allclose(out.vertices, [[-0.5, 0, 0], [0.5, 0, 0]])

    def test_unit_cube_fits_sphere(self):
        corners = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], float)
        out = normalize_model(InputModel(corners * 3 + 7))
        np.testing.assert_allclose(out.vertices.mean(axis=0), 0, atol=1e-12)
        assert np.linalg.norm(out.vertices, axis=1).max() == pytest.approx(0.5)

    def test_empty_input(self):
        with pytest.raises(ValueError, match="empty input"):
            normalize_model(InputModel(np.zeros((0, 3))))


class TestInputModel:
    def test_triangle_index_checked(self):
        with pytest.raises(ValueError):
            InputModel(np.zeros((3, 3)), [[0, 1, 3]])

    def test_normals_must_be_unit(self):
        with pytest.raises(ValueError):
            InputModel([[0, 0, 0]], point_normals=[[2.0, 0, 0]])


class TestVoxelize:
    def test_quad_plate(self):
        s = voxelize(quad(), 4)
        assert s.n == 4
        assert sorted(map(tuple, s.coords)) == [(1, 1, 3), (1, 2, 3), (2, 1, 3), (2, 2, 3)]
        np.testing.assert_allclose(s.features, np.tile([0, 0, 1], (4, 1)), atol=1e-6)

    def test_single_point_cloud(self):
        cloud = InputModel([[0.1, -0.2, 0.3]], point_normals=[[1.0, 0, 0]])
        s = voxelize(cloud, 4)
        assert s.n == 1
        np.testing.assert_allclose(s.features[0], [1, 0, 0])

    def test_point_cloud_needs_normals(self):
        with pytest.raises(ValueError):
            voxelize(InputModel([[0.0, 0, 0]]), 4)

    def test_resolution_power_of_two(self):
        with pytest.raises(ValueError):
            voxelize(quad(), 12)

    def test_unnormalized_rejected(self):
        with pytest.raises(ValueError):
            voxelize(InputModel([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]]), 8)

    def test_degenerate_triangles_skipped(self, caplog):
        m = InputModel([[0, 0, 0], [0.1, 0, 0], [0.2, 0, 0], [0, 0.1, 0]], [[0, 1, 2], [0, 1, 3]])
        s = voxelize(m, 8)
        assert s.n >= 1
        assert "degenerate" in caplog.text

    def test_only_degenerate_is_error(self):
        m = InputModel([[0, 0, 0], [0.1, 0, 0], [0.2, 0, 0]], [[0, 1, 2]])
        with pytest.raises(ValueError):
            voxelize(m, 8)

    def test_sphere_surface_scaling(self):
        sphere = icosphere(4)
        ratio = voxelize(sphere, 64).n / voxelize(sphere, 32).n
        assert 3.5 <= ratio <= 4.5

    def test_voxels_touch_surface(self):
        # every occupied voxel of a sphere lies within half a diagonal of the surface
        # (plus the chord error of the tessellation)
        res = 32
        s = voxelize(icosphere(4), res)
        centers = (s.coords + 0.5) / res - 0.5
        dist = np.abs(np.linalg.norm(centers, axis=1) - 0.5)
        assert dist.max() <= 0.5 * np.sqrt(3) / res + 2e-3

    def test_unit_features(self):
        s = voxelize(icosphere(3), 16)
        np.testing.assert_allclose(np.linalg.norm(s.features, axis=1), 1, atol=1e-5)

    def test_deterministic_per_seed(self):
        m = icosphere(2)
        a, b = voxelize(m, 16, rng=3), voxelize(m, 16, rng=3)
        np.testing.assert_array_equal(a.coords, b.coords)
        np.testing.assert_array_equal(a.features, b.features)

    def test_dilation_moves_outward(self):
        m = icosphere(3, radius=0.45)
        plain = voxelize(m, 16, rng=0)
        dilated = voxelize(m, 16, dilate=True, rng=0)
        r = lambda s: np.linalg.norm((s.coords + 0.5) / 16 - 0.5, axis=1).mean()
        assert r(dilated) > r(plain)

    def test_cancelling_normals_give_zero(self):
        cloud = InputModel([[0.01, 0.01, 0.01], [0.02, 0.02, 0.02]],
                           point_normals=[[1.0, 0, 0], [-1.0, 0, 0]])
        s = voxelize(cloud, 4)
        assert s.n == 1
        np.testing.assert_array_equal(s.features[0], [0, 0, 0])


class TestSparseVoxelSet:
    def test_canonical_order(self):
        s = SparseVoxelSet(4, [[3, 0, 1], [0, 1, 0], [1, 0, 0]], np.eye(3))
        assert s.coords.tolist() == [[1, 0, 0], [0, 1, 0], [3, 0, 1]]
        np.testing.assert_array_equal(s.features, np.eye(3)[[2, 1, 0]])

    def test_rejects_duplicates_and_range(self):
        with pytest.raises(ValueError):
            SparseVoxelSet(4, [[1, 1, 1], [1, 1, 1]], np.ones((2, 3)))
        with pytest.raises(ValueError):
            SparseVoxelSet(4, [[4, 0, 0]], np.ones((1, 3)))
        with pytest.raises(ValueError):
            SparseVoxelSet(4, np.zeros((0, 3)), np.zeros((0, 3)))


class TestCoarsen:
    def test_single_voxel(self):
        s = coarsen(SparseVoxelSet(8, [[5, 3, 7]], [[0, 0, 1.0]]))
        assert s.resolution == 4
        assert s.coords.tolist() == [[2, 1, 3]]

    def test_identical_children(self):
        kids = [[x, y, z] for x in (2, 3) for y in (4, 5) for z in (0, 1)]
        s = coarsen(SparseVoxelSet(8, kids, np.tile([0, 0, 1.0], (8, 1))))
        assert s.n == 1
        np.testing.assert_allclose(s.features[0], [0, 0, 1])

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        s = random_set(rng, 32, 100, unit=True)
        out = coarsen(s)
        parents = {}
        for p, f in zip(s.coords, s.features):
            parents.setdefault(tuple(p // 2), []).append(f.astype(np.float64))
        assert set(map(tuple, out.coords)) == set(parents)
        for q, f in zip(out.coords, out.features):
            avg = np.sum(parents[tuple(q)], axis=0)
            np.testing.assert_allclose(f, avg / np.linalg.norm(avg), atol=1e-6)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from([8, 16, 32, 64]), st.integers(1, 50))
    def test_hierarchy_non_empty_to_four(self, seed, res, n):
        s = random_set(np.random.default_rng(seed), res, n)
        levels = hierarchy(s, 4)
        assert [lv.resolution for lv in levels][-1] == 4
        assert all(lv.n >= 1 for lv in levels)
        assert all(a.n >= b.n for a, b in zip(levels, levels[1:]))


class TestReaders:
    def test_obj_off_xyz(self, tmp_path):
        (tmp_path / "q.obj").write_text(
            "# quad\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1 4//1\n")
        m = read_model(tmp_path / "q.obj")
        assert m.triangles.tolist() == [[0, 1, 2], [0, 2, 3]]
        (tmp_path / "p.xyz").write_text("0 0 0 0 0 2\n0.1 0 0 1 0 0\n")
        c = read_model(tmp_path / "p.xyz")
        assert c.is_point_cloud
        np.testing.assert_allclose(c.point_normals, [[0, 0, 1], [1, 0, 0]])
        write_off(tmp_path / "q.off", m)
        back = read_model(tmp_path / "q.off")
        np.testing.assert_allclose(back.vertices, m.vertices)
        np.testing.assert_array_equal(back.triangles, m.triangles)

    def test_obj_point_cloud_uses_vn(self, tmp_path):
        (tmp_path / "c.obj").write_text("v 0 0 0\nv 0.1 0 0\nvn 0 0 1\nvn 0 1 0\n")
        m = read_model(tmp_path / "c.obj")
        assert m.is_point_cloud and m.point_normals.shape == (2, 3)

    def test_unknown_suffix(self, tmp_path):
        with pytest.raises(ValueError):
            read_model(tmp_path / "a.stl")

    def test_rotation_keeps_cube(self):
        rng = np.random.default_rng(1)
        m = normalize_model(icosphere(1)).transformed(random_rotation(rng))
        assert np.abs(m.vertices).max() <= 0.5 + 1e-12
