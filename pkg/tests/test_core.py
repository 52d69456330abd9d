import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mobdiff.core import (
    FlowMatrix,
    GridCity,
    ModelAffine,
    TrajectoryDataset,
    cell_centers,
    coord_to_loc,
    fit_affine,
    flows_from_dataset,
    load_city,
    load_dataset,
    load_flows,
    loc_to_coord,
    row_normalize,
    save_city,
    save_dataset,
    save_flows,
    snap_to_grid,
    transition_matrix,
)
from mobdiff.errors import DataIOError


class TestGridCity:
    def test_invariants(self):
        city = GridCity(3, np.ones(9))
        assert city.n_locations == 9
        with pytest.raises(ValueError):
            GridCity(3, np.ones(8))
        with pytest.raises(ValueError):
            GridCity(3, -np.ones(9))
        with pytest.raises(ValueError):
            GridCity(3, np.zeros(9))
        with pytest.raises(ValueError):
            GridCity(1, np.ones(1))

    def test_content_hash_sensitive(self):
        a = GridCity(2, np.ones(4))
        b = GridCity(2, np.array([1.0, 1.0, 1.0, 2.0]))
        assert a.content_hash() != b.content_hash()
        assert a.content_hash() == GridCity(2, np.ones(4)).content_hash()


class TestCoordinateBridge:
    def test_g2_corners(self, uniform_city2):
        np.testing.assert_allclose(loc_to_coord(uniform_city2, 0), [-0.5, -0.5])
        np.testing.assert_allclose(loc_to_coord(uniform_city2, 3), [0.5, 0.5])

    def test_g16_origin_cell(self):
        city = GridCity(16, np.ones(256))
        # lattice formula: center = -1 + (i + 0.5) * (2 / G)
        np.testing.assert_allclose(loc_to_coord(city, 0), [-0.9375, -0.9375])

    def test_out_of_range_loc(self, uniform_city2):
        with pytest.raises(ValueError):
            loc_to_coord(uniform_city2, 4)

    def test_exact_center_roundtrip(self, uniform_city2):
        assert coord_to_loc(uniform_city2, (-0.5, -0.5)) == 0

    def test_nearest_center(self, uniform_city2):
        # brute-force nearest-center oracle
        centers = cell_centers(uniform_city2)
        p = np.array([-0.49, -0.51])
        oracle = int(np.argmin(((centers - p) ** 2).sum(axis=1)))
        assert coord_to_loc(uniform_city2, p) == oracle == 0

    def test_clamp_outside(self, uniform_city2):
        assert coord_to_loc(uniform_city2, (9.0, 9.0)) == 3
        assert coord_to_loc(uniform_city2, (-9.0, 9.0)) == 2

    def test_nonfinite_rejected(self, uniform_city2):
        with pytest.raises(ValueError):
            coord_to_loc(uniform_city2, (np.nan, 0.0))

    @given(g=st.integers(2, 17), loc=st.integers(0, 10**6))
    @settings(max_examples=60, deadline=None)
    def test_bijection_on_centers(self, g, loc):
        city = GridCity(g, np.ones(g * g))
        loc = loc % city.n_locations
        assert coord_to_loc(city, loc_to_coord(city, loc)) == loc

    def test_interior_points_nearest_oracle(self, uniform_city4):
        rng = np.random.default_rng(0)
        centers = cell_centers(uniform_city4)
        pts = rng.uniform(-1.3, 1.3, size=(200, 2))
        got = coord_to_loc(uniform_city4, pts)
        clamped = np.clip(pts, -0.999999, 0.999999)
        oracle = np.argmin(
            ((centers[None, :, :] - clamped[:, None, :]) ** 2).sum(axis=2), axis=1
        )
        np.testing.assert_array_equal(got, oracle)


class TestFlows:
    def test_static_trajectory_zero_matrix(self, uniform_city4):
        ds = TrajectoryDataset(uniform_city4, np.full((1, 48), 5, dtype=np.int32))
        f = flows_from_dataset(ds)
        assert f.counts.sum() == 0

    def test_hand_counted_pairs(self, uniform_city4):
        row = np.zeros(48, dtype=np.int32)
        row[10] = 1  # 0 -> 1 at slot 9->10, 1 -> 0 at slot 10->11
        ds = TrajectoryDataset(uniform_city4, row[None, :])
        f = flows_from_dataset(ds)
        assert f.counts[0, 1] == 1
        assert f.counts[1, 0] == 1
        assert f.counts.sum() == 2

    def test_additivity_under_duplication(self, uniform_city4):
        row = np.zeros(48, dtype=np.int32)
        row[10] = 1
        single = flows_from_dataset(TrajectoryDataset(uniform_city4, row[None, :]))
        double = flows_from_dataset(
            TrajectoryDataset(uniform_city4, np.stack([row, row]))
        )
        np.testing.assert_array_equal(double.counts, 2 * single.counts)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=20, deadline=None)
    def test_additivity_over_concatenation(self, seed):
        city = GridCity(3, np.ones(9))
        rng = np.random.default_rng(seed)
        a = rng.integers(0, 9, size=(3, 12)).astype(np.int32)
        b = rng.integers(0, 9, size=(2, 12)).astype(np.int32)
        fa = flows_from_dataset(TrajectoryDataset(city, a)).counts
        fb = flows_from_dataset(TrajectoryDataset(city, b)).counts
        fab = flows_from_dataset(TrajectoryDataset(city, np.concatenate([a, b]))).counts
        np.testing.assert_array_equal(fab, fa + fb)

    def test_include_self_flag(self, uniform_city4):
        ds = TrajectoryDataset(uniform_city4, np.full((1, 5), 3, dtype=np.int32))
        assert flows_from_dataset(ds, include_self=True).counts[3, 3] == 4

    def test_brute_force_oracle(self, uniform_city4):
        rng = np.random.default_rng(3)
        locs = rng.integers(0, 16, size=(20, 48)).astype(np.int32)
        got = flows_from_dataset(TrajectoryDataset(uniform_city4, locs)).counts
        expected = np.zeros((16, 16))
        for row in locs:
            for a, b in zip(row[:-1], row[1:]):
                if a != b:
                    expected[a, b] += 1
        np.testing.assert_array_equal(got, expected)


class TestRowNormalize:
    def test_hand_normalization(self):
        f = FlowMatrix(np.array([[2.0, 0, 2, 0], [0, 0, 0, 0], [1, 1, 1, 1], [0, 0, 0, 1]]))
        out = row_normalize(f, 0, np.ones(4))
        np.testing.assert_allclose(out, [0.5, 0, 0.5, 0])

    def test_zero_row_population_fallback_uniform(self):
        f = FlowMatrix(np.zeros((4, 4)))
        out = row_normalize(f, 1, np.ones(4))
        np.testing.assert_allclose(out, [1 / 3, 0, 1 / 3, 1 / 3])

    def test_already_normalized(self):
        f = FlowMatrix(np.array([[1.0, 0, 0, 0], [1, 1, 1, 1], [0, 1, 0, 0], [1, 0, 0, 0]]))
        np.testing.assert_allclose(row_normalize(f, 0, np.ones(4)), [1, 0, 0, 0])

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_simplex_property(self, seed):
        rng = np.random.default_rng(seed)
        counts = rng.integers(0, 5, size=(6, 6)).astype(float)
        pop = rng.random(6) + 0.01
        f = FlowMatrix(counts)
        for loc in range(6):
            p = row_normalize(f, loc, pop)
            assert abs(p.sum() - 1.0) < 1e-12
            assert np.all(p >= 0)

    def test_transition_matrix_rows(self):
        f = FlowMatrix(np.array([[0.0, 1], [0, 0]]))
        tm = transition_matrix(f, np.array([0.25, 0.75]))
        np.testing.assert_allclose(tm[0], [0, 1])
        np.testing.assert_allclose(tm[1], [1, 0])  # fallback excludes self


class TestAffine:
    def test_fit_hits_target_std(self):
        rng = np.random.default_rng(0)
        coords = rng.normal(0, 0.7, size=(500, 48, 2))
        aff = fit_affine(coords, target_std=0.1)
        model = aff.to_model(coords)
        np.testing.assert_allclose(model.reshape(-1, 2).std(axis=0), [0.1, 0.1], rtol=1e-9)

    def test_roundtrip(self):
        aff = ModelAffine([0.3, -0.2], [2.0, 4.0])
        x = np.random.default_rng(1).normal(size=(7, 2))
        np.testing.assert_allclose(aff.to_coord(aff.to_model(x)), x, atol=1e-14)

    def test_snap_inverts_centers(self, uniform_city4):
        locs = np.arange(16, dtype=np.int32).reshape(1, 16)
        aff = ModelAffine([0.0, 0.0], [0.1, 0.1])
        values = aff.to_model(loc_to_coord(uniform_city4, locs))
        np.testing.assert_array_equal(snap_to_grid(uniform_city4, values, aff), locs)


class TestFileFormats:
    def test_dataset_roundtrip_and_sidecar(self, tmp_path, uniform_city4):
        rng = np.random.default_rng(0)
        ds = TrajectoryDataset(
            uniform_city4,
            rng.integers(0, 16, size=(5, 48)).astype(np.int32),
            "train",
            ModelAffine([0, 0], [0.1, 0.1]),
        )
        p = tmp_path / "ds.csv"
        save_dataset(ds, p, seed=42)
        back = load_dataset(p, uniform_city4)
        np.testing.assert_array_equal(back.locs, ds.locs)
        assert back.split_tag == "train"
        np.testing.assert_allclose(back.affine.scale, ds.affine.scale)

    def test_dataset_corruption_detected(self, tmp_path, uniform_city4):
        ds = TrajectoryDataset(uniform_city4, np.zeros((2, 8), dtype=np.int32))
        p = tmp_path / "ds.csv"
        save_dataset(ds, p, seed=0)
        raw = p.read_text().replace("0", "1", 1)
        p.write_text(raw)
        with pytest.raises(DataIOError, match="checksum"):
            load_dataset(p, uniform_city4)

    def test_dataset_wrong_city_rejected(self, tmp_path, uniform_city4):
        ds = TrajectoryDataset(uniform_city4, np.zeros((2, 8), dtype=np.int32))
        p = tmp_path / "ds.csv"
        save_dataset(ds, p, seed=0)
        other = GridCity(4, np.arange(16) + 1.0)
        with pytest.raises(DataIOError, match="different city"):
            load_dataset(p, other)

    def test_flows_roundtrip(self, tmp_path):
        f = FlowMatrix(np.arange(16, dtype=float).reshape(4, 4) * 0.5)
        p = tmp_path / "flows.csv"
        save_flows(f, p, seed=1)
        back = load_flows(p)
        np.testing.assert_allclose(back.counts, f.counts)

    def test_city_roundtrip(self, tmp_path, city8):
        p = tmp_path / "city.json"
        save_city(city8, p, config={"note": 1}, seed=9)
        back = load_city(p)
        assert back.grid_side == city8.grid_side
        np.testing.assert_allclose(back.population, city8.population)
        assert back.content_hash() == city8.content_hash()

    def test_save_is_deterministic(self, tmp_path, uniform_city4):
        ds = TrajectoryDataset(uniform_city4, np.zeros((3, 8), dtype=np.int32))
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        save_dataset(ds, a, seed=5)
        save_dataset(ds, b, seed=5)
        assert a.read_bytes() == b.read_bytes()
