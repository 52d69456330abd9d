import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mobdiff.core import ModelAffine, TrajectoryDataset, loc_to_coord
from mobdiff.diffusion import make_vp_schedule, sub_schedule, ddim_sample
from mobdiff.epr import EprParams
from mobdiff.errors import NumericError
from mobdiff.noise_prior import (
    MoveProfile,
    NoisePrior,
    build_noise_prior,
    fuse_noise,
    invert_transitions_to_noise,
    load_prior,
    moving_probability,
    rhythm_scale,
    rhythmic_batchnorm,
    save_prior,
)

EPS0 = lambda x, k: np.zeros_like(x)


def normal_cdf(x):
    return 0.5 * (1.0 + np.vectorize(math.erf)(x / math.sqrt(2)))


class TestMovingProbability:
    def test_static_dataset_zero_profile(self, uniform_city4):
        ds = TrajectoryDataset(uniform_city4, np.full((5, 48), 3, dtype=np.int32))
        np.testing.assert_array_equal(moving_probability(ds).p, 0.0)

    def test_always_moving_profile_is_one_except_last(self, uniform_city4):
        row = np.arange(48, dtype=np.int32) % 2
        ds = TrajectoryDataset(uniform_city4, row[None, :])
        p = moving_probability(ds).p
        np.testing.assert_array_equal(p[:-1], 1.0)
        assert p[-1] == 0.0

    def test_hand_counted_fraction(self, uniform_city4):
        locs = np.zeros((10, 48), dtype=np.int32)
        locs[:4, 13] = 1  # four trajectories move at slot 12 -> 13
        ds = TrajectoryDataset(uniform_city4, locs)
        p = moving_probability(ds).p
        assert p[12] == pytest.approx(0.4)
        assert p[13] == pytest.approx(0.4)  # they move back at 13 -> 14
        assert p[20] == 0.0

    def test_profile_validation(self):
        with pytest.raises(ValueError):
            MoveProfile(np.array([0.5, 1.2]))


class TestInversion:
    def test_zero_denoiser_closed_form(self, uniform_city4):
        sched = sub_schedule(make_vp_schedule(500), 10)
        locs = np.random.default_rng(0).integers(0, 16, (3, 48)).astype(np.int32)
        aff = ModelAffine([0, 0], [0.1, 0.1])
        z = invert_transitions_to_noise(EPS0, locs, uniform_city4, aff, sched)
        x = aff.to_model(loc_to_coord(uniform_city4, locs))
        # closed form: inverse of eps==0 sampler scales by sqrt(alpha_bar_K)
        np.testing.assert_allclose(z, x * math.sqrt(sched.alpha_bar[-1]), atol=1e-12)

    def test_deterministic(self, uniform_city4):
        sched = sub_schedule(make_vp_schedule(500), 5)
        locs = np.random.default_rng(1).integers(0, 16, (2, 48)).astype(np.int32)
        aff = ModelAffine([0, 0], [0.1, 0.1])
        a = invert_transitions_to_noise(EPS0, locs, uniform_city4, aff, sched)
        b = invert_transitions_to_noise(EPS0, locs, uniform_city4, aff, sched)
        np.testing.assert_array_equal(a, b)

    def test_round_trip_through_sampler(self, uniform_city4):
        sched = sub_schedule(make_vp_schedule(500), 20)
        locs = np.random.default_rng(2).integers(0, 16, (2, 48)).astype(np.int32)
        aff = ModelAffine([0, 0], [0.1, 0.1])
        z = invert_transitions_to_noise(EPS0, locs, uniform_city4, aff, sched)
        x = aff.to_model(loc_to_coord(uniform_city4, locs))
        np.testing.assert_allclose(ddim_sample(EPS0, z, sched), x, atol=1e-10)


class TestFuseNoise:
    def test_zero_flow_noise_is_standard_gaussian(self):
        # one-sample KS against the normal CDF at alpha = 0.01
        rng = np.random.default_rng(3)
        z = fuse_noise(np.zeros((100, 100, 1)), rng).ravel()
        s = np.sort(z)
        n = s.size
        cdf = normal_cdf(s)
        d = np.max(np.maximum(cdf - np.arange(n) / n, (np.arange(1, n + 1)) / n - cdf))
        assert d < 1.628 / math.sqrt(n), f"KS {d:.5f}"

    def test_mean_tracks_flow_noise(self):
        rng = np.random.default_rng(4)
        z_flow = np.array([[[0.7, -0.3]]])
        n = 10_000
        draws = np.array([fuse_noise(z_flow, rng) for _ in range(n)])
        se = 1.0 / math.sqrt(n)
        np.testing.assert_allclose(draws.mean(axis=0), z_flow, atol=4 * se)

    def test_variance_adds(self):
        rng = np.random.default_rng(5)
        z_flow = rng.standard_normal((200, 48, 2)) * 0.8
        fused = fuse_noise(z_flow, rng)
        resid = fused - z_flow
        assert abs(resid.var() - 1.0) < 0.03
        assert abs(fused.var() - (1.0 + 0.8**2)) < 0.05

    def test_flow_noise_untouched(self):
        z_flow = np.ones((2, 4, 2))
        fuse_noise(z_flow, np.random.default_rng(6))
        np.testing.assert_array_equal(z_flow, 1.0)


class TestRhythmicBatchnorm:
    def test_uniform_profile_standard_batchnorm(self):
        rng = np.random.default_rng(7)
        z = rng.standard_normal((64, 10, 2)) * 3 + 1
        prof = MoveProfile(np.full(10, 0.4))
        out = rhythmic_batchnorm(z, prof)
        np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-9)
        np.testing.assert_allclose(out.std(axis=0), 1.0, atol=1e-9)

    def test_profile_ratio_reflected_in_std(self):
        rng = np.random.default_rng(8)
        z = rng.standard_normal((128, 8, 2))
        p = np.full(8, 0.2)
        p[3] = 0.6
        p[5] = 0.3
        out = rhythmic_batchnorm(z, MoveProfile(p))
        ratio = out[:, 3, :].std(axis=0) / out[:, 5, :].std(axis=0)
        np.testing.assert_allclose(ratio, 2.0, atol=1e-9)

    @pytest.mark.parametrize("batch", [2, 64, 256])
    def test_post_conditions_exact(self, batch):
        rng = np.random.default_rng(9)
        z = rng.standard_normal((batch, 48, 2)) * 2 + 0.5
        p = rng.random(48)
        out = rhythmic_batchnorm(z, MoveProfile(p))
        r = rhythm_scale(MoveProfile(p))
        np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-9)
        np.testing.assert_allclose(
            out.std(axis=0), np.broadcast_to(r[:, None], (48, 2)), atol=1e-9
        )

    def test_rhythm_scale_mean_one_and_floor(self):
        p = np.zeros(48)
        p[10] = 0.5
        r = rhythm_scale(MoveProfile(p))
        assert r.mean() == pytest.approx(1.0)
        assert r.min() > 0  # floored slots never collapse the prior

    def test_batch_of_one_rejected(self):
        with pytest.raises(ValueError):
            rhythmic_batchnorm(np.zeros((1, 8, 2)), MoveProfile(np.full(8, 0.5)))

    def test_degenerate_slot_named(self):
        z = np.random.default_rng(10).standard_normal((8, 4, 2))
        z[:, 2, :] = 7.0
        with pytest.raises(NumericError, match="slot 2"):
            rhythmic_batchnorm(z, MoveProfile(np.full(4, 0.5)))

    @given(st.integers(0, 10**6))
    @settings(max_examples=15, deadline=None)
    def test_postcondition_property(self, seed):
        rng = np.random.default_rng(seed)
        z = rng.standard_normal((16, 6, 2)) * rng.uniform(0.5, 3)
        p = rng.random(6)
        out = rhythmic_batchnorm(z, MoveProfile(p))
        r = rhythm_scale(MoveProfile(p))
        assert np.abs(out.mean(axis=0)).max() < 1e-9
        assert np.abs(out.std(axis=0) - r[:, None]).max() < 1e-9


class TestBuildPrior:
    @pytest.fixture
    def setup(self, city8, flows8):
        sched = sub_schedule(make_vp_schedule(500), 5)
        profile = MoveProfile(np.full(48, 0.3))
        aff = ModelAffine([0, 0], [0.1, 0.1])
        factory = lambda starts: EPS0
        return city8, flows8, EprParams(), factory, sched, profile, aff

    def test_fixed_seed_identical(self, setup):
        city, flows, epr, factory, sched, profile, aff = setup
        a, sa = build_noise_prior(city, flows, epr, factory, sched, 16, 3, profile, aff)
        b, sb = build_noise_prior(city, flows, epr, factory, sched, 16, 3, profile, aff)
        np.testing.assert_array_equal(a.z, b.z)
        np.testing.assert_array_equal(sa, sb)

    def test_no_prior_is_gaussian_rhythm_skipped(self, setup):
        city, flows, epr, factory, sched, profile, aff = setup
        prior, starts = build_noise_prior(
            city, flows, epr, factory, sched, 4096, 4, profile, aff, "no_prior"
        )
        z = prior.z
        assert abs(z.mean()) < 4 / math.sqrt(z.size)
        assert abs(z.std() - 1.0) < 0.02
        # per-slot std is NOT shaped by the rhythm (norm skipped)
        assert np.abs(z.std(axis=0).mean(axis=-1) - 1.0).max() < 0.1
        assert starts.shape == (4096,)

    def test_full_prior_satisfies_rhythm_contract(self, setup):
        city, flows, epr, factory, sched, profile, aff = setup
        prior, starts = build_noise_prior(
            city, flows, epr, factory, sched, 64, 5, profile, aff, "full"
        )
        r = rhythm_scale(profile)
        np.testing.assert_allclose(prior.z.mean(axis=0), 0.0, atol=1e-9)
        np.testing.assert_allclose(
            prior.z.std(axis=0), np.broadcast_to(r[:, None], (48, 2)), atol=1e-9
        )

    def test_no_fusion_differs_from_full(self, setup):
        city, flows, epr, factory, sched, profile, aff = setup
        full, _ = build_noise_prior(city, flows, epr, factory, sched, 16, 6, profile, aff, "full")
        nf, _ = build_noise_prior(city, flows, epr, factory, sched, 16, 6, profile, aff, "no_fusion")
        assert np.abs(full.z - nf.z).max() > 1e-6

    def test_no_fusion_is_deterministic_function_of_sequences(self, setup):
        city, flows, epr, factory, sched, profile, aff = setup
        a, _ = build_noise_prior(city, flows, epr, factory, sched, 16, 7, profile, aff, "no_fusion")
        b, _ = build_noise_prior(city, flows, epr, factory, sched, 16, 7, profile, aff, "no_fusion")
        np.testing.assert_array_equal(a.z, b.z)

    def test_starts_are_sequence_homes(self, setup):
        city, flows, epr, factory, sched, profile, aff = setup
        from mobdiff.epr import sample_transition_batch

        _, starts = build_noise_prior(city, flows, epr, factory, sched, 8, 9, profile, aff, "full")
        locs = sample_transition_batch(city, flows, epr, 8, 9, profile.p, 48)
        np.testing.assert_array_equal(starts, locs[:, 0])

    def test_unknown_ablation_rejected(self, setup):
        city, flows, epr, factory, sched, profile, aff = setup
        with pytest.raises(ValueError):
            build_noise_prior(city, flows, epr, factory, sched, 8, 0, profile, aff, "nope")

    def test_provenance_recorded(self, setup):
        city, flows, epr, factory, sched, profile, aff = setup
        prior, _ = build_noise_prior(city, flows, epr, factory, sched, 8, 11, profile, aff)
        assert prior.provenance["seed"] == 11
        assert prior.provenance["flow_hash"] == flows.content_hash()
        assert prior.provenance["profile_hash"] == profile.content_hash()


class TestPriorIO:
    def test_roundtrip_with_provenance(self, tmp_path):
        prior = NoisePrior(np.random.default_rng(0).standard_normal((4, 8, 2)), {"seed": 1})
        p = tmp_path / "prior.npy"
        save_prior(prior, p)
        back = load_prior(p)
        np.testing.assert_array_equal(back.z, prior.z)
        assert back.provenance["seed"] == 1

    def test_nonfinite_rejected(self):
        with pytest.raises(NumericError):
            NoisePrior(np.full((2, 2, 2), np.nan))
