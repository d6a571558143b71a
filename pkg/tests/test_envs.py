import json

import numpy as np
import pytest

from diffbc import envs
from diffbc.errors import ConfigError, CorruptArtifactError
from diffbc.rng import substream


class TestClawFixture:
    def test_seven_scenes(self):
        scenes = envs.default_claw_scenes()
        assert len(scenes) == 7
        assert [s.scene_id for s in scenes] == list(range(7))

    def test_every_region_valid(self):
        for scene in envs.default_claw_scenes():
            for region in scene.regions:
                lo, hi = region.bounds()
                assert region.area() > 0
                assert (lo >= 0).all() and (hi <= 1).all()

    def test_fixture_spans_mode_counts(self):
        counts = sorted(len(s.regions) for s in envs.default_claw_scenes())
        assert counts[0] == 1 and counts[-1] >= 3

    def test_diagonal_scene_marginal_product_leakage(self):
        # dense-grid integration: the product of the true marginals must put
        # at least 15% of its mass outside the region union
        scene = envs.default_claw_scenes()[envs.DIAGONAL_SCENE_ID]
        grid = 400
        xs = (np.arange(grid) + 0.5) / grid
        xx, yy = np.meshgrid(xs, xs, indexing="ij")
        pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
        inside = envs.in_region_batch(scene, pts).reshape(grid, grid).astype(float)
        mass = inside / inside.sum()
        marg_x = mass.sum(axis=1)
        marg_y = mass.sum(axis=0)
        product = np.outer(marg_x, marg_y)
        outside_mass = product[inside == 0].sum()
        assert outside_mass >= 0.15

    def test_marginal_product_corner_disjoint_from_regions(self):
        scene = envs.default_claw_scenes()[envs.DIAGONAL_SCENE_ID]
        corner = envs.marginal_product_corner()
        rng = substream(0, "corner")
        pts = rng.uniform(corner.lo, corner.hi, size=(500, 2))
        assert corner.contains(pts).all()
        assert not envs.in_region_batch(scene, pts).any()


class TestMembershipAndSampling:
    def test_disc_center_inside(self):
        disc = envs.Disc((0.5, 0.5), 0.2)
        scene = envs.ClawScene(0, (disc,))
        assert envs.in_region(scene, [0.5, 0.5])

    def test_point_just_past_radius_outside(self):
        disc = envs.Disc((0.5, 0.5), 0.2)
        scene = envs.ClawScene(0, (disc,))
        assert envs.in_region(scene, [0.7, 0.5])  # boundary included
        assert not envs.in_region(scene, [0.7 + 1e-9, 0.5])

    def test_rect_boundary(self):
        rect = envs.Rect((0.2, 0.2), (0.4, 0.4))
        scene = envs.ClawScene(0, (rect,))
        assert envs.in_region(scene, [0.2, 0.4])
        assert not envs.in_region(scene, [0.2, 0.4 + 1e-12])

    def test_demo_draw_frequencies_proportional_to_area(self):
        scene = envs.default_claw_scenes()[4]  # disc + rectangle
        rng = substream(1, "demo")
        draws = np.array([envs.sample_demo(scene, rng) for _ in range(100_000)])
        weights = scene.region_weights()
        for idx, region in enumerate(scene.regions):
            freq = region.contains(draws).mean()
            assert abs(freq - weights[idx]) < 0.02

    def test_demo_draws_always_inside(self):
        for scene in envs.default_claw_scenes():
            rng = substream(2, "demo", scene.scene_id)
            draws = np.array([envs.sample_demo(scene, rng) for _ in range(500)])
            assert envs.in_region_batch(scene, draws).all()


class TestClawDataset:
    def test_paper_scale_generation(self):
        scenes = envs.default_claw_scenes()
        ds = envs.generate_claw_dataset(scenes, 20_000, substream(3, "ds"))
        assert len(ds) == 20_000
        assert ds.observations.shape == (20_000, 7)
        assert ds.actions.shape == (20_000, 2)
        sids = ds.observations.argmax(axis=1)
        from diffbc.metrics import in_distribution_rate

        assert in_distribution_rate(scenes, sids, ds.actions) == 1.0

    def test_round_robin_hook(self):
        scenes = envs.default_claw_scenes()
        ds = envs.generate_claw_dataset(scenes, 7, substream(4, "ds"), round_robin=True)
        assert np.array_equal(ds.observations.argmax(axis=1), np.arange(7))

    def test_scene_frequencies_near_uniform(self):
        scenes = envs.default_claw_scenes()
        ds = envs.generate_claw_dataset(scenes, 70_000, substream(5, "ds"))
        freqs = ds.observations.mean(axis=0)
        assert np.abs(freqs - 1 / 7).max() < 0.015

    def test_history_stacking_pads_with_zeros(self):
        scenes = envs.default_claw_scenes()
        ds = envs.generate_claw_dataset(scenes, 5, substream(6, "ds"), history=3)
        assert ds.observations.shape == (5, 21)
        assert np.array_equal(ds.observations[:, :14], np.zeros((5, 14)))
        assert (ds.observations[:, 14:].sum(axis=1) == 1).all()


class TestNormalization:
    def test_round_trip(self):
        rng = substream(7, "n")
        actions = rng.uniform(-3, 5, (50, 3))
        stats = envs.NormStats(lo=actions.min(axis=0), hi=actions.max(axis=0))
        normed = stats.normalize(actions)
        assert normed.min() >= -1.0 and normed.max() <= 1.0
        np.testing.assert_allclose(stats.denormalize(normed), actions, atol=1e-12)

    def test_constant_dimension(self):
        stats = envs.NormStats(lo=np.array([2.0]), hi=np.array([2.0]))
        assert stats.normalize(np.array([[2.0]]))[0, 0] == 0.0
        assert stats.denormalize(np.array([[0.5]]))[0, 0] == 2.0


class TestDatasetFile:
    def test_round_trip(self, tmp_path):
        scenes = envs.default_claw_scenes()
        ds = envs.generate_claw_dataset(scenes, 100, substream(8, "ds"))
        path = tmp_path / "d.bin"
        ds.save(path)
        loaded = envs.DemoDataset.load(path)
        assert np.array_equal(loaded.observations, ds.observations)
        assert np.array_equal(loaded.actions, ds.actions)
        assert np.array_equal(loaded.norm.lo, ds.norm.lo)

    def test_truncation_detected(self, tmp_path):
        ds = envs.generate_claw_dataset(envs.default_claw_scenes(), 10, substream(9, "ds"))
        path = tmp_path / "d.bin"
        ds.save(path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-8])
        with pytest.raises(CorruptArtifactError):
            envs.DemoDataset.load(path)

    def test_jsonl_export(self, tmp_path):
        ds = envs.generate_claw_dataset(envs.default_claw_scenes(), 5, substream(10, "ds"))
        path = tmp_path / "d.jsonl"
        ds.export_jsonl(path)
        rows = [json.loads(line) for line in path.read_text().splitlines()]
        assert len(rows) == 5
        np.testing.assert_allclose(rows[0]["action"], ds.actions[0])


class TestGridWorld:
    def test_exact_posteriors_at_paper_rate(self):
        table = envs.gridworld_exact_posteriors(envs.GridWorldSpec(0.1))
        assert table["p_obs"][0] == pytest.approx(1 / 3, abs=1e-15)
        assert table["p_obs"][1] == pytest.approx(1 / 3, abs=1e-15)
        assert table["p_obs"][2] == pytest.approx(0.1 / 3, abs=1e-15)
        assert table["p_obs"][3] == pytest.approx(0.9 / 3, abs=1e-15)
        assert table["p_action"]["right"] == pytest.approx(0.1 / 3, abs=1e-15)
        assert table["p_obs1_given_action"]["right"] == 1.0
        assert table["p_obs1_given_action"]["straight"] == pytest.approx(0.9 / 2.9, abs=1e-12)

    def test_posteriors_closed_form_at_half(self):
        table = envs.gridworld_exact_posteriors(envs.GridWorldSpec(0.5))
        assert table["p_obs1_given_action"]["straight"] == pytest.approx(0.5 / 2.5, abs=1e-15)

    def test_posteriors_are_probabilities(self):
        table = envs.gridworld_exact_posteriors(envs.GridWorldSpec(0.3))
        for p in list(table["p_action"].values()) + list(table["p_obs1_given_action"].values()):
            assert 0.0 <= p <= 1.0
        assert sum(table["p_obs"]) == pytest.approx(1.0, abs=1e-12)
        assert sum(table["p_action"].values()) == pytest.approx(1.0, abs=1e-12)

    def test_invalid_rate_rejected(self):
        with pytest.raises(ConfigError):
            envs.GridWorldSpec(0.0)
        with pytest.raises(ConfigError):
            envs.GridWorldSpec(1.0)

    def test_rollouts_have_three_rows(self):
        ds = envs.generate_gridworld_dataset(envs.GridWorldSpec(0.1), 100, substream(11, "g"))
        assert len(ds) == 300
        assert ds.observations.shape == (300, 4)
        assert ds.actions.shape == (300, 3)
        # one-hot rows
        assert (ds.observations.sum(axis=1) == 1).all()
        assert (ds.actions.sum(axis=1) == 1).all()

    def test_right_turn_frequency_matches_rate(self):
        ds = envs.generate_gridworld_dataset(envs.GridWorldSpec(0.1), 10_000, substream(12, "g"))
        at_state1 = ds.observations[:, 1] == 1.0
        right = ds.actions[at_state1, envs.RIGHT] == 1.0
        assert 0.09 <= right.mean() <= 0.11

    def test_near_zero_rate_always_ends_state_three(self):
        # p_right must be strictly positive; a tiny rate with a fixed stream
        # still yields all-straight rollouts
        ds = envs.generate_gridworld_dataset(envs.GridWorldSpec(1e-12), 200, substream(13, "g"))
        assert (ds.observations[:, 2] == 0).all()
        terminal_rows = ds.observations[2::3]
        assert (terminal_rows[:, 3] == 1.0).all()

    def test_decode_action(self):
        assert envs.decode_gridworld_action(np.array([0.1, 0.9, 0.3])) == envs.STRAIGHT
        assert envs.decode_gridworld_action(np.array([0.0, 0.2, 0.8])) == envs.RIGHT
