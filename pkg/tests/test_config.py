import json

import pytest

from diffbc.config import (config_hash, parse_config, serialize_config)
from diffbc.errors import ConfigError


def write(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


class TestDefaults:
    def test_empty_file_plus_claw_gives_paper_defaults(self, tmp_path):
        cfg = parse_config(write(tmp_path, ""), {"environment": "claw"})
        assert cfg.schedule.steps == 50
        assert cfg.train.epochs == 100
        assert cfg.train.batch_size == 32
        assert cfg.heads.kmeans_clusters == 10
        assert cfg.heads.discretised_bins == 20
        assert cfg.data.n == 20000
        assert cfg.sampler.kde_samples == 100
        assert cfg.sampler.kde_width == 0.4
        assert cfg.guidance.dropout == 0.1
        assert cfg.train.learning_rate == 1e-4
        assert cfg.seed == 0

    def test_gridworld_defaults(self):
        cfg = parse_config(None, {"environment": "gridworld"})
        assert cfg.data.n == 10000

    def test_extended_scheme_gets_eight_extra_steps(self):
        cfg = parse_config(None, {"environment": "claw", "method": "diffusion_x"})
        assert cfg.sampler.extra_steps == 8

    def test_environment_required(self):
        with pytest.raises(ConfigError, match="environment"):
            parse_config(None, {})


class TestFailClosed:
    def test_unknown_key_rejected(self, tmp_path):
        path = write(tmp_path, "environment=claw\ntrain.epoch=5\n")
        with pytest.raises(ConfigError, match="train.epoch"):
            parse_config(path)

    def test_type_mismatch_names_key(self):
        with pytest.raises(ConfigError, match="train.epochs"):
            parse_config(None, {"environment": "claw", "train.epochs": "ten"})

    def test_baseline_rejects_guidance_weight(self):
        with pytest.raises(ConfigError, match="guidance.weight"):
            parse_config(None, {"environment": "claw", "method": "mse",
                                "guidance.weight": "1.0"})

    def test_baseline_rejects_schedule_keys(self):
        with pytest.raises(ConfigError, match="schedule.steps"):
            parse_config(None, {"environment": "claw", "method": "kmeans",
                                "schedule.steps": "10"})

    def test_diffusion_rejects_cluster_count(self):
        with pytest.raises(ConfigError, match="kmeans.clusters"):
            parse_config(None, {"environment": "claw", "method": "diffusion_bc",
                                "kmeans.clusters": "4"})

    def test_plain_scheme_rejects_extra_steps(self):
        with pytest.raises(ConfigError, match="extra_steps"):
            parse_config(None, {"environment": "claw", "method": "diffusion_bc",
                                "sampler.extra_steps": "4"})

    def test_baseline_rejects_split_encoder_architecture(self):
        with pytest.raises(ConfigError, match="architecture"):
            parse_config(None, {"environment": "claw", "method": "mse",
                                "architecture": "mlp_sieve"})

    def test_duplicate_key_in_file_rejected(self, tmp_path):
        path = write(tmp_path, "environment=claw\nseed=1\nseed=2\n")
        with pytest.raises(ConfigError, match="duplicate"):
            parse_config(path)

    def test_bad_schedule_endpoints(self):
        with pytest.raises(ConfigError, match="beta"):
            parse_config(None, {"environment": "claw", "schedule.beta_min": "0.5",
                                "schedule.beta_max": "0.1"})


class TestFormats:
    def test_json_object_accepted(self, tmp_path):
        path = write(tmp_path, json.dumps({"environment": "claw", "seed": 7,
                                           "train.epochs": 3}), "run.json")
        cfg = parse_config(path)
        assert cfg.seed == 7 and cfg.train.epochs == 3

    def test_key_value_comments_and_blanks(self, tmp_path):
        path = write(tmp_path, "# a comment\n\nenvironment=gridworld\nseed = 9\n")
        cfg = parse_config(path)
        assert cfg.environment == "gridworld" and cfg.seed == 9

    def test_invalid_json_rejected(self, tmp_path):
        path = write(tmp_path, "{not json", "run.json")
        with pytest.raises(ConfigError, match="JSON"):
            parse_config(path)

    def test_overrides_win_over_file(self, tmp_path):
        path = write(tmp_path, "environment=claw\nseed=1\n")
        cfg = parse_config(path, {"seed": "2"})
        assert cfg.seed == 2


class TestRoundTrip:
    @pytest.mark.parametrize("method", ["diffusion_bc", "diffusion_x", "diffusion_kde",
                                        "mse", "discretised", "kmeans", "kmeans_residual"])
    def test_serialize_parse_identity(self, tmp_path, method):
        cfg = parse_config(None, {"environment": "claw", "method": method,
                                  "seed": "123", "train.learning_rate": "0.00037"})
        text = serialize_config(cfg)
        path = write(tmp_path, text)
        assert parse_config(path) == cfg
        assert config_hash(parse_config(path)) == config_hash(cfg)

    def test_hash_changes_with_seed(self):
        a = parse_config(None, {"environment": "claw", "seed": "1"})
        b = parse_config(None, {"environment": "claw", "seed": "2"})
        assert config_hash(a) != config_hash(b)
