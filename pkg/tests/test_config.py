import pytest

from hinote.config import ConfigError, bundled_config, bundled_config_text, load_config, parse_config


class TestBundled:
    def test_desk_values(self):
        cfg = bundled_config()
        assert cfg.grf.n == 64 and cfg.grf.k_max == 12
        assert cfg.model.hierarchy.levels == 2 and cfg.model.hierarchy.width == 32
        assert cfg.model.encoder.channels == 64
        t = cfg.train
        assert (t.crop, t.batch, t.steps, t.lr, t.weight_decay) == (16, 8, 2000, 1e-3, 1e-5)
        assert (t.scale_lo, t.scale_hi, t.loss) == (1.0, 2.0, "l1")
        assert cfg.eval.scales == [3.0]
        assert cfg.splits == {"train": 64, "valid": 8, "test": 8}

    def test_file_round_trip(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text(bundled_config_text())
        assert load_config(path) == bundled_config()


class TestParse:
    def test_empty_gives_defaults(self):
        cfg = parse_config("")
        assert cfg.train.loss == "l1" and cfg.model.residual is False

    def test_loss_section_maps_to_train(self):
        cfg = parse_config('[loss]\nmode = "two-stage"\nsplit_step = 10\nbeta = 0.3\n')
        assert (cfg.train.loss, cfg.train.split_step, cfg.train.beta) == ("two-stage", 10, 0.3)

    def test_channels_follow_encoder(self):
        assert parse_config("[encoder]\nin_channels = 3\n").model.channels == 3

    @pytest.mark.parametrize("text, match", [
        ("[bogus]\n", "unknown section"),
        ("[train]\nlearning_rate = 1\n", "unknown key 'learning_rate'"),
        ("[loss]\nweights = 1\n", r"unknown key 'weights' in \[loss\]"),
        ("[decoder]\nwidth = 3\n", r"\[decoder\]"),
        ("[splits]\nholdout = 3\n", r"\[splits\]"),
        ("[train]\nscale_lo = 0.5\n", "scale range"),
        ("[train]\ncrop = 40\nscale_hi = 2.0\n", "exceeds HR extent|crop"),
        ('[loss]\nmode = "focal-ish"\n', "unknown loss mode"),
        ("[grf]\nk_max = 40\n", "Nyquist"),
        ("[hierarchy]\nwidth = 30\nheads = 4\n", "divisible"),
        ("[train\n", "invalid config"),
    ])
    def test_errors(self, text, match):
        with pytest.raises(ConfigError, match=match):
            parse_config(text)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "none.toml")
