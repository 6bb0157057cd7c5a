import pytest

from capstyle.config import (Config, disc_config, load_config, model_config,
                             parse_kv, proj_config, stage1_config, stage2_config)


class TestParseKv:
    def test_basic_pairs(self):
        assert parse_kv("a=1\nb = two \n") == {"a": "1", "b": "two"}

    def test_skips_comments_and_blanks(self):
        assert parse_kv("# note\n\nx=3\n") == {"x": "3"}


class TestConfig:
    def test_typed_getters(self):
        c = Config({"i": "3", "f": "0.5", "t": "true", "n": "0"})
        assert c.get_int("i") == 3
        assert c.get_float("f") == 0.5
        assert c.get_bool("t") is True
        assert c.get_bool("n") is False

    def test_override_changes_digest(self):
        c = Config({"a": "1"})
        before = c.digest()
        c.override("a", 2)
        assert c.get("a") == "2"
        assert c.digest() != before

    def test_digest_stable_under_insertion_order(self):
        a = Config({"x": "1", "y": "2"})
        b = Config({"y": "2", "x": "1"})
        assert a.digest() == b.digest()

    def test_missing_key_defaults(self):
        assert Config({}).get("nope") is None
        assert Config({}).get("nope", "d") == "d"


class TestLoadConfig:
    def test_packaged_defaults_load(self):
        cfg = load_config()
        assert cfg.get_int("model.d_model") == 64
        assert cfg.get_float("stage2.lr_m") == 1e-3
        assert cfg.get_int("stage1.epochs") == 20

    def test_file_overlays_defaults(self, tmp_path):
        p = tmp_path / "over.cfg"
        p.write_text("model.d_model=16\n")
        cfg = load_config(str(p))
        assert cfg.get_int("model.d_model") == 16
        assert cfg.get_int("model.d_ff") == 128  # untouched default


class TestBuilders:
    def test_all_builders_produce_valid_configs(self):
        cfg = load_config()
        m = model_config(cfg, vocab_size=50)
        assert m.vocab_size == 50 and m.d_model == 64
        d = disc_config(cfg, vocab_size=50)
        assert d.tau == pytest.approx(0.1)
        p = proj_config(cfg)
        assert p.d_v == 32 and p.n_const == 8
        s1 = stage1_config(cfg)
        assert s1.use_dr and s1.use_nbt and s1.use_style
        s2 = stage2_config(cfg)
        assert s2.multitask and s2.lr_m == pytest.approx(1e-3)

    def test_seed_override_argument(self):
        cfg = load_config()
        assert stage1_config(cfg, seed=7).seed == 7
        assert stage2_config(cfg, seed=9).seed == 9
