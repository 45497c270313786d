import json

import pytest

from mgrdenoise.manifest import (ConfigError, resolve_run_dir, train_config_from_json,
                                 write_manifest)


class TestRunDir:
    def test_creates_fresh_directory(self, tmp_path):
        d = resolve_run_dir(tmp_path / "run")
        assert d.is_dir()

    def test_existing_directory_fails_by_default(self, tmp_path):
        (tmp_path / "run").mkdir()
        with pytest.raises(FileExistsError, match="--suffix"):
            resolve_run_dir(tmp_path / "run")

    def test_suffix_mode_numbers_siblings(self, tmp_path):
        (tmp_path / "run").mkdir()
        a = resolve_run_dir(tmp_path / "run", "suffix")
        b = resolve_run_dir(tmp_path / "run", "suffix")
        assert a.name == "run-1" and b.name == "run-2"


class TestManifest:
    def test_manifest_contains_hashes_and_outputs(self, tmp_path):
        src = tmp_path / "in.txt"
        src.write_text("hello")
        run = resolve_run_dir(tmp_path / "run")
        p = write_manifest(run, "test", {"k": 1}, 7, [src], [run / "out.bin"],
                           metrics={"psnr": 30.0})
        data = json.loads(p.read_text())
        assert data["seed"] == 7
        assert data["command"] == "test"
        assert list(data["inputs"].values())[0] == (
            "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824")
        assert data["metrics"]["psnr"] == 30.0


class TestStrictConfig:
    def good(self):
        return {
            "scheme": "s2s_single", "steps": 10, "lr": 1e-4, "batch": 1,
            "crop": 0, "seed": 3,
            "mask_scheme": {"kind": "bernoulli_s2s", "rate": 0.7},
            "net": {"in_channels": 1, "depth": 2, "enc_channels": 8,
                    "dec_channels": 16, "conv_kind": "mgr",
                    "decoder_dropout": 0.7},
            "eval_passes": 4,
        }

    def test_valid_config_parses(self):
        cfg = train_config_from_json(json.dumps(self.good()))
        assert cfg.steps == 10
        assert cfg.net.conv_kind == "mgr"
        assert cfg.mask_scheme.rate == 0.7

    def test_unknown_top_level_key_rejected(self):
        bad = self.good()
        bad["learning_rate"] = 1e-4
        with pytest.raises(ConfigError, match="unknown keys.*learning_rate"):
            train_config_from_json(json.dumps(bad))

    def test_unknown_nested_key_rejected(self):
        bad = self.good()
        bad["net"]["width"] = 9
        with pytest.raises(ConfigError, match="config.net"):
            train_config_from_json(json.dumps(bad))

    def test_semantic_validation_applied(self):
        bad = self.good()
        bad["steps"] = -1
        with pytest.raises(ValueError, match="steps"):
            train_config_from_json(json.dumps(bad))
