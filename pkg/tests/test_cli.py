import json
import subprocess
import sys

import pytest

from latentsr import config as C
from latentsr.errors import InvalidParameterError


class TestConfig:
    def test_empty_document_is_all_defaults(self):
        cfg = C.parse_config({})
        assert cfg == C.RunConfig()
        assert cfg.rls.lambda_w == 5e-5
        assert cfg.rls.lambda_c == 0.01
        assert cfg.rls.iterations == 200
        assert cfg.rls.learning_rate == 0.5
        assert cfg.flow.n_blocks == 5

    def test_round_trip(self, tmp_path):
        cfg = C.RunConfig(run_seed=9)
        cfg.generator.epochs = 3
        cfg.assay.n_per_condition = 123
        C.save_config(cfg, tmp_path / "c.json")
        again = C.load_config(tmp_path / "c.json")
        assert again == cfg

    def test_unknown_top_level_key_rejected(self):
        with pytest.raises(InvalidParameterError):
            C.parse_config({"run_sed": 1})

    def test_unknown_section_key_rejected(self):
        with pytest.raises(InvalidParameterError):
            C.parse_config({"rls": {"lambda_w": 1e-5, "lambda_q": 2.0}})

    def test_section_must_be_object(self):
        with pytest.raises(InvalidParameterError):
            C.parse_config({"rls": 5})


def _run_cli(args, cwd):
    return subprocess.run([sys.executable, "-m", "latentsr.cli", *args],
                          capture_output=True, text=True, cwd=cwd)


class TestDependencyErrors:
    def test_eval_without_checkpoints_names_producer(self, tmp_path):
        proc = _run_cli(["eval", "--out", str(tmp_path / "ws")], cwd=tmp_path)
        assert proc.returncode == 3
        assert "train-gan" in proc.stderr

    def test_train_flow_without_generator(self, tmp_path):
        proc = _run_cli(["train-flow", "--out", str(tmp_path / "ws")],
                        cwd=tmp_path)
        assert proc.returncode == 3
        assert "train-gan" in proc.stderr

    def test_train_gan_without_dataset(self, tmp_path):
        proc = _run_cli(["train-gan", "--out", str(tmp_path / "ws")],
                        cwd=tmp_path)
        assert proc.returncode == 3
        assert "synth" in proc.stderr

    def test_failure_writes_structured_result(self, tmp_path):
        ws = tmp_path / "ws"
        proc = _run_cli(["eval", "--out", str(ws)], cwd=tmp_path)
        assert proc.returncode != 0
        run_dirs = [p for p in ws.iterdir() if p.name.startswith("eval-")]
        assert len(run_dirs) == 1
        payload = json.loads((run_dirs[0] / "result.json").read_text())
        assert payload["failed"] is True
        assert payload["producing_command"] == "train-gan"

    def test_invalid_config_rejected(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"nonsense": 1}))
        proc = _run_cli(["synth", "--config", str(bad),
                         "--out", str(tmp_path / "ws")], cwd=tmp_path)
        assert proc.returncode == 2
        assert "nonsense" in proc.stderr

    def test_run_dir_contains_config_echo(self, tmp_path):
        ws = tmp_path / "ws"
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps(
            {"run_seed": 3,
             "data": {"train_per_group": 2, "aux_per_group": 2,
                      "test_per_group": 2}}))
        proc = _run_cli(["synth", "--config", str(cfg), "--out", str(ws)],
                        cwd=tmp_path)
        assert proc.returncode == 0, proc.stderr
        run_dir = next(p for p in ws.iterdir() if p.name.startswith("synth-"))
        echoed = json.loads((run_dir / "config.json").read_text())
        assert echoed["run_seed"] == 3
        assert echoed["data"]["train_per_group"] == 2
        assert (run_dir / "log.txt").exists()
        assert (run_dir / "result.json").exists()
