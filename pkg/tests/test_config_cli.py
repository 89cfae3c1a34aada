import json
import os
import subprocess
import sys

import numpy as np
import pytest

from crosstouch.config import RunConfig

TINY = {
    "seed": 3,
    "image_size": 24,
    "sensors": {"src": "gelslim-desk", "dst": "bubble-like"},
    "dataset": {
        "indenter_count": 2,
        "samples_per_indenter": 2,
        "extent_x_mm": 4.0,
        "extent_y_mm": 4.0,
        "max_tilt_deg": 10.0,
    },
}


def _run(*args, check=True):
    proc = subprocess.run(
        [sys.executable, "-m", "crosstouch.cli", *args], capture_output=True, text=True
    )
    if check and proc.returncode != 0:
        raise AssertionError(f"{args} failed rc={proc.returncode}\n{proc.stderr}")
    return proc


@pytest.fixture()
def tiny_config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(TINY))
    return str(path)


class TestConfig:
    def test_round_trip(self):
        cfg = RunConfig()
        assert RunConfig.from_json(cfg.to_json()) == cfg

    def test_partial_document_fills_defaults(self):
        cfg = RunConfig.from_json(json.dumps(TINY))
        assert cfg.seed == 3
        assert cfg.dataset.indenter_count == 2
        assert cfg.diffusion.sample_steps == 200  # untouched default
        assert cfg.diffusion.guidance_scale == 2.54

    def test_unknown_keys_rejected(self):
        bad = dict(TINY)
        bad["typo_field"] = 1
        with pytest.raises(ValueError, match="typo_field"):
            RunConfig.from_json(json.dumps(bad))
        nested = json.loads(json.dumps(TINY))
        nested["dataset"]["oops"] = 2
        with pytest.raises(ValueError, match="dataset"):
            RunConfig.from_json(json.dumps(nested))

    def test_paper_protocol_defaults(self):
        cfg = RunConfig()
        assert cfg.dataset.indenter_count == 12
        assert cfg.dataset.samples_per_indenter == 60
        assert cfg.dataset.indenter_count * cfg.dataset.samples_per_indenter == 720
        assert cfg.dataset.extent_x_mm == 10.0
        assert cfg.dataset.max_tilt_deg == 45.0


class TestCli:
    def test_gen_data_counts_and_determinism(self, tmp_path, tiny_config):
        out1, out2 = tmp_path / "d1", tmp_path / "d2"
        proc = _run("gen-data", "--config", tiny_config, "--out", str(out1))
        assert "4 paired samples" in proc.stdout
        _run("gen-data", "--config", tiny_config, "--out", str(out2))
        assert (out1 / "blobs.bin").read_bytes() == (out2 / "blobs.bin").read_bytes()
        assert (out1 / "manifest.jsonl").read_text() == (out2 / "manifest.jsonl").read_text()

    def test_gen_data_single_pair_override(self, tmp_path, tiny_config):
        out = tmp_path / "one"
        proc = _run("gen-data", "--config", tiny_config, "--out", str(out),
                    "--indenters", "1", "--samples", "1")
        assert "1 paired samples" in proc.stdout

    def test_verify_subcommand(self, tmp_path, tiny_config):
        out = tmp_path / "ds"
        _run("gen-data", "--config", tiny_config, "--out", str(out))
        proc = _run("verify", "--data", str(out))
        assert "container OK" in proc.stdout

    def test_missing_dataset_exits_2(self, tmp_path, tiny_config):
        proc = _run("verify", "--data", str(tmp_path / "missing"), check=False)
        assert proc.returncode == 2

    def test_export_pgm_round_trip(self, tmp_path, tiny_config):
        from crosstouch.imageio import read_pgm

        out = tmp_path / "ds"
        _run("gen-data", "--config", tiny_config, "--out", str(out))
        manifest = [json.loads(l) for l in (out / "manifest.jsonl").read_text().splitlines()]
        sample_id = manifest[0]["id"]
        exp = tmp_path / "exp"
        _run("export", "--data", str(out), "--sample", sample_id,
             "--sensor", "bubble-like", "--format", "pgm", "--out", str(exp))
        files = list(exp.glob("*.pgm"))
        assert len(files) == 1
        depth, scale = read_pgm(files[0])
        from crosstouch import container

        reader = container.DatasetReader(str(out))
        rec = [r for r in reader.records if r["id"] == sample_id and r["sensor"] == "bubble-like"][0]
        orig = reader.array(rec, "depth").astype(np.float64)
        reader.close()
        assert np.abs(depth - orig).max() <= max(orig.max(), 1e-9) / 65535 + 1e-9

    def test_export_ppm_on_single_channel_errors(self, tmp_path, tiny_config):
        out = tmp_path / "ds"
        _run("gen-data", "--config", tiny_config, "--out", str(out))
        manifest = [json.loads(l) for l in (out / "manifest.jsonl").read_text().splitlines()]
        proc = _run("export", "--data", str(out), "--sample", manifest[0]["id"],
                    "--sensor", "bubble-like", "--format", "ppm", "--out", str(tmp_path / "e"),
                    check=False)
        assert proc.returncode == 2
        proc = _run("export", "--data", str(out), "--sample", manifest[0]["id"],
                    "--sensor", "gelslim-desk", "--format", "ppm", "--out", str(tmp_path / "e2"))
        assert proc.returncode == 0

    def test_unknown_sample_exits_2(self, tmp_path, tiny_config):
        out = tmp_path / "ds"
        _run("gen-data", "--config", tiny_config, "--out", str(out))
        proc = _run("export", "--data", str(out), "--sample", "nope",
                    "--format", "pgm", "--out", str(tmp_path / "e"), check=False)
        assert proc.returncode == 2

    def test_logs_go_to_stderr_not_stdout(self, tmp_path, tiny_config):
        out = tmp_path / "ds"
        proc = _run("gen-data", "--config", tiny_config, "--out", str(out))
        assert "INFO" not in proc.stdout
        assert "wrote" in proc.stderr
