import hashlib
import json
import subprocess
import sys
from pathlib import Path

import pytest
import torch

from glyphdiff import modelio
from glyphdiff.cli import main
from glyphdiff.consistency import CharMaskAdapter, ConsistencyDecoder, TimeGrid
from glyphdiff.denoiser import LatentDenoiser
from glyphdiff.enhance import UpscaleEnhancer
from glyphdiff.schedule import NoiseSchedule
from glyphdiff.vae import GlyphVae


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Dataset + random-init checkpoints + config file for CLI runs."""
    root = tmp_path_factory.mktemp("cliws")
    assert main(["dataset-gen", "--out", str(root / "data"), "--count", "6", "--seed", "3"]) == 0
    ckpt = root / "ckpt"
    ckpt.mkdir()
    torch.manual_seed(0)
    modelio.save_vae(ckpt / "vae.ctxt", GlyphVae())
    modelio.save_denoiser(ckpt / "denoiser.ctxt", LatentDenoiser(), NoiseSchedule.linear(T=8))
    modelio.save_enhancer(ckpt / "enhancer.ctxt", UpscaleEnhancer())
    modelio.save_cm_backbone(ckpt / "cm_backbone.ctxt", ConsistencyDecoder(), TimeGrid.karras())
    modelio.save_cm_adapter(ckpt / "cm_adapter.ctxt", CharMaskAdapter())
    config = {
        "vae_path": "ckpt/vae.ctxt",
        "denoiser_path": "ckpt/denoiser.ctxt",
        "enhancer_path": "ckpt/enhancer.ctxt",
        "cm_backbone_path": "ckpt/cm_backbone.ctxt",
        "cm_adapter_path": "ckpt/cm_adapter.ctxt",
        "sessions_dir": "sessions",
    }
    (root / "config.json").write_text(json.dumps(config))
    return root


class TestDatasetGen:
    def test_manifest_and_runinfo(self, workspace):
        manifest = workspace / "data" / "manifest.jsonl"
        assert manifest.exists()
        runinfo = json.loads((manifest.parent / "manifest.jsonl.runinfo.json").read_text())
        assert runinfo["command"] == "dataset-gen"
        assert runinfo["args"]["seed"] == 3


class TestTraining:
    def test_train_vae_writes_checkpoint_and_record(self, workspace, tmp_path):
        out = tmp_path / "vae.ctxt"
        rc = main(
            [
                "train-vae",
                "--dataset",
                str(workspace / "data"),
                "--out",
                str(out),
                "--steps",
                "2",
                "--seed",
                "0",
            ]
        )
        assert rc == 0
        assert out.exists()
        record = json.loads(Path(str(out) + ".runinfo.json").read_text())
        assert record["checkpoint_hash"] == modelio.checkpoint_hash(out)

    def test_missing_checkpoint_names_subcommand(self, workspace, tmp_path, capsys):
        bad = {
            "vae_path": "nope/vae.ctxt",
            "denoiser_path": "nope/denoiser.ctxt",
        }
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps(bad))
        rc = main(
            [
                "generate",
                "--config",
                str(cfg),
                "--prompt",
                "'HI'",
                "--out",
                str(tmp_path / "x.png"),
            ]
        )
        assert rc == 2
        assert "train-vae" in capsys.readouterr().err


class TestGenerate:
    def test_cross_process_determinism(self, workspace, tmp_path):
        """Two separate OS processes must produce identical bytes."""
        outs = []
        for name in ("a.png", "b.png"):
            out = tmp_path / name
            cmd = [
                sys.executable,
                "-m",
                "glyphdiff.cli",
                "generate",
                "--config",
                str(workspace / "config.json"),
                "--prompt",
                "A sign that says 'HI'",
                "--seed",
                "11",
                "--out",
                str(out),
                "--sessions-dir",
                str(tmp_path / f"sess_{name}"),
            ]
            proc = subprocess.run(cmd, capture_output=True, text=True)
            assert proc.returncode == 0, proc.stderr
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]

    def test_runinfo_records_hashes(self, workspace, tmp_path):
        out = tmp_path / "img.png"
        rc = main(
            [
                "generate",
                "--config",
                str(workspace / "config.json"),
                "--prompt",
                "'OK'",
                "--seed",
                "2",
                "--out",
                str(out),
                "--sessions-dir",
                str(tmp_path / "sessions"),
            ]
        )
        assert rc == 0
        record = json.loads(Path(str(out) + ".runinfo.json").read_text())
        assert "vae" in record["checkpoint_hashes"]
        assert record["snapshot"]["seed"] == 2


class TestEvalAndReport:
    def test_identical_predictions_perfect_row(self, workspace, tmp_path):
        out = tmp_path / "row.json"
        rc = main(
            [
                "eval",
                "--manifest",
                str(workspace / "data"),
                "--pred-dir",
                str(workspace / "data"),
                "--out",
                str(out),
                "--row-name",
                "identity",
            ]
        )
        assert rc == 0
        row = json.loads(out.read_text())["metrics"]
        assert row["mse"] == 0.0
        assert row["f1"] == 1.0

    def test_report_reproduces_reference_rows(self, tmp_path):
        fixture = Path(__file__).parent / "fixtures" / "published_rows.json"
        rows_doc = json.loads(fixture.read_text())["reconstruction"]
        rows_path = tmp_path / "rows.json"
        rows_path.write_text(json.dumps(rows_doc))
        out = tmp_path / "report.txt"
        rc = main(
            [
                "report",
                "--rows",
                str(rows_path),
                "--out",
                str(out),
                "--json-out",
                str(tmp_path / "report.json"),
            ]
        )
        assert rc == 0
        text = out.read_text()
        for token in ("0.019", "21.33", "0.712"):
            assert token in text

    def test_eval_reconstruction_route(self, workspace, tmp_path):
        out = tmp_path / "row.json"
        rc = main(
            [
                "eval",
                "--manifest",
                str(workspace / "data"),
                "--config",
                str(workspace / "config.json"),
                "--decoder",
                "vanilla",
                "--out",
                str(out),
            ]
        )
        assert rc == 0
        row = json.loads(out.read_text())["metrics"]
        assert row["n"] == 6
        assert 0 <= row["f1"] <= 1
