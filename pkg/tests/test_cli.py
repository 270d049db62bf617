import json
from pathlib import Path

import numpy as np
import pytest

from caae.cli import main


def write_config(path, **overrides):
    doc = {
        "data": {
            "source": "synthetic",
            "synthetic": {
                "n_users": 4,
                "n_activities": 3,
                "windows_per_cell": 6,
                "seed": 5,
            },
        },
        "variant": {"kind": "c_aae"},
        "aae": {
            "latent_channels": 4,
            "encoder_widths": [64],
            "decoder_widths": [64],
            "head_widths": [16],
            "epochs": 4,
            "lr": 0.02,
        },
        "estimator": {"kind": "logreg", "epochs": 120},
        "eval": {"folds": 3},
        "master_seed": 5,
    }
    doc.update(overrides)
    path.write_text(json.dumps(doc, indent=1))
    return path


@pytest.fixture()
def config_path(tmp_path):
    return write_config(tmp_path / "config.json")


class TestPrepare:
    def test_creates_archive_with_cells(self, tmp_path, config_path, capsys):
        out = tmp_path / "archive"
        assert main(["prepare", "--config", str(config_path), "--out", str(out)]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["n_windows"] == 4 * 3 * 6
        captured = capsys.readouterr().out
        assert "digest:" in captured

    def test_rerun_same_digest(self, tmp_path, config_path):
        a, b = tmp_path / "a", tmp_path / "b"
        main(["prepare", "--config", str(config_path), "--out", str(a)])
        main(["prepare", "--config", str(config_path), "--out", str(b)])
        da = json.loads((a / "manifest.json").read_text())["data_digest"]
        db = json.loads((b / "manifest.json").read_text())["data_digest"]
        assert da == db

    def test_missing_dataset_path_exit_2(self, tmp_path, capsys):
        cfg = write_config(
            tmp_path / "bad.json",
            data={
                "source": "dataset",
                "dataset_path": "/no/such/data_dir",
                "dataset_spec": {
                    "sample_rate_hz": 50.0,
                    "channel_columns": ["a", "b", "c"],
                },
            },
        )
        code = main(["prepare", "--config", str(cfg), "--out", str(tmp_path / "x")])
        assert code == 2
        assert "/no/such/data_dir" in capsys.readouterr().err


class TestConfigErrors:
    def test_malformed_json_exit_1_with_line(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{\n "data": [,]\n}\n')
        assert main(["prepare", "--config", str(bad), "--out", str(tmp_path)]) == 1
        err = capsys.readouterr().err
        assert "bad.json:2" in err

    def test_unknown_key_exit_1(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json")
        doc = json.loads(cfg.read_text())
        doc["eval"]["foldz"] = 10
        cfg.write_text(json.dumps(doc))
        assert main(["prepare", "--config", str(cfg), "--out", str(tmp_path / "x")]) == 1
        assert "foldz" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path, capsys):
        assert main(["prepare", "--config", str(tmp_path / "none.json")]) == 1

    def test_help_lists_subcommands(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--help"])
        assert exc.value.code == 0
        out = capsys.readouterr().out
        for name in ("prepare", "train-aae", "train-classifier", "encode", "recognize",
                     "experiment", "sweep", "report", "serve"):
            assert name in out

    def test_bad_flag_exit_1(self, capsys):
        assert main(["prepare", "--no-such-flag"]) == 1


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """prepare -> train-aae -> train-classifier -> encode, shared by tests."""
    root = tmp_path_factory.mktemp("pipeline")
    cfg = write_config(root / "config.json")
    archive = root / "archive"
    assert main(["prepare", "--config", str(cfg), "--out", str(archive)]) == 0

    run = root / "run"
    doc = json.loads(cfg.read_text())
    doc["train_aae"] = {"archive": str(archive)}
    doc["train_classifier"] = {
        "archive": str(archive),
        "target": "activity",
        "bundle": str(run / "model.aae"),
    }
    doc["encode"] = {"bundle": str(run / "model.aae"), "input": str(archive)}
    cfg.write_text(json.dumps(doc))

    assert main(["train-aae", "--config", str(cfg), "--out", str(run)]) == 0
    assert main(["train-classifier", "--config", str(cfg), "--out", str(run)]) == 0
    assert main(["encode", "--config", str(cfg), "--out", str(run)]) == 0
    return cfg, archive, run


class TestPipelineCommands:
    def test_artifacts_exist(self, pipeline):
        _, _, run = pipeline
        assert (run / "model.aae").exists()
        assert (run / "training_log.csv").exists()
        assert (run / "classifier_activity.json").exists()
        assert (run / "frames.bin").exists()

    def test_encode_frame_sizes(self, pipeline):
        from caae import codec

        _, archive, run = pipeline
        frames = codec.read_frames((run / "frames.bin").read_bytes())
        n_windows = json.loads((archive / "manifest.json").read_text())["n_windows"]
        assert len(frames) == n_windows
        # latent 4 channels x 16 steps x 4 bits = 32 payload bytes per frame
        assert all(len(f.payload) == 32 for f in frames)

    def test_encode_prints_ratio(self, pipeline, capsys, tmp_path):
        cfg, _, run = pipeline
        assert main(["encode", "--config", str(cfg), "--out", str(tmp_path / "enc2")]) == 0
        out = capsys.readouterr().out
        assert "compression ratio (payload): 4" in out

    def test_recognize_round_trip(self, pipeline, tmp_path, capsys):
        _, archive, run = pipeline
        out_csv = tmp_path / "pred.csv"
        code = main([
            "recognize",
            "--frames", str(run / "frames.bin"),
            "--classifier", str(run / "classifier_activity.json"),
            "--out", str(out_csv),
        ])
        assert code == 0
        lines = out_csv.read_text().strip().splitlines()
        n_windows = json.loads((archive / "manifest.json").read_text())["n_windows"]
        assert len(lines) == n_windows + 1
        assert lines[0].startswith("frame_index,predicted,prob_")

    def test_recognize_deterministic(self, pipeline, tmp_path):
        _, _, run = pipeline
        outs = []
        for name in ("p1.csv", "p2.csv"):
            path = tmp_path / name
            main([
                "recognize",
                "--frames", str(run / "frames.bin"),
                "--classifier", str(run / "classifier_activity.json"),
                "--out", str(path),
            ])
            outs.append(path.read_bytes())
        assert outs[0] == outs[1]

    def test_corrupt_bundle_refused(self, pipeline, tmp_path, capsys):
        cfg, archive, _ = pipeline
        bad_bundle = tmp_path / "bad.aae"
        bad_bundle.write_text("{\"format_version\": 99}")
        code = main([
            "encode", "--config", str(cfg),
            "--bundle", str(bad_bundle),
            "--input", str(archive),
            "--out", str(tmp_path / "enc"),
        ])
        assert code == 2
        assert "version" in capsys.readouterr().err


class TestExperimentCommand:
    def test_runs_and_reports(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json", variant={"kind": "adpcm_only"})
        out = tmp_path / "exp"
        assert main(["experiment", "--config", str(cfg), "--out", str(out)]) == 0
        assert (out / "report_baseline.txt").exists()
        assert (out / "report_adpcm_only.txt").exists()
        assert (out / "summary.md").exists()
        stdout = capsys.readouterr().out
        assert "baseline:" in stdout and "adpcm_only:" in stdout
        # criteria failure must not break the exit code
        assert "req1" in stdout

    def test_byte_identical_reports(self, tmp_path):
        from caae.reporting import strip_timing

        cfg = write_config(tmp_path / "c.json", variant={"kind": "adpcm_only"})
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["experiment", "--config", str(cfg), "--out", str(a)]) == 0
        assert main(["experiment", "--config", str(cfg), "--out", str(b)]) == 0
        for name in ("report_baseline.txt", "report_adpcm_only.txt"):
            ta = strip_timing((a / name).read_text())
            tb = strip_timing((b / name).read_text())
            assert ta == tb

    def test_seed_override_changes_results(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", variant={"kind": "baseline"})
        a, b = tmp_path / "a", tmp_path / "b"
        main(["experiment", "--config", str(cfg), "--out", str(a)])
        main(["experiment", "--config", str(cfg), "--out", str(b), "--seed", "99"])
        ra = (a / "report_baseline.txt").read_text()
        rb = (b / "report_baseline.txt").read_text()
        assert ra != rb

    def test_variant_override(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", variant={"kind": "adpcm_only"})
        out = tmp_path / "o"
        assert main([
            "experiment", "--config", str(cfg), "--out", str(out), "--variant", "baseline"
        ]) == 0
        assert (out / "report_baseline.txt").exists()
        assert not (out / "report_adpcm_only.txt").exists()


class TestSweepCommand:
    def test_epsilon_sweep_csv(self, tmp_path):
        cfg = write_config(
            tmp_path / "c.json",
            variant={"kind": "dp", "epsilon": 1.0},
            sweep={"axis": "epsilon", "values": [0.5, 2.0]},
        )
        out = tmp_path / "sweep"
        assert main(["sweep", "--config", str(cfg), "--out", str(out)]) == 0
        lines = (out / "tradeoff.csv").read_text().strip().splitlines()
        assert lines[0].startswith("epsilon,")
        assert len(lines) == 3

    def test_sweep_without_section_exit_1(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json")
        assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "s")]) == 1


class TestReportCommand:
    def test_prints_stored_report(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json", variant={"kind": "baseline"})
        out = tmp_path / "exp"
        main(["experiment", "--config", str(cfg), "--out", str(out)])
        capsys.readouterr()
        assert main(["report", str(out)]) == 0
        printed = capsys.readouterr().out
        assert "baseline:" in printed and "activity F1" in printed

    def test_writes_markdown(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json", variant={"kind": "baseline"})
        out = tmp_path / "exp"
        main(["experiment", "--config", str(cfg), "--out", str(out)])
        md = tmp_path / "summary.md"
        assert main(["report", str(out), "--out", str(md)]) == 0
        assert "Experiment summary" in md.read_text()

    def test_missing_report_exit_2(self, tmp_path):
        assert main(["report", str(tmp_path / "nothing.txt")]) == 2


class TestRemoteRecognize:
    def test_thin_client_against_service(self, pipeline, tmp_path, monkeypatch):
        import httpx
        from fastapi.testclient import TestClient

        from caae.service import create_app

        app = create_app()

        def fake_client(base_url, timeout):
            return TestClient(app, base_url=base_url)

        monkeypatch.setattr(httpx, "Client", fake_client)
        _, _, run = pipeline
        out_csv = tmp_path / "remote.csv"
        code = main([
            "recognize",
            "--frames", str(run / "frames.bin"),
            "--classifier", str(run / "classifier_activity.json"),
            "--out", str(out_csv),
            "--server", "http://service.local",
        ])
        assert code == 0
        local_csv = tmp_path / "local.csv"
        main([
            "recognize",
            "--frames", str(run / "frames.bin"),
            "--classifier", str(run / "classifier_activity.json"),
            "--out", str(local_csv),
        ])
        remote_lines = out_csv.read_text().strip().splitlines()
        local_lines = local_csv.read_text().strip().splitlines()
        assert len(remote_lines) == len(local_lines)
        # same argmax labels through both paths
        remote_labels = [l.split(",")[1] for l in remote_lines[1:]]
        local_labels = [l.split(",")[1] for l in local_lines[1:]]
        assert remote_labels == local_labels
