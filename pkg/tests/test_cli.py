"""End-to-end tests of the command-line surface and its exit-code contract."""

import json

import numpy as np
import pytest

from mlpst import ingestion
from mlpst.cli import main


def run(argv):
    return main(argv)


@pytest.fixture
def synth_data(tmp_path):
    path = tmp_path / "periodic.stgrid"
    assert run([
        "synth", "--kind", "periodic", "--out", str(path),
        "--height", "4", "--width", "4", "--steps", "120",
        "--period", "12", "--seed", "5",
    ]) == 0
    return path


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(
        "# tiny desk-scale configuration\n"
        "patch = 2\n"
        "channels_spatial = 4\n"
        "channels_temporal = 4\n"
        "expansion = 4\n"
        "layers = 1\n"
        "trend = 0\n"
        "period = 2\n"
        "closeness = 4\n"
        "period_interval = 12\n"
        "closeness_interval = 1\n"
        "max_epochs = 12\n"
        "patience = 20\n"
        "batch_size = 16\n"
        "lr = 0.003\n"
        "seed = 1\n"
    )
    return path


class TestSynthAndIngest:
    def test_synth_writes_readable_dataset(self, synth_data):
        dataset = ingestion.read_dataset(synth_data)
        assert dataset.values.shape == (120, 4, 4, 2)

    def test_ingest_five_record_fixture(self, tmp_path, capsys):
        trips = tmp_path / "trips.csv"
        trips.write_text(
            "pickup_datetime,dropoff_datetime,pickup_lat,pickup_lon,dropoff_lat,dropoff_lon\n"
            "0,50,0.25,0.25,0.75,0.75\n"
            "50,120,0.25,0.75,0.25,0.25\n"
            "110,130,0.75,0.25,0.75,0.75\n"
            "120,140,0.25,0.25,0.25,0.75\n"
            "150,260,0.75,0.75,0.25,0.25\n"
        )
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps({
            "lat_min": 0.0, "lat_max": 1.0, "lon_min": 0.0, "lon_max": 1.0,
            "h": 2, "w": 2, "interval_seconds": 100, "t_start": 0, "t_end": 200,
        }))
        out = tmp_path / "trips.stgrid"
        assert run(["ingest", "--trips", str(trips), "--spec", str(spec), "--out", str(out)]) == 0
        err = capsys.readouterr().err
        assert "skipped_out_of_range,0" in err

        dataset = ingestion.read_dataset(out)
        np.testing.assert_array_equal(
            dataset.values[0, :, :, 1], np.array([[1, 1], [0, 0]], dtype=float)
        )
        np.testing.assert_array_equal(
            dataset.values[1, :, :, 0], np.array([[1, 1], [0, 1]], dtype=float)
        )

    def test_empty_trips_csv_exits_2(self, tmp_path):
        trips = tmp_path / "trips.csv"
        trips.write_text(
            "pickup_datetime,dropoff_datetime,pickup_lat,pickup_lon,dropoff_lat,dropoff_lon\n"
        )
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps({
            "lat_min": 0.0, "lat_max": 1.0, "lon_min": 0.0, "lon_max": 1.0,
            "h": 2, "w": 2, "interval_seconds": 100, "t_start": 0, "t_end": 200,
        }))
        assert run(["ingest", "--trips", str(trips), "--spec", str(spec),
                    "--out", str(tmp_path / "o.stgrid")]) == 2

    def test_bad_spec_json_exits_3_naming_field(self, tmp_path, capsys):
        trips = tmp_path / "trips.csv"
        trips.write_text(
            "pickup_datetime,dropoff_datetime,pickup_lat,pickup_lon,dropoff_lat,dropoff_lon\n"
            "0,50,0.25,0.25,0.75,0.75\n"
        )
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps({"lat_min": 0.0}))
        assert run(["ingest", "--trips", str(trips), "--spec", str(spec),
                    "--out", str(tmp_path / "o.stgrid")]) == 3
        assert "lat_max" in capsys.readouterr().err


class TestTrain:
    def test_train_writes_checkpoint_and_logs(self, synth_data, tiny_config, tmp_path, capsys):
        out = tmp_path / "model.ckpt"
        log = tmp_path / "epochs.log"
        assert run(["train", "--data", str(synth_data), "--config", str(tiny_config),
                    "--out", str(out), "--log", str(log)]) == 0
        assert out.exists() and (tmp_path / "model.ckpt.best").exists()
        stdout = capsys.readouterr().out
        assert "best_val_mae," in stdout
        lines = log.read_text().splitlines()
        assert lines and all(line.startswith("epoch,") for line in lines)

    def test_window_constraint_violation_exits_3(self, synth_data, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("trend=2\nperiod=2\ncloseness=8\nwindow=10\n")
        assert run(["train", "--data", str(synth_data), "--config", str(cfg),
                    "--out", str(tmp_path / "m.ckpt")]) == 3
        assert "trend+period+closeness" in capsys.readouterr().err

    def test_same_seed_byte_identical_logs(self, synth_data, tiny_config, tmp_path):
        log1, log2 = tmp_path / "a.log", tmp_path / "b.log"
        for log in (log1, log2):
            assert run(["train", "--data", str(synth_data), "--config", str(tiny_config),
                        "--out", str(tmp_path / "m.ckpt"), "--log", str(log)]) == 0
        assert log1.read_bytes() == log2.read_bytes()

    def test_unknown_config_key_exits_3(self, synth_data, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("learning_rate=0.1\n")
        assert run(["train", "--data", str(synth_data), "--config", str(cfg),
                    "--out", str(tmp_path / "m.ckpt")]) == 3

    def test_missing_data_file_exits_2(self, tiny_config, tmp_path):
        assert run(["train", "--data", str(tmp_path / "nope.stgrid"),
                    "--config", str(tiny_config), "--out", str(tmp_path / "m.ckpt")]) == 2

    def test_constant_dataset_trains_to_tiny_loss(self, tmp_path, capsys):
        data = tmp_path / "const.stgrid"
        assert run(["synth", "--kind", "constant", "--out", str(data),
                    "--height", "4", "--width", "4", "--steps", "80"]) == 0
        cfg = tmp_path / "const.cfg"
        cfg.write_text(
            "patch = 2\nchannels_spatial = 4\nchannels_temporal = 4\n"
            "expansion = 4\nlayers = 1\ntrend = 0\nperiod = 2\ncloseness = 4\n"
            "period_interval = 24\ncloseness_interval = 1\n"
            "max_epochs = 50\npatience = 50\nbatch_size = 16\nseed = 0\n"
        )
        log = tmp_path / "epochs.log"
        assert run(["train", "--data", str(data), "--config", str(cfg),
                    "--out", str(tmp_path / "m.ckpt"), "--log", str(log)]) == 0
        losses = [float(line.split(",")[3]) for line in log.read_text().splitlines()]
        assert min(losses) < 1e-6


@pytest.fixture
def trained(synth_data, tiny_config, tmp_path):
    out = tmp_path / "model.ckpt"
    assert run(["train", "--data", str(synth_data), "--config", str(tiny_config),
                "--out", str(out)]) == 0
    return out


class TestEvaluatePredictInspect:
    def test_evaluate_prints_csv_and_table(self, synth_data, trained, tmp_path, capsys):
        report = tmp_path / "report.csv"
        assert run(["evaluate", "--data", str(synth_data), "--checkpoint", str(trained),
                    "--report", str(report)]) == 0
        out = capsys.readouterr().out
        assert out.startswith("model,dataset,mae,rmse,r2,params,train_s,infer_ms_per_batch")
        assert "channel_0" in out
        body = report.read_text().splitlines()
        assert len(body) == 2

    def test_evaluate_baseline_needs_no_checkpoint(self, synth_data, capsys):
        assert run(["evaluate", "--data", str(synth_data), "--baseline", "persistence"]) == 0
        assert "persistence," in capsys.readouterr().out

    def test_evaluate_on_train_split_has_positive_r2(self, synth_data, trained, capsys):
        assert run(["evaluate", "--data", str(synth_data), "--checkpoint", str(trained),
                    "--split", "train"]) == 0
        out = capsys.readouterr().out
        r2_text = out.splitlines()[1].split(",")[4]
        assert float(r2_text) > 0.0

    def test_evaluate_model_shape_mismatch_exits_3(self, trained, tmp_path):
        other = tmp_path / "other.stgrid"
        assert run(["synth", "--kind", "periodic", "--out", str(other),
                    "--height", "6", "--width", "6", "--steps", "120",
                    "--period", "12", "--seed", "1"]) == 0
        assert run(["evaluate", "--data", str(other), "--checkpoint", str(trained)]) == 3

    def test_predict_writes_single_map(self, synth_data, trained, tmp_path):
        out = tmp_path / "pred.stgrid"
        assert run(["predict", "--data", str(synth_data), "--checkpoint", str(trained),
                    "--out", str(out)]) == 0
        pred = ingestion.read_dataset(out)
        assert pred.values.shape == (1, 4, 4, 2)

    def test_predict_at_specific_anchor(self, synth_data, trained, tmp_path):
        out = tmp_path / "pred.stgrid"
        assert run(["predict", "--data", str(synth_data), "--checkpoint", str(trained),
                    "--at", "60", "--out", str(out)]) == 0
        assert ingestion.read_dataset(out).values.shape == (1, 4, 4, 2)

    def test_inspect_checkpoint_matches_config(self, trained, tiny_config, tmp_path, capsys):
        assert run(["inspect", "--checkpoint", str(trained)]) == 0
        from_ckpt = capsys.readouterr().out
        assert from_ckpt.strip().splitlines()[-1].startswith("total,")

    def test_inspect_sharing_strictly_smaller(self, tmp_path, capsys):
        base = (
            "patch = 2\nchannels_spatial = 4\nchannels_temporal = 4\n"
            "expansion = 4\nlayers = 2\ntrend = 0\nperiod = 2\ncloseness = 4\n"
            "period_interval = 12\ncloseness_interval = 1\nh = 4\nw = 4\nd = 2\n"
        )
        shared_cfg = tmp_path / "shared.cfg"
        shared_cfg.write_text(base + "share_layers = true\n")
        unshared_cfg = tmp_path / "unshared.cfg"
        unshared_cfg.write_text(base + "share_layers = false\n")

        def total(cfg):
            assert run(["inspect", "--config", str(cfg)]) == 0
            out = capsys.readouterr().out
            return int(out.strip().splitlines()[-1].split(",")[1])

        assert total(shared_cfg) < total(unshared_cfg)

    def test_inspect_zero_layers_only_fc(self, tmp_path, capsys):
        cfg = tmp_path / "zero.cfg"
        cfg.write_text(
            "patch = 2\nchannels_spatial = 4\nlayers = 0\ntrend = 0\nperiod = 0\n"
            "closeness = 4\ncloseness_interval = 1\nh = 4\nw = 4\nd = 2\n"
        )
        assert run(["inspect", "--config", str(cfg)]) == 0
        out = capsys.readouterr().out
        # per-patch FC: (2*2*2) x 4 weights + 4 biases = 36; no spatial_mixer line
        assert "per_patch_fc,36" in out
        assert "spatial_mixer" not in out

    def test_usage_error_exits_3(self):
        assert run(["evaluate"]) == 3


class TestThreadCap:
    def test_mlpst_threads_env_smoke(self, tmp_path):
        # the cap is applied at import time, so exercise a fresh process
        import subprocess
        import sys

        out = tmp_path / "d.stgrid"
        proc = subprocess.run(
            [sys.executable, "-m", "mlpst.cli", "synth", "--kind", "constant",
             "--out", str(out), "--height", "4", "--width", "4", "--steps", "10"],
            env={"PATH": "/usr/bin:/bin", "MLPST_THREADS": "1"},
            capture_output=True,
        )
        assert proc.returncode == 0, proc.stderr
        assert out.exists()
