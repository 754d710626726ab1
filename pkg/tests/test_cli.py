"""End-to-end command-line workflows on a micro configuration."""

import csv
import json

import numpy as np
import pytest

from sacqdet.cli import cli_main

MICRO_MODEL = {"d": 16, "q": 4, "m": 2, "encoder_layers": 1,
               "decoder_layers": 2, "heads": 2, "roi_size": 3,
               "amp_depth": 1}


@pytest.fixture()
def config_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({
        "model": MICRO_MODEL,
        "train": {"steps": 3, "batch": 2, "log_every": 1},
    }))
    return str(path)


@pytest.fixture()
def dataset_dir(tmp_path):
    out = tmp_path / "ds"
    code = cli_main(["gen-data", "--out", str(out), "--n", "4",
                     "--image-size", "32", "--m", "2", "--seed", "0"])
    assert code == 0
    return out


class TestGenData:
    def test_writes_both_splits(self, dataset_dir):
        assert (dataset_dir / "train" / "targets.jsonl").exists()
        assert (dataset_dir / "val" / "targets.jsonl").exists()
        assert len(list((dataset_dir / "train").glob("*.sqt"))) == 4


class TestTrainEval:
    def test_train_then_eval(self, tmp_path, dataset_dir, config_file):
        run = tmp_path / "run"
        code = cli_main(["train", "--data", str(dataset_dir), "--out",
                         str(run), "--config", config_file, "--seed", "0"])
        assert code == 0
        assert (run / "checkpoint" / "manifest.json").exists()
        assert (run / "metrics.jsonl").exists()
        assert (run / "loss_curve.png").exists()

        report = tmp_path / "report.json"
        code = cli_main(["eval", "--checkpoint", str(run / "checkpoint"),
                         "--data", str(dataset_dir), "--out", str(report)])
        assert code == 0
        body = json.loads(report.read_text())
        assert {"ap", "ap50", "ap75"} <= set(body)

    def test_seeded_runs_identical(self, tmp_path, dataset_dir, config_file):
        logs = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            assert cli_main(["train", "--data", str(dataset_dir), "--out",
                             str(out), "--config", config_file,
                             "--seed", "7"]) == 0
            logs.append((out / "metrics.jsonl").read_bytes())
        assert logs[0] == logs[1]

    def test_missing_dataset_is_io_error(self, tmp_path, config_file):
        code = cli_main(["train", "--data", str(tmp_path / "nothing"),
                         "--out", str(tmp_path / "run"),
                         "--config", config_file])
        assert code == 3

    def test_bad_config_key_is_config_error(self, tmp_path, dataset_dir):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"model": {"no_such_field": 1}}))
        code = cli_main(["train", "--data", str(dataset_dir), "--out",
                         str(tmp_path / "run"), "--config", str(bad)])
        assert code == 2


class TestMerge:
    def test_merges_duplicates(self, tmp_path):
        preds = tmp_path / "preds.json"
        preds.write_text(json.dumps({
            "probs": [[0.9, 0.1], [0.9, 0.1], [0.1, 0.8]],
            "boxes": [[0.5, 0.5, 0.2, 0.2], [0.5, 0.5, 0.2, 0.2],
                      [0.8, 0.8, 0.1, 0.1]],
        }))
        out = tmp_path / "merged.json"
        code = cli_main(["merge", "--predictions", str(preds), "--out",
                         str(out), "--t-c", "1e-6", "--t-b", "0.9"])
        assert code == 0
        body = json.loads(out.read_text())
        assert body["num_merges"] == 1
        assert len(body["boxes"]) == 2

    def test_bad_threshold_is_config_error(self, tmp_path):
        preds = tmp_path / "preds.json"
        preds.write_text(json.dumps({"probs": [[0.5, 0.5]],
                                     "boxes": [[0.5, 0.5, 0.1, 0.1]]}))
        assert cli_main(["merge", "--predictions", str(preds),
                         "--t-b", "-1"]) == 2

    def test_missing_predictions_is_io_error(self, tmp_path):
        assert cli_main(["merge", "--predictions",
                         str(tmp_path / "none.json")]) == 3


class TestExportAttn:
    def test_writes_heatmaps_and_figure(self, tmp_path, dataset_dir,
                                        config_file):
        run = tmp_path / "run"
        assert cli_main(["train", "--data", str(dataset_dir), "--out",
                         str(run), "--config", config_file]) == 0
        out = tmp_path / "attn"
        code = cli_main(["export-attn", "--checkpoint",
                         str(run / "checkpoint"), "--out", str(out),
                         "--seed", "1"])
        assert code == 0
        pgms = sorted(out.glob("attn_s*_q*.pgm"))
        csvs = sorted(out.glob("attn_s*_q*.csv"))
        assert len(pgms) == MICRO_MODEL["q"]  # one scale
        assert len(csvs) == len(pgms)
        assert (out / "predicted_boxes.json").exists()
        assert (out / "overview.png").exists()

    def test_heatmap_rows_sum_to_one(self, tmp_path, dataset_dir,
                                     config_file):
        run = tmp_path / "run"
        assert cli_main(["train", "--data", str(dataset_dir), "--out",
                         str(run), "--config", config_file]) == 0
        out = tmp_path / "attn"
        assert cli_main(["export-attn", "--checkpoint",
                         str(run / "checkpoint"), "--out", str(out)]) == 0
        for path in out.glob("attn_s*_q*.csv"):
            with open(path) as fh:
                vals = [float(v) for row in csv.reader(fh) for v in row]
            assert abs(sum(vals) - 1.0) < 1e-5

    def test_pgm_peak_matches_csv_argmax(self, tmp_path, dataset_dir,
                                         config_file):
        run = tmp_path / "run"
        assert cli_main(["train", "--data", str(dataset_dir), "--out",
                         str(run), "--config", config_file]) == 0
        out = tmp_path / "attn"
        assert cli_main(["export-attn", "--checkpoint",
                         str(run / "checkpoint"), "--out", str(out)]) == 0
        for csv_path in sorted(out.glob("attn_s*_q*.csv")):
            with open(csv_path) as fh:
                weights = np.array([[float(v) for v in row]
                                    for row in csv.reader(fh)])
            raw = (out / (csv_path.stem + ".pgm")).read_bytes()
            # P5 header: magic, dims, maxval, then one byte per pixel
            magic, dims, maxval, pixels = raw.split(b"\n", 3)
            assert magic == b"P5"
            w, h = map(int, dims.split())
            gray = np.frombuffer(pixels[:h * w],
                                 dtype=np.uint8).reshape(h, w)
            # the true peak must map to the brightest gray level (ties in
            # the 8-bit rounding are allowed)
            assert gray.ravel()[weights.ravel().argmax()] == gray.max()


class TestAblateCli:
    def test_tiny_sweep_writes_csv_and_chart(self, tmp_path, config_file):
        out = tmp_path / "abl"
        code = cli_main(["ablate", "--suite", "normalization", "--out",
                         str(out), "--steps", "2", "--n-seeds", "1",
                         "--n-train", "4", "--n-val", "2",
                         "--config", config_file])
        assert code == 0
        with open(out / "normalization.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["config", "ap", "ap50", "ap75", "seed"]
        assert len(rows) == 3
        assert (out / "normalization.png").exists()

    def test_unknown_suite_rejected_by_parser(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            cli_main(["ablate", "--suite", "nope", "--out", str(tmp_path)])
        assert exc.value.code == 2
