import json

import numpy as np
import pytest

from flowseg.cli import main
from flowseg.core import LabelMap, SegmentationConfig
from flowseg.evaluation import evaluate_pair
from flowseg.io import read_labels, write_config, write_features, write_labels
from flowseg.synthetic import gen_blob_features


@pytest.fixture
def two_blob_dir(tmp_path):
    out = tmp_path / "fixture"
    assert main(["synth", "--height", "8", "--width", "8", "--channels", "16",
                 "--layout", "halves", "--out", str(out)]) == 0
    return out


@pytest.fixture
def four_blob_dir(tmp_path):
    out = tmp_path / "fixture4"
    assert main(["synth", "--layout", "quadrants", "--noise", "0.2",
                 "--seed", "3", "--out", str(out)]) == 0
    return out


class TestSynth:
    def test_outputs_exist(self, two_blob_dir):
        assert (two_blob_dir / "features.npy").exists()
        assert (two_blob_dir / "gt.npy").exists()
        assert (two_blob_dir / "synth.manifest.json").exists()
        gt = read_labels(two_blob_dir / "gt.npy")
        assert gt.num_labels == 2


class TestSegment:
    def test_two_blob_recovery(self, two_blob_dir, tmp_path):
        out = tmp_path / "out"
        code = main(["segment", str(two_blob_dir / "features.npy"),
                     "--out", str(out)])
        assert code == 0
        labels = read_labels(out / "features.pgm")
        gt = read_labels(two_blob_dir / "gt.npy")
        _, _, score = evaluate_pair(labels, gt)
        assert score == 1.0
        manifest = json.loads((out / "features.manifest.json").read_text())
        assert manifest["flow_converged"]
        assert manifest["num_clusters"] >= 2

    def test_beta_zero_still_separates(self, two_blob_dir, tmp_path):
        out = tmp_path / "out"
        assert main(["segment", str(two_blob_dir / "features.npy"),
                     "--out", str(out), "--beta", "0.0"]) == 0
        labels = read_labels(out / "features.pgm")
        gt = read_labels(two_blob_dir / "gt.npy")
        assert evaluate_pair(labels, gt)[2] == 1.0

    def test_missing_input_no_partial_outputs(self, tmp_path):
        out = tmp_path / "out"
        code = main(["segment", str(tmp_path / "nope.npy"),
                     "--out", str(out)])
        assert code == 2
        assert not any(out.iterdir())

    def test_determinism_byte_identical(self, two_blob_dir, tmp_path):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert main(["segment", str(two_blob_dir / "features.npy"),
                         "--out", str(out), "--seed", "7"]) == 0
            outs.append(out)
        assert (outs[0] / "features.pgm").read_bytes() == \
            (outs[1] / "features.pgm").read_bytes()
        assert (outs[0] / "features.manifest.json").read_bytes() == \
            (outs[1] / "features.manifest.json").read_bytes()

    def test_upsample_and_trace(self, two_blob_dir, tmp_path):
        out = tmp_path / "out"
        assert main(["segment", str(two_blob_dir / "features.npy"),
                     "--out", str(out), "--upsample", "16", "16",
                     "--trace"]) == 0
        up = read_labels(out / "features.upsampled.pgm")
        assert (up.height, up.width) == (16, 16)
        trace_lines = (out / "features.trace.jsonl").read_text().splitlines()
        records = [json.loads(line) for line in trace_lines]
        assert records[-1]["residual"] < 1e-6

    def test_nonconvergence_exit_code(self, two_blob_dir, tmp_path):
        out = tmp_path / "out"
        code = main(["segment", str(two_blob_dir / "features.npy"),
                     "--out", str(out), "--max-flow-iters", "1",
                     "--flow-tol", "1e-15"])
        assert code == 3

    def test_config_file_and_flag_precedence(self, two_blob_dir, tmp_path,
                                             capsys):
        cfg_path = tmp_path / "run.cfg"
        write_config(SegmentationConfig(beta=0.3, inflation_r=2.0), cfg_path)
        out = tmp_path / "out"
        assert main(["segment", str(two_blob_dir / "features.npy"),
                     "--out", str(out), "--config", str(cfg_path),
                     "--beta", "0.7", "--verbose"]) == 0
        lines = capsys.readouterr().out
        assert "config beta = 0.7 (flag)" in lines
        assert "config inflation_r = 2.0 (config)" in lines
        assert "config gamma = 0.9 (default)" in lines
        manifest = json.loads((out / "features.manifest.json").read_text())
        assert manifest["config"]["beta"] == 0.7
        assert manifest["config"]["inflation_r"] == 2.0

    def test_directory_batch_with_jobs(self, tmp_path):
        src = tmp_path / "inputs"
        src.mkdir()
        for i, seed in enumerate((1, 2, 3)):
            f, _ = gen_blob_features(6, 6, 8, "halves", noise=0.05, seed=seed)
            write_features(f, src / f"img{i}.npy")
        out = tmp_path / "out"
        assert main(["segment", str(src), "--out", str(out),
                     "--jobs", "2"]) == 0
        assert sorted(p.name for p in out.glob("*.pgm")) == \
            ["img0.pgm", "img1.pgm", "img2.pgm"]


class TestEval:
    def test_identical_dirs_score_one(self, tmp_path, capsys):
        pred = tmp_path / "pred"
        gt = tmp_path / "gt"
        pred.mkdir(), gt.mkdir()
        rng = np.random.default_rng(0)
        for i in range(2):
            lm = LabelMap(4, 4, rng.integers(0, 3, size=(4, 4)))
            write_labels(lm, pred / f"im{i}.pgm")
            write_labels(lm, gt / f"im{i}.pgm")
        assert main(["eval", str(pred), str(gt)]) == 0
        assert "aggregate mIoU: 1.0000" in capsys.readouterr().out

    def test_hand_confusion_value(self, tmp_path, capsys):
        pred = tmp_path / "pred"
        gt = tmp_path / "gt"
        pred.mkdir(), gt.mkdir()
        write_labels(LabelMap(2, 2, np.array([[0, 0], [0, 0]])),
                     pred / "im.pgm")
        write_labels(LabelMap(2, 2, np.array([[0, 0], [1, 1]])),
                     gt / "im.pgm")
        out = tmp_path / "results.jsonl"
        assert main(["eval", str(pred), str(gt), "--out", str(out)]) == 0
        assert "aggregate mIoU: 0.2500" in capsys.readouterr().out
        records = [json.loads(l) for l in out.read_text().splitlines()]
        assert records[0]["miou"] == 0.25

    def test_disjoint_stems_error(self, tmp_path):
        pred = tmp_path / "pred"
        gt = tmp_path / "gt"
        pred.mkdir(), gt.mkdir()
        write_labels(LabelMap(1, 2, np.array([[0, 1]])), pred / "a.pgm")
        write_labels(LabelMap(1, 2, np.array([[0, 1]])), gt / "b.pgm")
        assert main(["eval", str(pred), str(gt)]) == 1

    def test_unmatched_stem_warns_and_skips(self, tmp_path, capsys):
        pred = tmp_path / "pred"
        gt = tmp_path / "gt"
        pred.mkdir(), gt.mkdir()
        lm = LabelMap(1, 2, np.array([[0, 1]]))
        write_labels(lm, pred / "a.pgm")
        write_labels(lm, gt / "a.pgm")
        write_labels(lm, gt / "extra.pgm")
        assert main(["eval", str(pred), str(gt)]) == 0
        assert "unmatched stem 'extra'" in capsys.readouterr().err


class TestDiagnose:
    def test_planted_report(self, tmp_path, capsys):
        out = tmp_path / "report"
        assert main(["diagnose", "--inflation-r", "2.0", "--trials", "20",
                     "--row-pairs", "5", "--out", str(out)]) == 0
        text = capsys.readouterr().out
        assert "0.171573" in text
        report = json.loads((out / "report.json").read_text())
        assert abs(report["birkhoff_bound"] - 0.171573) < 1e-5
        assert abs(report["inflation_scaling"]["max_ratio"] - 2.0) < 1e-9
        assert report["nonexpansiveness"]["violations"] == 0
        assert (out / "report.txt").exists()

    def test_pruning_disabled_stays_finite(self, tmp_path):
        out = tmp_path / "report"
        assert main(["diagnose", "--prune-tau", "0", "--noise", "0",
                     "--blocks", "4,4", "--within", "0.4", "--cross", "0.05",
                     "--trials", "10", "--row-pairs", "5",
                     "--out", str(out)]) == 0
        report = json.loads((out / "report.json").read_text())
        assert report["first_infinite_iteration"] is None

    def test_default_pruning_flags_infinite(self, tmp_path):
        out = tmp_path / "report"
        assert main(["diagnose", "--blocks", "4,4", "--within", "0.4",
                     "--cross", "0.05", "--noise", "0", "--trials", "10",
                     "--row-pairs", "5", "--out", str(out)]) == 0
        report = json.loads((out / "report.json").read_text())
        assert report["first_infinite_iteration"] is not None


class TestSweep:
    def test_beta_grid(self, two_blob_dir, tmp_path, capsys):
        out = tmp_path / "sweep.jsonl"
        assert main(["sweep", "--param", "beta", "--grid", "0.0,0.6,1.0",
                     "--fixture", str(two_blob_dir), "--out", str(out)]) == 0
        rows = [json.loads(l) for l in out.read_text().splitlines()]
        assert len(rows) == 3
        assert [row["value"] for row in rows] == [0.0, 0.6, 1.0]

    def test_inflation_grid_ablation_shape(self, four_blob_dir, tmp_path):
        # golden expectation, frozen after first derivation: r=1.5 merges
        # blobs (K < 4), r=3.0 fragments (K > 4), exact recovery in between
        out = tmp_path / "sweep.jsonl"
        assert main(["sweep", "--param", "inflation_r",
                     "--grid", "1.5,2.0,2.6,3.0",
                     "--fixture", str(four_blob_dir), "--out", str(out)]) == 0
        rows = {row["value"]: row for row in
                (json.loads(l) for l in out.read_text().splitlines())}
        assert len(rows) == 4
        assert rows[1.5]["k"] < 4
        assert rows[3.0]["k"] > 4
        assert rows[2.0]["k"] == 4 or rows[2.6]["k"] == 4

    def test_empty_grid_usage_error(self, two_blob_dir):
        assert main(["sweep", "--param", "beta", "--grid", ",",
                     "--fixture", str(two_blob_dir)]) == 1
