import json
import subprocess
import sys

import numpy as np
import pytest

from wafergp.cli import main
from wafergp.experiments import split
from wafergp.synth import SynthConfig, generate_wafer
from wafergp.wafer import MeasurementSet, RectGrid, block_layout


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def lots(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    assert run("synth", "--small", "--lots", 6, "--out", d) == 0
    return d


@pytest.fixture
def two_level_cfg(tmp_path):
    cfg = SynthConfig(geometry=RectGrid(12, 12), layout=block_layout(2, 2), trend=(0, 0, 0, 0),
                      site_offsets=(1.0, 1.0, 3.0, 3.0), site_sigma=(0.0,) * 4, drift={})
    path = tmp_path / "two.json"
    path.write_text(cfg.to_json())
    wafer = tmp_path / "two.csv"
    wafer.write_text(generate_wafer(cfg).to_csv())
    return cfg, path, wafer


class TestSynth:
    def test_files(self, tmp_path):
        assert run("synth", "--small", "--lots", 1, "--out", tmp_path) == 0
        assert sorted(p.name for p in tmp_path.iterdir()) == [
            "config.json", "lot1_wafer1.csv", "manifest.json"]
        man = json.loads((tmp_path / "manifest.json").read_text())
        assert man["command"] == "synth" and man["args"]["lots"] == 1

    def test_six_lots(self, lots):
        assert len(list(lots.glob("lot*_wafer1.csv"))) == 6

    def test_deterministic(self, tmp_path, lots):
        run("synth", "--small", "--lots", 6, "--out", tmp_path)
        for f in lots.glob("*.csv"):
            assert (tmp_path / f.name).read_bytes() == f.read_bytes()
        assert (tmp_path / "config.json").read_bytes() == (lots / "config.json").read_bytes()

    def test_bad_config_json(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        with pytest.raises(SystemExit) as e:
            run("synth", "--config", bad, "--out", tmp_path / "o")
        assert e.value.code == 2
        assert "not valid JSON" in capsys.readouterr().err

    def test_bad_config_content(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"site_offsets": [0.0, 1.0]}))
        assert run("synth", "--config", bad, "--out", tmp_path / "o") == 1
        assert "mismatch" in capsys.readouterr().err

    def test_process_exit_codes(self, tmp_path):
        cmd = [sys.executable, "-m", "wafergp.cli"]
        r = subprocess.run(cmd + ["fit-predict"], capture_output=True, text=True)
        assert r.returncode == 2
        r = subprocess.run(cmd + ["evaluate", "--pred", str(tmp_path / "none.csv"), "--truth",
                                  str(tmp_path / "none.csv"), "--small", "--out", str(tmp_path)],
                           capture_output=True, text=True)
        assert r.returncode == 1 and r.stderr


class TestFitPredict:
    def test_rate_one(self, tmp_path, lots):
        assert run("fit-predict", "--small", "--truth", lots / "lot6_wafer1.csv",
                   "--method", "site-hier", "--rate", 1.0, "--out", tmp_path) == 0
        ev = json.loads((tmp_path / "evaluation.json").read_text())
        assert ev["mean_abs_delta"] == 0.0 and ev["n"] == 0
        assert (tmp_path / "predictions.csv").read_text() == "x,y,site,mu,var\n"

    def test_bad_rate(self, tmp_path, lots):
        with pytest.raises(SystemExit) as e:
            run("fit-predict", "--small", "--truth", lots / "lot6_wafer1.csv",
                "--method", "naive", "--rate", 1.5, "--out", tmp_path)
        assert e.value.code == 2

    def test_2step_needs_map(self, tmp_path, lots, capsys):
        with pytest.raises(SystemExit) as e:
            run("fit-predict", "--small", "--truth", lots / "lot6_wafer1.csv",
                "--method", "2step", "--out", tmp_path)
        assert e.value.code == 2 and "cluster-map" in capsys.readouterr().err

    def test_site_hier_beats_naive(self, tmp_path, lots):
        errs = {}
        for m in ("naive", "site-hier"):
            run("fit-predict", "--small", "--truth", lots / "lot6_wafer1.csv", "--method", m,
                "--rate", 0.1, "--out", tmp_path / m)
            errs[m] = json.loads((tmp_path / m / "evaluation.json").read_text())["mean_abs_delta"]
        assert errs["site-hier"] < errs["naive"]

    def test_deterministic_and_heatmap(self, tmp_path, lots):
        outs = []
        for k in range(2):
            o = tmp_path / str(k)
            run("fit-predict", "--small", "--truth", lots / "lot1_wafer1.csv", "--method",
                "site-hier", "--seed", 3, "--heatmap", o / "heat.csv", "--out", o)
            outs.append([(o / n).read_bytes() for n in ("predictions.csv", "evaluation.json",
                                                        "heat.csv")])
        assert outs[0] == outs[1]
        rows = (tmp_path / "0" / "heat.csv").read_text().splitlines()
        assert len(rows) == 2 * 14 + 2 and rows[0].startswith("y\\x,-14")

    def test_timing_flag(self, tmp_path, lots):
        run("fit-predict", "--small", "--truth", lots / "lot1_wafer1.csv", "--method", "naive",
            "--timing", "--out", tmp_path)
        assert json.loads((tmp_path / "evaluation.json").read_text())["wall_seconds"] >= 0

    def test_prefix_property(self, small_lot1):
        tr1, _ = split(small_lot1, 0.1, 7)
        tr2, _ = split(small_lot1, 0.2, 7)
        assert set(tr1) < set(tr2)

    def test_explicit_train(self, tmp_path, lots, small_cfg):
        truth = MeasurementSet.from_csv((lots / "lot1_wafer1.csv").read_text(), small_cfg.layout,
                                        small_cfg.geometry)
        tr, te = split(truth, 0.2, 1)
        (tmp_path / "train.csv").write_text(truth.subset(tr).to_csv())
        run("fit-predict", "--small", "--truth", lots / "lot1_wafer1.csv", "--train",
            tmp_path / "train.csv", "--method", "naive", "--out", tmp_path / "a")
        run("fit-predict", "--small", "--truth", lots / "lot1_wafer1.csv", "--rate", 0.2,
            "--seed", 1, "--method", "naive", "--out", tmp_path / "b")
        assert (tmp_path / "a" / "predictions.csv").read_bytes() == \
            (tmp_path / "b" / "predictions.csv").read_bytes()


class TestCalibrate:
    def test_two_levels(self, tmp_path, two_level_cfg):
        _, cfg, wafer = two_level_cfg
        assert run("calibrate-2step", "--config", cfg, "--wafer", wafer, "--out", tmp_path) == 0
        assert json.loads((tmp_path / "cluster_map.json").read_text())["k"] == 2

    def test_incomplete(self, tmp_path, two_level_cfg, capsys):
        c, cfg, wafer = two_level_cfg
        ms = generate_wafer(c)
        (tmp_path / "part.csv").write_text(ms.subset(np.arange(100)).to_csv())
        assert run("calibrate-2step", "--config", cfg, "--wafer", tmp_path / "part.csv",
                   "--out", tmp_path / "o") == 1
        assert "calibration requires full measurement" in capsys.readouterr().err

    def test_criterion_switch(self, tmp_path, lots):
        maps = {}
        for crit in ("ch", "silhouette", "ch"):
            o = tmp_path / crit
            run("calibrate-2step", "--small", "--wafer", lots / "lot1_wafer1.csv",
                "--criterion", crit, "--out", o)
            maps.setdefault(crit, []).append((o / "cluster_map.json").read_bytes())
        assert maps["ch"][0] == maps["ch"][1]
        for b in maps.values():
            assert 2 <= json.loads(b[0])["k"] <= 16

    def test_2step_roundtrip(self, tmp_path, lots):
        run("calibrate-2step", "--small", "--wafer", lots / "lot1_wafer1.csv", "--out", tmp_path)
        assert run("fit-predict", "--small", "--truth", lots / "lot6_wafer1.csv", "--method",
                   "2step", "--cluster-map", tmp_path / "cluster_map.json",
                   "--out", tmp_path / "p") == 0


class TestSample:
    def test_budget_one(self, tmp_path, lots):
        logs = []
        for s in ("active", "random"):
            run("sample", "--small", "--truth", lots / "lot1_wafer1.csv", "--strategy", s,
                "--budget", 1, "--seed", 5, "--out", tmp_path / s)
            logs.append((tmp_path / s / "campaign.csv").read_text().replace(s, "S"))
        assert logs[0] == logs[1] and len(logs[0].splitlines()) == 2

    def test_truncated(self, tmp_path, two_level_cfg, capsys):
        _, cfg, wafer = two_level_cfg
        assert run("sample", "--config", cfg, "--truth", wafer, "--strategy", "random",
                   "--budget", 99, "--out", tmp_path) == 0
        man = json.loads((tmp_path / "manifest.json").read_text())
        assert man["truncated"] and man["steps"] == 36
        assert "truncated" in capsys.readouterr().err

    def test_incomplete_truth(self, tmp_path, two_level_cfg):
        c, cfg, _ = two_level_cfg
        (tmp_path / "part.csv").write_text(generate_wafer(c).subset(np.arange(50)).to_csv())
        assert run("sample", "--config", cfg, "--truth", tmp_path / "part.csv",
                   "--out", tmp_path / "o") == 1


class TestEvaluate:
    def test_zero(self, tmp_path, lots):
        truth = lots / "lot1_wafer1.csv"
        lines = truth.read_text().splitlines()
        head = lines[0].split(",")
        ix, iy, iv = head.index("x"), head.index("y"), head.index("value")
        rows = ["x,y,mu"] + [",".join(ln.split(",")[i] for i in (ix, iy, iv)) for ln in lines[1:]]
        (tmp_path / "pred.csv").write_text("\n".join(rows) + "\n")
        assert run("evaluate", "--small", "--pred", tmp_path / "pred.csv", "--truth", truth,
                   "--out", tmp_path / "o") == 0
        ev = json.loads((tmp_path / "o" / "evaluation.json").read_text())
        assert ev["mean_abs_delta"] == 0.0 and ev["max_abs_delta"] == 0.0

    def test_constant_offset(self, tmp_path, two_level_cfg):
        _, cfg, wafer = two_level_cfg
        (tmp_path / "pred.csv").write_text("x,y,mu\n0,0,1.5\n1,0,2.0\n")
        run("evaluate", "--config", cfg, "--pred", tmp_path / "pred.csv", "--truth", wafer,
            "--out", tmp_path / "o")
        ev = json.loads((tmp_path / "o" / "evaluation.json").read_text())
        # truth 1 at site 0, 1 at site 1; range 2
        assert ev["mean_delta"] == pytest.approx((0.25 + 0.5) / 2)

    def test_join_mismatch(self, tmp_path, two_level_cfg, capsys):
        _, cfg, wafer = two_level_cfg
        (tmp_path / "pred.csv").write_text("x,y,mu\n50,50,1.0\n")
        assert run("evaluate", "--config", cfg, "--pred", tmp_path / "pred.csv", "--truth",
                   wafer, "--out", tmp_path / "o") == 1
        err = capsys.readouterr().err
        assert "join mismatch" in err and "(50,50)" in err

    def test_d_spec_from(self, tmp_path, two_level_cfg):
        c, cfg, wafer = two_level_cfg
        (tmp_path / "part.csv").write_text(generate_wafer(c).subset(np.arange(2)).to_csv())
        (tmp_path / "pred.csv").write_text("x,y,mu\n0,0,2.0\n")
        run("evaluate", "--config", cfg, "--pred", tmp_path / "pred.csv", "--truth",
            tmp_path / "part.csv", "--d-spec-from", wafer, "--out", tmp_path / "o")
        ev = json.loads((tmp_path / "o" / "evaluation.json").read_text())
        assert ev["d_spec"] == 2.0 and ev["mean_abs_delta"] == 0.5
