import json
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest

from bpsurv.cli import main
from bpsurv.simulate import SimDesign


def tiny_dataset_csv(tmp_path, seed=0):
    ds, _ = SimDesign(model="ph", m=4, n_per_site=12, frailty_kind="none").generate(seed)
    path = tmp_path / "data.csv"
    ds.to_csv(path)
    return path


FAST = ["--nburn", "120", "--nsave", "80", "--nskip", "1", "--l0", "60",
        "--prerun-iters", "200"]


class TestSimulate:
    def test_writes_csv_and_adjacency(self, tmp_path, capsys):
        out = tmp_path / "sim" / "d.csv"
        rc = main(["simulate", "--design", "sim1-ph", "--seed", "3", "--out", str(out),
                   "--truth-out", str(tmp_path / "truth.json")])
        assert rc == 0
        assert out.exists()
        assert (tmp_path / "sim" / "d_adjacency.txt").exists()
        truth = json.loads((tmp_path / "truth.json").read_text())
        assert truth["beta"] == [1.0, 1.0]
        text = out.read_text().splitlines()
        assert text[0].startswith("t1,t2,trunc")
        assert len(text) == 741

    def test_geo_design_writes_coordinates(self, tmp_path):
        out = tmp_path / "geo.csv"
        rc = main(["simulate", "--design", "sim3-ph", "--seed", "1", "--out", str(out)])
        assert rc == 0
        assert out.read_text().splitlines()[0].endswith("lon,lat")


class TestFit:
    def test_dry_run_prints_hyperparameters(self, tmp_path, capsys):
        path = tiny_dataset_csv(tmp_path)
        rc = main(["fit", "--data", str(path), "--location-col", "location",
                   "--trunc-col", "trunc", "--selection", "--dry-run"])
        assert rc == 0
        text = capsys.readouterr().out
        assert "g = 1.61" in text  # [log 10 / ndtri(0.9)]^2 / p at p = 2
        assert "n = 48" in text

    def test_dry_run_grf_phi0(self, tmp_path, capsys):
        out = tmp_path / "geo.csv"
        main(["simulate", "--design", "sim3-ph", "--seed", "1", "--out", str(out)])
        rc = main(["fit", "--data", str(out), "--lon-col", "lon", "--lat-col", "lat",
                   "--trunc-col", "trunc", "--frailty", "grf", "--dry-run"])
        assert rc == 0
        assert "phi0 = " in capsys.readouterr().out

    def test_missing_data_file(self, tmp_path, capsys):
        rc = main(["fit", "--data", str(tmp_path / "nope.csv"), "--outdir",
                   str(tmp_path / "o")])
        assert rc == 2
        assert "nope.csv" in capsys.readouterr().err

    def test_fit_writes_outputs_and_is_deterministic(self, tmp_path, capsys):
        path = tiny_dataset_csv(tmp_path)
        out1, out2 = tmp_path / "fit1", tmp_path / "fit2"
        argv = ["fit", "--data", str(path), "--location-col", "location",
                "--trunc-col", "trunc", "--model", "ph", "--seed", "7", *FAST]
        assert main(argv + ["--outdir", str(out1)]) == 0
        assert main(argv + ["--outdir", str(out2)]) == 0
        for name in ("summary.txt", "draws.csv", "loglik.npy", "meta.json"):
            assert (out1 / name).exists(), name
        assert (out1 / "draws.csv").read_bytes() == (out2 / "draws.csv").read_bytes()
        meta = json.loads((out1 / "meta.json").read_text())
        assert meta["criteria"]["lpml"] < 0
        assert "beta.x1" in (out1 / "draws.csv").read_text().splitlines()[0]

    def test_meta_json_reproduces_run(self, tmp_path):
        path = tiny_dataset_csv(tmp_path)
        out1, out2 = tmp_path / "f1", tmp_path / "f2"
        argv = ["fit", "--data", str(path), "--location-col", "location",
                "--trunc-col", "trunc", "--seed", "5", *FAST]
        assert main(argv + ["--outdir", str(out1)]) == 0
        rc = main(["fit", "--config", str(out1 / "meta.json"), "--outdir", str(out2)])
        assert rc == 0
        assert (out1 / "draws.csv").read_bytes() == (out2 / "draws.csv").read_bytes()

    def test_config_file_key_values(self, tmp_path):
        path = tiny_dataset_csv(tmp_path)
        cfgfile = tmp_path / "run.cfg"
        cfgfile.write_text(
            f"data = {path}\nlocation_col = location\ntrunc_col = trunc\n"
            "nburn = 120\nnsave = 80\nl0 = 60\nprerun_iters = 200\nseed = 5\n")
        out = tmp_path / "fit"
        assert main(["fit", "--config", str(cfgfile), "--outdir", str(out)]) == 0
        meta = json.loads((out / "meta.json").read_text())
        assert meta["cli"]["nburn"] == 120

    def test_unknown_config_key(self, tmp_path, capsys):
        cfgfile = tmp_path / "bad.cfg"
        cfgfile.write_text("bogus = 1\n")
        rc = main(["fit", "--config", str(cfgfile), "--outdir", str(tmp_path / "x")])
        assert rc == 2
        assert "bogus" in capsys.readouterr().err


class TestDiagnose:
    def test_end_to_end(self, tmp_path, capsys):
        path = tiny_dataset_csv(tmp_path)
        fit = tmp_path / "fit"
        main(["fit", "--data", str(path), "--location-col", "location",
              "--trunc-col", "trunc", "--seed", "2", *FAST, "--outdir", str(fit)])
        rc = main(["diagnose", "--fit", str(fit), "--data", str(path),
                   "--location-col", "location", "--trunc-col", "trunc",
                   "--draws", "5", "--svg"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "stored LPML" in out and "slope" in out
        csv_text = (fit / "coxsnell.csv").read_text().splitlines()
        assert csv_text[0] == "draw_id,r,cumhaz"
        assert len(csv_text) > 10
        tree = ET.parse(fit / "coxsnell.svg")  # well-formed XML
        assert tree.getroot().tag.endswith("svg")
        report = json.loads((fit / "diagnose.json").read_text())
        assert "coxsnell_slope" in report


class TestMcStudy:
    def test_worker_count_independence(self, tmp_path):
        argv = ["mc-study", "--design", "sim1-ph", "--replicates", "2", "--seed", "4",
                "--nburn", "60", "--nsave", "40", "--nskip", "1", "--l0", "40",
                "--prerun-iters", "120"]
        out1, out2 = tmp_path / "j1", tmp_path / "j2"
        assert main(argv + ["--jobs", "1", "--outdir", str(out1)]) == 0
        assert main(argv + ["--jobs", "2", "--outdir", str(out2)]) == 0
        assert (out1 / "replicates.csv").read_bytes() == (out2 / "replicates.csv").read_bytes()
        agg = json.loads((out1 / "aggregate.json").read_text())
        assert agg["replicates"] == 2
        assert len(agg["beta_bias"]) == 2
