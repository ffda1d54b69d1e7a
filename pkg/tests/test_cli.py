import csv
import json

import numpy as np
import pytest
from click.testing import CliRunner

from wcrr3d.cli import main
from wcrr3d.io import read_coils, read_cvol, read_kdat, read_ktrj, read_pgm, write_cvol
from wcrr3d.training import TrainingConfig
from wcrr3d.volume import ComplexVolume, RotationSet


def run(args, ok=True):
    res = CliRunner().invoke(main, [str(a) for a in args])
    if ok:
        assert res.exit_code == 0, (res.output, res.stderr, res.exception)
    return res


def error_line(res):
    assert res.exit_code != 0
    line = res.stderr.strip().splitlines()[-1]
    return json.loads(line)


@pytest.fixture(scope="module")
def acquisition(tmp_path_factory):
    d = tmp_path_factory.mktemp("acq")
    run(["phantom", "--dims", "8", "-o", d / "gt.cvol"])
    run(["coils", "--dims", "8x8x8", "-c", "2", "-o", d / "c.cset"])
    run(["trajectory", "-m", "256", "--samples-per-spoke", "8", "-o", d / "t.ktrj"])
    run(["simulate", "--volume", d / "gt.cvol", "--coils", d / "c.cset", "--trajectory",
         d / "t.ktrj", "--noise", "1e-3", "-o", d / "y.kdat"])
    return d


def test_data_generation_outputs(acquisition):
    d = acquisition
    assert read_cvol(d / "gt.cvol").dims == (8, 8, 8)
    assert read_coils(d / "c.cset").C == 2
    assert read_ktrj(d / "t.ktrj").M == 256
    assert read_kdat(d / "y.kdat").samples.shape == (2, 256)


def test_random_phantom_and_vds_trajectory(tmp_path):
    run(["phantom", "--dims", "6", "--seed", "4", "-o", tmp_path / "p.cvol"])
    run(["trajectory", "--kind", "random_vds", "-m", "100", "--seed", "2", "-o", tmp_path / "t.ktrj"])
    assert read_cvol(tmp_path / "p.cvol").dims == (6, 6, 6)
    assert read_ktrj(tmp_path / "t.ktrj").M == 100


@pytest.mark.parametrize("method,extra", [("dcp", []), ("tv", ["--lam", "5"]),
                                          ("wavelet", []), ("wcrr", ["--sigma", "0.05"])])
def test_reconstruct_each_method(acquisition, tmp_path, method, extra):
    d = acquisition
    out, trace = tmp_path / f"{method}.cvol", tmp_path / "trace.csv"
    run(["reconstruct", method, "--kdata", d / "y.kdat", "--trajectory", d / "t.ktrj",
         "--coils", d / "c.cset", "-o", out, "--trace", trace, *extra])
    assert read_cvol(out).dims == (8, 8, 8)
    with open(trace) as fh:
        rows = list(csv.DictReader(fh))
    assert (len(rows) == 0) == (method == "dcp")


def test_reconstruct_sigma_rejected_for_baselines(acquisition, tmp_path):
    d = acquisition
    res = run(["reconstruct", "tv", "--kdata", d / "y.kdat", "--trajectory", d / "t.ktrj",
               "--coils", d / "c.cset", "--sigma", "0.1", "-o", tmp_path / "x.cvol"], ok=False)
    err = error_line(res)
    assert err["command"] == "reconstruct" and "sigma" in err["message"]


def test_metrics_and_export_slice(acquisition, tmp_path):
    d = acquisition
    res = run(["metrics", "--reference", d / "gt.cvol", d / "gt.cvol"])
    lines = res.output.strip().splitlines()
    assert lines[0] == "file,psnr,ssim"
    assert lines[1].endswith(",99.000000,1.000000")
    run(["export-slice", "--input", d / "gt.cvol", "--axis", "y", "-o", tmp_path / "s.pgm"])
    assert read_pgm(tmp_path / "s.pgm").shape == (8, 8)
    res = run(["export-slice", "--input", d / "gt.cvol", "--index", "99", "-o",
               tmp_path / "t.pgm"], ok=False)
    assert error_line(res) == {"error": "IndexError", "message": "slice index 99 outside [0, 8)",
                               "command": "export-slice"}


def test_denoise_command(acquisition, tmp_path):
    res = run(["denoise", "--input", acquisition / "gt.cvol", "--sigma", "0.05",
               "-o", tmp_path / "d.cvol"])
    info = json.loads(res.output)
    assert info["iterations"] >= 1 and info["residual"] >= 0
    assert read_cvol(tmp_path / "d.cvol").dims == (8, 8, 8)


def test_train_and_resume(tmp_path):
    data = tmp_path / "data"
    data.mkdir()
    rng = np.random.default_rng(0)
    for i in range(2):
        write_cvol(data / f"v{i}.cvol", ComplexVolume(0.3 * rng.standard_normal((2, 8, 8, 8))))
    cfg = TrainingConfig(epochs=1, batch_size=2, patch_size=6, channels=[2, 2, 2],
                         rotations=RotationSet.identity_only().to_list())
    (tmp_path / "cfg.json").write_text(cfg.model_dump_json())
    run(["train", "--data", data, "--config", tmp_path / "cfg.json", "--out", tmp_path / "m"])
    manifest = json.loads((tmp_path / "m" / "manifest.json").read_text())
    assert manifest["epoch"] == 1
    with open(tmp_path / "m" / "history.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 1
    cfg2 = cfg.model_copy(update={"epochs": 2})
    (tmp_path / "cfg2.json").write_text(cfg2.model_dump_json())
    run(["train", "--data", data, "--config", tmp_path / "cfg2.json", "--out", tmp_path / "m2",
         "--resume", tmp_path / "m"])
    with open(tmp_path / "m2" / "history.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["epoch"]) for r in rows] == [1]
    res = run(["train", "--data", tmp_path / "m2", "--out", tmp_path / "m3"], ok=False)
    assert error_line(res)["error"] == "UsageError"


def test_experiment_and_schema(tmp_path):
    res = run(["experiment", "--print-schema"])
    schema = json.loads(res.output)
    assert "methods" in schema["properties"]
    (tmp_path / "m.json").write_text(json.dumps({"dims": [8, 8, 8], "methods": ["dcp"],
                                                 "coils": 2}))
    res = run(["experiment", "--manifest", tmp_path / "m.json", "--out", tmp_path / "o"])
    assert res.output.startswith("dcp")
    assert (tmp_path / "o" / "metrics.csv").is_file()


def test_experiment_bad_manifest_reports_json_error(tmp_path):
    (tmp_path / "m.json").write_text(json.dumps({"methods": ["grappa"]}))
    err = error_line(run(["experiment", "--manifest", tmp_path / "m.json"], ok=False))
    assert err["error"] == "ValidationError" and err["command"] == "experiment"


def test_gridsearch_command(tmp_path):
    (tmp_path / "m.json").write_text(json.dumps({"dims": [8, 8, 8], "coils": 2}))
    res = run(["gridsearch", "wavelet", "--manifest", tmp_path / "m.json", "--cases", "1",
               "--lams", "1,100", "-o", tmp_path / "g.csv"])
    best = json.loads(res.output)
    assert best["best"]["lam"] in (1.0, 100.0)
    with open(tmp_path / "g.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 2


def test_missing_file_and_bad_dims(tmp_path):
    err = error_line(run(["metrics", "--reference", tmp_path / "nope.cvol", "x"], ok=False))
    assert err["command"] == "metrics"
    err = error_line(run(["phantom", "--dims", "4x4", "-o", tmp_path / "p.cvol"], ok=False))
    assert err["error"] == "BadParameter"


def test_thread_override_env(tmp_path, monkeypatch):
    monkeypatch.setenv("WCRR3D_NUM_THREADS", "1")
    run(["phantom", "--dims", "4", "-o", tmp_path / "p.cvol"])
    assert read_cvol(tmp_path / "p.cvol").dims == (4, 4, 4)
