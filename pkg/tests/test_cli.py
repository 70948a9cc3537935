import csv

import pytest

from panlang.cli import (
    EXIT_CONFIG,
    EXIT_DATA,
    EXIT_OK,
    RunConfig,
    load_dataset,
    run,
)
from panlang.exceptions import ConfigError
from panlang.rasters import read_raster

TINY = ["--scenes", "4", "--heldout", "2", "--size", "32", "--batch-size", "2", "--iterations", "2", "--patch", "24"]


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data, align, pre, full = root / "data", root / "align", root / "pre", root / "full"
    assert run(["simulate", "--out", str(data), *TINY]) == EXIT_OK
    assert run(["align", "--dataset", str(data), "--out", str(align), *TINY]) == EXIT_OK
    assert run(["pretrain", "--dataset", str(data), "--out", str(pre), *TINY]) == EXIT_OK
    assert run(["train", "--dataset", str(data), "--stage1", str(align / "stage1.panw"),
                "--pseudo", str(pre / "pseudo.panw"), "--out", str(full), *TINY]) == EXIT_OK
    assert run(["eval", "--dataset", str(data), "--backbone", str(full / "backbone.panw")]) == EXIT_OK
    return root


def test_config_round_trip(tmp_path):
    cfg = RunConfig(seed=3, bands=8, use_pseudo=False, w_d=0.5, output_dir="x/y")
    assert RunConfig.from_text(cfg.to_text()) == cfg
    cfg.save(tmp_path)
    assert RunConfig.load(tmp_path / "config.txt") == cfg


def test_config_validation():
    for bad in ({"bands": "5"}, {"size": "30"}, {"lr": "-1"}, {"prompt_variant": "X"}, {"nope": "1"},
                {"use_qnr": "maybe"}, {"seed": "abc"}):
        with pytest.raises(ConfigError):
            RunConfig.from_strings(bad)
    with pytest.raises(ConfigError):
        RunConfig(use_spec_spat=False, use_qnr=False, use_pseudo=False, use_semantic=False)
    with pytest.raises(ConfigError):
        RunConfig.from_text("just words")


def test_stage_overrides():
    cfg = RunConfig(iterations=50, train_iterations=7)
    assert cfg.stage1().iterations == 50 and cfg.stage2().iterations == 7
    assert cfg.stage1().lr == cfg.lr and cfg.stage2().lr == cfg.train_lr and cfg.pretrain().lr == cfg.pretrain_lr


def test_simulate_layout(pipeline):
    manifest = rows(pipeline / "data" / "manifest.csv")
    assert [r["split"] for r in manifest] == ["train"] * 4 + ["heldout"] * 2
    assert all(r["pseudo"] == "" for r in manifest if r["split"] == "heldout")
    t = load_dataset(pipeline / "data", "heldout")
    assert len(t) == 2 and t[0].reference.shape == (4, 32, 32)
    assert RunConfig.load(pipeline / "data" / "config.txt").scenes == 4


def test_logs_have_headers(pipeline):
    assert list(rows(pipeline / "align" / "stage1_log.csv")[0])[:2] == ["iteration", "L_inter"]
    assert list(rows(pipeline / "pre" / "pretrain_log.csv")[0]) == ["iteration", "L_l1"]
    head = list(rows(pipeline / "full" / "train_log.csv")[0])
    assert head == ["iteration", "L_spec", "L_spat", "L_QNR", "L_pseudo", "L_d", "total"]


def test_eval_outputs(pipeline):
    m = rows(pipeline / "full" / "metrics.csv")
    assert [r["scene"] for r in m][-1] == "mean" and len(m) == 3
    q, dl, ds = (float(m[-1][k]) for k in ("qnr", "d_lambda", "d_s"))
    assert q == (1 - dl) * (1 - ds)
    assert any((pipeline / "full" / "previews").iterdir())


def test_fuse_and_single_eval(pipeline, tmp_path):
    data = pipeline / "data"
    lrms, pan, hr = (str(data / "scenes" / f"heldout_0000_{k}.panr") for k in ("lrms", "pan", "hr"))
    out = tmp_path / "fused.panr"
    assert run(["fuse", "--backbone", str(pipeline / "full" / "backbone.panw"), "--lrms", lrms, "--pan", pan,
                "--out", str(out)]) == EXIT_OK
    assert read_raster(out).shape == (4, 32, 32) and out.with_suffix(".ppm").exists()
    assert run(["eval", "--fused", str(out), "--lrms", lrms, "--pan", pan, "--reference", hr,
                "--out", str(tmp_path / "ev")]) == EXIT_OK
    r = rows(tmp_path / "ev" / "metrics.csv")[0]
    assert all(r[k] != "" for k in ("mpsnr", "ergas", "sam", "q2n", "qnr"))
    assert run(["eval", "--fused", str(out), "--lrms", lrms, "--out", str(tmp_path / "ev2")]) == EXIT_CONFIG


def test_report_and_ablation(pipeline, tmp_path):
    data = pipeline / "data"
    assert run(["eval", "--dataset", str(data), "--method", "exp", "--out", str(tmp_path / "exp"),
                "--use-qnr", "false", "--use-pseudo", "false", "--use-semantic", "false"]) == EXIT_OK
    assert run(["report", str(pipeline / "full"), str(tmp_path / "exp"), "--out", str(tmp_path / "rep")]) == EXIT_OK
    rep = rows(tmp_path / "rep" / "report.csv")
    assert [r["run"] for r in rep] == sorted(r["run"] for r in rep)
    table = rows(tmp_path / "rep" / "ablation.csv")
    assert [r["configuration"] for r in table] == ["L_spec+L_spat", "L_unsup", "L_unsup+L_pseudo", "L_unsup+L_d",
                                                   "L_unsup+L_pseudo+L_d"]
    full = next(r for r in table if r["configuration"] == "L_unsup+L_pseudo+L_d")
    assert full["run"] == "full" and full["qnr"] != ""


def test_report_flags_incomplete(pipeline, tmp_path):
    (tmp_path / "empty").mkdir()
    assert run(["report", str(pipeline / "full"), str(tmp_path / "empty"), "--out", str(tmp_path / "rep")]) == EXIT_DATA
    status = {r["run"]: r["status"] for r in rows(tmp_path / "rep" / "report.csv")}
    assert status == {"full": "ok", "empty": "incomplete"}


def test_exit_codes(pipeline, tmp_path):
    data = str(pipeline / "data")
    assert run(["simulate", "--out", str(tmp_path / "d"), "--bands", "5"]) == EXIT_CONFIG
    assert run(["align", "--dataset", str(tmp_path / "missing"), "--out", str(tmp_path / "a")]) == EXIT_DATA
    assert run(["train", "--dataset", data, "--out", str(tmp_path / "t"), *TINY]) == EXIT_DATA
    bad = tmp_path / "bad.panr"
    bad.write_bytes(b"nope")
    assert run(["eval", "--fused", str(bad), "--reference", str(bad), "--out", str(tmp_path / "e")]) == EXIT_DATA


def test_train_without_optional_checkpoints(pipeline, tmp_path):
    assert run(["train", "--dataset", str(pipeline / "data"), "--out", str(tmp_path / "u"), *TINY,
                "--use-pseudo", "false", "--use-semantic", "false"]) == EXIT_OK
    cfg = RunConfig.load(tmp_path / "u" / "config.txt")
    assert cfg.ablation_label() == "L_unsup"


def test_output_root_env(pipeline, tmp_path, monkeypatch):
    monkeypatch.setenv("PANLANG_OUTPUT_ROOT", str(tmp_path))
    assert run(["eval", "--dataset", str(pipeline / "data"), "--method", "bdsd"]) == EXIT_OK
    assert (tmp_path / "eval" / "metrics.csv").exists()
