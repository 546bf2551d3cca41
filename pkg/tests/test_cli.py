import json

import numpy as np
import pytest

from pmap.cli import main

GEN = {"slots": 2, "n_objects": 3, "traj_len": 16, "d_txt": 6, "d_img": 6}
TRAIN = {"chunk_len": 4, "epochs": 2, "batch_size": 8, "width": 8, "head_count": 2,
         "s4_blocks": 1, "enc_layers": 1, "state_size": 3}


def lines(text):
    return [json.loads(x) for x in text.strip().splitlines()]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def dataset(workdir):
    gen = workdir / "gen.json"
    gen.write_text(json.dumps(GEN))
    assert main(["gen-data", "--out", str(workdir / "data"), "--config", str(gen),
                 "--train", "24", "--val", "8", "--test", "8", "--seed", "3"]) == 0
    return workdir / "data"


@pytest.fixture(scope="module")
def trained(workdir, dataset):
    cfg = workdir / "train.json"
    cfg.write_text(json.dumps(TRAIN))
    assert main(["train", "--config", str(cfg), "--data", str(dataset), "--out", str(workdir / "run")]) == 0
    return workdir / "run"


def test_gen_data_writes_splits(dataset):
    for name, count in (("train", 24), ("val", 8), ("test", 8)):
        manifest = json.loads((dataset / name / "manifest.json").read_text())
        assert manifest["count"] == count and manifest["seed"] == 3
    starts = [json.loads((dataset / n / "manifest.json").read_text())["start_index"] for n in ("train", "val", "test")]
    assert starts == [0, 24, 32]


def test_train_outputs(trained):
    recs = lines((trained / "metrics.jsonl").read_text())
    assert [r["epoch"] for r in recs[:-1]] == [1, 2]
    assert recs[-1]["summary"] and recs[-1]["tp"] + recs[-1]["tn"] + recs[-1]["fp"] + recs[-1]["fn"] == 8
    assert (trained / "checkpoint.pmap").stat().st_size > 0
    assert (trained / "curves.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_eval_matches_training_summary(trained, dataset, capsys):
    capsys.readouterr()
    assert main(["eval", "--checkpoint", str(trained / "checkpoint.pmap"), "--data", str(dataset / "test")]) == 0
    out = lines(capsys.readouterr().out)[-1]
    final = lines((trained / "metrics.jsonl").read_text())[-1]
    assert out["test_accuracy"] == final["test_accuracy"]


def test_ablate_variant(workdir, dataset, capsys):
    cfg = workdir / "train.json"
    assert main(["ablate", "--variant", "no_tci_cross", "--config", str(cfg), "--data", str(dataset),
                 "--out", str(workdir / "abl")]) == 0
    assert lines(capsys.readouterr().out)[-1]["variant"] == "no_tci_cross"


def test_bench_csv_and_plot(tmp_path, capsys):
    assert main(["bench", "--lengths", "256", "--channels", "2", "--out", str(tmp_path)]) == 0
    rows = lines(capsys.readouterr().out)
    assert {r["mode"] for r in rows} == {"scan", "conv", "fft"}
    assert (tmp_path / "bench.csv").read_text().splitlines()[0].startswith("length,mode")
    assert (tmp_path / "throughput.png").exists()


def test_import_subcommand(tmp_path):
    np.savez(tmp_path / "a.npz", trajectory=np.zeros((2, 8, 8)), text_tokens=np.ones((2, 2, 4)),
             image_tokens=np.ones((2, 3, 4)), labels=np.array([0, 1]))
    assert main(["import", "--npz", str(tmp_path / "a.npz"), "--out", str(tmp_path / "d")]) == 0
    assert json.loads((tmp_path / "d" / "manifest.json").read_text())["count"] == 2


def test_format_error_goes_to_stderr(tmp_path, capsys):
    (tmp_path / "bad.pmap").write_bytes(b"NOTACKPT")
    assert main(["eval", "--checkpoint", str(tmp_path / "bad.pmap"), "--data", str(tmp_path)]) == 1
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "format" and "magic" in err["message"]


def test_config_error_exit_code(tmp_path, dataset, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"decoder_depth": 0}))
    assert main(["train", "--config", str(cfg), "--data", str(dataset), "--out", str(tmp_path / "o")]) == 1
    assert json.loads(capsys.readouterr().err)["error"] == "config"


def test_missing_data_is_reported(tmp_path, capsys):
    assert main(["train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]) == 1
    assert json.loads(capsys.readouterr().err)["error"] in ("format", "io")
