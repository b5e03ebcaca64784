import json
import os

import pytest

from gaitsig.evalcli.cli import main


@pytest.fixture(scope="module")
def cli_run(tmp_path_factory):
    """synth -> preprocess -> train on a tiny dataset; later tests reuse the artefacts."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps({"width_scale": 0.125, "augment_train": False,
                               "schedules": [{"batch_size": 16, "max_epochs": 1}],
                               "finetune": {"batch_size": 16, "max_epochs": 2}}))
    data = root / "data"
    assert main(["synth", "--subjects", "4", "--frames", "30", "--out", str(data), "--seed", "2"]) == 0
    assert main(["preprocess", "--dataset", str(data), "--subjects", "s002,s003", "--out", str(root / "rep")]) == 0
    assert main(["preprocess", "--dataset", str(data), "--subjects", "s000,s001", "--sequences", "N1,N2,N3,N4",
                 "--out", str(root / "gal")]) == 0
    assert main(["--config", str(cfg), "train", "--archive", str(root / "rep" / "cuboids.gfcb"),
                 "--out", str(root / "net")]) == 0
    return root, cfg, data


def test_usage_errors_exit_1(capsys):
    assert main(["bogus"]) == 1
    assert main([]) == 1
    assert main(["gradcheck", "--networks", "x"]) == 1
    assert main(["--seed", "-1", "gradcheck", "--networks", "1"]) == 1


def test_help_exits_0(capsys):
    assert main(["--help"]) == 0
    assert "evaluate" in capsys.readouterr().out


def test_data_error_exit_2(tmp_path, capsys):
    assert main(["preprocess", "--dataset", str(tmp_path / "nowhere")]) == 2
    assert "data error" in capsys.readouterr().err


def test_config_error_exit_1(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"train_subjects": ["a"], "test_subjects": ["a"]}))
    assert main(["--config", str(cfg), "evaluate"]) == 1
    assert main(["--config", str(tmp_path / "absent.json"), "evaluate"]) == 1


def test_gradcheck_exit_codes(capsys):
    assert main(["gradcheck", "--networks", "3"]) == 0
    assert "ok" in capsys.readouterr().out
    assert main(["gradcheck", "--networks", "2", "--tolerance", "1e-30"]) == 3


def test_threads_flag():
    assert main(["--threads", "1", "gradcheck", "--networks", "1"]) == 0
    assert main(["--threads", "0", "gradcheck", "--networks", "1"]) == 1


def test_synth_png(tmp_path):
    assert main(["synth", "--subjects", "1", "--frames", "6", "--format", "png", "--out", str(tmp_path)]) == 0
    assert os.path.exists(tmp_path / "s000" / "N1" / "frame_000006.png")


def test_train_outputs(cli_run):
    root, _, _ = cli_run
    assert os.path.exists(root / "net" / "network.gfnn")
    assert os.path.exists(root / "net" / "history_stage4.csv")
    manifest = json.loads((root / "rep" / "cuboids.gfcb.json").read_text())
    assert manifest["subjects"] == ["s002", "s003"]


def test_finetune_extract_and_classifiers(cli_run):
    root, cfg, data = cli_run
    net = str(root / "net" / "network.gfnn")
    gal = str(root / "gal" / "cuboids.gfcb")
    assert main(["--config", str(cfg), "finetune", "--checkpoint", net, "--archive", gal,
                 "--out", str(root / "ft")]) == 0
    assert os.path.exists(root / "ft" / "finetuned.gfnn")
    assert main(["extract", "--checkpoint", net, "--archive", gal, "--augment", "--out", str(root / "sig")]) == 0
    meta = json.loads((root / "sig" / "signatures.gfgl.json").read_text())
    assert len(meta["subjects"]) == 8 * 18
    sig = str(root / "sig" / "signatures.gfgl")
    assert main(["fit-classifier", "svm", "--signatures", sig, "--out", str(root / "svm")]) == 0
    assert os.path.exists(root / "svm" / "identity.gfsv")
    assert main(["fit-classifier", "pca-nn", "--signatures", sig, "--pca-dim", "64", "--out", str(root / "nn")]) == 0
    assert os.path.exists(root / "nn" / "pca.gfpc")
    assert main(["fit-classifier", "gender", "--signatures", sig, "--out", str(root / "g")]) == 1


def test_gender_classifier(cli_run):
    root, _, data = cli_run
    net = str(root / "net" / "network.gfnn")
    assert main(["preprocess", "--dataset", str(data), "--out", str(root / "all")]) == 0
    assert main(["extract", "--checkpoint", net, "--archive", str(root / "all" / "cuboids.gfcb"),
                 "--out", str(root / "allsig")]) == 0
    rc = main(["fit-classifier", "gender", "--signatures", str(root / "allsig" / "signatures.gfgl"),
               "--dataset", str(data), "--out", str(root / "g")])
    assert rc == 0 and os.path.exists(root / "g" / "gender.gfsv")


def test_evaluate_prints_table(cli_run, capsys):
    root, _, data = cli_run
    cfg = root / "eval.json"
    cfg.write_text(json.dumps({"dataset": str(data), "test_subjects": ["s000", "s001"],
                               "train_subjects": ["s002", "s003"], "train_network": False,
                               "checkpoint": str(root / "net" / "network.gfnn")}))
    assert main(["--config", str(cfg), "--out", str(root / "ev"), "evaluate", "--protocol", "A"]) == 0
    out = capsys.readouterr().out
    assert "rank-1" in out and os.path.exists(root / "ev" / "report.json")
