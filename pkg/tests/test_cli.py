import json

import pytest

from fedre import datagen, nn
from fedre.cli import main

SMALL = ["--height", "8", "--width", "8", "--n-samples", "72", "--n-test", "8",
         "--public-per-format", "2", "--psi-samples", "2", "--lr", "1", "--delta", "1e-3"]


def train(out, *extra):
    return main(["train", *SMALL, "--output", str(out), *extra])


def test_train_one_round_one_client(tmp_path):
    assert train(tmp_path / "r", "--rounds", "1", "--clients", "1") == 0
    lines = (tmp_path / "r" / "history.csv").read_text().splitlines()
    assert lines[0] == "round,clients,loss,iou,precision,recall,f_score"
    assert len(lines) == 2
    summary = json.loads((tmp_path / "r" / "summary.json").read_text())
    assert summary["rounds_run"] == 1 and summary["config"]["clients"] == 1
    assert nn.load_model(tmp_path / "r" / "model.bin").layer_count == 2
    assert len(json.loads((tmp_path / "r" / "history.json").read_text())) == 1


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text("[federation]\nrounds = 3\nclients = 2\n")
    assert train(tmp_path / "r", "--config", str(cfg), "--rounds", "1") == 0
    assert json.loads((tmp_path / "r" / "summary.json").read_text())["rounds_run"] == 1


def test_exit_codes(tmp_path, capsys):
    assert train(tmp_path / "r", "--epsilon", "-1") == 1
    assert "epsilon" in capsys.readouterr().err
    bad = tmp_path / "bad.cfg"
    bad.write_text("colour = blue\n")
    assert train(tmp_path / "r", "--config", str(bad)) == 1
    assert "line 1" in capsys.readouterr().err
    junk = tmp_path / "junk.bin"
    junk.write_bytes(b"garbage!")
    assert main(["attack", "--model", str(junk), "--data", str(junk), "--output", str(tmp_path)]) == 1
    assert main(["report", str(tmp_path / "nowhere"), "--out", str(tmp_path / "rep")]) == 1
    with pytest.raises(SystemExit):
        main(["train", "--no-such-flag"])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numeric_failure_exit_code(tmp_path, capsys):
    # a huge step overflows the logits within a couple of rounds
    code = train(tmp_path / "r", "--rounds", "5", "--clients", "1", "--epsilon", "inf",
                 "--clip", "1e300", "--lr", "1e300", "--aggregation", "fedavg")
    assert code == 2
    assert "round 0: non-finite" in capsys.readouterr().err


def test_gen_data(tmp_path):
    out = tmp_path / "d.bin"
    assert main(["gen-data", "--out", str(out), "--n-samples", "12", "--n-test", "2", "--height", "10", "--width", "9"]) == 0
    s = datagen.load_dataset(out)
    assert len(s) == 12 and s[0].image.shape == (1, 10, 9)


def test_pda_gain_report(tmp_path):
    for agg in ("fedavg", "pda"):
        for K in (1, 2, 3, 4):
            assert train(tmp_path / "runs" / f"{agg}-{K}", "--rounds", "1", "--clients", str(K), "--aggregation", agg) == 0
    assert main(["report", str(tmp_path / "runs"), "--out", str(tmp_path / "rep"), "--tables", "pda-gain,psi"]) == 0
    rows = (tmp_path / "rep" / "pda_gain_vs_clients.csv").read_text().splitlines()
    assert rows[0] == "epsilon,clients,runs_fedavg,runs_pda,iou_fedavg,iou_pda,gain"
    assert len(rows) == 5
    for r in rows[1:]:
        *_, a, b, gain = r.split(",")
        assert float(gain) == pytest.approx(float(b) - float(a), abs=1e-15)
    psi = (tmp_path / "rep" / "psi_scores.csv").read_text().splitlines()
    assert psi[0] == "layer,psi,uploads" and len(psi) == 3


def test_partial_sweep_lists_absent_cells(tmp_path, capsys):
    train(tmp_path / "runs" / "a", "--rounds", "1", "--clients", "1", "--aggregation", "fedavg")
    train(tmp_path / "runs" / "b", "--rounds", "1", "--clients", "2", "--aggregation", "pda")
    assert main(["report", str(tmp_path / "runs"), "--out", str(tmp_path / "rep")]) == 1
    err = capsys.readouterr().err
    assert "clients=1, aggregation=pda" in err and "clients=2, aggregation=fedavg" in err
    assert not (tmp_path / "rep").exists()


def test_attack_and_defense_report(tmp_path):
    data = tmp_path / "d.bin"
    main(["gen-data", "--out", str(data), "--n-samples", "2", "--n-test", "1", "--height", "8", "--width", "8"])
    model = tmp_path / "m.bin"
    nn.save_model(nn.dense_model(0), model)
    for eps in ("inf", "10"):
        out = tmp_path / "att" / eps
        code = main(["attack", "--model", str(model), "--data", str(data), "--epsilon", eps, "--rounds", "1",
                     "--delta", "1e-3", "--clip", "0.1", "--attack-iterations", "30", "--output", str(out)])
        assert code == 0
        rec = json.loads((out / "attack.json").read_text())
        assert set(rec["result"]) >= {"mse", "ssim", "psnr"}
        assert (out / "target.bin").exists() and (out / "reconstruction.bin").exists()
    # replaying a saved upload gives the same reconstruction
    again = tmp_path / "again"
    main(["attack", "--model", str(model), "--data", str(data), "--gradients", str(tmp_path / "att" / "10" / "target.bin"),
          "--attack-iterations", "30", "--output", str(again)])
    assert (again / "attack.csv").read_bytes() == (tmp_path / "att" / "10" / "attack.csv").read_bytes()
    assert main(["report", str(tmp_path / "att"), "--out", str(tmp_path / "rep")]) == 0
    rows = (tmp_path / "rep" / "defense_vs_epsilon.csv").read_text().splitlines()
    assert rows[0] == "epsilon,allocation,runs,mse,ssim,psnr"
    assert [r.split(",")[0] for r in rows[1:]] == ["10", "inf"]
    assert main(["attack", "--model", str(model), "--data", str(data), "--attack-index", "5", "--output", str(again)]) == 1


def test_byte_identical_reruns(tmp_path):
    for name in ("a", "b"):
        assert train(tmp_path / name, "--rounds", "2", "--clients", "2", "--seed", "9") == 0
    for f in ("history.csv", "history.json", "summary.json", "model.bin"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
