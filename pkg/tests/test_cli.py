import json
import subprocess
import sys

import pytest

from sigrank.cli import main
from sigrank.datasets import generate_virtual_corpus, save_corpus


def test_extract_fixture(data_dir, tmp_path, capsys):
    out = tmp_path / "p.json"
    assert main(["extract", str(data_dir / "svc_sample.txt"), "-o", str(out)]) == 0
    assert "snr_db" in capsys.readouterr().out
    first = out.read_bytes()
    doc = json.loads(first)
    assert len(doc["components"]) == 2
    assert main(["extract", str(data_dir / "svc_sample.txt"), "-o", str(out)]) == 0
    assert out.read_bytes() == first


def test_extract_reports_high_snr(tmp_path, capsys):
    from conftest import make_template
    from sigrank.signature import write_canonical

    src = tmp_path / "sig.json"
    src.write_bytes(write_canonical(make_template()))
    assert main(["extract", str(src), "-o", str(tmp_path / "p.json")]) == 0
    rows = capsys.readouterr().out.splitlines()[1:]
    assert len(rows) == 2 and all(float(r.split()[2]) > 20 for r in rows)


def test_missing_input_exit_2(tmp_path, capsys):
    assert main(["extract", str(tmp_path / "nope.txt"), "-o", str(tmp_path / "x.json")]) == 2
    assert "nope.txt" in capsys.readouterr().err


def test_malformed_input_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("2\n0 0 0 1\n")
    assert main(["extract", str(bad), "-o", str(tmp_path / "x.json")]) == 2
    assert "line" in capsys.readouterr().err


@pytest.mark.parametrize("extra", [["--loss", "hinge"], ["--g1-size", "0"], ["--protocol", "t3"],
                                   ["--lambda", "-1"], ["--folds", "0"]])
def test_bad_config_exit_1(tmp_path, extra):
    assert main(["train", "--output-dir", str(tmp_path), *extra]) == 1
    assert not (tmp_path / "config.json").exists()


def test_unknown_flag_exit_1(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--bogus-flag"])
    assert exc.value.code == 1


def test_unknown_config_key_exit_1(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"loss": "ap", "learning_rate": 0.1}))
    assert main(["train", "--config", str(cfg)]) == 1


def test_gradcheck_pass_and_injected_fault(capsys):
    assert main(["gradcheck"]) == 0
    assert "FAIL" not in capsys.readouterr().out
    assert main(["gradcheck", "--inject-sign-error", "conv3.weight"]) == 3
    assert "network:conv3.weight" in capsys.readouterr().err


def test_gen_corpus(tmp_path):
    assert main(["gen-corpus", "-o", str(tmp_path / "c"), "--signers", "2", "--genuine", "3"]) == 0
    assert len(list((tmp_path / "c").glob("*/genuine/*.json"))) == 6


def test_synth_pools(data_dir, tmp_path):
    assert main(["synth", str(data_dir / "svc_sample_canonical.json"), "-o", str(tmp_path / "pools"),
                 "--pool-size", "3", "--g1-size", "2", "--g2-size", "2"]) == 0
    assert len(list((tmp_path / "pools").glob("p[12]_*.json"))) == 6


@pytest.fixture(scope="module")
def tiny_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    save_corpus(generate_virtual_corpus(4, 6, seed=2, forgeries_per_signer=3), root)
    return root


def _run(tiny_corpus, out, *extra):
    return ["--threads", "1", "--dataset-root", str(tiny_corpus), "--output-dir", str(out), "--folds", "2",
            "--group-source", "real-both", "--g1-size", "2", "--g2-size", "2", "--pool-size", "2",
            "--total-batches", "4", "--trials", "3", *extra]


def test_train_eval_resume_plot(tiny_corpus, tmp_path):
    out = tmp_path / "run"
    args = _run(tiny_corpus, out, "--checkpoint-every", "2")
    assert main(["train", *args[2:]]) == 0
    assert (out / "fold1.ckpt").exists() and (out / "fold0_000002.ckpt").exists()
    metrics = (out / "fold0_metrics.csv").read_text().splitlines()
    assert metrics[0] == "batch_idx,ap_loss,ce_loss,train_ap" and len(metrics) == 5

    assert main(["eval", *args[2:]]) == 0
    rep = json.loads((out / "eer_report.json").read_text())
    assert len(rep["folds"]) == 2 and 0 <= rep["mean"]["t5_global"] <= 100
    assert main(["eval", *args[2:]]) == 0
    assert json.loads((out / "eer_report.json").read_text()) == rep

    assert main(["plot-data", *args[2:]]) == 0
    lines = (out / "plot_data.csv").read_text().splitlines()
    assert lines[0] == "batch_idx,eer_t5,eer_t1" and [l.split(",")[0] for l in lines[1:]] == ["2", "4"]

    # resume: extend the schedule and continue from the saved state
    assert main(["train", *_run(tiny_corpus, out, "--checkpoint-every", "2")[2:-4],
                 "--total-batches", "6", "--trials", "3", "--resume"]) == 0
    assert len((out / "fold0_metrics.csv").read_text().splitlines()) == 7


def test_eval_arch_mismatch_names_tensor(tiny_corpus, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["train", *_run(tiny_corpus, out)[2:]]) == 0
    # evaluating with a different fold split changes the class count
    assert main(["eval", *_run(tiny_corpus, out)[2:-4], "--folds", "1", "--trials", "3"]) == 1
    assert "fc_softmax" in capsys.readouterr().err


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-c", "import sys; from sigrank.cli import main; sys.exit(main())", "--help"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "gradcheck" in r.stdout
