import csv
import io
import sys

import numpy as np
import pytest

from slotintent.cli import main
from slotintent.data import load_corpus_file, parse_corpus, serialize_corpus, save_corpus_file
from slotintent.trainer import Checkpoint

from helpers import tiny_corpus


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("corpus")
    code = main(["gen-data", "--out", str(path), "--n-train", "120", "--n-dev", "12",
                 "--n-test", "30", "--seed", "11"])
    assert code == 0
    return path


@pytest.fixture(scope="module")
def trained(tmp_path_factory, data_dir):
    """One small joint attention tagger, trained to memorize its training
    split, shared by the read-only CLI tests."""
    fit_dir = tmp_path_factory.mktemp("fit")
    train_text = (data_dir / "train.txt").read_bytes()
    (fit_dir / "train.txt").write_bytes(train_text)
    (fit_dir / "dev.txt").write_bytes(train_text)  # select on training fit
    out = tmp_path_factory.mktemp("ckpt") / "model.ckpt"
    code = main([
        "train", "--data", str(fit_dir), "--out", str(out),
        "--arch", "birnn", "--attention", "true", "--task", "joint",
        "--hidden", "24", "--embedding-dim", "24", "--label-embedding-dim", "12",
        "--att-dim", "12", "--dropout-keep", "1.0", "--lr", "0.01",
        "--epochs", "200", "--patience", "8", "--eval-every", "10", "--seed", "3",
    ])
    assert code == 0
    return out


class TestGenData:
    def test_deterministic_bytes(self, tmp_path, capsys):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run(capsys, "gen-data", "--out", str(a), "--n-train", "50", "--seed", "7")[0] == 0
        assert run(capsys, "gen-data", "--out", str(b), "--n-train", "50", "--seed", "7")[0] == 0
        for name in ("train.txt", "dev.txt", "test.txt"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_zero_train_is_usage_error(self, tmp_path, capsys):
        code, _, err = run(capsys, "gen-data", "--out", str(tmp_path / "x"), "--n-train", "0")
        assert code == 2
        assert "n-train" in err

    def test_outputs_reparse(self, data_dir):
        for name, expected in (("train.txt", 60), ("dev.txt", 12), ("test.txt", 20)):
            utts = load_corpus_file(data_dir / name)
            assert len(utts) == expected

    def test_custom_grammar_file(self, tmp_path, capsys):
        grammar = tmp_path / "g.json"
        grammar.write_text(
            '{"templates": [{"intent": "ping", "tokens": ["hit", "{target}"]}],'
            ' "lexicons": {"target": [["alpha"], ["beta", "site"]]}}'
        )
        code, out, _ = run(
            capsys, "gen-data", "--out", str(tmp_path / "d"), "--n-train", "10",
            "--n-test", "5", "--grammar", str(grammar),
        )
        assert code == 0
        utts = load_corpus_file(tmp_path / "d" / "train.txt")
        assert {u.intent for u in utts} == {"ping"}


class TestTrain:
    def test_writes_checkpoint_and_metrics(self, trained, data_dir):
        assert trained.exists()
        metrics = trained.parent / (trained.name + ".metrics.tsv")
        lines = metrics.read_text().strip().split("\n")
        assert all(len(line.split("\t")) == 4 for line in lines)
        ckpt = Checkpoint.load(trained)
        assert ckpt.model_config.architecture == "birnn"

    def test_invalid_variant_combo(self, data_dir, tmp_path, capsys):
        code, _, err = run(
            capsys, "train", "--data", str(data_dir), "--out", str(tmp_path / "x.ckpt"),
            "--arch", "encdec", "--aligned", "false", "--attention", "false",
        )
        assert code == 2
        assert "attention" in err

    def test_unknown_config_key(self, data_dir, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("epochz = 3\n")
        code, _, err = run(
            capsys, "train", "--config", str(cfg), "--data", str(data_dir),
            "--out", str(tmp_path / "x.ckpt"),
        )
        assert code == 2
        assert "epochz" in err

    def test_missing_required_flag(self, capsys):
        code, _, err = run(capsys, "train", "--data", "somewhere")
        assert code == 2
        assert "--out" in err

    def test_determinism_byte_identical(self, data_dir, tmp_path, capsys):
        outs = []
        for name in ("r1", "r2"):
            out = tmp_path / f"{name}.ckpt"
            code, _, _ = run(
                capsys, "train", "--data", str(data_dir), "--out", str(out),
                "--hidden", "8", "--embedding-dim", "8", "--label-embedding-dim", "4",
                "--att-dim", "4", "--epochs", "3", "--seed", "5",
            )
            assert code == 0
            outs.append(out)
        assert outs[0].read_bytes() == outs[1].read_bytes()
        m0 = outs[0].parent / (outs[0].name + ".metrics.tsv")
        m1 = outs[1].parent / (outs[1].name + ".metrics.tsv")
        assert m0.read_bytes() == m1.read_bytes()


class TestPrintConfig:
    def test_roundtrip_reproduces_resolution(self, tmp_path, capsys):
        code, out, _ = run(
            capsys, "train", "--print-config", "--data", "corpus", "--out", "model.ckpt",
            "--hidden", "32", "--seed", "9",
        )
        assert code == 0
        assert "hidden = 32" in out
        assert "lr = 0.001" in out
        assert "batch_size = 16" in out
        cfg_file = tmp_path / "resolved.cfg"
        cfg_file.write_text(out)
        code2, out2, _ = run(capsys, "train", "--print-config", "--config", str(cfg_file))
        assert code2 == 0
        assert out2 == out

    def test_defaults_match_training_recipe(self, capsys):
        _, out, _ = run(capsys, "train", "--print-config", "--data", "d", "--out", "o")
        resolved = dict(line.split(" = ") for line in out.strip().split("\n"))
        assert resolved["hidden"] == "128"
        assert resolved["embedding_dim"] == "128"
        assert resolved["batch_size"] == "16"
        assert resolved["dropout_keep"] == "0.5"
        assert resolved["max_grad_norm"] == "5.0"
        assert resolved["lr"] == "0.001"


class TestEval:
    def test_reports_scores(self, trained, data_dir, capsys):
        code, out, err = run(capsys, "eval", "--ckpt", str(trained), "--data", str(data_dir / "test.txt"))
        assert code == 0
        kv = dict(line.split("=", 1) for line in out.strip().split("\n"))
        assert float(kv["slot_f1"]) > 80.0
        assert float(kv["intent_error"]) < 20.0
        assert "slot F1" in err  # human table on stderr

    def test_overfit_train_split_scores_high(self, trained, data_dir, capsys):
        code, out, _ = run(capsys, "eval", "--ckpt", str(trained), "--data", str(data_dir / "train.txt"))
        assert code == 0
        kv = dict(line.split("=", 1) for line in out.strip().split("\n"))
        assert float(kv["slot_f1"]) == 100.0
        assert float(kv["intent_error"]) == 0.0

    def test_beam_logprob_monotone(self, trained, data_dir, capsys):
        _, out1, _ = run(capsys, "eval", "--ckpt", str(trained), "--data", str(data_dir / "test.txt"), "--beam", "1")
        _, out4, _ = run(capsys, "eval", "--ckpt", str(trained), "--data", str(data_dir / "test.txt"), "--beam", "4")
        lp1 = float(dict(l.split("=", 1) for l in out1.strip().split("\n"))["decode_logprob"])
        lp4 = float(dict(l.split("=", 1) for l in out4.strip().split("\n"))["decode_logprob"])
        assert lp4 >= lp1 - 1e-9

    def test_vocabulary_mismatch_names_checkpoint(self, trained, tmp_path, capsys):
        alien = tmp_path / "alien.txt"
        alien.write_text("intent: warp\nengage\tB-speed\n", encoding="utf-8")
        code, _, err = run(capsys, "eval", "--ckpt", str(trained), "--data", str(alien))
        assert code == 1
        assert "mismatch" in err and str(trained) in err

    def test_missing_checkpoint_is_runtime_error(self, data_dir, capsys):
        code, _, _ = run(capsys, "eval", "--ckpt", "/nonexistent.ckpt", "--data", str(data_dir / "test.txt"))
        assert code == 1


class TestPredict:
    def test_output_reparses_as_corpus(self, trained, data_dir, capsys, monkeypatch):
        utts = load_corpus_file(data_dir / "test.txt")[:3]
        stdin = "\n\n".join("\n".join(u.tokens) for u in utts) + "\n"
        monkeypatch.setattr(sys, "stdin", io.StringIO(stdin))
        code, out, _ = run(capsys, "predict", "--ckpt", str(trained))
        assert code == 0
        parsed = parse_corpus(out)
        assert len(parsed) == 3
        assert [p.tokens for p in parsed] == [u.tokens for u in utts]

    def test_empty_block_warns(self, trained, capsys, monkeypatch):
        monkeypatch.setattr(sys, "stdin", io.StringIO("hello\n\n\n\ngoodbye\n"))
        code, out, err = run(capsys, "predict", "--ckpt", str(trained))
        assert code == 0
        assert "empty" in err
        assert len(parse_corpus(out)) == 2

    def test_deterministic(self, trained, capsys, monkeypatch):
        outs = []
        for _ in range(2):
            monkeypatch.setattr(sys, "stdin", io.StringIO("book me a flight\n"))
            outs.append(run(capsys, "predict", "--ckpt", str(trained))[1])
        assert outs[0] == outs[1]


class TestXval:
    def test_two_folds_and_mean(self, tmp_path, capsys):
        corpus = tmp_path / "all.txt"
        save_corpus_file(corpus, tiny_corpus(20, seed=21))
        code, out, _ = run(
            capsys, "xval", "--data", str(corpus), "--k", "2", "--seed", "2",
            "--hidden", "8", "--embedding-dim", "8", "--label-embedding-dim", "4",
            "--att-dim", "4", "--epochs", "2",
        )
        assert code == 0
        lines = out.strip().split("\n")
        fold_lines = [l for l in lines if l.startswith("fold=")]
        mean_line = [l for l in lines if l.startswith("mean ")][0]
        assert len(fold_lines) == 2
        f1s = [float(l.split("slot_f1=")[1].split()[0]) for l in fold_lines]
        mean_f1 = float(mean_line.split("slot_f1=")[1].split()[0])
        assert abs(mean_f1 - sum(f1s) / 2) < 0.005 + 1e-9

    def test_k_larger_than_corpus(self, tmp_path, capsys):
        corpus = tmp_path / "small.txt"
        save_corpus_file(corpus, tiny_corpus(3, seed=1))
        code, _, err = run(capsys, "xval", "--data", str(corpus), "--k", "10", "--epochs", "1")
        assert code == 1
        assert "exceeds" in err


class TestInspectAttention:
    def test_csv_rows_sum_to_one(self, trained, data_dir, tmp_path, capsys):
        out_csv = tmp_path / "att.csv"
        code, _, _ = run(
            capsys, "inspect-attention", "--ckpt", str(trained),
            "--data", str(data_dir / "test.txt"), "--index", "2", "--out", str(out_csv),
        )
        assert code == 0
        rows = list(csv.reader(out_csv.open()))
        utt = load_corpus_file(data_dir / "test.txt")[2]
        assert len(rows[0]) == 1 + len(utt.tokens)
        for row in rows[1:]:
            assert abs(sum(float(x) for x in row[1:]) - 1.0) < 1e-6

    def test_index_out_of_range(self, trained, data_dir, tmp_path, capsys):
        code, _, err = run(
            capsys, "inspect-attention", "--ckpt", str(trained),
            "--data", str(data_dir / "test.txt"), "--index", "9999", "--out", str(tmp_path / "x.csv"),
        )
        assert code == 2
        assert "out of range" in err

    def test_non_attentive_checkpoint_rejected(self, data_dir, tmp_path, capsys):
        ckpt = tmp_path / "plain.ckpt"
        code, _, _ = run(
            capsys, "train", "--data", str(data_dir), "--out", str(ckpt),
            "--arch", "birnn", "--attention", "false", "--hidden", "8",
            "--embedding-dim", "8", "--label-embedding-dim", "4", "--epochs", "1",
        )
        assert code == 0
        code, _, err = run(
            capsys, "inspect-attention", "--ckpt", str(ckpt),
            "--data", str(data_dir / "test.txt"), "--index", "0", "--out", str(tmp_path / "y.csv"),
        )
        assert code == 1
        assert "attention" in err


class TestUsage:
    def test_no_command(self, capsys):
        assert run(capsys)[0] == 2

    def test_unknown_command(self, capsys):
        assert run(capsys, "frobnicate")[0] == 2

    def test_bad_flag_value(self, data_dir, capsys):
        code, _, err = run(
            capsys, "train", "--data", str(data_dir), "--out", "x.ckpt", "--hidden", "many",
        )
        assert code == 2
        assert "hidden" in err
