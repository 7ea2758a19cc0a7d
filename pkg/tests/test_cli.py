import json
import logging
import shutil

import pytest

from contrank.cli import _perturb_output_path, build_parser, main
from contrank.corpus import load_dataset


@pytest.fixture(autouse=True)
def _drop_cli_log_handlers():
    # main() calls logging.basicConfig, which binds a handler to the stream
    # active at that moment; drop it so later tests capture cleanly
    yield
    root = logging.getLogger()
    for handler in list(root.handlers):
        if isinstance(handler, logging.StreamHandler) and not handler.get_name():
            root.removeHandler(handler)


TRAIN_CONFIG = {
    "loss": {"hinge_margin": 2.0, "w1": 1.0, "w2": 0.0},
    "batch": {"regime": "mhl", "positives_per_batch": 1, "negatives_per_query": 3, "seed": 3},
    "miner": {"method": "none"},
    "learning_rate": 0.01,
    "max_epochs": 2,
    "grad_accumulation_steps": 2,
    "embedding_dim": 8,
    "hidden_dim": 8,
    "output_dim": 4,
    "max_len": 16,
    "seed": 3,
}


@pytest.fixture(scope="module")
def config_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("config") / "config.json"
    path.write_text(json.dumps(TRAIN_CONFIG))
    return path


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory, config_path, data_dir):
    out = tmp_path_factory.mktemp("run")
    rc = main(
        [
            "train",
            "--config",
            str(config_path),
            "--train",
            str(data_dir / "toy_train.jsonl"),
            "--valid",
            str(data_dir / "toy_test.jsonl"),
            "--out",
            str(out),
        ]
    )
    assert rc == 0
    return out


class TestTrainCommand:
    def test_writes_checkpoint_and_histories(self, run_dir):
        assert (run_dir / "checkpoint.json").exists()
        assert (run_dir / "history.csv").exists()
        assert (run_dir / "epochs.csv").exists()

    def test_history_has_header_and_rows(self, run_dir):
        lines = (run_dir / "history.csv").read_text().splitlines()
        assert lines[0] == "step,epoch,l_rank,l_con,l_combined,w1,w2"
        assert len(lines) > 1

    def test_reports_best_map(self, config_path, data_dir, tmp_path, capsys):
        rc = main(
            [
                "train",
                "--config",
                str(config_path),
                "--train",
                str(data_dir / "toy_train.jsonl"),
                "--valid",
                str(data_dir / "toy_test.jsonl"),
                "--out",
                str(tmp_path / "run"),
            ]
        )
        assert rc == 0
        out = capsys.readouterr().out
        assert "best validation MAP" in out

    def test_bad_config_key_fails(self, data_dir, tmp_path, capsys):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"learning_rat": 0.1}))
        rc = main(
            [
                "train",
                "--config",
                str(config),
                "--train",
                str(data_dir / "toy_train.jsonl"),
                "--valid",
                str(data_dir / "toy_test.jsonl"),
                "--out",
                str(tmp_path / "run"),
            ]
        )
        assert rc == 1
        assert "error:" in capsys.readouterr().err


class TestEvalCommand:
    def test_prints_json_report(self, run_dir, data_dir, capsys):
        rc = main(
            [
                "eval",
                "--checkpoint",
                str(run_dir / "checkpoint.json"),
                "--data",
                str(data_dir / "toy_test.jsonl"),
            ]
        )
        assert rc == 0
        report = json.loads(capsys.readouterr().out)
        assert set(report) == {
            "map",
            "mrr",
            "p_at_k",
            "num_queries_evaluated",
            "num_queries_skipped",
        }
        assert report["num_queries_evaluated"] == 10
        assert 0.0 <= report["map"] <= 1.0

    def test_report_file_matches_stdout(self, run_dir, data_dir, tmp_path, capsys):
        report_path = tmp_path / "report.json"
        rc = main(
            [
                "eval",
                "--checkpoint",
                str(run_dir / "checkpoint.json"),
                "--data",
                str(data_dir / "toy_test.jsonl"),
                "--report",
                str(report_path),
                "--ks",
                "1,3",
            ]
        )
        assert rc == 0
        from_file = json.loads(report_path.read_text())
        from_stdout = json.loads(capsys.readouterr().out)
        assert from_file == from_stdout
        assert set(from_file["p_at_k"]) == {"1", "3"}

    def test_per_query_table(self, run_dir, data_dir, tmp_path):
        per_query = tmp_path / "per_query.tsv"
        rc = main(
            [
                "eval",
                "--checkpoint",
                str(run_dir / "checkpoint.json"),
                "--data",
                str(data_dir / "toy_test.jsonl"),
                "--per-query",
                str(per_query),
            ]
        )
        assert rc == 0
        lines = per_query.read_text().splitlines()
        assert lines[0].split("\t") == [
            "query_id",
            "num_candidates",
            "num_relevant",
            "ap",
            "rr",
            "p_at_1",
        ]
        assert len(lines) == 11

    def test_bad_ks_rejected(self, run_dir, data_dir, capsys):
        rc = main(
            [
                "eval",
                "--checkpoint",
                str(run_dir / "checkpoint.json"),
                "--data",
                str(data_dir / "toy_test.jsonl"),
                "--ks",
                "0",
            ]
        )
        assert rc == 1
        assert "--ks" in capsys.readouterr().err

    def test_missing_checkpoint_fails(self, data_dir, tmp_path, capsys):
        rc = main(
            [
                "eval",
                "--checkpoint",
                str(tmp_path / "nope.json"),
                "--data",
                str(data_dir / "toy_test.jsonl"),
            ]
        )
        assert rc == 1
        assert "error:" in capsys.readouterr().err


class TestPerturbCommand:
    def test_output_path_naming(self):
        assert _perturb_output_path("a/toy_test.jsonl", "typo").name == "toy_test.typo.jsonl"
        assert _perturb_output_path("a/pairs.tsv", "punctuation").name == "pairs.punctuation.jsonl"
        assert _perturb_output_path("a/raw", "contraction").name == "raw.contraction.jsonl"

    def test_writes_one_file_per_type(self, data_dir, tmp_path):
        data = tmp_path / "toy_test.jsonl"
        shutil.copy(data_dir / "toy_test.jsonl", data)
        rc = main(["perturb", "--data", str(data), "--types", "punctuation,typo", "--seed", "7"])
        assert rc == 0
        for ptype in ("punctuation", "typo"):
            out = tmp_path / f"toy_test.{ptype}.jsonl"
            perturbed = load_dataset(out, split="test")
            assert len(perturbed) == 10

    def test_candidates_survive_unchanged(self, data_dir, tmp_path):
        data = tmp_path / "toy_test.jsonl"
        shutil.copy(data_dir / "toy_test.jsonl", data)
        assert main(["perturb", "--data", str(data), "--types", "typo", "--seed", "7"]) == 0
        original = load_dataset(data, split="test")
        perturbed = load_dataset(tmp_path / "toy_test.typo.jsonl", split="test")
        for g, og in zip(perturbed.groups, original.groups):
            assert g.query_id == og.query_id
            assert g.candidates == og.candidates
            assert g.query_text != og.query_text

    def test_same_seed_reproduces_bytes(self, data_dir, tmp_path):
        outputs = []
        for name in ("first", "second"):
            workdir = tmp_path / name
            workdir.mkdir()
            data = workdir / "toy_test.jsonl"
            shutil.copy(data_dir / "toy_test.jsonl", data)
            assert main(["perturb", "--data", str(data), "--seed", "7"]) == 0
            outputs.append(
                {p: (workdir / f"toy_test.{p}.jsonl").read_bytes() for p in ("punctuation", "typo", "contraction")}
            )
        assert outputs[0] == outputs[1]

    def test_unknown_type_fails(self, data_dir, tmp_path, capsys):
        data = tmp_path / "toy_test.jsonl"
        shutil.copy(data_dir / "toy_test.jsonl", data)
        rc = main(["perturb", "--data", str(data), "--types", "scramble"])
        assert rc == 1
        assert "unknown perturbation type" in capsys.readouterr().err


class TestGradcheckCommand:
    def test_passes_within_tolerance(self, config_path, data_dir, capsys):
        rc = main(
            [
                "gradcheck",
                "--config",
                str(config_path),
                "--data",
                str(data_dir / "toy_train.jsonl"),
                "--probes",
                "40",
            ]
        )
        assert rc == 0
        assert "max relative error" in capsys.readouterr().out

    def test_fails_beyond_tolerance(self, config_path, data_dir, capsys):
        rc = main(
            [
                "gradcheck",
                "--config",
                str(config_path),
                "--data",
                str(data_dir / "toy_train.jsonl"),
                "--probes",
                "40",
                "--tolerance",
                "1e-12",
            ]
        )
        assert rc == 1
        assert "exceeds tolerance" in capsys.readouterr().err


class TestDumpEmbeddingsCommand:
    def test_writes_tsv(self, run_dir, data_dir, tmp_path, capsys):
        out = tmp_path / "embeddings.tsv"
        rc = main(
            [
                "dump-embeddings",
                "--checkpoint",
                str(run_dir / "checkpoint.json"),
                "--data",
                str(data_dir / "toy_test.jsonl"),
                "--out",
                str(out),
            ]
        )
        assert rc == 0
        lines = out.read_text().splitlines()
        assert len(lines) == 61
        assert lines[0].startswith("query_id\tdoc_id\tlabel\tdim_0")
        assert "wrote 60 rows" in capsys.readouterr().out


class TestParser:
    def test_subcommand_required(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args([])

    def test_unknown_command_rejected(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["export"])
