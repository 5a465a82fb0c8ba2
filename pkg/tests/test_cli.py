import dataclasses
import json
import math
from pathlib import Path

import pytest

from utrl.cli import (
    EXIT_CONFIG,
    EXIT_OK,
    RunConfig,
    build_parser,
    main,
)

CORPUS = Path(__file__).parent / "fixtures" / "java_corpus"


def toy_flags(tmp_path, **overrides):
    values = dict(
        {
            "dataset-path": "builtin:toy",
            "max-epochs": "2",
            "policy-lr": "0.1",
            "critic-lr": "0.05",
            "kl-target": "inf",
            "max-len": "32",
            "seed": "0",
            "wall-time-s": "2.0",
            "out-dir": str(tmp_path / "run"),
        },
        **overrides,
    )
    flags = []
    for key, value in values.items():
        flags.extend([f"--{key}", value])
    return flags


class TestRunConfig:
    def test_json_round_trip(self, tmp_path):
        config = RunConfig(dataset_path="builtin:toy", kl_target=math.inf, seed=7)
        path = tmp_path / "config.json"
        path.write_text(config.to_json())
        assert RunConfig.from_file(str(path)) == config

    def test_unknown_field_rejected(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"no_such_field": 1}))
        from utrl.cli import ConfigError

        with pytest.raises(ConfigError):
            RunConfig.from_file(str(path))

    def test_flags_override_config_file(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(RunConfig(seed=1).to_json())
        parser = build_parser()
        args = parser.parse_args(["train", "--config", str(path), "--seed", "42"])
        from utrl.cli import resolve_config

        assert resolve_config(args).seed == 42


class TestHelpDocDrift:
    def test_every_config_field_has_a_flag(self):
        parser = build_parser()
        help_text = None
        for action in parser._subparsers._group_actions[0].choices.items():
            name, sub = action
            if name == "train":
                help_text = sub.format_help()
        assert help_text is not None
        for field in dataclasses.fields(RunConfig):
            flag = "--" + field.name.replace("_", "-")
            assert flag in help_text, f"flag {flag} missing from train --help"


class TestExitCodes:
    def test_missing_dataset_is_config_error(self, tmp_path):
        rc = main(["train", "--out-dir", str(tmp_path / "x")])
        assert rc == EXIT_CONFIG

    def test_invalid_config_never_creates_run_dir(self, tmp_path):
        out = tmp_path / "never"
        rc = main(
            ["train", "--dataset-path", "builtin:toy", "--max-epochs", "-3", "--out-dir", str(out)]
        )
        assert rc == EXIT_CONFIG
        assert not out.exists()

    def test_bad_k_rejected_in_evaluate(self, tmp_path):
        rc = main(
            [
                "evaluate",
                "--dataset-path",
                "builtin:toy",
                "--split",
                "train",
                "--eval-samples",
                "5",
                "--eval-ks",
                "10",
                "--out-dir",
                str(tmp_path / "eval"),
            ]
        )
        assert rc == EXIT_CONFIG


class TestTrainCommand:
    def test_end_to_end_tiny_run(self, tmp_path, capsys):
        rc = main(["train"] + toy_flags(tmp_path))
        assert rc == EXIT_OK
        run_dir = tmp_path / "run"
        assert (run_dir / "metrics.jsonl").exists()
        assert (run_dir / "config.json").exists()
        echoed = json.loads((run_dir / "config.json").read_text())
        assert echoed["kl_target"] == "inf"
        assert "best validation at epoch" in capsys.readouterr().out

    def test_identical_runs_bit_identical_metrics(self, tmp_path):
        assert main(["train"] + toy_flags(tmp_path, **{"out-dir": str(tmp_path / "a")})) == EXIT_OK
        assert main(["train"] + toy_flags(tmp_path, **{"out-dir": str(tmp_path / "b")})) == EXIT_OK
        a = (tmp_path / "a" / "metrics.jsonl").read_bytes()
        b = (tmp_path / "b" / "metrics.jsonl").read_bytes()
        assert a == b

    def test_config_echo_reexecutes_identically(self, tmp_path):
        first = tmp_path / "first"
        assert main(["train"] + toy_flags(tmp_path, **{"out-dir": str(first)})) == EXIT_OK
        second = tmp_path / "second"
        rc = main(
            [
                "train",
                "--config",
                str(first / "config.json"),
                "--out-dir",
                str(second),
            ]
        )
        assert rc == EXIT_OK
        assert (first / "metrics.jsonl").read_bytes() == (second / "metrics.jsonl").read_bytes()

    def test_resume_reproduces_following_epochs(self, tmp_path):
        full = tmp_path / "full"
        args = toy_flags(tmp_path, **{"max-epochs": "4", "out-dir": str(full)})
        assert main(["train"] + args + ["--keep-all-checkpoints"]) == EXIT_OK

        half = tmp_path / "half"
        args = toy_flags(tmp_path, **{"max-epochs": "2", "out-dir": str(half)})
        assert main(["train"] + args + ["--keep-all-checkpoints"]) == EXIT_OK

        resumed = tmp_path / "resumed"
        args = toy_flags(tmp_path, **{"max-epochs": "4", "out-dir": str(resumed)})
        rc = main(
            ["train"]
            + args
            + ["--keep-all-checkpoints", "--resume", str(half / "checkpoints" / "epoch-2")]
        )
        assert rc == EXIT_OK
        full_rows = [
            json.loads(l) for l in (full / "metrics.jsonl").read_text().splitlines()
        ]
        resumed_rows = [
            json.loads(l) for l in (resumed / "metrics.jsonl").read_text().splitlines()
        ]
        assert resumed_rows == full_rows[2:]


class TestEvaluateCommand:
    def test_report_files_written(self, tmp_path):
        out = tmp_path / "eval"
        rc = main(
            [
                "evaluate",
                "--dataset-path",
                "builtin:toy",
                "--split",
                "train",
                "--eval-samples",
                "4",
                "--eval-ks",
                "1,2",
                "--max-len",
                "32",
                "--out-dir",
                str(out),
            ]
        )
        assert rc == EXIT_OK
        report = json.loads((out / "report.json").read_text())
        assert set(report["pass_rates"]) == {"1", "2"}
        csv_text = (out / "report.csv").read_text()
        assert csv_text.startswith("problem_id,")
        assert len(csv_text.splitlines()) == 9  # header + 8 toy problems


class TestAugmentCommand:
    def test_mock_corpus_deterministic(self, tmp_path):
        out_a = tmp_path / "a.jsonl"
        out_b = tmp_path / "b.jsonl"
        for out in (out_a, out_b):
            rc = main(["augment", "--corpus", str(CORPUS), "--out", str(out)])
            assert rc == EXIT_OK
        assert out_a.read_bytes() == out_b.read_bytes()
        records = [json.loads(l) for l in out_a.read_text().splitlines()]
        assert all(r["source"] == "augmented" for r in records)
        assert all(r["loss_weight"] == 0.2 for r in records)

    def test_empty_corpus_zero_exit(self, tmp_path):
        empty = tmp_path / "empty-corpus"
        empty.mkdir()
        out = tmp_path / "out.jsonl"
        rc = main(["augment", "--corpus", str(empty), "--out", str(out)])
        assert rc == EXIT_OK
        assert out.read_text() == ""


class TestConvertTestsCommand:
    def test_conversion_only(self, tmp_path):
        source = tmp_path / "suites.jsonl"
        source.write_text(
            json.dumps(
                {
                    "description": "adds the two numbers it is given and returns their sum",
                    "signature": "public static int addTwo(int a, int b)",
                    "tests": [
                        "assertEquals(3, addTwo(1, 2));",
                        "assertEquals(0, addTwo(0, 0));",
                    ],
                }
            )
            + "\n"
        )
        out = tmp_path / "converted.jsonl"
        rc = main(["convert-tests", "--input", str(source), "--out", str(out)])
        assert rc == EXIT_OK
        record = json.loads(out.read_text().splitlines()[0])
        assert record["signature"] == "def addTwo(a, b):"
        assert "assert addTwo(1, 2) == 3" in record["tests"]


class TestAblateCommand:
    def test_buffer_sweep_table(self, tmp_path):
        out = tmp_path / "ablation"
        rc = main(
            [
                "ablate",
                "--sweep",
                "buffer",
                "--eval-samples",
                "0",
            ]
            + toy_flags(tmp_path, **{"max-epochs": "1", "out-dir": str(out)})
        )
        assert rc == EXIT_OK
        table = (out / "ablation.csv").read_text().splitlines()
        assert table[0].startswith("cell,")
        assert {row.split(",")[0] for row in table[1:]} == {"buffer-on", "buffer-off"}
        assert (out / "ablation.md").exists()

    def test_kl_sweep_single_cell(self, tmp_path):
        out = tmp_path / "kl"
        rc = main(
            [
                "ablate",
                "--sweep",
                "kl-target",
                "--values",
                "inf",
                "--eval-samples",
                "0",
            ]
            + toy_flags(tmp_path, **{"max-epochs": "1", "out-dir": str(out)})
        )
        assert rc == EXIT_OK
        assert (out / "kl-target-inf" / "metrics.jsonl").exists()
