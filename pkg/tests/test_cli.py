import json
import subprocess
import sys

import pytest

from grafold.cli import main
from grafold.space import validate_lts_json


def run_cli(args, capsys):
    code = main(args)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestFold:
    def test_nussinov_summary(self, capsys):
        code, out, _ = run_cli(["fold", "--seq", "GGGAAACCC", "--energy", "nussinov"], capsys)
        assert code == 0
        assert out == "((....)).  -2.0\n"

    def test_unfoldable_summary(self, capsys):
        code, out, _ = run_cli(["fold", "--seq", "AAAA", "--energy", "nussinov"], capsys)
        assert code == 0
        assert out == "....  +inf (no fold possible)\n"

    def test_inverse_moves_find_the_optimum(self, capsys):
        code, out, _ = run_cli(["fold", "--seq", "GGGAAACCC", "--allow-inverse"], capsys)
        assert code == 0
        assert out.split()[-1] == "-3.0"

    def test_missing_sequence_file(self, capsys):
        code, _, err = run_cli(["fold", "--seq", "@missing.fa"], capsys)
        assert code == 2
        assert "missing.fa" in err

    def test_sequence_from_fasta_file(self, tmp_path, capsys):
        fasta = tmp_path / "seq.fa"
        fasta.write_text(">toy\nggga\naaccc\n")
        code, out, _ = run_cli(["fold", "--seq", f"@{fasta}"], capsys)
        assert code == 0
        assert out.startswith("((....)).")

    def test_trace_written(self, tmp_path, capsys):
        out_path = tmp_path / "trace.jsonl"
        code, _, _ = run_cli(
            ["fold", "--seq", "GAAAC", "--trace-out", str(out_path)], capsys
        )
        assert code == 0
        lines = out_path.read_text().strip().split("\n")
        records = [json.loads(line) for line in lines]
        assert records[0]["db"] == "....."
        assert "summary" in records[-1]

    def test_machine_file(self, tmp_path, capsys):
        machine = {
            "initial": "w0",
            "states": [{"id": "w0", "constraint": "phi0"}],
            "transitions": [{"from": "w0", "to": "w0"}],
        }
        path = tmp_path / "machine.json"
        path.write_text(json.dumps(machine))
        code, out, _ = run_cli(
            ["fold", "--seq", "GAAAC", "--s-machine", str(path)], capsys
        )
        assert code == 0 and out.startswith("(...)")

    def test_bad_machine_file(self, tmp_path, capsys):
        path = tmp_path / "machine.json"
        path.write_text("{not json")
        code, _, err = run_cli(["fold", "--seq", "GAAAC", "--s-machine", str(path)], capsys)
        assert code == 2 and "error" in err


class TestEnumerate:
    def test_json_export_and_stats(self, capsys):
        code, out, err = run_cli(
            ["enumerate", "--seq", "GGGAAACCC", "--export", "json"], capsys
        )
        assert code == 0
        doc = validate_lts_json(json.loads(out))
        assert len(doc["states"]) == 20
        assert "states=20" in err

    def test_truncation_exit_code(self, capsys):
        seq = "GC" * 15  # 30-mer
        code, out, err = run_cli(
            ["enumerate", "--seq", seq, "--max-states", "100"], capsys
        )
        assert code == 3
        assert json.loads(out)["truncated_by"] == "max_states"
        assert "truncated_by=max_states" in err

    def test_dot_export(self, capsys):
        code, out, _ = run_cli(["enumerate", "--seq", "GAAAC", "--export", "dot"], capsys)
        assert code == 0
        assert out.startswith("digraph")
        assert out.count("->") == 1
        assert "Hairpin-Rule-1" in out

    def test_export_to_file(self, tmp_path, capsys):
        path = tmp_path / "lts.json"
        code, out, _ = run_cli(
            ["enumerate", "--seq", "GAAAC", "--out", str(path)], capsys
        )
        assert code == 0 and out == ""
        validate_lts_json(json.loads(path.read_text()))

    def test_min_hairpin_flag(self, capsys):
        code, out, _ = run_cli(
            ["enumerate", "--seq", "GAAC", "--min-hairpin", "1"], capsys
        )
        assert code == 0
        assert len(json.loads(out)["states"]) == 2


class TestEval:
    def test_nussinov_total(self, capsys):
        code, out, _ = run_cli(
            ["eval", "--seq", "GGGAAACCC", "--db", "(((...)))"], capsys
        )
        assert code == 0
        assert out.strip().endswith("total -3.0")
        assert out.count("\n") == 5  # hairpin + 2 stacks + exterior + total

    def test_loop_table_example_total(self, capsys):
        code, out, _ = run_cli(
            ["eval", "--seq", "GGGAAACCC", "--db", "(((...)))", "--energy", "loop-table"],
            capsys,
        )
        assert code == 0
        assert out.strip().endswith("total -2.0")
        assert "hairpin" in out and "stack" in out

    def test_invalid_structure_reports_violations(self, capsys):
        # too-small hairpin: exit 2 and the violation list on stderr
        code, _, err = run_cli(["eval", "--seq", "GGAC", "--db", ".(.)"], capsys)
        assert code == 2
        assert "hairpin-too-small" in err

    def test_inadmissible_pair_reported(self, capsys):
        code, _, err = run_cli(["eval", "--seq", "AAAAA", "--db", "(...)"], capsys)
        assert code == 2
        assert "inadmissible-pair" in err

    def test_unbalanced_structure_rejected(self, capsys):
        code, _, err = run_cli(["eval", "--seq", "GGAAACC", "--db", "((...)."], capsys)
        assert code == 2
        assert "unbalanced" in err


class TestRules:
    def test_all_eleven(self, capsys):
        code, out, _ = run_cli(["rules"], capsys)
        assert code == 0
        lines = out.strip().split("\n")
        assert len(lines) == 11
        assert lines[0].startswith("Hairpin-Rule-1:")

    def test_filter_hairpin(self, capsys):
        code, out, _ = run_cli(["rules", "--loop", "hairpin"], capsys)
        assert code == 0
        assert out.strip().split("\n") == [out.strip()]
        assert out.startswith("Hairpin-Rule-1:")

    def test_unknown_loop(self, capsys):
        code, _, err = run_cli(["rules", "--loop", "frobnicate"], capsys)
        assert code == 2
        assert "unknown loop kind" in err


class TestDeterminism:
    def _run(self, args):
        return subprocess.run(
            [sys.executable, "-m", "grafold"] + args,
            capture_output=True,
            text=True,
        )

    def test_fold_and_enumerate_byte_identical(self, tmp_path):
        fold_args = ["fold", "--seq", "GGGAAACCC", "--trace-out"]
        first = self._run(fold_args + [str(tmp_path / "a.jsonl")])
        second = self._run(fold_args + [str(tmp_path / "b.jsonl")])
        assert first.returncode == second.returncode == 0
        assert first.stdout == second.stdout
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()

        enum = ["enumerate", "--seq", "GGGAAACCC", "--export", "json"]
        assert self._run(enum).stdout == self._run(enum).stdout

    def test_console_script_entry(self):
        result = self._run(["rules"])
        assert result.returncode == 0
        assert len(result.stdout.strip().split("\n")) == 11


class TestExternalMode:
    def test_external_command_via_flag(self, tmp_path, capsys):
        stub = tmp_path / "stub.py"
        stub.write_text("print(-7.25)\n")
        code, out, _ = run_cli(
            [
                "eval",
                "--seq", "GAAAC",
                "--db", "(...)",
                "--energy", "external",
                "--external-cmd", f"{sys.executable} {stub}",
            ],
            capsys,
        )
        assert code == 0
        assert out.strip().endswith("total -7.25")

    def test_external_mode_requires_command(self, capsys, monkeypatch):
        monkeypatch.delenv("GRAFOLD_EXTERNAL_CMD", raising=False)
        code, _, err = run_cli(
            ["eval", "--seq", "GAAAC", "--db", "(...)", "--energy", "external"], capsys
        )
        assert code == 2
        assert "external" in err

    def test_external_command_via_env(self, tmp_path, capsys, monkeypatch):
        stub = tmp_path / "stub.py"
        stub.write_text("print(-1.0)\n")
        monkeypatch.setenv("GRAFOLD_EXTERNAL_CMD", f"{sys.executable} {stub}")
        code, out, _ = run_cli(
            ["fold", "--seq", "GAAAC", "--energy", "external"], capsys
        )
        assert code == 0
        assert out == "(...)  -1.0\n"
