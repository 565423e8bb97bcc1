import json
import subprocess
import sys
from pathlib import Path

import pytest
import yaml

from refined_scale.cli import ManifestError, check_expectations, load_manifest, main, run_manifest

MANIFESTS = Path(__file__).resolve().parents[1] / "manifests"


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def write(tmp_path, data, name="m.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data) if not isinstance(data, str) else data)
    return path


# -- expectations -----------------------------------------------------------------


@pytest.mark.parametrize(
    "summary, expect, ok",
    [
        ({"index": [-1, -1]}, {"index": -1}, True),
        ({"index": [-1, 0]}, {"index": -1}, False),
        ({"index": [-1, 0]}, {"index": [-1, 0]}, True),
        ({"x": 1.0000001}, {"x": {"approx": 1.0, "tol": 1e-6}}, True),
        ({"x": [1.0, 2.0]}, {"x": {"approx": [1.0, 2.1], "tol": 1e-6}}, False),
        ({"x": 0.5}, {"x": {"min": 0.5}}, True),
        ({"x": 0.5}, {"x": {"max": 0.4}}, False),
        ({"x": [0.01, 0.03]}, {"x[0]": {"lt": 0.02}}, True),
        ({"x": [0.01, 0.03]}, {"x[1]": {"lt": 0.02}}, False),
        ({"v": "diverges"}, {"v": {"equals": "diverges"}}, True),
        ({"flag": True}, {"flag": True}, True),
    ],
)
def test_expectation_rules(summary, expect, ok):
    checks = check_expectations(summary, expect, "case")
    assert all(c["passed"] for c in checks) is ok


def test_expectation_unknown_key():
    with pytest.raises(ManifestError):
        check_expectations({"a": 1}, {"b": 1}, "case")


# -- single experiments -------------------------------------------------------------


def test_index_shift_toeplitz(capsys):
    code, out, _ = run(["index", "--system", "builtin:shift-toeplitz", "--K", 32, "--K", 64, "--expect", "index=-1"], capsys)
    assert code == 0
    report = json.loads(out)
    assert report["cases"][0]["summary"]["index"] == [-1, -1]


def test_ellipticity_d1_expected_false(capsys):
    code, out, _ = run(["check-ellipticity", "--system", "builtin:d1-T2", "--expect", "elliptic=false"], capsys)
    assert code == 0
    assert json.loads(out)["cases"][0]["summary"]["elliptic"] is False


def test_expectation_failure_exit_1(capsys):
    code, _, _ = run(["index", "--system", "builtin:shift-toeplitz", "--K", 16, "--expect", "index=0"], capsys)
    assert code == 1


def test_missing_system_file_exit_2(tmp_path, capsys):
    path = write(tmp_path, {"kind": "index", "system": "absent.yaml", "K": [8]})
    code, _, err = run(["index", "--manifest", path], capsys)
    assert code == 2
    assert "absent.yaml" in err


def test_ambiguous_exit_3(capsys):
    code, out, _ = run(["index", "--system", "builtin:d1-T2", "--K", 8, "--rank-tol", 0.2], capsys)
    assert code == 3
    assert json.loads(out)["cases"][0]["summary"]["ambiguous_rank"] is True


def test_ambiguous_expected_is_not_exit_3(capsys):
    code, _, _ = run(
        ["index", "--system", "builtin:d1-T2", "--K", 8, "--rank-tol", 0.2, "--expect", "ambiguous_rank=true"], capsys
    )
    assert code == 0


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("kind: index\nsystem: builtin:shift-toeplitz\nK: [8\n", "line"),
        ("kind: nonsense\n", "kind"),
        ("kind: index\nsystem: builtin:shift-toeplitz\nK: []\n", "K"),
        ("kind: index\nsystem: builtin:shift-toeplitz\nK: [8]\nbogus: 1\n", "bogus"),
        ("kind: index\nsystem: builtin:shift-toeplitz\nK: [-4]\n", "K"),
        ("kind: index\nK: [8]\n", "system"),
    ],
)
def test_manifest_diagnostics(tmp_path, capsys, text, fragment):
    path = write(tmp_path, text)
    code, _, err = run(["index", "--manifest", path], capsys)
    assert code == 2
    assert fragment in err


def test_subcommand_kind_mismatch(tmp_path, capsys):
    path = write(tmp_path, {"kind": "apriori", "system": "builtin:one-minus-laplacian", "K": [8], "sigma": 1})
    code, _, err = run(["index", "--manifest", path], capsys)
    assert code == 2 and "does not match" in err


def test_no_kind_is_input_error(capsys):
    code, _, _ = run([], capsys)
    assert code == 2


def test_cases_inherit_defaults(tmp_path):
    manifest = {
        "kind": "index",
        "K": [16],
        "cases": [
            {"name": "shift", "system": "builtin:shift-toeplitz", "expect": {"index": -1}},
            {"name": "lap", "system": "builtin:minus-laplacian", "expect": {"index": 0}},
        ],
    }
    code, report = run_manifest(manifest, tmp_path)
    assert code == 0
    assert [c["name"] for c in report["cases"]] == ["shift", "lap"]


def test_system_file_relative_to_manifest(tmp_path, capsys):
    (tmp_path / "systems").mkdir()
    (tmp_path / "systems" / "st.yaml").write_text((MANIFESTS / "systems" / "shift-toeplitz.yaml").read_text())
    path = write(tmp_path, {"kind": "index", "system": "systems/st.yaml", "K": [32], "expect": {"index": -1}})
    code, _, _ = run(["index", "--manifest", path], capsys)
    assert code == 0


def test_outputs_and_csv(tmp_path, capsys):
    out = tmp_path / "out"
    code, _, _ = run(["index", "--system", "builtin:shift-toeplitz", "--K", 16, "--out", out, "--csv"], capsys)
    assert code == 0
    assert json.loads((out / "report.json").read_text())["exit_code"] == 0
    assert list(out.glob("*.csv"))


def test_json_byte_identical(tmp_path, capsys):
    argv = ["norm-identity", "--manifest", MANIFESTS / "c05_norm_identity.yaml"]
    _, first, _ = run(argv, capsys)
    _, second, _ = run(argv, capsys)
    assert first == second
    assert json.loads(first)["seed"] == 20240611


def test_nonfinite_values_serialize(capsys):
    code, out, _ = run(["smoothness", "--n", 1, "--K", 256, "--data", "{modes: [[3, 1, 0]]}"], capsys)
    assert code == 0
    assert '"inf"' in out
    json.loads(out)


# -- suites -----------------------------------------------------------------------


def test_suite_runs_and_reports(tmp_path, capsys):
    suite = tmp_path / "suite"
    suite.mkdir()
    write(suite, {"kind": "index", "system": "builtin:shift-toeplitz", "K": [16], "expect": {"index": -1}}, "a.yaml")
    write(suite, {"kind": "index", "system": "builtin:shift-toeplitz", "K": [16], "expect": {"index": 0}}, "b.yaml")
    code, out, _ = run(["--suite", suite, "--out", tmp_path / "o", "--jobs", 2], capsys)
    assert code == 1
    assert "PASS      a.yaml" in out and "FAIL      b.yaml" in out
    assert (tmp_path / "o" / "a" / "report.json").exists()


def test_suite_missing_directory(tmp_path, capsys):
    code, _, _ = run(["--suite", tmp_path / "nope"], capsys)
    assert code == 2


def test_console_script_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "refined_scale.cli", "ellipticity", "--system", "builtin:cauchy-riemann", "--expect", "elliptic=true"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr


def test_shipped_manifests_load():
    for path in sorted(MANIFESTS.glob("*.yaml")):
        assert "kind" in load_manifest(path)
