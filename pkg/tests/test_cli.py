import csv
import subprocess
import sys

import pytest

from gcrlab import cli

SIMPLE = [
    ["christoffel", "--preset", "sphere", "--n", "16"],
    ["gcr-check", "--preset", "cylinder", "--n", "16,32"],
    ["realize", "--preset", "plane", "--n", "16"],
    ["hodge", "--n", "16"],
    ["divcurl", "--eps", "1/4,1/8,1/16"],
    ["fakir"],
    ["rigidity", "--kind", "cylinder_family", "--eps", "1/4,1/8,1/16", "--grid", "65"],
]


def run(argv, tmp_path, capsys):
    code = cli.run(argv + ["--out", str(tmp_path)])
    return code, capsys.readouterr()


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.mark.parametrize("argv", SIMPLE, ids=lambda a: a[0])
def test_subcommands_succeed(argv, tmp_path, capsys):
    code, out = run(argv, tmp_path, capsys)
    assert code == 0, out.err
    assert out.out.strip()
    assert any(tmp_path.iterdir())


def test_fakir_example(tmp_path, capsys):
    code, out = run(["fakir"], tmp_path, capsys)
    assert code == 0
    assert out.out.strip() == "fakir pairings m=10: 0.9, m=100: 0.99, m=1000: 0.999"
    table = rows(tmp_path / "fakir.csv")
    assert table[0] == ["epsilon", "diagnostic", "value"]
    pairing = {float(e): float(v) for e, d, v in table[1:] if d == "pairing"}
    assert pairing == {0.1: 0.9, 0.01: 0.99, 0.001: 0.999}


def test_gcr_check_sphere_example(tmp_path, capsys):
    code, out = run(["gcr-check", "--preset", "sphere", "--n", "32,64,128"], tmp_path, capsys)
    assert code == 0 and "PASS" in out.out
    table = rows(tmp_path / "sphere_gcr.csv")
    assert table[0] == ["equation", "norm_inf", "norm_l2", "grid"]
    assert [r[3] for r in table[1:4]] == ["32x32"] * 3


def test_gcr_check_negative_reports_fail(tmp_path, capsys):
    code, out = run(["gcr-check", "--preset", "noncommuting", "--n", "16,32"], tmp_path, capsys)
    assert code == 0 and "FAIL" in out.out


def test_realize_cylinder_example(tmp_path, capsys):
    code, _ = run(["realize", "--preset", "cylinder", "--n", "128"], tmp_path, capsys)
    assert code == 0
    vals = {k: float(v) for k, v in rows(tmp_path / "cylinder_defects.csv")[1:]}
    assert vals["rmse"] <= 1e-3 and vals["isometry_defect"] <= 1e-3
    assert vals["gcr_max"] <= vals["gate"]
    assert (tmp_path / "cylinder.obj").read_text().startswith("v ")
    assert (tmp_path / "cylinder_f.txt").read_text().startswith("chart n=2 shape=128,128")


def test_incompatible_realize_exit_codes(tmp_path, capsys):
    code, out = run(["realize", "--preset", "noncommuting", "--n", "17"], tmp_path, capsys)
    assert code == 2 and "numerical failure" in out.err
    assert not any(tmp_path.iterdir())
    with pytest.warns(RuntimeWarning, match="exceeds gate"):
        code, _ = run(["realize", "--preset", "noncommuting", "--n", "17", "--allow-incompatible"], tmp_path, capsys)
    assert code == 0


@pytest.mark.parametrize("argv", [
    ["bogus"],
    ["gcr-check", "--n", "4,8"],
    ["fakir", "--m", "1"],
    ["divcurl", "--eps", "1/8,1/4,1/16"],
    [],
])
def test_validation_errors_exit_one(argv, tmp_path, capsys):
    assert cli.run(argv) == 1


def test_config_file_and_override(tmp_path, capsys):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[fakir]\nm = 4,8\n")
    code, out = run(["fakir", "--config", str(cfg)], tmp_path, capsys)
    assert code == 0 and out.out.strip() == "fakir pairings m=4: 0.75, m=8: 0.875"
    code, out = run(["fakir", "--config", str(cfg), "--m", "2"], tmp_path, capsys)
    assert out.out.strip() == "fakir pairings m=2: 0.5"
    cfg.write_text("[fakir]\nbogus = 3\n")
    code, out = run(["fakir", "--config", str(cfg)], tmp_path, capsys)
    assert code == 1 and "bogus" in out.err


def test_version_and_help(capsys):
    assert cli.run(["--version"]) == 0
    assert capsys.readouterr().out.strip() == "gcrlab 0.1.0"
    assert cli.run(["--help"]) == 0
    assert "gcr-check" in capsys.readouterr().out


def test_threads_env(tmp_path):
    base = [sys.executable, "-m", "gcrlab.cli", "fakir", "--m", "10", "--out", str(tmp_path)]
    bad = subprocess.run(base, env={"GCRLAB_THREADS": "x", "PATH": ""}, capture_output=True, text=True)
    assert bad.returncode == 1 and "GCRLAB_THREADS" in bad.stderr
    good = subprocess.run(base, env={"GCRLAB_THREADS": "1", "PATH": ""}, capture_output=True, text=True)
    assert good.returncode == 0 and "m=10: 0.9" in good.stdout


def test_demo_is_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.run(["demo", "--seed", "7", "--out", str(a)]) == 0
    assert cli.run(["demo", "--seed", "7", "--out", str(b)]) == 0
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    assert {"demo_sphere_gcr.csv", "demo_cylinder.obj", "demo_summary.csv"} <= set(names)
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes()
    assert cli.run(["demo", "--seed", "8", "--out", str(tmp_path / "c")]) == 0
    assert (tmp_path / "c" / "demo_cylinder.obj").read_bytes() != (a / "demo_cylinder.obj").read_bytes()
