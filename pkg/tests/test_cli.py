"""Command-line interface: exit codes, headers, determinism and golden files.

The golden files were produced by the commands in ``GOLDEN`` on the shipped
cosine potential. Headers must match exactly; numbers are compared to a
tolerance that absorbs last-digit differences between BLAS builds.
"""

import csv
import io
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from starkladder import cli

ROOT = Path(__file__).resolve().parents[1]
POT = str(ROOT / "potentials" / "cosine_v03.json")
GOLDEN_DIR = Path(__file__).parent / "golden"

GOLDEN = {
    "bands.csv": ["bands", POT, "--n-max", "3", "--k-points", "11"],
    "branch_points.csv": ["branch-points", POT, "--n-max", "4"],
    "bloch.csv": ["bloch", POT, "--p", "0.3", "--samples", "16"],
    "coupling.csv": ["coupling", POT, "--j-max", "2", "--p-max", "2.5", "--per-half-cell", "2"],
    "ladder.csv": ["ladder", POT, "--F", "0.1"],
    "resonances.json": ["resonances", POT, "--F", "0.1", "--p-max", "3.5", "--j-max", "2", "--nodes", "8",
                        "--h-max", "0.1", "--no-refine"],
}


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def _close(a, b):
    return np.allclose(a, b, rtol=1e-8, atol=1e-10)


def _compare_csv(got: str, want: str):
    g_lines, w_lines = got.splitlines(), want.splitlines()
    g_head = [line for line in g_lines if line.startswith("#")]
    w_head = [line for line in w_lines if line.startswith("#")]
    assert g_head == w_head
    g_rows = list(csv.reader(io.StringIO("\n".join(line for line in g_lines if not line.startswith("#")))))
    w_rows = list(csv.reader(io.StringIO("\n".join(line for line in w_lines if not line.startswith("#")))))
    assert g_rows[0] == w_rows[0]
    assert len(g_rows) == len(w_rows)
    for gr, wr in zip(g_rows[1:], w_rows[1:]):
        assert _close([float(x) for x in gr], [float(x) for x in wr])


def _compare_json(got, want):
    if isinstance(want, dict):
        assert set(got) == set(want)
        for k in want:
            _compare_json(got[k], want[k])
    elif isinstance(want, list):
        assert len(got) == len(want)
        for g, w in zip(got, want):
            _compare_json(g, w)
    elif isinstance(want, float):
        assert _close(got, want)
    else:
        assert got == want


@pytest.mark.parametrize("name", sorted(GOLDEN))
def test_golden(name, capsys):
    code, out, _ = run(GOLDEN[name], capsys)
    assert code == 0
    want = (GOLDEN_DIR / name).read_text()
    if name.endswith(".json"):
        _compare_json(json.loads(out), json.loads(want))
    else:
        _compare_csv(out, want)


@pytest.mark.parametrize("name", ["bands.csv", "coupling.csv", "ladder.csv", "resonances.json"])
def test_byte_identical_reruns(name, capsys):
    first = run(GOLDEN[name], capsys)[1]
    second = run(GOLDEN[name], capsys)[1]
    assert first == second


def test_thread_count_does_not_change_output(capsys, monkeypatch):
    argv = GOLDEN["resonances.json"]
    one = run(argv + ["--threads", "1"], capsys)[1]
    monkeypatch.setenv(cli.THREADS_ENV, "2")
    two = run(argv, capsys)[1]
    assert json.loads(one)["resonances"] == json.loads(two)["resonances"]


def test_header_fields(capsys):
    code, out, _ = run(["ladder", POT, "--F", "0.1"], capsys)
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "# tool: starkladder 0.1.0"
    assert lines[1].startswith("# config_sha256: ") and len(lines[1].split()[-1]) == 64
    assert json.loads(lines[2][len("# grid: "):]) == {"j_window": [-3, 3]}
    assert lines[3] == "j,E,spacing"


def test_config_hash_tracks_inputs(capsys):
    a = run(["ladder", POT, "--F", "0.1"], capsys)[1].splitlines()[1]
    b = run(["ladder", POT, "--F", "0.2"], capsys)[1].splitlines()[1]
    assert a != b


def test_ladder_rows_follow_spacing(capsys):
    out = run(["ladder", POT, "--F", "0.1", "--j-lo", "-2", "--j-hi", "2"], capsys)[1]
    rows = [line.split(",") for line in out.splitlines()[4:]]
    E = np.array([float(r[1]) for r in rows])
    assert np.allclose(np.diff(E), 0.1 * np.pi, atol=1e-11)


def test_resonance_csv(capsys):
    code, out, _ = run(GOLDEN["resonances.json"] + ["--format", "csv"], capsys)
    assert code == 0
    assert "# F: 1.000000000000e-01" in out
    assert "cell,re,im,width,converged,refinement_delta" in out


def test_free_potential_spec(capsys):
    code, out, _ = run(["bands", "free:3.141592653589793", "--n-max", "2", "--k-points", "3"], capsys)
    assert code == 0
    rows = [line.split(",") for line in out.splitlines()[4:]]
    for n, k, E in rows:
        assert float(E) == pytest.approx(float(k) ** 2 if n == "1" else (2 - abs(float(k))) ** 2, abs=1e-9)


@pytest.mark.parametrize("argv", [
    ["resonances", POT, "--F", "0.1", "--theta-im", "0"],
    ["resonances", POT, "--F", "0.1", "--theta-im", "-1.5"],
    ["resonances", POT, "--F", "0.1", "--p-max", "2.3"],
    ["ladder", POT, "--F", "-1"],
    ["ladder", POT, "--F", "0.1", "--threads", "0"],
    ["ladder", POT],
    ["ladder", "does-not-exist.json", "--F", "0.1"],
    ["ladder", "free:-2", "--F", "0.1"],
    ["bloch", POT, "--p", "nan"],
    ["coupling", POT, "--j-max", "3", "--p-max", "2.0"],
    ["bands", POT, "--k-points", "1"],
    ["nonsense", POT],
])
def test_input_errors_exit_2(argv, capsys):
    code, out, err = run(argv, capsys)
    assert code == 2
    assert out == ""
    assert "error" in err


def test_bad_thread_env_exit_2(capsys, monkeypatch):
    monkeypatch.setenv(cli.THREADS_ENV, "many")
    assert run(["ladder", POT, "--F", "0.1"], capsys)[0] == 2


def test_bad_potential_file_exit_2(tmp_path, capsys):
    f = tmp_path / "v.json"
    f.write_text('{"period": 3.14, "coeffs": [[0, 1.0, 0.0]]}')
    assert run(["ladder", str(f), "--F", "0.1"], capsys)[0] == 2


def test_computation_failure_exit_1(capsys):
    code, out, err = run(["ladder", "free:3.141592653589793", "--F", "0.1"], capsys)
    assert code == 1
    assert out == ""
    assert "computation failed" in err


def test_output_file(tmp_path, capsys):
    target = tmp_path / "ladder.csv"
    code, out, _ = run(["ladder", POT, "--F", "0.1", "-o", str(target)], capsys)
    assert code == 0 and out == ""
    assert target.read_text() == (GOLDEN_DIR / "ladder.csv").read_text()


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "starkladder", "ladder", POT, "--F", "0.1"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert proc.stdout == (GOLDEN_DIR / "ladder.csv").read_text()
