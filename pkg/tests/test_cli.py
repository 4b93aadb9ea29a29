import io
import json
import subprocess
import sys

import pytest

from miold.cli import main
from miold.synthesis import read_controller_card


def run(*argv):
    out = io.StringIO()
    code = main(list(argv), out)
    return code, out.getvalue()


def test_analyze_reports_half_degree():
    code, text = run("analyze", "--system", "iwp")
    assert code == 0
    assert "relative half-degree nu = (1)" in text and "verdict: MIOLD solvable" in text
    assert "full relative degree rho = (2)" in text


def test_reshaped_output_is_a_violation(capsys):
    code, text = run("analyze", "--system", "iwp", "--output-set", "reshaped")
    assert code == 1 and "MR2 violated" in text
    code, _ = run("synthesize", "--system", "iwp", "--output-set", "reshaped")
    assert code == 1 and "MR2 violated" in capsys.readouterr().err


def test_candidates_and_custom_outputs():
    code, text = run("analyze", "--system", "tora3", "--candidates",
                     "(m1/(m2 + m3))*x1 + x2 + (m3*l3/(m2 + m3))*sin(x3)")
    assert "candidates: MF-linearizing" in text
    code, text = run("analyze", "--system", "tora3", "--candidates", "x1 + r*x3")
    assert code == 2
    code, text = run("analyze", "--system", "iwp", "--outputs", "x2")
    assert code == 0 and "nu = (1)" in text


@pytest.mark.parametrize("argv", [
    ["analyze", "--system", "no_such_system"],
    ["analyze", "--system", "iwp", "--point", "x=1"],
    ["analyze", "--system", "iwp", "--outputs", "x1 +"],
    ["analyze", "--system", "iwp", "--output-set", "nope"],
    ["analyze", "--system", "example1", "--regime", "nope"],
    ["simulate", "--system", "iwp", "--input", "ramp:1"],
    ["simulate", "--system", "iwp", "--input", "zero", "zero"],
    ["analyze", "--bogus"],
    ["frobnicate"],
])
def test_input_errors_exit_2(argv, capsys):
    assert main(argv, io.StringIO()) == 2
    assert capsys.readouterr().err


def test_singular_locus_exits_3(capsys):
    code, _ = run("simulate", "--system", "iwp", "--output-set", "combined", "--closed-loop",
                  "--point", "x=1.4,0;v=1,0", "--horizon", "0.5", "--dt", "1e-4")
    assert code == 3 and "singular locus" in capsys.readouterr().err


def test_open_loop_divergence_exits_3(capsys):
    code, _ = run("simulate", "--system", "iwp", "--point", "x=0.3,0;v=0,0",
                  "--input", "step:1e12@0", "--horizon", "1")
    assert code == 3 and "numerical abort" in capsys.readouterr().err


def test_json_to_stdout(capsys):
    code, _ = run("analyze", "--system", "tora3", "--output-set", "flat", "--json", "-")
    data = json.loads(capsys.readouterr().out)
    assert code == 0
    assert data["half_degree"]["nu"] == [3] and data["relative_degree"]["rho"] == [6]
    assert data["rho_equals_2nu"] is True


def test_synthesize_writes_a_parseable_card(tmp_path):
    card = tmp_path / "card.txt"
    js = tmp_path / "out" / "law.json"
    code, text = run("synthesize", "--system", "tora3", "--card", str(card), "--json", str(js))
    assert code == 0 and "unobserved dimension 2" in text and "not applicable" in text
    parsed = read_controller_card(card.read_text())
    assert {"A[1]", "D[1][1]", "C[1]", "phi[3]"} <= set(parsed)
    data = json.loads(js.read_text())
    assert data["normal_form"]["normal_form_holds"] and data["feedback"]["nu"] == [2]


def test_simulate_csv(tmp_path):
    path = tmp_path / "run.csv"
    code, text = run("simulate", "--system", "iwp", "--output-set", "combined", "--closed-loop",
                     "--input", "step:0.1@0.1", "--horizon", "0.2", "--dt", "1e-3",
                     "--csv", str(path))
    assert code == 0 and "simulated 200 steps" in text
    assert path.read_text().splitlines()[0] == "t,x1,x2,v1,v2,u1,y1"
    code, _ = run("simulate", "--system", "iwp", "--horizon", "0.1", "--dt", "1e-2",
                  "--csv", str(tmp_path / "dir"))
    assert code == 0 and (tmp_path / "dir" / "trajectory.csv").exists()


def test_certify_pass_and_corrupted_fail(tmp_path):
    code, text = run("certify", "--system", "double_pendulum_base", "--dt", "1e-3",
                     "--csv", str(tmp_path))
    assert code == 0 and "certificate: PASS" in text
    assert (tmp_path / "step2.csv").exists()
    code, text = run("certify", "--system", "double_pendulum_base", "--dt", "1e-3", "--corrupt")
    assert code == 1 and "certificate: FAIL" in text and "corrupted law" in text


def test_zero_horizon_certificate():
    code, text = run("certify", "--system", "tora3", "--horizon", "0")
    assert code == 0 and "certificate: PASS" in text


def test_corpus_is_deterministic(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["corpus", "--no-certify", "--json", str(a)], io.StringIO()) == 0
    assert main(["corpus", "--no-certify", "--json", str(b)], io.StringIO()) == 0
    strip = lambda rows: [{k: v for k, v in r.items() if k != "seconds"} for r in rows]
    ra, rb = json.loads(a.read_text()), json.loads(b.read_text())
    assert strip(ra) == strip(rb) and len(ra) == 12
    assert all(r["regressions"] == [] for r in ra)


def test_corpus_with_certificates_for_one_system():
    code, text = run("corpus", "--system", "iwp")
    assert code == 0 and "3 rows, 0 regressions" in text
    assert text.count("pass") == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "miold", "--help"], capture_output=True,
                          text=True, timeout=60)
    assert proc.returncode == 0
    for command in ("analyze", "synthesize", "simulate", "certify", "corpus"):
        assert command in proc.stdout
