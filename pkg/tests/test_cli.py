import csv
import io
import json

import numpy as np
import pytest

from statgeo import cli


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_list_examples(capsys):
    code, out, _ = run(capsys, "list-examples")
    keys = [e["key"] for e in json.loads(out)["examples"]]
    assert code == 0 and "torus" in keys and keys == sorted(keys)


def test_describe_torus(capsys):
    code, out, _ = run(capsys, "describe", "torus", "--samples", "10")
    rep = json.loads(out)
    assert code == 0
    assert rep["classification"]["conjugate_symmetric"] is True
    assert rep["classification"]["trivial"] is False
    assert len(rep["curvature_samples"]) == 5
    assert rep["curvature_samples"][0]["ricci"] == [[-2.0, 0.0], [0.0, -2.0]]


def test_describe_trivial_noguchi(capsys):
    code, out, _ = run(capsys, "describe", "noguchi(0,1,1,1)", "--samples", "10")
    assert code == 0 and json.loads(out)["classification"]["trivial"] is True


def test_probe_torus_blows_up(capsys):
    code, out, _ = run(capsys, "probe", "torus", "--point", "0,0.3", "--dir", "-1,0")
    rep = json.loads(out)
    assert code == 0
    assert rep["verdict"] == "Blowup" and rep["escape_side"] == "forward"
    assert 0.99 <= rep["t_escape_lo"] <= rep["t_escape_hi"] <= 1.01
    assert rep["backward"]["verdict"] == "ReachedHorizon"


def test_probe_dual_escapes_backward(capsys):
    code, out, _ = run(capsys, "probe", "torus", "--point", "0,0.3", "--dir", "-1,0", "--dual")
    rep = json.loads(out)
    assert code == 0 and rep["escape_side"] == "backward" and rep["verdict"] == "Blowup"


def test_probe_csv_columns(capsys):
    code, out, _ = run(capsys, "probe", "torus", "--point", "0,0.3", "--dir", "1,0", "--t-max", "2",
                       "--format", "csv")
    rows = list(csv.reader(io.StringIO(out)))
    assert code == 0
    assert rows[0][:5] == ["t", "x1", "x2", "v1", "v2"]
    assert float(rows[1][0]) == 0.0 and float(rows[-1][0]) == pytest.approx(2.0)


def test_probe_out_writes_csv_and_prints_json(capsys, tmp_path):
    dest = tmp_path / "traj.csv"
    code, out, _ = run(capsys, "probe", "torus", "--point", "0,0.3", "--dir", "1,0", "--t-max", "1",
                       "--out", str(dest))
    assert code == 0 and json.loads(out)["forward"]["verdict"] == "ReachedHorizon"
    assert dest.read_text().startswith("t,x1,x2")


def test_probe_batch_is_deterministic(capsys):
    a = run(capsys, "probe-batch", "torus", "--samples", "20", "--seed", "3")
    b = run(capsys, "probe-batch", "torus", "--samples", "20", "--seed", "3")
    assert a[0] == 0 and a[1] == b[1]
    rep = json.loads(a[1])
    assert rep["probes"] == 40 and rep["counts"]["Blowup"] >= 1


def test_verify_quick_passes_on_torus(capsys):
    code, out, _ = run(capsys, "verify", "torus", "--quick")
    assert code == 0 and json.loads(out)["passed"] is True


def test_verify_failure_exits_one(capsys, monkeypatch):
    class Failing:
        passed = False

        def to_dict(self):
            return {"passed": False}

    monkeypatch.setattr(cli, "verify", lambda *a, **k: Failing())
    code, _, _ = run(capsys, "verify", "torus")
    assert code == 1


def test_hypersurface_induce_constant_paraboloid(capsys):
    code, out, _ = run(capsys, "hypersurface", "induce", "paraboloid(constant)", "--point", "0.2,0.1")
    rep = json.loads(out)
    assert code == 0
    assert np.allclose(rep["g"], 2 * np.eye(2), atol=1e-6)
    assert np.allclose(rep["shape_operator"], 0, atol=1e-8)


def test_hypersurface_residuals_report_degenerate_conormal(capsys):
    code, out, _ = run(capsys, "hypersurface", "residuals", "paraboloid(constant)", "--samples", "5")
    assert code == 0 and json.loads(out)["conormal"]["degenerate"] is True


def test_hypersurface_on_abstract_structure_is_rejected(capsys):
    assert run(capsys, "hypersurface", "induce", "torus")[0] == 2


@pytest.mark.parametrize("argv", [
    ["describe", "klein-bottle"],
    ["describe", "missing.json"],
    ["probe", "torus", "--point", "0", "--dir", "1,0"],
    ["probe", "torus", "--point", "a,b", "--dir", "1,0"],
    ["probe", "torus", "--point", "0,0", "--dir", "0,0"],
    ["probe", "torus", "--point", "0,0", "--dir", "1,0", "--dual", "--metric"],
    ["describe", "torus", "--format", "csv"],
    ["describe", "noguchi(x1,1,1)"],
    ["frobnicate"],
])
def test_bad_input_exits_two(capsys, argv):
    assert run(capsys, *argv)[0] == 2


def test_malformed_file_exits_two(capsys, tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"dim": 2, "g": [["1", "x1"], ["0", "1"]]}))
    assert run(capsys, "describe", str(p))[0] == 2


def test_tangent_transversal_exits_three(capsys, tmp_path):
    p = tmp_path / "tangent.json"
    p.write_text(json.dumps({"dim": 2, "f": ["x1", "x2", "x1^2 + x2^2"],
                             "normalization": {"type": "constant", "xi": [1, 0, 0]}}))
    assert run(capsys, "hypersurface", "induce", str(p), "--point", "0,0")[0] == 3


def test_point_outside_chart_exits_four(capsys, tmp_path):
    p = tmp_path / "square.json"
    p.write_text(json.dumps({"dim": 2, "bounds": [[-1, 1], [-1, 1]], "g": [["1", "0"], ["0", "1"]]}))
    assert run(capsys, "probe", str(p), "--point", "5,0", "--dir", "1,0")[0] == 4
