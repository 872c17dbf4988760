import json
import math

import numpy as np
import pytest

from statgeo.expr import ParseError
from statgeo.hypersurface import ConstantTransversal, Immersion
from statgeo.io import FormatError, immersion_from_dict, load_file, load_structure, structure_from_dict
from statgeo.structure import StatStructure

VALID = {"dim": 2, "bounds": [[0, 1], [0, 1]], "periods": [1, 1],
         "g": [["1", "0"], ["0", "1"]], "A": {"111": "1", "122": "-1"}}


def test_valid_structure_round_trip(tmp_path):
    p = tmp_path / "torus.json"
    p.write_text(json.dumps(VALID))
    s = load_structure(p)
    assert isinstance(s, StatStructure) and s.chart.periods == (1.0, 1.0)
    A = s.cubic(np.zeros((1, 2)))[0]
    assert A[0, 0, 0] == 1 and A[0, 1, 1] == A[1, 0, 1] == A[1, 1, 0] == -1
    assert A[1, 1, 1] == 0


def test_infinite_bounds_and_numbers():
    s = structure_from_dict({"dim": 1, "bounds": [["-inf", None]], "g": [[2]]})
    assert s.chart.bounds == ((-math.inf, math.inf),)
    assert s.metric(np.zeros((1, 1)))[0, 0, 0] == 2


@pytest.mark.parametrize("d", [
    {"g": [["1"]]},
    {"dim": 0, "g": []},
    {"dim": True, "g": [["1"]]},
    {"dim": 2, "g": [["1", "0"]]},
    {"dim": 2, "g": [["1", "x1"], ["0", "1"]]},
    {"dim": 2, "g": [["1", "0"], ["0", "1"]], "A": {"113": "1"}},
    {"dim": 2, "g": [["1", "0"], ["0", "1"]], "A": {"12": "1"}},
    {"dim": 2, "g": [["1", "0"], ["0", "1"]], "A": {"112": "1", "121": "2"}},
    {"dim": 2, "g": [["1", "0"], ["0", "1"]], "A": ["1"]},
    {"dim": 2, "g": [["1", "0"], ["0", "1"]], "bounds": [[0, 1]]},
    {"dim": 2, "g": [["1", "0"], ["0", "1"]], "bounds": [[0, "wide"], [0, 1]]},
    {"dim": 2, "g": [["1", "0"], ["0", True]]},
    [1, 2],
], ids=["no-dim", "zero-dim", "bool-dim", "short-g", "asymmetric-g", "index-out-of-range", "short-key",
        "conflicting-A", "A-not-object", "bounds-length", "bad-bound", "bool-entry", "not-object"])
def test_malformed_structures(d):
    with pytest.raises(FormatError):
        structure_from_dict(d)


def test_bad_expression_is_a_parse_error():
    with pytest.raises(ParseError):
        structure_from_dict({"dim": 2, "g": [["1 +", "0"], ["0", "1"]]})


def test_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{ not json")
    with pytest.raises(FormatError):
        load_file(p)


def test_immersion_file(tmp_path):
    p = tmp_path / "par.json"
    p.write_text(json.dumps({"dim": 2, "f": ["x1", "x2", "x1^2 + x2^2 - 1"],
                             "normalization": {"type": "constant", "xi": [0, 0, 1]}}))
    im = load_file(p)
    assert isinstance(im, Immersion) and isinstance(im.normalization, ConstantTransversal)
    assert np.allclose(im.induce(np.zeros((1, 2))).g[0], 2 * np.eye(2), atol=1e-6)


@pytest.mark.parametrize("d", [
    {"dim": 2, "f": ["x1", "x2"]},
    {"dim": 2, "f": ["x1", "x2", "1"], "normalization": {"type": "affine"}},
    {"dim": 2, "f": ["x1", "x2", "1"], "normalization": {"type": "constant", "xi": [0, 1]}},
    {"dim": 2, "f": ["x1", "x2", "1"], "normalization": {"type": "centroaffine", "center": [0, 0]}},
    {"dim": 2, "f": ["x1", "x2", "1"], "normalization": "centroaffine"},
])
def test_malformed_immersions(d):
    with pytest.raises(FormatError):
        immersion_from_dict(d)
