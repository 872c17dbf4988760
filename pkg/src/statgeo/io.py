"""JSON files describing structures and immersions by expression components.

Structure file::

    {"label": "...", "dim": 2, "bounds": [[0, 1], [0, 1]], "periods": [1, 1],
     "g": [["1", "0"], ["0", "1"]],
     "A": {"111": "1", "122": "-1"}}

Cubic-form keys are 1-based index strings; the symmetric slots that are not
listed are filled in from the listed ones. Bounds may use null or "inf".

Immersion file::

    {"label": "...", "dim": 2, "bounds": [[-1, 1], [-1, 1]],
     "f": ["x1", "x2", "x1^2 + x2^2"],
     "normalization": {"type": "centroaffine", "center": [0, 0, 0]}}

``normalization.type`` is "centroaffine" (optional "center", "sign") or
"constant" (required "xi").
"""

from __future__ import annotations

import itertools
import json
import math
from pathlib import Path
from typing import Any

import numpy as np

from .chart import Chart
from .expr import Expression, ParseError, parse_expression
from .fields import TensorField
from .hypersurface import Centroaffine, ConstantTransversal, Immersion
from .structure import StatStructure

__all__ = ["FormatError", "load_structure", "load_immersion", "load_file", "structure_from_dict",
           "immersion_from_dict"]


class FormatError(ValueError):
    """The file is not valid JSON or does not follow the schema."""


def _bound(x) -> float:
    if x is None:
        raise FormatError("null is only allowed as an infinite bound")
    if isinstance(x, str):
        t = x.strip().lower()
        if t in ("inf", "+inf", "infinity"):
            return math.inf
        if t in ("-inf", "-infinity"):
            return -math.inf
        raise FormatError(f"bad bound {x!r}")
    if isinstance(x, (int, float)) and not isinstance(x, bool):
        return float(x)
    raise FormatError(f"bad bound {x!r}")


def _chart(d: dict) -> Chart:
    dim = d.get("dim")
    if not isinstance(dim, int) or isinstance(dim, bool) or dim < 1:
        raise FormatError("'dim' must be a positive integer")
    raw = d.get("bounds", [[None, None]] * dim)
    if not isinstance(raw, list) or len(raw) != dim or any(not isinstance(b, list) or len(b) != 2 for b in raw):
        raise FormatError("'bounds' must list one [lo, hi] pair per dimension")
    bounds = tuple((-math.inf if lo is None else _bound(lo), math.inf if hi is None else _bound(hi))
                   for lo, hi in raw)
    periods = d.get("periods") or [None] * dim
    if not isinstance(periods, list) or len(periods) != dim:
        raise FormatError("'periods' must have one entry per dimension")
    periods = tuple(None if p is None else _bound(p) for p in periods)
    return Chart(dim, bounds, periods, label=str(d.get("label", "")))


def _expr(src: Any, n: int) -> Expression:
    if isinstance(src, bool) or not isinstance(src, (str, int, float)):
        raise FormatError(f"component must be an expression string or number, got {src!r}")
    return parse_expression(str(src) if isinstance(src, str) else repr(float(src)), n)


def _field(exprs: np.ndarray, chart: Chart, valence, symmetry, label) -> TensorField:
    flat = list(exprs.ravel())
    shape = exprs.shape
    const = all(e.is_constant for e in flat)

    def func(P):
        vals = [e(P) for e in flat]
        return np.stack(vals, axis=-1).reshape(P.shape[:-1] + shape)

    return TensorField(func, chart, valence, symmetry=symmetry, constant=const, label=label)


_ZERO = "0"


def structure_from_dict(d: dict) -> StatStructure:
    if not isinstance(d, dict):
        raise FormatError("top level must be a JSON object")
    chart = _chart(d)
    n = chart.dim
    g = d.get("g")
    if not isinstance(g, list) or len(g) != n or any(not isinstance(r, list) or len(r) != n for r in g):
        raise FormatError(f"'g' must be a {n}x{n} array of expressions")
    G = np.empty((n, n), dtype=object)
    for i in range(n):
        for j in range(n):
            G[i, j] = _expr(g[i][j], n)
    for i in range(n):
        for j in range(i):
            if str(G[i, j]) != str(G[j, i]):
                raise FormatError(f"'g' is not symmetric in entries ({i + 1},{j + 1}) and ({j + 1},{i + 1})")
    A = np.empty((n, n, n), dtype=object)
    A[...] = None
    raw = d.get("A", {})
    if not isinstance(raw, dict):
        raise FormatError("'A' must map index strings like \"112\" to expressions")
    for key, src in raw.items():
        if not (isinstance(key, str) and len(key) == 3 and all(c.isdigit() and 1 <= int(c) <= n for c in key)):
            raise FormatError(f"bad cubic-form key {key!r}")
        e = _expr(src, n)
        for perm in set(itertools.permutations(int(c) - 1 for c in key)):
            prev = A[perm]
            if prev is not None and str(prev) != str(e):
                raise FormatError(f"conflicting values for the symmetric slots of A{key}")
            A[perm] = e
    zero = parse_expression(_ZERO, n)
    A[A == None] = zero  # noqa: E711  (object array)
    label = str(d.get("label", "file structure"))
    return StatStructure(chart, _field(G, chart, (0, 2), "sym2", "g"), _field(A, chart, (0, 3), "sym3", "A"),
                         label=label)


def immersion_from_dict(d: dict) -> Immersion:
    if not isinstance(d, dict):
        raise FormatError("top level must be a JSON object")
    chart = _chart(d)
    n = chart.dim
    f = d.get("f")
    if not isinstance(f, list) or len(f) != n + 1:
        raise FormatError(f"'f' must list {n + 1} expressions")
    comps = [_expr(s, n) for s in f]

    def fmap(P):
        return np.stack([c(P) for c in comps], axis=-1)

    nz = d.get("normalization", {"type": "centroaffine"})
    if not isinstance(nz, dict):
        raise FormatError("'normalization' must be an object")
    kind = nz.get("type", "centroaffine")
    if kind == "centroaffine":
        center = nz.get("center")
        sign = nz.get("sign")
        if center is not None and (not isinstance(center, list) or len(center) != n + 1):
            raise FormatError(f"'center' must have {n + 1} coordinates")
        norm = Centroaffine(None if center is None else tuple(float(c) for c in center),
                            None if sign is None else float(sign))
    elif kind == "constant":
        xi = nz.get("xi")
        if not isinstance(xi, list) or len(xi) != n + 1:
            raise FormatError(f"'xi' must have {n + 1} coordinates")
        norm = ConstantTransversal(tuple(float(c) for c in xi))
    else:
        raise FormatError(f"unknown normalization type {kind!r}")
    return Immersion(chart, fmap, norm, label=str(d.get("label", "file immersion")))


def _read(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc


def load_structure(path) -> StatStructure:
    return structure_from_dict(_read(path))


def load_immersion(path) -> Immersion:
    return immersion_from_dict(_read(path))


def load_file(path):
    """A StatStructure or an Immersion, decided by the presence of 'f'."""
    d = _read(path)
    if isinstance(d, dict) and "f" in d:
        return immersion_from_dict(d)
    return structure_from_dict(d)
