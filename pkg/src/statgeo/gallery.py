"""Named structures and hypersurfaces with their known analytic facts.

Keys::

    torus                         flat torus, constant cubic form with A(U,U,U)=1, A(U,V,V)=-1
    strip                         strip with a complete geodesic of finite length
    noguchi(sigma,a1,a2,a3)       A = a1 g(X,Y) dsigma(Z) + a2 g(Y,Z) dsigma(X) + a3 g(X,Z) dsigma(Y)
    cayley(n)                     x1 x2 ... x(n+1) = 1, graph chart, centroaffine
    sphere(n), ellipsoid(a...)    centroaffine ovaloids on a six-patch (2n+2) atlas
    paraboloid[(centroaffine|constant)]   z = x^2 + y^2 - 1
"""

from __future__ import annotations

import math
import re
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import erf, erfinv

from .chart import Chart
from .expr import Expression, ParseError, parse_expression
from .fastpath import PotentialSpray
from .fields import TensorField
from .hypersurface import (Centroaffine, ConstantTransversal, Immersion, OvaloidAtlas, Quadric)
from .structure import StatStructure

__all__ = ["GalleryEntry", "Expected", "load", "list_entries", "KEYS", "UnknownKey",
           "strip_G", "strip_G_inverse", "STRIP_HALF_WIDTH"]

STRIP_HALF_WIDTH = math.sqrt(math.pi) / 2


class UnknownKey(KeyError):
    pass


@dataclass(frozen=True)
class Expected:
    value: object
    tol: Optional[float]
    provenance: str


@dataclass
class GalleryEntry:
    key: str
    kind: str                       # "structure" | "immersion" | "atlas"
    obj: object
    expected: dict
    summary: str
    params: dict = field(default_factory=dict)
    # where random base points are drawn for checks (defaults to the chart)
    region: Optional[Chart] = None

    @property
    def structure(self) -> StatStructure:
        if self.kind == "structure":
            return self.obj
        if self.kind == "immersion":
            return self.obj.structure()
        return self.obj.structure(0)

    @property
    def immersion(self) -> Immersion:
        if self.kind == "immersion":
            return self.obj
        if self.kind == "atlas":
            return self.obj.immersion(0)
        raise TypeError(f"{self.key} is an abstract structure, not a hypersurface")

    @property
    def atlas(self) -> Optional[OvaloidAtlas]:
        return self.obj if self.kind == "atlas" else None

    @property
    def sample_chart(self) -> Chart:
        if self.region is not None:
            return self.region
        if self.kind == "structure":
            return self.obj.chart
        im = self.immersion
        return im.sample_chart or im.chart


KEYS = {
    "torus": "flat torus with a constant cubic form; conjugate symmetric, projectively flat, incomplete",
    "strip": "strip R x (-sqrt(pi)/2, sqrt(pi)/2) with a complete geodesic of finite length sqrt(pi)",
    "noguchi(sigma,a1,a2,a3)": "cubic form built from dsigma and g; complete when sum(a) >= 0 and sigma is bounded below",
    "cayley(n)": "affine sphere x1...x(n+1) = 1 in log coordinates; parallel cubic form, incomplete both ways",
    "sphere(n)": "round sphere, centroaffine: trivial structure, complete",
    "ellipsoid(a1,...,a(n+1))": "ellipsoid, centroaffine: trivial structure, complete",
    "paraboloid": "z = x^2 + y^2 - 1 with centroaffine normalization at 0",
    "paraboloid(constant)": "z = x^2 + y^2 - 1 with constant transversal (0,0,1): flat, S = 0",
}


def list_entries() -> list[tuple[str, str]]:
    return sorted(KEYS.items())


# constant torus structure ---------------------------------------------------------

def _torus() -> GalleryEntry:
    c = Chart.torus(2, 1.0, label="flat torus R^2/Z^2")
    A = np.zeros((2, 2, 2))
    A[0, 0, 0] = 1.0
    for idx in ((0, 1, 1), (1, 0, 1), (1, 1, 0)):
        A[idx] = -1.0
    s = StatStructure(
        c,
        TensorField.from_components(np.eye(2).tolist(), c, (0, 2), symmetry="sym2", label="g"),
        TensorField.from_components(A.tolist(), c, (0, 3), symmetry="sym3", label="A"),
        label="torus",
    )
    expected = {
        "conjugate_symmetric": Expected(True, None, "nabla_hat A = 0 for constant coefficients"),
        "projectively_flat": Expected(True, None, "nabla Ric symmetric for constant coefficients"),
        "ricci": Expected([[-2.0, 0.0], [0.0, -2.0]], 1e-8, "hand computation from the constant symbols"),
        "trivial": Expected(False, None, "A(U,U,U) = 1"),
        "sup_A": Expected(1.0, 0.05, "max over theta of cos(3 theta); dense grid oracle"),
        "blowup_from": Expected(((0.0, 0.3), (-1.0, 0.0), 1.0), 0.01, "gamma(t) = (ln(1-t), y0)"),
        "blowup_fraction": Expected("> 0", None, "incomplete: at least one random geodesic escapes"),
    }
    return GalleryEntry("torus", "structure", s, expected, KEYS["torus"])


# strip --------------------------------------------------------------------------

def strip_G(w):
    """y = G(w) = int_0^w exp(-s^2) ds."""
    return STRIP_HALF_WIDTH * erf(np.asarray(w, dtype=float))


def strip_G_inverse(y):
    y = np.asarray(y, dtype=float)
    if np.any(np.abs(y) >= STRIP_HALF_WIDTH):
        raise ValueError("point outside the strip")
    return erfinv(y / STRIP_HALF_WIDTH)


def _strip() -> GalleryEntry:
    """Stored in the chart (x, w) with y = G(w): there the flat metric of the
    strip reads dx^2 + exp(-2 w^2) dw^2 and the only nonzero component of the
    cubic form is A_www = 2 w exp(-2 w^2). The chart covers the whole strip."""
    c = Chart.euclidean(2, label="strip, coordinates (x, w) with y = G(w)")

    def g(P):
        w = P[..., 1]
        out = np.zeros(P.shape[:-1] + (2, 2), dtype=P.dtype)
        out[..., 0, 0] = 1
        out[..., 1, 1] = np.exp(-2 * w * w)
        return out

    def A(P):
        w = P[..., 1]
        out = np.zeros(P.shape[:-1] + (2, 2, 2), dtype=P.dtype)
        out[..., 1, 1, 1] = 2 * w * np.exp(-2 * w * w)
        return out

    def lc(P):
        out = np.zeros(P.shape[:-1] + (2, 2, 2), dtype=P.dtype)
        out[..., 1, 1, 1] = -2 * P[..., 1]
        return out

    s = StatStructure(c, TensorField(g, c, (0, 2), symmetry="sym2", label="g"),
                      TensorField(A, c, (0, 3), symmetry="sym3", label="A"), label="strip", lc=lc)
    expected = {
        "length": Expected(math.sqrt(math.pi), 1e-3, "int_R exp(-t^2) dt"),
        "complete_from": Expected(((0.0, 0.0), (0.0, 1.0)), None, "gamma(t) = (0, G(t)) is the line w = t"),
        "sup_A_unbounded": Expected(True, None, "A(V,V,V) = 2 t exp(t^2) is unbounded"),
        "conjugate_symmetric": Expected(True, None, "only A_www(w) is nonzero"),
    }
    box = Chart(2, ((-1.0, 1.0), (-1.0, 1.0)), label="|x|, |w| < 1")
    return GalleryEntry("strip", "structure", s, expected, KEYS["strip"], region=box)


# noguchi ------------------------------------------------------------------------

def _is_periodic(e: Expression, n: int) -> bool:
    P = Chart.torus(n).low_discrepancy(24, seed=7)
    base = e(P)
    return all(np.allclose(e(P + np.eye(n)[i]), base, rtol=0, atol=1e-10) for i in range(n))


def noguchi(sigma: str | Expression, a1: float, a2: float, a3: float, n: int = 2,
            chart: Optional[Chart] = None) -> GalleryEntry:
    """Cubic form a1 g(X,Y) dsigma(Z) + a2 g(Y,Z) dsigma(X) + a3 g(X,Z) dsigma(Y)
    for the flat metric. The chart is the flat torus when sigma is 1-periodic in
    every coordinate and R^n otherwise. Unequal coefficients are symmetrised."""
    e = sigma if isinstance(sigma, Expression) else parse_expression(sigma.replace("π", "pi"), n)
    if chart is None:
        chart = Chart.torus(n) if _is_periodic(e, n) else Chart.euclidean(n)
    alphas = np.array([a1, a2, a3], dtype=float)
    alpha = float(alphas.sum())
    if alpha < 0:
        warnings.warn("sum of coefficients is negative: the completeness conclusion does not apply", stacklevel=2)
    if not np.allclose(alphas, alphas.mean()):
        warnings.warn("unequal coefficients give a non-symmetric form; it is symmetrised", stacklevel=2)
    eye = np.eye(n)

    grad = [e.diff(i) for i in range(n)]

    def dsigma(P):
        return np.stack([d(P) for d in grad], axis=-1)

    def A(P):
        d = dsigma(P).astype(P.dtype)
        I = eye.astype(P.dtype)
        form = (np.einsum("...k,ij->...ijk", d, I) + np.einsum("...i,jk->...ijk", d, I)
                + np.einsum("...j,ik->...ijk", d, I))
        return (alpha / 3) * form

    label = f"noguchi({e}, {a1:g}, {a2:g}, {a3:g})"
    s = StatStructure(
        chart,
        TensorField.from_components(eye.tolist(), chart, (0, 2), symmetry="sym2", label="g"),
        TensorField(A, chart, (0, 3), symmetry="sym3", constant=e.is_constant, label="A"),
        label=label,
    )
    s.__dict__["sigma"] = e
    s.__dict__["alpha"] = alpha
    s.__dict__["spray"] = PotentialSpray(e, alpha)
    expected = {
        "trivial": Expected(e.is_constant or alpha == 0, None, "A vanishes iff dsigma = 0 or the coefficients sum to 0"),
        "complete": Expected(alpha >= 0, None, "sigma bounded below on a compact chart and sum >= 0"),
        "dual_complete": Expected(alpha >= 0, None, "sigma bounded above on a compact chart"),
        "speed_bound": Expected("exp(alpha (sigma(p) - min sigma))", 1e-3, "l(t) = exp(-alpha (sigma(gamma(t)) - sigma(gamma(0))))"),
    }
    return GalleryEntry(label, "structure", s, expected, KEYS["noguchi(sigma,a1,a2,a3)"],
                        params={"sigma": str(e), "alphas": [a1, a2, a3], "alpha": alpha})


# hypersurfaces ----------------------------------------------------------------

def cayley(n: int = 2) -> GalleryEntry:
    """x1 ... x(n+1) = 1 in logarithmic coordinates u_i = ln x_i (i <= n).

    The diagonal group acts by centroaffine maps and becomes translation in
    these coordinates, so g and the induced connection have constant
    components and the chart covers the whole surface."""
    if n < 1:
        raise ValueError("n must be >= 1")
    chart = Chart.euclidean(n, label=f"R^{n}, u = log x")
    box = Chart(n, ((-1.0, 1.0),) * n, label="sample box")

    def f(P):
        return np.exp(np.concatenate([P, -np.sum(P, axis=-1, keepdims=True)], axis=-1))

    im = Immersion(chart, f, Centroaffine(), label=f"cayley({n})", sample_chart=box)
    expected = {
        "nabla_hat_A": Expected(0.0, 1e-4, "affine sphere with parallel cubic form"),
        "blowup_statistical": Expected(True, None, "the induced connection is incomplete"),
        "blowup_dual": Expected(True, None, "the dual connection is incomplete"),
        "shape_operator": Expected("-id", 1e-6, "centroaffine with xi = +f"),
    }
    return GalleryEntry(f"cayley({n})", "immersion", im, expected, KEYS["cayley(n)"], params={"n": n})


def ellipsoid(*axes: float, key: Optional[str] = None) -> GalleryEntry:
    a = [float(x) for x in axes]
    if len(a) < 2 or any(x <= 0 for x in a):
        raise ValueError("ellipsoid needs at least two positive semi-axes")
    label = key or f"ellipsoid({','.join(f'{x:g}' for x in a)})"
    atlas = OvaloidAtlas(a, label=label)
    expected = {
        "trivial": Expected(True, 1e-6, "centroaffine ovaloid modelled on a quadric"),
        "shape_operator": Expected("id", 1e-6, "xi = -(f - 0)"),
        "complete": Expected(True, None, "centroaffine ovaloid: both connections complete"),
        "gauss": Expected(0.0, 1e-4, "Gauss equations"),
        "plane_sections": Expected(0.0, 1e-5, "geodesics lie in planes through the centre"),
    }
    return GalleryEntry(label, "atlas", atlas, expected,
                        KEYS["sphere(n)" if len(set(a)) == 1 else "ellipsoid(a1,...,a(n+1))"], params={"axes": a})


def sphere(n: int = 2) -> GalleryEntry:
    e = ellipsoid(*([1.0] * (n + 1)), key=f"sphere({n})")
    e.expected["K_sup"] = Expected(0.0, 1e-8, "trivial structure")
    e.expected["ricci"] = Expected("(n-1) g", 1e-4, "round metric")
    return e


def paraboloid(variant: str = "centroaffine") -> GalleryEntry:
    chart = Chart.euclidean(2, label="R^2")
    box = Chart(2, ((-1.5, 1.5), (-1.5, 1.5)), label="sample box")

    def f(P):
        return np.stack([P[..., 0], P[..., 1], P[..., 0] ** 2 + P[..., 1] ** 2 - 1], axis=-1)

    q = Quadric(np.diag([1.0, 1.0, 0.0]), np.array([0.0, 0.0, -1.0]), -1.0)
    if variant in ("centroaffine", ""):
        nz, key = Centroaffine(), "paraboloid"
        expected = {
            "section_det": Expected("t^2 + 1", 1e-10, "parabola (t, t^2 - 1) in the plane y = 0"),
            "gauss": Expected(0.0, 1e-4, "Gauss equations"),
            "plane_sections": Expected(0.0, 1e-5, "geodesics lie in planes through 0"),
            "shape_operator": Expected("id", 1e-6, "centroaffine"),
        }
    elif variant in ("constant", "const"):
        nz, key = ConstantTransversal((0.0, 0.0, 1.0)), "paraboloid(constant)"
        expected = {
            "metric": Expected([[2.0, 0.0], [0.0, 2.0]], 1e-6, "second derivatives of the graph"),
            "shape_operator": Expected("0", 1e-8, "constant transversal"),
            "flat": Expected(True, 1e-6, "Gamma = 0 in graph coordinates"),
            "conormal_degenerate": Expected(True, None, "S = 0"),
            "plane_sections": Expected(0.0, 1e-5, "geodesics lie in planes containing xi"),
        }
    else:
        raise ValueError(f"unknown paraboloid variant {variant!r}")
    im = Immersion(chart, f, nz, label=key, quadric=q, sample_chart=box)
    return GalleryEntry(key, "immersion", im, expected, KEYS[key if key == "paraboloid" else "paraboloid(constant)"],
                        params={"variant": variant})


# key parsing ----------------------------------------------------------------------

_KEY = re.compile(r"^\s*([A-Za-z_]+)\s*(?:\((.*)\))?\s*$", re.S)


def _split_args(s: str) -> list[str]:
    out, depth, cur = [], 0, ""
    for ch in s:
        if ch == "," and depth == 0:
            out.append(cur)
            cur = ""
            continue
        depth += ch == "("
        depth -= ch == ")"
        cur += ch
    if cur.strip() or out:
        out.append(cur)
    return [a.strip() for a in out]


def _number(s: str) -> float:
    e = parse_expression(s.replace("π", "pi"), 1)
    if not e.is_constant:
        raise ParseError(f"expected a number, got {s!r}", 0)
    return float(e(np.zeros(1)))


def load(key: str) -> GalleryEntry:
    m = _KEY.match(key)
    if not m:
        raise UnknownKey(key)
    name, argstr = m.group(1).lower(), m.group(2)
    args = _split_args(argstr) if argstr is not None else []
    if name == "torus" and not args:
        return _torus()
    if name == "strip" and not args:
        return _strip()
    if name == "noguchi":
        if len(args) != 4:
            raise ValueError("noguchi takes (sigma, a1, a2, a3)")
        n = 2
        return noguchi(args[0].replace("π", "pi"), *(_number(a) for a in args[1:]), n=n)
    if name == "cayley":
        return cayley(int(_number(args[0])) if args else 2)
    if name == "sphere":
        return sphere(int(_number(args[0])) if args else 2)
    if name == "ellipsoid":
        return ellipsoid(*(_number(a) for a in args))
    if name == "paraboloid":
        return paraboloid(args[0] if args else "centroaffine")
    raise UnknownKey(key)
