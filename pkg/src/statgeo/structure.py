"""Statistical structures (g, A) and everything derived from them.

Index conventions, used throughout the package:

* Christoffel arrays ``G[..., k, i, j]`` hold the coefficient of ``d_k`` in
  ``nabla_{d_i} d_j``.
* Curvature ``R[..., l, k, i, j]`` holds the ``d_l`` component of
  ``R(d_i, d_j) d_k``.
* Ricci ``Ric[..., j, k] = tr(X -> R(X, d_j) d_k)``.
* Covariant derivatives put the differentiation slot first:
  ``(nabla A)[..., m, i, j, k] = (nabla_{d_m} A)(d_i, d_j, d_k)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .chart import Chart, make_rng
from .fields import FDSteps, TensorField, asymmetry, fd_gradient, inv, solve

__all__ = [
    "StatStructure",
    "Connection",
    "ClassificationReport",
    "InconsistentReport",
    "KINDS",
    "levi_civita",
    "difference_tensor",
    "statistical_and_dual",
    "curvature",
    "ricci",
    "tau",
    "nabla_hat_A",
    "nabla_g",
    "duality_residual",
    "check_conjugate_symmetric",
    "check_projectively_flat",
    "estimate_sup_A",
    "sample_unit_vectors",
    "ros_mean",
    "classify",
]

KINDS = ("levi_civita", "statistical", "dual")
_ALIASES = {"metric": "levi_civita", "hat": "levi_civita", "lc": "levi_civita",
            "nabla": "statistical", "primal": "statistical", "bar": "dual"}

DEFAULT_TOL = 1e-5


def _kind(kind: str) -> str:
    kind = _ALIASES.get(kind, kind)
    if kind not in KINDS:
        raise ValueError(f"unknown connection kind {kind!r}; expected one of {KINDS}")
    return kind


@dataclass(frozen=True)
class StatStructure:
    """A metric ``g`` and a symmetric cubic form ``A`` on a chart.

    ``lc`` optionally supplies closed-form Levi-Civita symbols, and ``conn``
    closed-form symbols of the statistical connection itself (as produced by
    an immersion). When ``conn`` is given, ``A`` may be omitted and is derived
    as ``A_ijk = g_kl (Gamma - Gamma_hat)^l_ij``.
    """

    chart: Chart
    g: TensorField
    A: Optional[TensorField] = None
    label: str = ""
    steps: FDSteps = field(default_factory=FDSteps)
    lc: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False)
    conn: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False)

    def __post_init__(self):
        if self.A is None and self.conn is None:
            raise ValueError("a statistical structure needs A or the connection symbols")
        if self.g.valence != (0, 2):
            raise ValueError("g must be a (0,2) field")
        if self.A is not None and self.A.valence != (0, 3):
            raise ValueError("A must be a (0,3) field")

    @property
    def dim(self) -> int:
        return self.chart.dim

    def with_steps(self, steps: FDSteps) -> "StatStructure":
        return replace(self, steps=steps)

    def scaled_steps(self, factor: float) -> "StatStructure":
        return replace(self, steps=self.steps.scaled(factor))

    def dual(self) -> "StatStructure":
        """The structure (g, -A), whose statistical connection is this one's dual."""
        if self.conn is not None:
            conn = self.conn
            return replace(self, A=None, conn=lambda P: 2 * self.christoffel(P) - conn(P),
                           label=f"dual {self.label}")
        A = self.A
        return replace(self, A=replace(A, func=lambda P: -A.func(P)), label=f"dual {self.label}")

    # pointwise tensors -----------------------------------------------------

    def _pts(self, P) -> np.ndarray:
        P = np.asarray(P)
        if P.dtype.kind != "f":
            P = P.astype(float)
        return self.chart.wrap(P)

    def metric(self, P) -> np.ndarray:
        return self.g.eval_wrapped(self._pts(P))

    def metric_inverse(self, P) -> np.ndarray:
        return inv(self.metric(P))

    def _grad(self, func, P, h, constant=False):
        n = self.dim
        if constant:
            val = np.asarray(func(P))
            return np.zeros(val.shape[:P.ndim - 1] + (n,) + val.shape[P.ndim - 1:], dtype=val.dtype)
        return fd_gradient(func, P, h=h, order=self.steps.order, chart=self.chart)

    def christoffel(self, P) -> np.ndarray:
        """Levi-Civita symbols of ``g``."""
        P = self._pts(P)
        if self.lc is not None:
            return np.asarray(self.lc(P), dtype=P.dtype)
        if self.g.constant:
            return np.zeros(P.shape[:-1] + (self.dim,) * 3, dtype=P.dtype)
        g = self.g.eval_wrapped(P)
        dg = self._grad(self.g, P, self.steps.first_step(P))  # [a, i, j] = d_a g_ij
        # lowered symbols Gamma_{l i j} = (d_i g_jl + d_j g_il - d_l g_ij) / 2
        low = 0.5 * (np.einsum("...ijl->...lij", dg) + np.einsum("...jil->...lij", dg) - dg)
        return np.einsum("...kl,...lij->...kij", inv(g), low)

    def cubic(self, P) -> np.ndarray:
        P = self._pts(P)
        if self.A is not None:
            return self.A.eval_wrapped(P)
        K = self.conn(P) - self.christoffel(P)
        return np.einsum("...kl,...lij->...ijk", self.g.eval_wrapped(P), K)

    def difference(self, P) -> np.ndarray:
        """K^k_ij = g^kl A_ijl."""
        P = self._pts(P)
        if self.A is None:
            return np.asarray(self.conn(P)) - self.christoffel(P)
        return np.einsum("...kl,...ijl->...kij", self.metric_inverse(P), self.A.eval_wrapped(P))

    def gamma(self, kind: str, P) -> np.ndarray:
        kind = _kind(kind)
        P = self._pts(P)
        if kind == "levi_civita":
            return self.christoffel(P)
        if self.conn is not None:
            G = np.asarray(self.conn(P), dtype=P.dtype)
            return G if kind == "statistical" else 2 * self.christoffel(P) - G
        if self.g.constant and self.A.constant and self.lc is None:
            # constant coefficients: compute once per dtype
            cache = self.__dict__.setdefault("_gamma_cache", {})
            key = (kind, P.dtype.str)
            if key not in cache:
                p0 = P.reshape(-1, self.dim)[:1]
                cache[key] = (self.christoffel(p0) + (1 if kind == "statistical" else -1) * self.difference(p0))[0]
            return np.broadcast_to(cache[key], P.shape[:-1] + (self.dim,) * 3)
        hat = self.christoffel(P)
        K = self.difference(P)
        return hat + K if kind == "statistical" else hat - K

    def connection(self, kind: str = "statistical") -> "Connection":
        return Connection(self, _kind(kind))

    def curvature(self, kind: str, P) -> np.ndarray:
        kind = _kind(kind)
        P = self._pts(P)
        G = self.gamma(kind, P)
        flat = (self.g.constant and (kind == "levi_civita" or
                                     (self.A is not None and self.A.constant)))
        if flat:
            dG = np.zeros(P.shape[:-1] + (self.dim,) + G.shape[P.ndim - 1:], dtype=G.dtype)
        else:
            dG = fd_gradient(lambda Q: self.gamma(kind, Q), P, h=self.steps.outer_step,
                             order=self.steps.order, chart=self.chart)
        return (np.einsum("...iljk->...lkij", dG) - np.einsum("...jlik->...lkij", dG)
                + np.einsum("...lim,...mjk->...lkij", G, G)
                - np.einsum("...ljm,...mik->...lkij", G, G))

    def ricci(self, kind: str, P) -> np.ndarray:
        return np.einsum("...lklj->...jk", self.curvature(kind, P))

    def tau(self, P) -> np.ndarray:
        return np.einsum("...kik->...i", self.difference(P))

    def nabla_hat_A(self, P) -> np.ndarray:
        """(nabla_hat A)[m, i, j, k]."""
        P = self._pts(P)
        A = self.cubic(P)
        const = self.A is not None and self.A.constant
        dA = self._grad(self.cubic, P, self.steps.outer_step if self.A is None else self.steps.first_step(P), const)
        G = self.christoffel(P)
        return (dA - np.einsum("...pmi,...pjk->...mijk", G, A)
                - np.einsum("...pmj,...ipk->...mijk", G, A)
                - np.einsum("...pmk,...ijp->...mijk", G, A))

    def nabla_g(self, kind: str, P) -> np.ndarray:
        """(nabla_k g)_ij stored as [k, i, j]; equals -2A for the statistical connection."""
        P = self._pts(P)
        g = self.g.eval_wrapped(P)
        dg = self._grad(self.g, P, self.steps.first_step(P), self.g.constant)
        G = self.gamma(kind, P)
        return dg - np.einsum("...lki,...lj->...kij", G, g) - np.einsum("...lkj,...il->...kij", G, g)

    def nabla_ricci(self, kind: str, P) -> np.ndarray:
        """(nabla_m Ric)_jk stored as [m, j, k]."""
        P = self._pts(P)
        Ric = self.ricci(kind, P)
        dR = fd_gradient(lambda Q: self.ricci(kind, Q), P, h=self.steps.outer_step,
                         order=self.steps.order, chart=self.chart)
        G = self.gamma(kind, P)
        return (dR - np.einsum("...pmj,...pk->...mjk", G, Ric)
                - np.einsum("...pmk,...jp->...mjk", G, Ric))


@dataclass(frozen=True)
class Connection:
    """One of the three connections of a statistical structure, usable as a
    source of Christoffel symbols for geodesic integration."""

    structure: StatStructure
    kind: str

    @property
    def chart(self) -> Chart:
        return self.structure.chart

    def gamma(self, P) -> np.ndarray:
        return self.structure.gamma(self.kind, P)

    __call__ = gamma


# functional interface --------------------------------------------------------

def levi_civita(s: StatStructure, p) -> np.ndarray:
    return s.christoffel(p)


def difference_tensor(s: StatStructure, p) -> np.ndarray:
    return s.difference(p)


def statistical_and_dual(s: StatStructure, p) -> tuple[np.ndarray, np.ndarray]:
    return s.gamma("statistical", p), s.gamma("dual", p)


def curvature(s: StatStructure, kind: str, p) -> np.ndarray:
    return s.curvature(kind, p)


def ricci(s: StatStructure, kind: str, p) -> np.ndarray:
    return s.ricci(kind, p)


def tau(s: StatStructure, p) -> np.ndarray:
    return s.tau(p)


def nabla_hat_A(s: StatStructure, p) -> np.ndarray:
    return s.nabla_hat_A(p)


def nabla_g(s: StatStructure, kind: str, p) -> np.ndarray:
    return s.nabla_g(kind, p)


def duality_residual(s: StatStructure, P) -> float:
    """max |d_i g_jk - g(nabla_i d_j, d_k) - g(d_j, nabla-bar_i d_k)| over points.

    The left side is differenced with its own step, independent of the one
    used inside the Christoffel symbols.
    """
    P = s._pts(np.atleast_2d(P))
    g = s.g(P)
    h = 2 * s.steps.first_step(P)
    lhs = s._grad(s.g, P, h, s.g.constant)
    G, Gb = s.gamma("statistical", P), s.gamma("dual", P)
    rhs = np.einsum("...lij,...lk->...ijk", G, g) + np.einsum("...lik,...jl->...ijk", Gb, g)
    return float(np.max(np.abs(lhs - rhs)))


def _marginal(residual: float, tol: float) -> bool:
    return tol / 10 < residual < tol * 10


@dataclass
class CheckResult:
    verdict: bool
    residual: float
    tol: float
    reason: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def marginal(self) -> bool:
        return _marginal(self.residual, self.tol)

    def __bool__(self) -> bool:
        return self.verdict


def check_conjugate_symmetric(s: StatStructure, sample, tol: float = DEFAULT_TOL) -> CheckResult:
    """Two independent tests: symmetry of nabla_hat A in its first two slots,
    and R = R-bar. Their verdicts are reported separately in ``extra``."""
    P = s._pts(np.atleast_2d(sample))
    hA = s.nabla_hat_A(P)
    r_sym = asymmetry(hA, (-4, -3))
    r_curv = float(np.max(np.abs(s.curvature("statistical", P) - s.curvature("dual", P))))
    v_sym, v_curv = r_sym < tol, r_curv < tol
    return CheckResult(
        v_sym and v_curv, max(r_sym, r_curv), tol,
        reason="" if v_sym == v_curv else "nabla_hat A test and R = R-bar test disagree",
        extra={"nabla_hat_A_asymmetry": r_sym, "curvature_gap": r_curv,
               "nabla_hat_A_verdict": v_sym, "curvature_verdict": v_curv},
    )


def check_ricci_symmetric(s: StatStructure, kind: str, sample, tol: float = DEFAULT_TOL) -> CheckResult:
    Ric = s.ricci(kind, np.atleast_2d(sample))
    r = asymmetry(Ric, (-2, -1))
    return CheckResult(r < tol, r, tol)


def check_projectively_flat(s: StatStructure, kind: str = "statistical", sample=None,
                            tol: float = DEFAULT_TOL) -> CheckResult:
    """Dimension 2: symmetry of the cubic form nabla Ric. Higher dimension:
    R(X,Y)Z = (Ric(Y,Z) X - Ric(X,Z) Y) / (n - 1)."""
    P = s._pts(np.atleast_2d(s.chart.low_discrepancy() if sample is None else sample))
    ric = check_ricci_symmetric(s, kind, P, tol)
    if not ric:
        return CheckResult(False, ric.residual, tol, reason="ricci not symmetric")
    n = s.dim
    if n == 2:
        r = asymmetry(s.nabla_ricci(kind, P), (-3, -2))
    else:
        R = s.curvature(kind, P)
        Ric = np.einsum("...lklj->...jk", R)
        eye = np.eye(n, dtype=R.dtype)
        model = (np.einsum("...jk,li->...lkij", Ric, eye) - np.einsum("...ik,lj->...lkij", Ric, eye)) / (n - 1)
        r = float(np.max(np.abs(R - model)))
    return CheckResult(r < tol, r, tol)


def sample_unit_vectors(g: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One g-unit vector per metric in the batch ``g`` (..., n, n).

    With g = L L^T, ``U = L^{-T} z/|z|`` for standard normal z: this is the
    uniform distribution on the unit sphere of g.
    """
    g = np.asarray(g)
    n = g.shape[-1]
    z = rng.standard_normal(g.shape[:-2] + (n,))
    z /= np.linalg.norm(z, axis=-1, keepdims=True)
    L = np.linalg.cholesky(np.asarray(g, dtype=float))
    U = solve(np.swapaxes(L, -1, -2), z)
    return U.astype(g.dtype)


def cubic_uuu(A: np.ndarray, U: np.ndarray) -> np.ndarray:
    return np.einsum("...ijk,...i,...j,...k->...", A, U, U, U)


def estimate_sup_A(s: StatStructure, samples: int = 10_000, seed: int = 0, chunk: int = 4096) -> float:
    """Monte-Carlo max of |A(U,U,U)| over random points and g-unit vectors."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = make_rng(seed)
    best = 0.0
    done = 0
    while done < samples:
        m = min(chunk, samples - done)
        P = s.chart.sample(rng, m)
        U = sample_unit_vectors(s.metric(P), rng)
        best = max(best, float(np.max(np.abs(cubic_uuu(s.cubic(P), U)))))
        done += m
    return best


def ros_mean(s: StatStructure, samples: int = 100_000, seed: int = 0, chunk: int = 2000) -> tuple[float, float]:
    """Mean and standard error of (nabla_hat A)(U,U,U,U) over the unit sphere
    bundle of a compact chart, points weighted by the Riemannian volume."""
    if not s.chart.is_compact:
        raise ValueError("the sphere-bundle average needs a compact (fully periodic) chart")
    rng = make_rng(seed)
    vals, wts = [], []
    done = 0
    while done < samples:
        m = min(chunk, samples - done)
        P = s.chart.sample(rng, m)
        g = s.metric(P)
        U = sample_unit_vectors(g, rng)
        hA = s.nabla_hat_A(P)
        vals.append(np.einsum("...mijk,...m,...i,...j,...k->...", hA, U, U, U, U))
        wts.append(np.sqrt(np.linalg.det(g)))
        done += m
    v = np.concatenate(vals)
    w = np.concatenate(wts)
    w = w / w.sum()
    mean = float(np.sum(w * v))
    # effective-sample-size standard error for the weighted mean
    var = float(np.sum(w * (v - mean) ** 2))
    n_eff = 1.0 / float(np.sum(w**2))
    return mean, math.sqrt(var / n_eff)


class InconsistentReport(AssertionError):
    """A classification report violated one of the implications it must satisfy."""


@dataclass
class ClassificationReport:
    conjugate_symmetric: bool
    ricci_symmetric: bool
    projectively_flat: bool
    trivial: bool
    sup_A_estimate: float
    residuals: dict
    marginal: dict
    reasons: dict
    sample: np.ndarray

    def __post_init__(self):
        if self.trivial and not self.conjugate_symmetric:
            raise InconsistentReport("trivial structure reported as not conjugate symmetric")
        if self.conjugate_symmetric and not self.ricci_symmetric:
            raise InconsistentReport("conjugate symmetric structure with non-symmetric Ricci tensor")

    def to_dict(self) -> dict:
        return {
            "conjugate_symmetric": self.conjugate_symmetric,
            "ricci_symmetric": self.ricci_symmetric,
            "projectively_flat": self.projectively_flat,
            "trivial": self.trivial,
            "sup_A_estimate": self.sup_A_estimate,
            "residuals": self.residuals,
            "marginal": self.marginal,
            "reasons": self.reasons,
            "sample_size": int(len(self.sample)),
        }


def classify(s: StatStructure, sample=None, tol: float = DEFAULT_TOL, sup_samples: int = 10_000,
             seed: int = 0) -> ClassificationReport:
    P = s._pts(np.atleast_2d(s.chart.low_discrepancy(seed=seed) if sample is None else sample))
    conj = check_conjugate_symmetric(s, P, tol)
    ric = check_ricci_symmetric(s, "statistical", P, tol)
    proj = check_projectively_flat(s, "statistical", P, tol)
    a_max = float(np.max(np.abs(s.cubic(P))))
    residuals = {
        "conjugate_symmetry": conj.residual,
        "nabla_hat_A_asymmetry": conj.extra["nabla_hat_A_asymmetry"],
        "curvature_gap": conj.extra["curvature_gap"],
        "ricci_asymmetry": ric.residual,
        "projective_flatness": proj.residual,
        "max_abs_A": a_max,
    }
    marginal = {
        "conjugate_symmetric": conj.marginal,
        "ricci_symmetric": ric.marginal,
        "projectively_flat": proj.marginal,
        "trivial": _marginal(a_max, tol),
    }
    reasons = {k: v for k, v in (("conjugate_symmetric", conj.reason), ("projectively_flat", proj.reason)) if v}
    return ClassificationReport(
        conjugate_symmetric=conj.verdict,
        ricci_symmetric=ric.verdict,
        projectively_flat=proj.verdict,
        trivial=a_max < tol,
        sup_A_estimate=estimate_sup_A(s, sup_samples, seed),
        residuals=residuals,
        marginal=marginal,
        reasons=reasons,
        sample=P,
    )
