"""Immersed hypersurfaces, their induced statistical structures, and the
plane-section machinery for centroaffine surfaces.

An immersion ``f`` of an ``n``-dimensional chart into R^(n+1) together with a
transversal field ``xi`` splits second derivatives as

    d_i d_j f = Gamma^k_ij d_k f + g_ij xi,     d_i xi = -S^k_i d_k f + tau_i xi,

which is solved pointwise as an (n+1) x (n+1) linear system in the frame
``[d_1 f, ..., d_n f, xi]``. The conormal ``nu`` is the covector with
``nu(xi) = 1`` vanishing on the tangent plane, stored as a coordinate vector
under the standard pairing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate, optimize

from .chart import Chart, ChartError, make_rng
from .fields import FDSteps, TensorField, fd_gradient, fd_hessian, fd_jet
from .geodesics import (BLOWUP, EXITED, REACHED, ProbeConfig, ProbeOutcome, Trajectory,
                        _speed, integrate_batch)
from .structure import StatStructure, sample_unit_vectors

__all__ = [
    "Centroaffine",
    "ConstantTransversal",
    "ExplicitField",
    "Immersion",
    "InducedStructure",
    "ImmersionError",
    "TransversalityError",
    "ConormalDegenerate",
    "Quadric",
    "induce_structure",
    "gauss_equation_residual",
    "conormal_duality_check",
    "plane_section_check",
    "PlanarCurve",
    "planar_reparametrize",
    "section_curve",
    "theorem53_certificate",
    "OvaloidAtlas",
]

# Map derivatives are differenced with order-4 stencils at this step.
IMMERSION_STEPS = FDSteps(first=4e-3, outer=1.2e-2, order=6)


class ImmersionError(ValueError):
    """The Jacobian of the map is rank deficient."""


class TransversalityError(ValueError):
    """The transversal field lies (numerically) in the tangent plane."""


class ConormalDegenerate(ValueError):
    """The shape operator is singular, so the conormal map is not an immersion."""


@dataclass(frozen=True)
class Centroaffine:
    """xi = sign * (f - center). ``sign=None`` picks the sign that makes the
    induced metric positive definite at the chart's reference point."""

    center: tuple = None
    sign: Optional[float] = None


@dataclass(frozen=True)
class ConstantTransversal:
    xi: tuple


@dataclass(frozen=True)
class ExplicitField:
    func: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Quadric:
    """Zero set of X^T M X + b.X + c."""

    M: np.ndarray
    b: np.ndarray
    c: float

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X)
        return np.einsum("...i,ij,...j->...", X, self.M, X) + X @ self.b + self.c


@dataclass
class InducedStructure:
    g: np.ndarray          # (..., n, n)
    gamma: np.ndarray      # (..., n, n, n), [k, i, j]
    S: np.ndarray          # (..., n, n), S[k, i] = component k of S d_i
    tau: np.ndarray        # (..., n)
    conormal: np.ndarray   # (..., n+1)
    frame: np.ndarray      # (..., n+1, n+1), columns d_1 f .. d_n f, xi
    weingarten_residual: float


@dataclass(frozen=True)
class Immersion:
    chart: Chart
    f: Callable[[np.ndarray], np.ndarray]
    normalization: object
    label: str = ""
    steps: FDSteps = IMMERSION_STEPS
    quadric: Optional[Quadric] = field(default=None, compare=False)
    # region used for default sample points (a patch's home region, say)
    sample_chart: Optional[Chart] = field(default=None, compare=False)

    def __post_init__(self):
        nz = self.normalization
        if isinstance(nz, Centroaffine):
            center = (0.0,) * (self.dim + 1) if nz.center is None else tuple(float(c) for c in nz.center)
            if len(center) != self.dim + 1:
                raise ValueError("centroaffine centre must have n+1 coordinates")
            sign = nz.sign
            if sign is None:
                sign = -1.0
                p0 = self.chart.reference_point()[None]
                g = self._induce(p0, Centroaffine(center, -1.0)).g[0]
                if np.all(np.linalg.eigvalsh(g) < 0):
                    sign = 1.0
            object.__setattr__(self, "normalization", Centroaffine(center, float(sign)))
        elif isinstance(nz, ConstantTransversal):
            if len(nz.xi) != self.dim + 1:
                raise ValueError("transversal vector must have n+1 coordinates")
        elif not isinstance(nz, ExplicitField):
            raise TypeError(f"unknown normalization {nz!r}")

    @property
    def dim(self) -> int:
        return self.chart.dim

    @property
    def is_centroaffine(self) -> bool:
        return isinstance(self.normalization, Centroaffine)

    def _pts(self, P) -> np.ndarray:
        P = np.asarray(P)
        return P.astype(float) if P.dtype.kind != "f" else P

    def map(self, P) -> np.ndarray:
        return np.asarray(self.f(self._pts(P)))

    def jacobian(self, P) -> np.ndarray:
        """(..., n, n+1): row i is d_i f."""
        return fd_gradient(self.f, self._pts(P), h=self.steps.first, order=self.steps.order, chart=self.chart)

    def hessian(self, P) -> np.ndarray:
        return fd_hessian(self.f, self._pts(P), h=self.steps.first, order=self.steps.order, chart=self.chart)

    def xi(self, P, nz=None) -> np.ndarray:
        nz = nz or self.normalization
        P = self._pts(P)
        if isinstance(nz, Centroaffine):
            return nz.sign * (self.map(P) - np.asarray(nz.center))
        if isinstance(nz, ConstantTransversal):
            return np.broadcast_to(np.asarray(nz.xi, dtype=P.dtype), P.shape[:-1] + (self.dim + 1,))
        return np.asarray(nz.func(P))

    def dxi(self, P, J=None, nz=None) -> np.ndarray:
        """(..., n, n+1): row i is d_i xi."""
        nz = nz or self.normalization
        P = self._pts(P)
        if isinstance(nz, Centroaffine):
            return nz.sign * (self.jacobian(P) if J is None else J)
        if isinstance(nz, ConstantTransversal):
            return np.zeros(P.shape[:-1] + (self.dim, self.dim + 1), dtype=P.dtype)
        return fd_gradient(nz.func, P, h=self.steps.first, order=self.steps.order, chart=self.chart)

    def _induce(self, P, nz=None) -> InducedStructure:
        P = self._pts(P)
        if nz is not None:
            return self._induce_uncached(P, nz)
        key = (P.tobytes(), P.shape, P.dtype.str)
        memo = self.__dict__.get("_memo")
        if memo is not None and memo[0] == key:
            return memo[1]
        out = self._induce_uncached(P, nz)
        self.__dict__["_memo"] = (key, out)
        return out

    def _induce_uncached(self, P, nz) -> InducedStructure:
        n = self.dim
        J, H = fd_jet(self.f, P, h=self.steps.first, order=self.steps.order, chart=self.chart)
        xi = self.xi(P, nz)
        frame = np.concatenate([np.swapaxes(J, -1, -2), xi[..., :, None]], axis=-1)
        # equilibrate ambient rows: a fixed linear change of ambient
        # coordinates, so tangency and the solved coefficients are unchanged
        row = np.max(np.abs(frame), axis=-1, keepdims=True)
        # a row at difference-noise level is a zero row: rescaling it would
        # hide a singular frame from the determinant test below
        top = np.max(row, axis=-2, keepdims=True)
        D = 1.0 / np.where(row > 1e-10 * top, row, top)
        Fs = D * frame
        Js = np.swapaxes(Fs[..., :, :n], -1, -2)
        sv = np.linalg.svd(Js / np.linalg.norm(Js, axis=-1, keepdims=True), compute_uv=False)
        if np.any(sv[..., -1] <= 1e-10 * sv[..., 0]):
            raise ImmersionError(f"Jacobian of {self.label!r} is rank deficient")
        scale = np.prod(np.linalg.norm(Fs, axis=-2), axis=-1)
        det = np.linalg.det(Fs)
        if np.any(np.abs(det) <= 1e-10 * scale):
            raise TransversalityError(f"transversal field of {self.label!r} is tangent somewhere")
        # d_i d_j f in the frame: coefficients [k < n] -> Gamma^k_ij, [n] -> g_ij
        rhs = np.moveaxis(H.reshape(H.shape[:-3] + (n * n, n + 1)), -1, -2)
        c = np.linalg.solve(Fs, D * rhs)
        c = c.reshape(c.shape[:-1] + (n, n))
        gamma = c[..., :n, :, :]
        g = c[..., n, :, :]
        # rounding in the second differences puts noise of order eps |f| / h^2
        # on g; an eigenvalue below a thousand times that is a degenerate metric
        fs = D[..., 0] * self.f(np.asarray(P, dtype=float))
        noise = (np.finfo(float).eps * np.max(np.abs(fs), axis=-1)
                 / (self.steps.first ** 2 * np.max(np.abs(Fs[..., :, -1]), axis=-1)))
        eig = np.min(np.abs(np.linalg.eigvalsh(0.5 * (g + np.swapaxes(g, -1, -2)))), axis=-1)
        if np.any(eig <= 1e3 * noise):
            raise ImmersionError(f"induced metric of {self.label!r} is degenerate")
        # Weingarten: d_i xi = -S^k_i d_k f + tau_i xi
        dX = np.swapaxes(self.dxi(P, J, nz), -1, -2)
        w = np.linalg.solve(Fs, D * dX)
        S = -w[..., :n, :]
        tau = w[..., n, :]
        recon = np.einsum("...ak,...ki->...ai", frame[..., :, :n], -S) + xi[..., :, None] * tau[..., None, :]
        wres = float(np.max(np.abs(D * (recon - dX)))) if dX.size else 0.0
        e_n = np.broadcast_to(np.eye(n + 1)[n], xi.shape)[..., None]
        nu = D[..., 0] * np.linalg.solve(np.swapaxes(Fs, -1, -2), e_n)[..., 0]
        return InducedStructure(g=g, gamma=gamma, S=S, tau=tau, conormal=nu, frame=frame,
                                weingarten_residual=wres)

    def induce(self, P) -> InducedStructure:
        return self._induce(P)

    def conormal(self, P) -> np.ndarray:
        return self._induce(P).conormal

    def structure(self, steps: Optional[FDSteps] = None) -> StatStructure:
        """The induced statistical structure as a StatStructure on the chart.

        The metric is symmetrised (the Gauss-formula solve makes it symmetric
        up to stencil error; the raw asymmetry is tested separately)."""
        n = self.dim

        def gfun(P):
            g = self._induce(P).g
            return 0.5 * (g + np.swapaxes(g, -1, -2))

        g = TensorField(gfun, self.chart, (0, 2), symmetry="sym2", label=f"g of {self.label}")
        return StatStructure(self.chart, g, None, label=self.label, steps=steps or self.steps,
                             conn=lambda P: self._induce(P).gamma)

    def conormal_immersion(self) -> "Immersion":
        """nu with transversal -nu; its induced connection is the dual one."""
        return Immersion(self.chart, self.conormal, ExplicitField(lambda P: -self.conormal(P)),
                         label=f"conormal of {self.label}", steps=replace(self.steps, first=self.steps.outer))


def induce_structure(im: Immersion, p) -> InducedStructure:
    return im.induce(p)


def _sample(im: Immersion, sample) -> np.ndarray:
    if sample is None:
        return (im.sample_chart or im.chart).low_discrepancy(20)
    return np.atleast_2d(np.asarray(sample, dtype=float))


def gauss_equation_residual(im: Immersion, sample=None) -> dict:
    """Residuals of R(X,Y)Z = g(Y,Z)SX - g(X,Z)SY and of
    R-bar(X,Y)Z = g(Y,SZ)X - g(X,SZ)Y, with R-bar taken from the connection
    induced on the conormal immersion."""
    P = _sample(im, sample)
    n = im.dim
    st = im.structure()
    ind = im.induce(P)
    g, S = ind.g, ind.S
    R = st.curvature("statistical", P)
    model = np.einsum("...jk,...li->...lkij", g, S) - np.einsum("...ik,...lj->...lkij", g, S)
    out = {"gauss": float(np.max(np.abs(R - model)))}
    eye = np.eye(n)
    gS = np.einsum("...jm,...mk->...jk", g, S)
    model_bar = np.einsum("...jk,li->...lkij", gS, eye) - np.einsum("...ik,lj->...lkij", gS, eye)
    try:
        _check_conormal(ind)
        co = im.conormal_immersion().structure()
        Rb = co.curvature("statistical", P)
        out["gauss_dual"] = float(np.max(np.abs(Rb - model_bar)))
    except ConormalDegenerate:
        # the dual connection still exists: use nabla-bar = 2 nabla_hat - nabla
        Rb = st.curvature("dual", P)
        out["gauss_dual"] = float(np.max(np.abs(Rb - model_bar)))
        out["conormal_degenerate"] = True
    return out


def _check_conormal(ind: InducedStructure, tol: float = 1e-8):
    detS = np.linalg.det(ind.S)
    scale = np.maximum(1.0, np.linalg.norm(ind.S, axis=(-2, -1)) ** ind.S.shape[-1])
    if np.any(np.abs(detS) <= tol * scale):
        raise ConormalDegenerate("shape operator is singular; the conormal map is not an immersion")


def conormal_duality_check(im: Immersion, sample=None) -> dict:
    """Compare the connection induced on the conormal map (transversal -nu)
    with nabla-bar = nabla_hat - K, and its metric with g(S., .)."""
    P = _sample(im, sample)
    ind = im.induce(P)
    _check_conormal(ind)
    co = im.conormal_immersion().induce(P)
    st = im.structure()
    dual = st.gamma("dual", P)
    gS = np.einsum("...ik,...kj->...ij", ind.g, ind.S)
    pairing = max(float(np.max(np.abs(np.einsum("...a,...a->...", ind.conormal, ind.frame[..., :, -1]) - 1))),
                  float(np.max(np.abs(np.einsum("...a,...ai->...i", ind.conormal, ind.frame[..., :, :-1])))))
    return {
        "connection": float(np.max(np.abs(co.gamma - dual))),
        "metric": float(np.max(np.abs(co.g - gS))),
        "pairing": pairing,
    }


def plane_section_check(im: Immersion, traj, F=None, dF=None) -> float:
    """Max distance of f(gamma(t)) from the affine plane through the centre
    spanned by f(gamma(0)) - centre and f_* gamma'(0), relative to
    |f(gamma(t)) - centre|. For a constant transversal the plane passes
    through f(gamma(0)) and contains xi instead.

    ``F``/``dF`` may carry ambient points and velocities directly (atlas runs).
    """
    if F is None:
        F = im.map(traj.x)
        dF0 = np.einsum("ia,i->a", im.jacobian(traj.x[:1])[0], traj.v[0])
    else:
        dF0 = dF[0]
    nz = im.normalization
    if isinstance(nz, Centroaffine):
        base = np.asarray(nz.center)
        span = [F[0] - base, dF0]
    elif isinstance(nz, ConstantTransversal):
        base = F[0]
        span = [np.asarray(nz.xi, dtype=float), dF0]
    else:
        raise TypeError("plane sections are defined for centroaffine or constant transversals")
    B = np.array(span, dtype=float).T
    q, r = np.linalg.qr(B)
    if abs(r[1, 1]) <= 1e-12 * max(1.0, abs(r[0, 0])):
        raise ValueError("initial span is degenerate")
    D = np.asarray(F, dtype=float) - base
    off = D - (D @ q) @ q.T
    denom = np.linalg.norm(D, axis=-1)
    if not isinstance(nz, Centroaffine):
        denom = np.maximum(1.0, np.linalg.norm(np.asarray(F, dtype=float), axis=-1))
    return float(np.max(np.linalg.norm(off, axis=-1) / denom))


# planar curves --------------------------------------------------------------

def _det2(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


@dataclass(frozen=True)
class PlanarCurve:
    r: Callable[[np.ndarray], np.ndarray]
    interval: tuple[float, float]
    rdot: Optional[Callable[[np.ndarray], np.ndarray]] = None
    label: str = ""

    def velocity(self, t, h: float = 1e-5) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.rdot is not None:
            return np.asarray(self.rdot(t))
        return (-self.r(t + 2 * h) + 8 * self.r(t + h) - 8 * self.r(t - h) + self.r(t - 2 * h)) / (12 * h)

    def det(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return _det2(np.asarray(self.r(t)), self.velocity(t))


@dataclass
class Reparametrized:
    curve: PlanarCurve
    t0: float
    sign: float
    D0: float
    s_of_t: Callable[[float], float]
    t_of_s: Callable[[float], float]
    s_range: tuple[float, float]
    parallel_residual: float

    def q(self, s) -> np.ndarray:
        return np.asarray(self.curve.r(np.vectorize(self.t_of_s)(s)))


def planar_reparametrize(c: PlanarCurve, t0: Optional[float] = None, grid: int = 401,
                         h: float = 1e-3, checks: int = 41) -> Reparametrized:
    """Reparametrize so that the acceleration is parallel to the position.

    ds/dt = det(r, r') e^{-C}, with C fixed by ds/dt(t0) = 1. The residual
    |det(q, q'')| / (|q| |q''|) is measured with a second difference of step
    ``h`` in s on the reparametrized curve.
    """
    a, b = c.interval
    t0 = 0.5 * (a + b) if t0 is None else t0
    ts = np.linspace(a, b, grid)
    D = c.det(ts)
    if np.any(D == 0) or np.any(np.sign(D) != np.sign(D[0])) or np.min(np.abs(D)) < 1e-12 * np.max(np.abs(D)):
        raise ValueError("det(r, r') vanishes on the interval")
    sign = float(np.sign(D[0]))
    D0 = float(c.det(np.array([t0]))[0])

    def speed(t):
        return float(c.det(np.array([t]))[0]) / D0

    def s_of_t(t):
        return integrate.quad(speed, t0, t, epsabs=1e-13, epsrel=1e-13, limit=200)[0]

    s_lo, s_hi = s_of_t(a), s_of_t(b)

    def t_of_s(s):
        return optimize.brentq(lambda t: s_of_t(t) - s, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps)

    lo, hi = sorted((s_lo, s_hi))
    margin = 2 * h + 1e-3 * (hi - lo)
    ss = np.linspace(lo + margin, hi - margin, checks)
    res = 0.0
    for s in ss:
        qm, q0, qp = (np.asarray(c.r(np.array([t_of_s(x)])))[0] for x in (s - h, s, s + h))
        acc = (qp - 2 * q0 + qm) / h**2
        na = np.linalg.norm(acc)
        if na > 1e-8:
            res = max(res, abs(_det2(q0, acc)) / (np.linalg.norm(q0) * na))
    return Reparametrized(c, t0, sign, D0, s_of_t, t_of_s, (s_lo, s_hi), res)


def section_curve(q: Quadric, center, e1, e2, mode: str = "polar", interval=None,
                  seed_w: float = 0.0) -> PlanarCurve:
    """Intersection of a quadric with the plane ``center + span(e1, e2)``,
    traced numerically.

    ``polar``: r(phi) = rho(phi) (cos phi, sin phi) with rho the positive root
    along each ray from the centre (closed sections around the centre).
    ``graph``: r(u) = (u, w(u)), tracking the root in w continuously from
    the one nearest ``seed_w`` at u = 0.
    """
    center = np.asarray(center, dtype=float)
    E = np.array([e1, e2], dtype=float)

    def F(u, w):
        return q(center + u * E[0] + w * E[1])

    if mode == "polar":
        def rho(phi):
            d = np.cos(phi) * E[0] + np.sin(phi) * E[1]
            # q(center + t d) = A t^2 + B t + C
            A = d @ q.M @ d
            B = 2 * center @ q.M @ d + q.b @ d
            C = q(center)
            disc = B * B - 4 * A * C
            if disc < 0 or A == 0:
                raise ValueError("ray misses the quadric")
            roots = [(-B + sg * math.sqrt(disc)) / (2 * A) for sg in (1, -1)]
            pos = [t for t in roots if t > 0]
            if not pos:
                raise ValueError("ray misses the quadric")
            return min(pos)

        def r(phi):
            phi = np.atleast_1d(np.asarray(phi, dtype=float))
            rh = np.array([rho(x) for x in phi.ravel()]).reshape(phi.shape)
            return np.stack([rh * np.cos(phi), rh * np.sin(phi)], axis=-1)

        return PlanarCurve(r, interval or (-math.pi, math.pi), label="polar section")

    if mode != "graph":
        raise ValueError("mode must be 'polar' or 'graph'")
    cache: dict[float, float] = {}

    def w_of(u: float) -> float:
        if u in cache:
            return cache[u]
        # march from 0 to u, each time solving near the previous root
        n_steps = max(1, int(abs(u) / 0.05))
        w = _root_near(lambda w_: F(0.0, w_), seed_w)
        for k in range(1, n_steps + 1):
            uk = u * k / n_steps
            w = _root_near(lambda w_: F(uk, w_), w)
        cache[u] = w
        return w

    def r(u):
        u = np.atleast_1d(np.asarray(u, dtype=float))
        w = np.array([w_of(float(x)) for x in u.ravel()]).reshape(u.shape)
        return np.stack([u, w], axis=-1)

    return PlanarCurve(r, interval or (-3.0, 3.0), label="graph section")


def _root_near(fun, w0: float, span: float = 0.5) -> float:
    """Root of a scalar function close to ``w0`` (bracket expansion + brentq,
    preferring the bracket nearest ``w0``)."""
    for width in span * 2.0 ** np.arange(0, 8):
        grid = np.linspace(w0 - width, w0 + width, 41)
        vals = np.array([fun(w) for w in grid])
        idx = np.flatnonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))
        if len(idx):
            k = idx[np.argmin(np.abs(grid[idx] - w0))]
            return optimize.brentq(fun, grid[k], grid[k + 1], xtol=1e-15, rtol=4 * np.finfo(float).eps)
    raise ValueError("root lost while tracking the section")


@dataclass
class Certificate:
    level: float
    inf_det: list
    delta: float
    passes: bool
    probe_blowups: Optional[int] = None

    def to_dict(self) -> dict:
        return {"level_T": self.level, "inf_det": self.inf_det, "delta": self.delta,
                "passes": self.passes, "probe_blowups": self.probe_blowups}


def theorem53_certificate(im, curves: Sequence[PlanarCurve], T: float = 5.0, delta: float = 1e-3,
                          grid: int = 801, probe: Optional[Callable[[], int]] = None) -> Certificate:
    """inf |det(r, r')| over [-T, T] for each section curve; passes when all
    exceed ``delta``. ``probe`` (returning a Blowup count) cross-checks."""
    if not isinstance(im, (Immersion, OvaloidAtlas)):
        raise TypeError("the certificate applies to centroaffine hypersurfaces only")
    target = im if isinstance(im, Immersion) else im.patches[0][2]
    if not target.is_centroaffine:
        raise TypeError("the certificate applies to centroaffine hypersurfaces only")
    infs = []
    for c in curves:
        ts = np.linspace(-T, T, grid)
        if c.interval[0] > -T or c.interval[1] < T:
            ts = np.linspace(*c.interval, grid)
        infs.append(float(np.min(np.abs(c.det(ts)))))
    passes = all(v > delta for v in infs)
    blow = probe() if probe is not None else None
    return Certificate(T, infs, delta, passes and (blow in (None, 0)), blow)


# ovaloid atlas ----------------------------------------------------------------

@dataclass
class AtlasRun:
    outcome: ProbeOutcome
    F: np.ndarray           # ambient points
    dF: np.ndarray          # ambient velocities
    t: np.ndarray
    segments: list          # (patch index, Trajectory)
    switches: int


class OvaloidAtlas:
    """Ellipsoid sum (X_j/a_j)^2 = 1 covered by 2(n+1) graph patches.

    Patch (k, sign) uses the ambient coordinates other than X_k as chart
    coordinates, so velocities carry over between patches unchanged in
    those components. A geodesic leaves a patch when the removed coordinate
    gets small, |X_k/a_k|^2 < 1/(2(n+1)), and continues on the patch of the
    largest |X_j/a_j|.
    """

    def __init__(self, axes: Sequence[float], label: str = "", center_sign: Optional[float] = None):
        self.a = np.asarray(axes, dtype=float)
        self.N = len(self.a)
        self.n = self.N - 1
        self.label = label or f"ellipsoid{tuple(self.a)}"
        self.comfort = (self.n + 0.5) / (self.n + 1)
        # every surface point lies in the home region of the patch chosen by patch_for
        self.home = self.n / (self.n + 1)
        self.patches = []
        self.comfort_charts = []
        M = np.diag(1 / self.a**2)
        self.quadric = Quadric(M, np.zeros(self.N), -1.0)
        for k in range(self.N):
            keep = [j for j in range(self.N) if j != k]
            ak = self.a[keep]
            for sg in (1.0, -1.0):
                name = f"{self.label} patch {k + 1}{'+' if sg > 0 else '-'}"
                chart = Chart(self.n, tuple((-x, x) for x in ak), label=name,
                              inside=lambda P, ak=ak: np.sum((P / ak) ** 2, axis=-1) < 0.97)
                comfort = replace(chart, inside=lambda P, ak=ak: np.sum((P / ak) ** 2, axis=-1) < self.comfort)
                home = replace(chart, inside=lambda P, ak=ak: np.sum((P / ak) ** 2, axis=-1) <= self.home)
                im = Immersion(chart, self._graph(k, sg), Centroaffine(None, center_sign),
                               label=name, quadric=self.quadric, sample_chart=home)
                self.patches.append((k, sg, im))
                self.comfort_charts.append(comfort)
        self._structures = [im.structure() for _, _, im in self.patches]

    def _graph(self, k: int, sg: float):
        a = self.a
        keep = [j for j in range(self.N) if j != k]

        def f(P):
            P = np.asarray(P)
            r = 1 - np.sum((P / a[keep]) ** 2, axis=-1)
            X = np.empty(P.shape[:-1] + (self.N,), dtype=P.dtype)
            X[..., keep] = P
            X[..., k] = sg * a[k] * np.sqrt(np.maximum(r, 0))
            return X

        return f

    def patch_for(self, X) -> int:
        X = np.asarray(X, dtype=float)
        k = int(np.argmax(np.abs(X / self.a)))
        return 2 * k + (0 if X[k] >= 0 else 1)

    def to_chart(self, idx: int, X, dX=None):
        k = self.patches[idx][0]
        keep = [j for j in range(self.N) if j != k]
        x = np.asarray(X)[..., keep]
        return x if dX is None else (x, np.asarray(dX)[..., keep])

    def ambient_velocity(self, idx: int, x, v) -> np.ndarray:
        J = self.patches[idx][2].jacobian(np.atleast_2d(x))
        return np.einsum("...ia,...i->...a", J, np.atleast_2d(v))

    def structure(self, idx: int = 0) -> StatStructure:
        return self._structures[idx]

    def immersion(self, idx: int = 0) -> Immersion:
        return self.patches[idx][2]

    def random_tangent(self, rng, m: int):
        """Random points on the surface with g-unit tangent vectors (ambient)."""
        Z = rng.standard_normal((m, self.N))
        X = self.a * Z / np.linalg.norm(Z, axis=-1, keepdims=True)
        out_X, out_V = [], []
        for x in X:
            i = self.patch_for(x)
            p = self.to_chart(i, x)
            st = self._structures[i]
            u = sample_unit_vectors(st.metric(p[None]), rng)[0]
            out_X.append(x)
            out_V.append(self.ambient_velocity(i, p, u)[0])
        return np.array(out_X), np.array(out_V)

    def integrate(self, kind: str, X, dX, cfg: ProbeConfig = ProbeConfig(), record: bool = True,
                  max_switches: int = 100_000) -> AtlasRun:
        """Integrate a geodesic given by an ambient point and ambient tangent
        velocity, switching patches as needed."""
        X = np.asarray(X, dtype=float)
        dX = np.asarray(dX, dtype=float)
        idx = self.patch_for(X)
        x, v = self.to_chart(idx, X, dX)
        t0 = 0.0
        first = True
        segs = []
        Fs, dFs, Ts = [], [], []
        total_steps = 0
        max_speed = 0.0
        scale = 1.0
        switches = 0
        while True:
            st = self._structures[idx]
            conn = _ChartConnection(st.connection(kind), self.comfort_charts[idx])
            sub = replace(cfg, t_max=cfg.t_max - t0)
            out = integrate_batch(conn, [x], [v], sub, record=record, normalize=first)[0]
            if first:
                scale = out.scale
                first = False
            total_steps += out.steps
            max_speed = max(max_speed, out.max_speed)
            if record:
                tr = out.trajectory
                im = self.patches[idx][2]
                Fs.append(im.map(tr.x))
                dFs.append(np.einsum("...ia,...i->...a", im.jacobian(tr.x), tr.v))
                Ts.append(tr.t + t0)
                segs.append((idx, tr))
            if out.verdict != EXITED or "evaluation_failure" in out.flags or switches >= max_switches:
                final = replace(out, t_lo=out.t_lo + t0, t_hi=out.t_hi + t0, steps=total_steps,
                                max_speed=max_speed, scale=scale, trajectory=None)
                break
            # continue from the last accepted state on the best patch
            tr_state = _last_state(out, conn, x, v, sub)
            im = self.patches[idx][2]
            Xe = im.map(tr_state[0][None])[0]
            dXe = self.ambient_velocity(idx, tr_state[0], tr_state[1])[0]
            t0 += out.t_lo
            idx = self.patch_for(Xe)
            x, v = self.to_chart(idx, Xe, dXe)
            switches += 1
        F = np.concatenate(Fs) if record else np.empty((0, self.N))
        dF = np.concatenate(dFs) if record else np.empty((0, self.N))
        T = np.concatenate(Ts) if record else np.empty(0)
        return AtlasRun(final, F, dF, T, segs, switches)


def _last_state(out: ProbeOutcome, conn, x, v, cfg):
    if out.trajectory is not None:
        tr = out.trajectory
        return tr.x[-1], tr.v[-1]
    # re-run with recording to recover the exit state (batch mode without trajectories)
    rerun = integrate_batch(conn, [x], [v], cfg, record=True, normalize=False)[0]
    return rerun.trajectory.x[-1], rerun.trajectory.v[-1]


@dataclass(frozen=True)
class _ChartConnection:
    """A connection restricted to a sub-region of its chart (patch comfort zone)."""

    inner: object
    chart: Chart

    def gamma(self, P):
        return self.inner.gamma(P)

    def metric(self, P):
        return self.inner.structure.metric(P)
