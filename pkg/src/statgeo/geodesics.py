"""Geodesic integration with escape detection.

All probes run through one vectorised Dormand-Prince 5(4) stepper that
advances a batch of initial conditions in lockstep, each row with its own
step size. The state of a row is ``(x, v, s)``: unwrapped chart coordinates,
velocity and accumulated g-arc length.

A row stops in one of three ways:

* ``ReachedHorizon``: the affine parameter reached ``t_max``;
* ``Blowup``: the g-speed exceeded ``speed_cap`` (or the step size underflowed
  or the field became non-finite while the speed was increasing); the escape
  time is bracketed by bisecting the last accepted/failed step pair;
* ``ExitedChart``: a non-periodic chart bound was crossed with bounded speed.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Protocol

import numpy as np

from .chart import Chart, ChartError, make_rng
from .expr import DomainError
from . import fastpath
from .structure import Connection, StatStructure, cubic_uuu, sample_unit_vectors

__all__ = [
    "ProbeConfig",
    "GeodesicState",
    "Trajectory",
    "ProbeOutcome",
    "BatchReport",
    "REACHED",
    "BLOWUP",
    "EXITED",
    "integrate_geodesic",
    "probe_two_sided",
    "leading",
    "integrate_batch",
    "probe_batch",
    "speed_law_residual",
    "lemma42_residual",
    "arclength_reparametrize",
    "orthonormal_frame",
]

REACHED = "ReachedHorizon"
BLOWUP = "Blowup"
EXITED = "ExitedChart"

# Dormand-Prince 5(4) tableau
_C = np.array([0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1, 1])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
_B4 = np.array([5179 / 57600, 0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4
# continuous extension coefficients (Hairer, Norsett & Wanner)
_D = np.array([-12715105075 / 11282082432, 0, 87487479700 / 32700410799,
               -10690763975 / 1880347072, 701980252875 / 199316789632,
               -1453857185 / 822651844, 69997945 / 29380423])

# failure kinds for a step attempt
_OK, _CAP, _EXIT, _NONFINITE = 0, 1, 2, 3


class GammaSource(Protocol):
    chart: Chart

    def gamma(self, P) -> np.ndarray: ...


@dataclass(frozen=True)
class ProbeConfig:
    t_max: float = 100.0
    speed_cap: float = 1e8
    min_step: float = 1e-12
    rel_tol: float = 1e-9
    abs_tol: float = 1e-11
    max_samples: int = 200_000
    max_steps: int = 2_000_000
    ds_max: float = 0.1
    bracket_rel: float = 1e-3
    dtype: type = np.float64
    chunk: int = 1024

    def __post_init__(self):
        for name in ("t_max", "speed_cap", "min_step", "rel_tol", "abs_tol", "ds_max", "bracket_rel"):
            if not getattr(self, name) > 0:
                raise ValueError(f"ProbeConfig.{name} must be positive")


@dataclass(frozen=True)
class GeodesicState:
    t: float
    p: np.ndarray
    v: np.ndarray


def _metric_of(conn) -> callable:
    if isinstance(conn, Connection):
        return conn.structure.metric
    return conn.metric


def _speed(g: np.ndarray, V: np.ndarray) -> np.ndarray:
    return np.sqrt(np.maximum(np.einsum("...ij,...i,...j->...", g, V, V), 0))


@dataclass
class Trajectory:
    """Samples of a geodesic with its dense-output polynomial pieces.

    ``x`` keeps unwrapped coordinates (continuous across periodic seams),
    ``p`` is the wrapped in-chart point.
    """

    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    s: np.ndarray
    l: np.ndarray
    chart: Chart
    knots: np.ndarray = field(repr=False, default=None)   # step start times, plus final time
    coeffs: np.ndarray = field(repr=False, default=None)  # (steps, 5, state)
    scale: float = 1.0

    @property
    def dim(self) -> int:
        return self.x.shape[-1]

    @property
    def p(self) -> np.ndarray:
        return self.chart.wrap(self.x)

    @property
    def u(self) -> np.ndarray:
        return self.v / self.l[:, None]

    def __len__(self) -> int:
        return len(self.t)

    @property
    def length(self) -> float:
        return float(self.s[-1] - self.s[0])

    def states(self):
        for t, p, v in zip(self.t, self.p, self.v):
            yield GeodesicState(float(t), p, v)

    def dense(self, t) -> np.ndarray:
        """Full state ``(x, v, s)`` at arbitrary times inside the trajectory."""
        t = np.asarray(t, dtype=self.coeffs.dtype)
        lo, hi = self.knots[0], self.knots[-1]
        span = max(abs(lo), abs(hi), 1.0)
        if np.any(t < min(lo, hi) - 1e-12 * span) or np.any(t > max(lo, hi) + 1e-12 * span):
            raise ValueError("dense output requested outside the integrated interval")
        i = np.clip(np.searchsorted(self.knots, t, side="right") - 1, 0, len(self.coeffs) - 1)
        h = self.knots[i + 1] - self.knots[i]
        th = ((t - self.knots[i]) / h)[..., None]
        c = self.coeffs[i]
        return c[..., 0, :] + th * (c[..., 1, :] + (1 - th) * (c[..., 2, :] + th * (c[..., 3, :] + (1 - th) * c[..., 4, :])))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        n = self.dim
        w.writerow(["t"] + [f"x{i + 1}" for i in range(n)] + [f"v{i + 1}" for i in range(n)] + ["speed", "arclength"])
        for k in range(len(self.t)):
            row = [self.t[k], *self.p[k], *self.v[k], self.l[k], self.s[k]]
            w.writerow([repr(float(x)) for x in row])
        return buf.getvalue()


@dataclass
class ProbeOutcome:
    verdict: str
    t_lo: float
    t_hi: float
    final_speed: float
    final_step: float
    steps: int
    max_speed: float
    scale: float = 1.0
    flags: tuple = ()
    trajectory: Optional[Trajectory] = None

    @property
    def t_escape(self) -> Optional[tuple[float, float]]:
        return (self.t_lo, self.t_hi) if self.verdict == BLOWUP else None

    @property
    def t_exit(self) -> Optional[float]:
        return self.t_hi if self.verdict == EXITED else None

    def to_dict(self) -> dict:
        esc = self.verdict == BLOWUP
        return {
            "verdict": self.verdict,
            "t_escape_lo": self.t_lo if esc else None,
            "t_escape_hi": self.t_hi if esc else None,
            "t_end": self.t_hi,
            "final_speed": self.final_speed,
            "max_speed": self.max_speed,
            "final_step": self.final_step,
            "steps": self.steps,
            "velocity_scale": self.scale,
            "flags": list(self.flags),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


# the batched stepper ---------------------------------------------------------

# ValueError covers chart, domain and degenerate-immersion failures
_EVAL_ERRORS = (ValueError, ArithmeticError, np.linalg.LinAlgError)


class _Rhs:
    """Geodesic vector field ``(x, v, s)' = (v, -Gamma(v, v), |v|_g)`` with
    per-row failure codes instead of exceptions."""

    def __init__(self, conn, n: int):
        self.conn = conn
        self.metric = _metric_of(conn)
        self.chart = conn.chart
        self.n = n

    def _eval(self, X, V):
        G = np.asarray(self.conn.gamma(X))
        g = np.asarray(self.metric(X))
        acc = -np.einsum("...kij,...i,...j->...k", G, V, V)
        return acc, _speed(g, V)

    def __call__(self, Y: np.ndarray):
        n = self.n
        X, V = Y[:, :n], Y[:, n:2 * n]
        m = len(Y)
        code = np.zeros(m, dtype=np.int8)
        inside = self.chart.contains(X) & np.all(np.isfinite(Y), axis=1)
        code[~inside] = _EXIT
        F = np.zeros_like(Y)
        rows = np.flatnonzero(inside)
        if len(rows):
            with np.errstate(all="ignore"):
                try:
                    acc, sp = self._eval(X[rows], V[rows])
                    F[rows, :n] = V[rows]
                    F[rows, n:2 * n] = acc
                    F[rows, 2 * n] = sp
                except _EVAL_ERRORS:
                    for r in rows:
                        try:
                            acc, sp = self._eval(X[r:r + 1], V[r:r + 1])
                            F[r, :n] = V[r]
                            F[r, n:2 * n] = acc[0]
                            F[r, 2 * n] = sp[0]
                        except ChartError:
                            code[r] = _EXIT
                        except _EVAL_ERRORS:
                            code[r] = _NONFINITE
        bad = (code == _OK) & ~np.all(np.isfinite(F), axis=1)
        code[bad] = _NONFINITE
        F[code != _OK] = 0
        return F, code

    def speed(self, Y: np.ndarray) -> np.ndarray:
        n = self.n
        return _speed(np.asarray(self.metric(Y[:, :n])), Y[:, n:2 * n])


def _rms(a: np.ndarray) -> np.ndarray:
    return np.sqrt(np.mean(a * a, axis=1))


def integrate_batch(conn, X0, V0, cfg: ProbeConfig = ProbeConfig(), record: bool = True,
                    normalize: bool = True) -> list[ProbeOutcome]:
    """Integrate many geodesics of ``conn`` at once; one outcome per row."""
    dt = cfg.dtype
    X0 = np.atleast_2d(np.asarray(X0, dtype=dt))
    V0 = np.atleast_2d(np.asarray(V0, dtype=dt))
    m, n = X0.shape
    chart = conn.chart
    if not np.all(chart.contains(X0)):
        raise ChartError("initial point outside chart")
    metric = _metric_of(conn)
    l0 = _speed(np.asarray(metric(X0)), V0)
    if not np.all(np.isfinite(l0)) or np.any(l0 <= 0):
        raise ValueError("initial velocity must be non-zero and finite")
    scale = l0 if normalize else np.ones(m, dtype=dt)
    V0 = V0 / scale[:, None]

    rhs = _Rhs(conn, n)
    Y = np.concatenate([X0, V0, np.zeros((m, 1), dtype=dt)], axis=1)
    F, code = rhs(Y)
    if np.any(code != _OK):
        raise ChartError("connection cannot be evaluated at the initial point")
    t = np.zeros(m, dtype=dt)
    t_max = dt(cfg.t_max)
    # initial step from the velocity/acceleration scale
    acc = np.linalg.norm(F[:, n:2 * n].astype(float), axis=1)
    vel = np.linalg.norm(F[:, :n].astype(float), axis=1)
    h = np.minimum(0.01 * cfg.t_max, 0.05 / np.maximum(1e-3, np.maximum(vel, np.sqrt(acc)))).astype(dt)
    t_hi = np.full(m, np.inf, dtype=dt)
    kind = np.zeros(m, dtype=np.int8)
    speed = (l0 / scale).astype(dt)
    prev_speed = speed.copy()
    max_speed = speed.astype(float)
    steps = np.zeros(m, dtype=np.int64)
    active = np.ones(m, dtype=bool)
    verdict = np.empty(m, dtype=object)
    flags: list[list[str]] = [[] for _ in range(m)]
    t_lo_out = np.zeros(m)
    t_hi_out = np.zeros(m)
    rec = [[(t[i].copy(), Y[i].copy())] for i in range(m)] if record else None
    pieces = [[] for _ in range(m)] if record else None

    def finish(i: int, v: str, lo, hi, flag: Optional[str] = None):
        verdict[i] = v
        t_lo_out[i] = float(lo)
        t_hi_out[i] = float(hi)
        active[i] = False
        if flag:
            flags[i].append(flag)

    it = 0
    while np.any(active):
        it += 1
        idx = np.flatnonzero(active)
        if it > cfg.max_steps:
            for i in idx:
                rising = speed[i] > prev_speed[i]
                finish(i, BLOWUP if rising else EXITED, t[i], t[i], "step_budget")
            break
        ti, yi, fi = t[idx], Y[idx], F[idx]
        hi_ = np.minimum(h[idx], t_max - ti)
        bracketed = np.isfinite(t_hi[idx])
        hi_ = np.where(bracketed, np.minimum(hi_, (t_hi[idx] - ti) / 2), hi_)
        K = [fi]
        fail = np.zeros(len(idx), dtype=np.int8)
        for s in range(1, 7):
            ys = yi + hi_[:, None] * sum(a * k for a, k in zip(_A[s], K) if a)
            fs, cs = rhs(ys)
            fail = np.where((fail == _OK) & (cs != _OK), cs, fail)
            K.append(fs)
        y5 = yi + hi_[:, None] * sum(b * k for b, k in zip(_B5, K) if b)
        f5 = K[6]
        err_vec = hi_[:, None] * sum(e * k for e, k in zip(_E, K) if e)
        sc = cfg.abs_tol + cfg.rel_tol * np.maximum(np.abs(yi), np.abs(y5))
        with np.errstate(all="ignore"):
            err = _rms((err_vec / sc).astype(float))
        err = np.where(np.isfinite(err), err, np.inf)
        ok = (fail == _OK) & (err <= 1.0)
        sp_new = np.zeros(len(idx), dtype=dt)
        if np.any(ok):
            with np.errstate(all="ignore"):
                try:
                    sp_new[ok] = rhs.speed(y5[ok])
                except _EVAL_ERRORS:
                    sp_new[ok] = np.nan
            bad_sp = ok & ~np.isfinite(sp_new)
            fail[bad_sp] = _NONFINITE
            cap = ok & (sp_new > cfg.speed_cap)
            fail[cap] = _CAP
            ok &= ~(bad_sp | cap)
        # hard failures: shrink the bracket onto the failing step
        hard = fail != _OK
        if np.any(hard):
            rows = idx[hard]
            t_hi[rows] = ti[hard] + hi_[hard]
            kind[rows] = fail[hard]
            h[rows] = hi_[hard] / 2
        # error-control rejections
        soft = (~ok) & (~hard)
        if np.any(soft):
            rows = idx[soft]
            fac = np.where(np.isfinite(err[soft]), 0.9 * np.power(np.maximum(err[soft], 1e-10), -0.2), 0.2)
            h[rows] = hi_[soft] * np.clip(fac, 0.2, 0.9).astype(dt)
        if np.any(ok):
            rows = idx[ok]
            hk = hi_[ok]
            if record:
                y0k, y1k = yi[ok], y5[ok]
                dense = np.stack([
                    y0k,
                    y1k - y0k,
                    hk[:, None] * K[0][ok] - (y1k - y0k),
                    (y1k - y0k) - hk[:, None] * f5[ok] - (hk[:, None] * K[0][ok] - (y1k - y0k)),
                    hk[:, None] * sum(d * k[ok] for d, k in zip(_D, K) if d),
                ], axis=1)
                for j, r in enumerate(rows):
                    pieces[r].append((ti[ok][j], dense[j]))
                    rec[r].append((ti[ok][j] + hk[j], y1k[j].copy()))
            t[rows] = ti[ok] + hk
            Y[rows] = y5[ok]
            F[rows] = f5[ok]
            prev_speed[rows] = speed[rows]
            speed[rows] = sp_new[ok]
            max_speed[rows] = np.maximum(max_speed[rows], sp_new[ok].astype(float))
            steps[rows] += 1
            with np.errstate(all="ignore"):
                fac = 0.9 * np.power(np.maximum(err[ok], 1e-10), -0.2)
            h[rows] = hk * np.clip(fac, 0.2, 5.0).astype(dt)
        # classification of rows that are done
        tt, th = t[idx], t_hi[idx]
        with np.errstate(invalid="ignore"):
            horizon = tt >= t_max
            closed = ~horizon & (th - tt < cfg.bracket_rel * np.maximum(1.0, np.abs(th)))
            tiny = ~horizon & ~closed & (h[idx] < cfg.min_step * np.maximum(1.0, np.abs(tt)))
        for i in idx[horizon]:
            finish(i, REACHED, t[i], t[i])
        for i in idx[closed]:
            rising = speed[i] > prev_speed[i]
            if kind[i] == _CAP:
                finish(i, BLOWUP, t[i], t_hi[i])
            elif kind[i] == _EXIT:
                finish(i, EXITED, t[i], t_hi[i])
            elif rising:
                finish(i, BLOWUP, t[i], t_hi[i], "nonfinite")
            else:
                finish(i, EXITED, t[i], t_hi[i], "evaluation_failure")
        for i in idx[tiny]:
            rising = speed[i] > prev_speed[i]
            finish(i, BLOWUP if rising else EXITED, t[i], t[i] + h[i], "step_underflow")

    out = []
    for i in range(m):
        traj = None
        if record:
            traj = _build_trajectory(rec[i], pieces[i], rhs, chart, n, cfg, float(scale[i]))
        out.append(ProbeOutcome(
            verdict=verdict[i], t_lo=t_lo_out[i], t_hi=t_hi_out[i],
            final_speed=float(speed[i]), final_step=float(h[i]), steps=int(steps[i]),
            max_speed=float(max_speed[i]), scale=float(scale[i]), flags=tuple(flags[i]),
            trajectory=traj,
        ))
    return out


def _build_trajectory(rec, pieces, rhs: _Rhs, chart: Chart, n: int, cfg: ProbeConfig, scale: float) -> Trajectory:
    T = np.array([r[0] for r in rec])
    Y = np.array([r[1] for r in rec])
    if pieces:
        knots = np.array([p[0] for p in pieces] + [T[-1]])
        coeffs = np.array([p[1] for p in pieces])
    else:
        knots = np.array([T[0], T[0]])
        coeffs = np.zeros((1, 5, Y.shape[1]), dtype=Y.dtype)
        coeffs[0, 0] = Y[0]
    traj = Trajectory(T, Y[:, :n], Y[:, n:2 * n], Y[:, 2 * n], np.zeros(len(T)), chart, knots, coeffs, scale)
    # refine so that consecutive samples are at most ds_max apart in arc length
    ds = np.diff(traj.s)
    extra = []
    for k in np.flatnonzero(ds > cfg.ds_max):
        q = int(math.ceil(2 * float(ds[k]) / cfg.ds_max))
        extra.append(np.linspace(T[k], T[k + 1], q + 1)[1:-1])
    if extra:
        tt = np.sort(np.concatenate([T] + extra))
        if len(tt) > cfg.max_samples:
            tt = tt[np.unique(np.linspace(0, len(tt) - 1, cfg.max_samples).astype(int))]
        YY = traj.dense(tt)
        YY[np.searchsorted(tt, T)] = Y
        traj.t, traj.x, traj.v, traj.s = tt, YY[:, :n], YY[:, n:2 * n], YY[:, 2 * n]
    traj.l = rhs.speed(np.concatenate([traj.x, traj.v], axis=1))
    return traj


def integrate_geodesic(conn, init: GeodesicState | tuple, cfg: ProbeConfig = ProbeConfig(),
                       record: bool = True) -> ProbeOutcome:
    """Integrate one geodesic from ``init`` (state or ``(p, v)`` pair) to ``cfg.t_max``.

    The velocity is rescaled to unit g-speed; the factor is reported as
    ``outcome.scale`` (the geodesic with the raw velocity is ``t -> gamma(scale*t)``).
    """
    if isinstance(init, GeodesicState):
        p, v = init.p, init.v
    else:
        p, v = init
    return integrate_batch(conn, [p], [v], cfg, record=record)[0]


def probe_two_sided(conn, p, v, cfg: ProbeConfig = ProbeConfig(), record: bool = False
                    ) -> tuple[ProbeOutcome, ProbeOutcome]:
    """Forward and backward probes from ``(p, v)``; backward is forward from ``(p, -v)``.

    A geodesic is incomplete if either half blows up, and the dual of a
    structure often escapes on the opposite side, so both halves are run.
    """
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    fwd, bwd = integrate_batch(conn, [p, p], [v, -v], cfg, record=record)
    return fwd, bwd


def leading(fwd: ProbeOutcome, bwd: ProbeOutcome) -> tuple[str, ProbeOutcome]:
    """The half that decides the two-sided verdict: a blow-up if there is one."""
    if fwd.verdict != BLOWUP and bwd.verdict == BLOWUP:
        return "backward", bwd
    return "forward", fwd


# batch probing --------------------------------------------------------------

@dataclass
class BatchReport:
    kind: str
    samples: int
    seed: int
    counts: dict
    blowup_fraction: float
    escape_min: Optional[float]
    escape_max: Optional[float]
    max_speed: float
    points: np.ndarray = field(repr=False)
    directions: np.ndarray = field(repr=False)
    outcomes: list = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "connection": self.kind,
            "samples": self.samples,
            "probes": 2 * self.samples,
            "seed": self.seed,
            "counts": dict(sorted(self.counts.items())),
            "blowup_fraction": self.blowup_fraction,
            "escape_min": self.escape_min,
            "escape_max": self.escape_max,
            "max_speed": self.max_speed,
            "summary": "incompleteness found" if self.counts.get(BLOWUP, 0) else "no incompleteness found",
        }


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("STATGEO_THREADS", "1")))
    except ValueError:
        return 1


def probe_batch(s: StatStructure, kind: str = "statistical", samples: int = 1000, seed: int = 0,
                cfg: ProbeConfig = ProbeConfig(), points=None, directions=None,
                region: Optional[Chart] = None) -> BatchReport:
    """Probe ``samples`` random (point, unit vector) pairs forward and backward.

    Backward integration is forward integration from ``(p, -u)``. Initial
    conditions are drawn from one PCG64 stream, so the report is a function of
    ``seed`` only. ``region`` restricts the base points to a sub-chart.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    conn = s.connection(kind)
    if points is None:
        rng = make_rng(seed)
        points = (region or s.chart).sample(rng, samples)
        directions = sample_unit_vectors(s.metric(points), rng)
    points = np.asarray(points, dtype=float)
    directions = np.asarray(directions, dtype=float)
    X = np.concatenate([points, points])
    V = np.concatenate([directions, -directions])
    spray = s.__dict__.get("spray")
    if spray is not None and s.chart.inside is None and cfg.dtype == np.float64 and fastpath.available():
        outcomes = _fast_outcomes(spray, conn, s, X, V, cfg)
        return _report(conn, samples, seed, points, directions, outcomes)
    chunks = [(a, min(a + cfg.chunk, len(X))) for a in range(0, len(X), cfg.chunk)]

    def run(ab):
        a, b = ab
        return integrate_batch(conn, X[a:b], V[a:b], cfg, record=False)

    if _threads() > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(_threads()) as ex:
            parts = list(ex.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    return _report(conn, samples, seed, points, directions, [o for part in parts for o in part])


_SIGN = {"statistical": 1.0, "dual": -1.0, "levi_civita": 0.0}
_VERDICTS = (REACHED, BLOWUP, EXITED)
_FLAGS = ((), ("step_budget",), ("nonfinite",), ("evaluation_failure",), ("step_underflow",))


def _fast_outcomes(spray, conn, s, X, V, cfg) -> list[ProbeOutcome]:
    scale = _speed(s.metric(X), V)
    res = fastpath.run_batch(spray, _SIGN[conn.kind], s.chart, X, V / scale[:, None], cfg)
    return [ProbeOutcome(verdict=_VERDICTS[int(r[0])], t_lo=float(r[1]), t_hi=float(r[2]),
                         final_speed=float(r[3]), final_step=float(r[4]), steps=int(r[5]),
                         max_speed=float(r[6]), scale=float(sc), flags=_FLAGS[int(r[7])])
            for r, sc in zip(res, scale)]


def _report(conn, samples, seed, points, directions, outcomes) -> BatchReport:
    counts = {REACHED: 0, BLOWUP: 0, EXITED: 0}
    for o in outcomes:
        counts[o.verdict] += 1
    esc = [o.t_hi for o in outcomes if o.verdict == BLOWUP]
    return BatchReport(
        kind=conn.kind, samples=samples, seed=seed, counts=counts,
        blowup_fraction=counts[BLOWUP] / len(outcomes),
        escape_min=min(esc) if esc else None, escape_max=max(esc) if esc else None,
        max_speed=max(o.max_speed for o in outcomes),
        points=points, directions=directions, outcomes=outcomes,
    )


# residual checks along trajectories ------------------------------------------

def _interior_times(traj: Trajectory, h: float, count: int) -> np.ndarray:
    lo, hi = traj.knots[0] + h, traj.knots[-1] - h
    if len(traj) < 3 or not hi > lo:
        raise ValueError("trajectory too short for a finite-difference residual")
    ts = traj.t[(traj.t > lo) & (traj.t < hi)]
    if len(ts) < 8:
        # long steps leave few nodes: sample the dense output instead
        ts = np.linspace(lo, hi, min(count, 50))
    if len(ts) > count:
        ts = ts[np.linspace(0, len(ts) - 1, count).astype(int)]
    return ts


def _state(traj: Trajectory, t) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    Y = traj.dense(t)
    n = traj.dim
    return Y[..., :n], Y[..., n:2 * n], Y[..., 2 * n]


def _rel(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.abs(a - b) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))


def _uuu(s: StatStructure, X, V):
    l = _speed(s.metric(X), V)
    U = V / l[..., None]
    return cubic_uuu(s.cubic(X), U), l, U


def _local_steps(s: StatStructure, traj: Trajectory, ts: np.ndarray, h: float) -> np.ndarray:
    """Per-sample difference steps: ``h`` scaled by the local time scale
    1 / (l |A(u,u,u)|) on which the speed changes, never more than ``h``."""
    X, V, _ = _state(traj, ts)
    a, l, _ = _uuu(s, X, V)
    rate = np.abs(np.asarray(a * l, dtype=float))
    return h / np.maximum(1.0, rate)


def _central(F, ts: np.ndarray, hs: np.ndarray) -> np.ndarray:
    return (F(ts + hs) - F(ts - hs)) / (2 * hs)


def _refined_derivative(F, ts: np.ndarray, hs: np.ndarray, ladder: int = 3) -> np.ndarray:
    """Richardson-refined central difference of ``F`` at ``ts`` (order h^4).

    The refined value is formed on the steps hs, hs/3, hs/9, ...; per sample
    the pair of neighbouring estimates that agree best is kept, which picks a
    step between the truncation-dominated and round-off-dominated regimes.
    """
    def D(step):
        return (F(ts + step) - F(ts - step)) / (2 * step)

    est = []
    for k in range(ladder):
        step = hs / 3**k
        est.append((4 * D(step / 2) - D(step)) / 3)
    est = np.asarray(est, dtype=float)
    gaps = np.abs(np.diff(est, axis=0))
    best = np.argmin(gaps, axis=0)
    return est[best + 1, np.arange(len(ts))]


def speed_law_residual(traj: Trajectory, s: StatStructure, h: float = 1e-2, count: int = 400,
                       refine: bool = True) -> float:
    """max |d(1/l)/dt - A(u,u,u)| (relative to the size of the terms) over
    interior samples. The t-derivative is a Richardson-refined central
    difference through the dense output with local step at most ``h``;
    ``refine=False`` uses the plain second-order central difference."""
    h = min(h, (traj.knots[-1] - traj.knots[0]) / 8)
    ts = _interior_times(traj, h, count)
    hs = _local_steps(s, traj, ts, h)

    def inv_speed(t):
        X, V, _ = _state(traj, t)
        return 1 / _speed(s.metric(X), V)

    lhs = (_refined_derivative if refine else _central)(inv_speed, ts, hs)
    X, V, _ = _state(traj, ts)
    rhs, _, _ = _uuu(s, X, V)
    return float(np.max(_rel(lhs, rhs)))


def orthonormal_frame(g: np.ndarray, U: np.ndarray) -> np.ndarray:
    """g-orthonormal frame whose first vector is the direction of ``U``.

    Gram-Schmidt on ``U`` followed by the coordinate vectors, skipping
    dependent ones. Returns shape (..., n, n) with frame vectors as rows.
    """
    g = np.asarray(g)
    U = np.asarray(U)
    n = g.shape[-1]
    out = np.empty(U.shape[:-1] + (n, n), dtype=g.dtype)
    for idx in np.ndindex(U.shape[:-1]):
        gi, ui = g[idx], U[idx]
        frame = [ui / _speed(gi, ui)]
        for i in range(n):
            w = np.eye(n, dtype=g.dtype)[i]
            for e in frame:
                w = w - (e @ gi @ w) * e
            nw = _speed(gi, w)
            if nw > 1e-6:
                frame.append(w / nw)
            if len(frame) == n:
                break
        out[idx] = np.array(frame)
    return out


def lemma42_residual(traj: Trajectory, s: StatStructure, h: float = 1e-2, count: int = 200,
                     refine: bool = True) -> float:
    """max residual of (A(u,u,u))' against l [ (nabla_hat A)(u,u,u,u) - 3 sum_{i>=2} A(u,u,e_i)^2 ],
    with the same refined local differences as ``speed_law_residual``."""
    h = min(h, (traj.knots[-1] - traj.knots[0]) / 8)
    ts = _interior_times(traj, h, count)
    hs = _local_steps(s, traj, ts, h)

    def a_uuu(t):
        X, V, _ = _state(traj, t)
        return _uuu(s, X, V)[0]

    lhs = (_refined_derivative if refine else _central)(a_uuu, ts, hs)
    X, V, _ = _state(traj, ts)
    g = s.metric(X)
    l = _speed(g, V)
    U = V / l[:, None]
    E = orthonormal_frame(g, U)
    A = s.cubic(X)
    hA = s.nabla_hat_A(X)
    quartic = np.einsum("...mijk,...m,...i,...j,...k->...", hA, U, U, U, U)
    side = np.einsum("...ijk,...i,...j,...ak->...a", A, U, U, E[:, 1:, :])
    rhs = l * (quartic - 3 * np.sum(side**2, axis=-1))
    return float(np.max(_rel(lhs, rhs)))


@dataclass
class ArcLengthCurve:
    s: np.ndarray
    r: np.ndarray
    rdot: np.ndarray
    Lambda: np.ndarray
    residual: float


def arclength_reparametrize(traj: Trajectory, s: StatStructure, kind: str = "statistical",
                            h: float = 1e-3, count: int = 200) -> ArcLengthCurve:
    """Arc-length samples of a geodesic with Lambda(s) = -ln |gamma'|.

    Also checks the arc-length geodesic equation nabla_r' r' = A(r',r',r') r'
    (relative residual, ``residual``) with the s-derivative taken through
    the dense output.
    """
    if not traj.length > 0:
        raise ValueError("degenerate trajectory of zero length")
    ts = _interior_times(traj, h, count)
    Xp, Vp, Sp = _state(traj, ts + h)
    Xm, Vm, Sm = _state(traj, ts - h)
    X, V, S = _state(traj, ts)
    Up = Vp / _speed(s.metric(Xp), Vp)[:, None]
    Um = Vm / _speed(s.metric(Xm), Vm)[:, None]
    a, l, U = _uuu(s, X, V)
    dU = (Up - Um) / (Sp - Sm)[:, None]
    G = s.gamma(kind, X)
    lhs = dU + np.einsum("...kij,...i,...j->...k", G, U, U)
    rhs = a[:, None] * U
    res = float(np.max(_rel(lhs, rhs)))
    return ArcLengthCurve(s=np.asarray(traj.s), r=traj.x, rdot=traj.u,
                          Lambda=-np.log(traj.l).astype(float),
                          residual=res)
