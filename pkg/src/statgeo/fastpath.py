"""Compiled batch prober for structures whose geodesic spray has a closed form.

Used for the flat-metric structures built from a scalar potential sigma,
where the connection of kind ``sign`` (+1 statistical, -1 dual, 0 metric)
has acceleration

    x'' = -sign * (alpha / 3) * (|v|^2 dsigma + 2 (dsigma . v) v).

The exact gradient of sigma is compiled from its expression tree. The numpy
path evaluates the same gradient, so both integrate the same vector field.
The stepper mirrors ``geodesics.integrate_batch`` step for step: the same
Dormand-Prince pair, step controller, failure bisection and verdict rules.
"""

from __future__ import annotations

import math
import os
from functools import lru_cache

import numpy as np

from .expr import BinOp, Call, Expression, Neg, Num, Var

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

__all__ = ["available", "PotentialSpray", "run_batch"]

OK, CAP, EXIT, NONFINITE = 0, 1, 2, 3
V_REACHED, V_BLOWUP, V_EXITED = 0, 1, 2
F_NONE, F_BUDGET, F_NONFINITE, F_EVAL, F_UNDERFLOW = 0, 1, 2, 3, 4


def available() -> bool:
    return numba is not None and os.environ.get("STATGEO_NO_JIT", "") == ""


def _src(node) -> str:
    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, Var):
        return f"x[{node.index}]"
    if isinstance(node, Neg):
        return f"(-{_src(node.arg)})"
    if isinstance(node, Call):
        fn = {"ln": "math.log", "exp": "math.exp", "sin": "math.sin", "cos": "math.cos",
              "sqrt": "math.sqrt", "abs": "abs"}[node.func]
        return f"{fn}({_src(node.arg)})"
    op = "**" if node.op == "^" else node.op
    return f"({_src(node.left)} {op} {_src(node.right)})"


@lru_cache(maxsize=64)
def _compile_gradient(bodies: tuple):
    lines = "".join(f"    out[{i}] = {b}\n" for i, b in enumerate(bodies))
    ns = {"math": math}
    exec(f"def grad(x, out):\n{lines}", ns)
    return numba.njit(cache=False)(ns["grad"])


def _bodies(e: Expression) -> tuple:
    return tuple(_src(e.diff(i).ast) for i in range(e.arity))


class PotentialSpray:
    """Closed-form spray data: potential sigma and coefficient alpha."""

    def __init__(self, sigma: Expression, alpha: float):
        self.sigma = sigma
        self.alpha = float(alpha)

    @property
    def kernel(self):
        return _kernel_for(_bodies(self.sigma))


_STEPPERS: dict = {}


def _kernel_for(bodies: tuple):
    if bodies in _STEPPERS:
        return _STEPPERS[bodies]
    dsigma = _compile_gradient(bodies)
    njit = numba.njit

    @njit(cache=False)
    def rhs(y, n, c, lo, hi, out, ds):
        # returns a failure code; out receives (v, acc, speed)
        for i in range(n):
            xi = y[i]
            if not math.isfinite(xi) or not math.isfinite(y[n + i]):
                return EXIT
            if xi < lo[i] or xi > hi[i]:
                return EXIT
        x = y[:n]
        dsigma(x, ds)
        vv = 0.0
        dv = 0.0
        for i in range(n):
            vv += y[n + i] * y[n + i]
            dv += ds[i] * y[n + i]
        for i in range(n):
            out[i] = y[n + i]
            out[n + i] = -c * (vv * ds[i] + 2 * dv * y[n + i])
        out[2 * n] = math.sqrt(vv)
        for i in range(2 * n + 1):
            if not math.isfinite(out[i]):
                return NONFINITE
        return OK

    A = (
        (),
        (1 / 5,),
        (3 / 40, 9 / 40),
        (44 / 45, -56 / 15, 32 / 9),
        (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
        (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
        (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
    )
    a = np.zeros((7, 6))
    for s, row in enumerate(A):
        a[s, :len(row)] = row
    b5 = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
    b4 = np.array([5179 / 57600, 0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
    e = b5 - b4

    @njit(cache=False)
    def one(x0, v0, n, c, lo, hi, t_max, cap, min_step, rtol, atol, max_steps, bracket_rel, res):
        N = 2 * n + 1
        y = np.zeros(N)
        for i in range(n):
            y[i] = x0[i]
            y[n + i] = v0[i]
        K = np.zeros((7, N))
        ds = np.zeros(n)
        ys = np.zeros(N)
        y5 = np.zeros(N)
        rhs(y, n, c, lo, hi, K[0], ds)
        speed = K[0, 2 * n]
        prev = speed
        vmax = speed
        accn = 0.0
        veln = 0.0
        for i in range(n):
            veln += K[0, i] ** 2
            accn += K[0, n + i] ** 2
        step = min(0.01 * t_max, 0.05 / max(1e-3, max(math.sqrt(veln), math.sqrt(math.sqrt(accn)))))
        t = 0.0
        t_hi = math.inf
        kind = OK
        nsteps = 0
        it = 0
        verdict = -1
        flag = F_NONE
        lo_out = 0.0
        hi_out = 0.0
        while True:
            it += 1
            if it > max_steps:
                verdict = V_BLOWUP if speed > prev else V_EXITED
                lo_out = t
                hi_out = t
                flag = F_BUDGET
                break
            hs = min(step, t_max - t)
            if math.isfinite(t_hi):
                hs = min(hs, (t_hi - t) / 2)
            fail = OK
            for s in range(1, 7):
                for j in range(N):
                    acc = 0.0
                    for q in range(s):
                        acc += a[s, q] * K[q, j]
                    ys[j] = y[j] + hs * acc
                cs = rhs(ys, n, c, lo, hi, K[s], ds)
                if cs != OK:
                    fail = cs
                    break
            err = math.inf
            if fail == OK:
                tot = 0.0
                for j in range(N):
                    acc = 0.0
                    ev = 0.0
                    for q in range(7):
                        acc += b5[q] * K[q, j]
                        ev += e[q] * K[q, j]
                    y5[j] = y[j] + hs * acc
                    sc = atol + rtol * max(abs(y[j]), abs(y5[j]))
                    r = hs * ev / sc
                    tot += r * r
                err = math.sqrt(tot / N)
                if not math.isfinite(err):
                    err = math.inf
            sp_new = 0.0
            ok = fail == OK and err <= 1.0
            if ok:
                sp_new = K[6, 2 * n]
                if not math.isfinite(sp_new):
                    fail = NONFINITE
                    ok = False
                elif sp_new > cap:
                    fail = CAP
                    ok = False
            if fail != OK:
                t_hi = t + hs
                kind = fail
                step = hs / 2
            elif not ok:
                fac = 0.9 * max(err, 1e-10) ** -0.2 if math.isfinite(err) else 0.2
                step = hs * min(0.9, max(0.2, fac))
            else:
                t = t + hs
                for j in range(N):
                    y[j] = y5[j]
                    K[0, j] = K[6, j]
                prev = speed
                speed = sp_new
                vmax = max(vmax, sp_new)
                nsteps += 1
                fac = 0.9 * max(err, 1e-10) ** -0.2
                step = hs * min(5.0, max(0.2, fac))
            if t >= t_max:
                verdict = V_REACHED
                lo_out = t
                hi_out = t
                break
            if t_hi - t < bracket_rel * max(1.0, abs(t_hi)):
                rising = speed > prev
                lo_out = t
                hi_out = t_hi
                if kind == CAP:
                    verdict = V_BLOWUP
                elif kind == EXIT:
                    verdict = V_EXITED
                elif rising:
                    verdict = V_BLOWUP
                    flag = F_NONFINITE
                else:
                    verdict = V_EXITED
                    flag = F_EVAL
                break
            if step < min_step * max(1.0, abs(t)):
                verdict = V_BLOWUP if speed > prev else V_EXITED
                lo_out = t
                hi_out = t + step
                flag = F_UNDERFLOW
                break
        res[0] = verdict
        res[1] = lo_out
        res[2] = hi_out
        res[3] = speed
        res[4] = step
        res[5] = nsteps
        res[6] = vmax
        res[7] = flag

    @njit(parallel=True, cache=False)
    def batch(X, V, c, lo, hi, t_max, cap, min_step, rtol, atol, max_steps, bracket_rel):
        m, n = X.shape
        out = np.zeros((m, 8))
        for r in numba.prange(m):
            one(X[r], V[r], n, c, lo, hi, t_max, cap, min_step, rtol, atol, max_steps, bracket_rel, out[r])
        return out

    _STEPPERS[bodies] = batch
    return batch


def run_batch(spray: PotentialSpray, sign: float, chart, X, V, cfg) -> np.ndarray:
    """Integrate unit-speed rows; returns an (m, 8) array of
    (verdict, t_lo, t_hi, final_speed, final_step, steps, max_speed, flag)."""
    n = X.shape[1]
    lo = np.full(n, -np.inf)
    hi = np.full(n, np.inf)
    for i, (b, p) in enumerate(zip(chart.bounds, chart.periods or (None,) * n)):
        if not p:
            lo[i], hi[i] = b
    threads = os.environ.get("STATGEO_THREADS")
    if threads:
        numba.set_num_threads(max(1, min(int(threads), numba.config.NUMBA_NUM_THREADS)))
    c = sign * spray.alpha / 3
    return spray.kernel(np.ascontiguousarray(X, dtype=float), np.ascontiguousarray(V, dtype=float),
                        c, lo, hi, float(cfg.t_max), float(cfg.speed_cap), float(cfg.min_step),
                        float(cfg.rel_tol), float(cfg.abs_tol), int(cfg.max_steps), float(cfg.bracket_rel))
