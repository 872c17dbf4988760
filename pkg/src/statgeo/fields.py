"""Tensor fields on a chart and central finite differences.

Components of a field of valence (r, s) at a batch of points ``P`` of shape
``(..., n)`` are returned as an array of shape ``(..., n, ..., n)`` with
``r + s`` trailing axes. Upper indices come first.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .chart import Chart, ChartError
from .expr import DomainError, Expression

__all__ = [
    "TensorField",
    "FDSteps",
    "StencilError",
    "default_step",
    "fd_partial",
    "fd_gradient",
    "fd_hessian",
    "symmetrize",
    "asymmetry",
    "inv",
    "solve",
    "TOL_SYM",
]

TOL_SYM = 1e-10

# central-difference weights: offsets (in units of h) and coefficients
_D1 = {
    2: ((1, 0.5), (-1, -0.5)),
    4: ((2, -1 / 12), (1, 8 / 12), (-1, -8 / 12), (-2, 1 / 12)),
    6: ((3, 1 / 60), (2, -3 / 20), (1, 3 / 4), (-1, -3 / 4), (-2, 3 / 20), (-3, -1 / 60)),
}
_D2 = {
    2: ((1, 1.0), (0, -2.0), (-1, 1.0)),
    4: ((2, -1 / 12), (1, 16 / 12), (0, -30 / 12), (-1, 16 / 12), (-2, -1 / 12)),
    6: ((3, 1 / 90), (2, -3 / 20), (1, 3 / 2), (0, -49 / 18), (-1, 3 / 2), (-2, -3 / 20), (-3, 1 / 90)),
}


class StencilError(ChartError):
    """A finite-difference stencil point left the chart."""


def default_step(x) -> np.ndarray:
    """Per-coordinate first-derivative step, ``max(1e-5, 1e-7*|x|)``."""
    return np.maximum(1e-5, 1e-7 * np.abs(np.asarray(x, dtype=float)))


@dataclass(frozen=True)
class FDSteps:
    """Step sizes for the nested differences used by derived geometry.

    ``first`` differentiates the defining fields (g, A, immersion maps);
    ``outer`` differentiates quantities that are themselves built from
    differences (Christoffel symbols, Ricci). ``None`` for ``first`` means the
    per-coordinate default rule. ``order`` is the stencil order (2 or 4).
    """

    first: Optional[float] = 1e-3
    outer: float = 2e-3
    order: int = 4
    scale: float = 1.0

    def scaled(self, factor: float) -> "FDSteps":
        return replace(self, scale=self.scale * factor)

    def first_step(self, x):
        base = default_step(x) if self.first is None else self.first
        return base * self.scale

    @property
    def outer_step(self) -> float:
        return self.outer * self.scale


def _offsets_in_chart(chart: Optional[Chart], P: np.ndarray):
    if chart is not None and not np.all(chart.contains(P)):
        raise StencilError("finite-difference stencil leaves the chart")


def fd_gradient(func: Callable, P, h=None, order: int = 2, chart: Optional[Chart] = None,
                axes=None) -> np.ndarray:
    """Central differences of an array-valued function along every chart axis.

    Returns shape ``(..., n, *value_shape)``; the derivative axis sits right
    after the batch axes.
    """
    P = np.asarray(P)
    n = P.shape[-1]
    axes = range(n) if axes is None else axes
    if h is None:
        h = default_step(P)
    h = np.broadcast_to(np.asarray(h, dtype=P.dtype if P.dtype.kind == "f" else float), P.shape)
    stencil = _D1[order]
    axes = list(axes)
    # one stacked call: (len(axes) * len(stencil), *P.shape)
    Q = np.broadcast_to(P, (len(axes), len(stencil)) + P.shape).copy()
    for ia, a in enumerate(axes):
        for io, (off, _) in enumerate(stencil):
            Q[ia, io, ..., a] += off * h[..., a]
    Q = Q.reshape((-1,) + P.shape)
    _offsets_in_chart(chart, Q)
    vals = np.asarray(func(Q))
    vals = vals.reshape((len(axes), len(stencil)) + vals.shape[1:])
    parts = []
    for ia, a in enumerate(axes):
        acc = None
        for io, (_, w) in enumerate(stencil):
            term = w * vals[ia, io]
            acc = term if acc is None else acc + term
        ha = h[..., a]
        ha = ha.reshape(ha.shape + (1,) * (acc.ndim - ha.ndim))
        parts.append(acc / ha)
    out = np.stack(parts, axis=P.ndim - 1)
    if not np.all(np.isfinite(out)):
        raise DomainError("non-finite value in finite difference")
    return out


def fd_hessian(func: Callable, P, h, order: int = 2, chart: Optional[Chart] = None) -> np.ndarray:
    """All second partials ``d_i d_j func`` with shape ``(..., n, n, *value_shape)``.

    Diagonal entries use the 1-D second-difference stencil, mixed entries the
    tensor product of first-difference stencils (3x3 points at order 2).
    """
    P = np.asarray(P)
    n = P.shape[-1]
    cache: dict = {}

    def at(shift: tuple):
        if shift not in cache:
            Q = P.copy()
            for a, k in enumerate(shift):
                if k:
                    Q[..., a] = Q[..., a] + k * h
            _offsets_in_chart(chart, Q)
            cache[shift] = np.asarray(func(Q))
        return cache[shift]

    def shift(**kw):
        s = [0] * n
        for a, k in kw.items():
            s[int(a[1:])] += k
        return tuple(s)

    rows = [[None] * n for _ in range(n)]
    for i in range(n):
        acc = 0
        for off, w in _D2[order]:
            acc = acc + w * at(shift(**{f"a{i}": off}))
        rows[i][i] = acc / h**2
        for j in range(i + 1, n):
            acc = 0
            for (oi, wi), (oj, wj) in itertools.product(_D1[order], repeat=2):
                s = [0] * n
                s[i] += oi
                s[j] += oj
                acc = acc + wi * wj * at(tuple(s))
            rows[i][j] = rows[j][i] = acc / h**2
    out = np.stack([np.stack(r, axis=P.ndim - 1) for r in rows], axis=P.ndim - 1)
    if not np.all(np.isfinite(out)):
        raise DomainError("non-finite value in finite difference")
    return out


def fd_jet(func: Callable, P, h: float, order: int = 2, chart: Optional[Chart] = None):
    """First and second partials from one shared stencil.

    Equivalent to ``fd_gradient`` plus ``fd_hessian`` with the same step, but
    all stencil points are stacked and ``func`` is called once.
    """
    P = np.asarray(P)
    n = P.shape[-1]
    shifts: dict = {(0,) * n: 0}

    def key(*pairs):
        s = [0] * n
        for a, k in pairs:
            s[a] += k
        t = tuple(s)
        if t not in shifts:
            shifts[t] = len(shifts)
        return shifts[t]

    grad_terms = [[(key((a, off)), w) for off, w in _D1[order]] for a in range(n)]
    hess_terms = {}
    for i in range(n):
        hess_terms[i, i] = [(key((i, off)), w) for off, w in _D2[order]]
        for j in range(i + 1, n):
            hess_terms[i, j] = [(key((i, oi), (j, oj)), wi * wj)
                                for (oi, wi), (oj, wj) in itertools.product(_D1[order], repeat=2)]
    S = np.array(list(shifts), dtype=P.dtype)
    Q = P[None, ...] + h * S.reshape((len(S),) + (1,) * (P.ndim - 1) + (n,))
    _offsets_in_chart(chart, Q)
    vals = np.asarray(func(Q))

    def comb(terms):
        acc = 0
        for k, w in terms:
            acc = acc + w * vals[k]
        return acc

    grad = np.stack([comb(t) / h for t in grad_terms], axis=P.ndim - 1)
    rows = [[None] * n for _ in range(n)]
    for (i, j), t in hess_terms.items():
        rows[i][j] = rows[j][i] = comb(t) / h**2
    hess = np.stack([np.stack(r, axis=P.ndim - 1) for r in rows], axis=P.ndim - 1)
    if not (np.all(np.isfinite(grad)) and np.all(np.isfinite(hess))):
        raise DomainError("non-finite value in finite difference")
    return grad, hess


def symmetrize(T: np.ndarray, axes: tuple[int, ...]) -> np.ndarray:
    """Average of ``T`` over all permutations of the given (negative) axes."""
    perms = list(itertools.permutations(axes))
    nd = T.ndim
    out = np.zeros_like(T)
    for perm in perms:
        order = list(range(nd))
        for src, dst in zip(axes, perm):
            order[nd + src] = nd + dst
        out = out + np.transpose(T, order)
    return out / len(perms)


def asymmetry(T: np.ndarray, axes: tuple[int, ...]) -> float:
    if T.size == 0:
        return 0.0
    return float(np.max(np.abs(T - symmetrize(T, axes))))


_SYM_AXES = {"sym2": (-2, -1), "sym3": (-3, -2, -1), "sym_last2": (-2, -1)}


@dataclass(frozen=True)
class TensorField:
    """Components of a tensor field as a vectorised function of chart points.

    ``symmetry`` is one of None, "sym2", "sym3", "sym_last2"; ``constant``
    marks fields whose derivatives are known to vanish, which lets the
    difference machinery skip them.
    """

    func: Callable[[np.ndarray], np.ndarray]
    chart: Chart
    valence: tuple[int, int]
    symmetry: Optional[str] = None
    constant: bool = False
    label: str = ""
    check_chart: bool = field(default=False, compare=False)

    @property
    def rank(self) -> int:
        return sum(self.valence)

    def __call__(self, P) -> np.ndarray:
        P = np.asarray(P)
        if P.dtype.kind != "f":
            P = P.astype(float)
        if self.check_chart:
            P = self.chart.require(P)
        else:
            P = self.chart.wrap(P)
        return self.eval_wrapped(P)

    def eval_wrapped(self, P: np.ndarray) -> np.ndarray:
        """Evaluate at float points already reduced into the fundamental box."""
        shape = P.shape[:-1] + (self.chart.dim,) * self.rank
        if self.constant:
            return np.broadcast_to(self._constant_value(P.dtype), shape)
        out = np.broadcast_to(np.asarray(self.func(P)), shape)
        if not np.all(np.isfinite(out)):
            raise DomainError(f"field {self.label!r} is not finite at the given point(s)")
        return out

    def _constant_value(self, dtype) -> np.ndarray:
        cache = self.__dict__.setdefault("_cache", {})
        key = np.dtype(dtype).str
        if key not in cache:
            mid = self.chart.reference_point().astype(dtype)
            val = np.asarray(self.func(mid[None]), dtype=dtype)
            val = np.broadcast_to(val, (1,) + (self.chart.dim,) * self.rank)[0].copy()
            if not np.all(np.isfinite(val)):
                raise DomainError(f"field {self.label!r} is not finite")
            val.setflags(write=False)
            cache[key] = val
        return cache[key]

    def symmetrized(self, tol: float = TOL_SYM, check_points=None) -> "TensorField":
        """Return a field that symmetrises on evaluation; warn if the raw
        components at ``check_points`` are further than ``tol`` from symmetric."""
        if self.symmetry is None:
            return self
        axes = _SYM_AXES[self.symmetry]
        if check_points is not None:
            raw = np.broadcast_to(
                np.asarray(self.func(self.chart.wrap(np.asarray(check_points, dtype=float)))),
                np.shape(check_points)[:-1] + (self.chart.dim,) * self.rank,
            )
            err = asymmetry(raw, axes)
            if err > tol:
                warnings.warn(
                    f"field {self.label!r} deviates from its {self.symmetry} tag by {err:.3g}; symmetrising",
                    stacklevel=2,
                )
        raw_func = self.func
        return replace(self, func=lambda P: symmetrize(np.asarray(
            np.broadcast_to(raw_func(P), P.shape[:-1] + (self.chart.dim,) * self.rank)), axes))

    @classmethod
    def from_components(cls, comps, chart: Chart, valence, **kw) -> "TensorField":
        """Build a field from a nested array of numbers, callables or Expressions."""
        flat = list(_flatten(comps))
        arr = np.array(flat, dtype=object).reshape(_nested_shape(comps))
        const = all(not callable(c) or (isinstance(c, Expression) and c.is_constant) for c in flat)

        def func(P):
            out = np.zeros(P.shape[:-1] + arr.shape, dtype=P.dtype)
            for idx, c in np.ndenumerate(arr):
                if callable(c):
                    out[(...,) + idx] = c(P)
                elif c:
                    out[(...,) + idx] = c
            return out

        return cls(func, chart, tuple(valence), constant=kw.pop("constant", const), **kw)


def _flatten(x):
    if isinstance(x, (list, tuple)):
        for y in x:
            yield from _flatten(y)
    elif isinstance(x, np.ndarray) and x.dtype != object:
        yield from x.ravel().tolist()
    else:
        yield x


def _nested_shape(x):
    if isinstance(x, (list, tuple)):
        return (len(x),) + (_nested_shape(x[0]) if len(x) else ())
    if isinstance(x, np.ndarray):
        return x.shape
    return ()


def fd_partial(f: TensorField, axis: int, p, h: Optional[float] = None, order: int = 2) -> np.ndarray:
    """Central difference ``(f(p + h e_axis) - f(p - h e_axis)) / 2h`` of a field.

    ``h`` defaults to ``max(1e-5, 1e-7*|p_axis|)``. Raises StencilError when
    a stencil point is outside the chart.
    """
    p = np.asarray(p, dtype=float) if np.asarray(p).dtype.kind != "f" else np.asarray(p)
    if h is None:
        h = default_step(p)
    elif h <= 0:
        raise ValueError("step must be positive")
    d = fd_gradient(f, p, h=h, order=order, chart=f.chart, axes=[axis])
    return np.take(d, 0, axis=p.ndim - 1)


# Small dense linear algebra that also works for extended precision ----------

def inv(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    if a.dtype in (np.float64, np.float32):
        return np.linalg.inv(a)
    n = a.shape[-1]
    return solve(a, np.broadcast_to(np.eye(n, dtype=a.dtype), a.shape))


def solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Batched ``a x = b`` (``b`` of shape (..., n) or (..., n, k))."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.dtype in (np.float64, np.float32) and b.dtype in (np.float64, np.float32):
        if b.ndim == a.ndim - 1:
            return np.linalg.solve(a, b[..., None])[..., 0]
        return np.linalg.solve(a, b)
    vec = b.ndim == a.ndim - 1
    dt = np.result_type(a.dtype, b.dtype)
    B = b[..., None] if vec else b
    n = a.shape[-1]
    batch = np.broadcast_shapes(a.shape[:-2], B.shape[:-2])
    M = np.array(np.broadcast_to(a, batch + (n, n)), dtype=dt)
    B = np.array(np.broadcast_to(B, batch + B.shape[-2:]), dtype=dt)
    for k in range(n):
        piv = np.argmax(np.abs(M[..., k:, k]), axis=-1) + k
        idx = np.indices(piv.shape)
        rows_k = M[..., k, :].copy()
        M[..., k, :] = M[(*idx, piv)]
        M[(*idx, piv)] = rows_k
        bk = B[..., k, :].copy()
        B[..., k, :] = B[(*idx, piv)]
        B[(*idx, piv)] = bk
        d = M[..., k, k]
        if np.any(d == 0):
            raise np.linalg.LinAlgError("singular matrix")
        for r in range(n):
            if r == k:
                continue
            fct = (M[..., r, k] / d)[..., None]
            M[..., r, :] = M[..., r, :] - fct * M[..., k, :]
            B[..., r, :] = B[..., r, :] - fct * B[..., k, :]
    X = B / M[..., np.arange(n), np.arange(n)][..., None]
    return X[..., 0] if vec else X
