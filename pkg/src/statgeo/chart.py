"""Coordinate charts: boxes with optional per-axis periodicity."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

__all__ = ["Chart", "ChartError", "wrap_point", "make_rng"]

# Sampled points keep this relative distance from finite bounds so that
# finite-difference stencils stay in the chart.
SAMPLE_MARGIN = 0.02


class ChartError(ValueError):
    """A point lies outside the chart, or the chart itself is malformed."""


def make_rng(seed: int = 0) -> np.random.Generator:
    """The one PRNG used everywhere: numpy's PCG64 (64-bit state, 128-bit LCG + XSL-RR output)."""
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class Chart:
    dim: int
    bounds: tuple[tuple[float, float], ...]
    periods: tuple[Optional[float], ...] = ()
    label: str = ""
    # Optional extra containment test on (already wrapped) points, vectorised
    # over leading axes; used for graph patches whose domain is a disc.
    inside: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False)

    def __post_init__(self):
        if self.dim < 1:
            raise ChartError("chart dimension must be >= 1")
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        periods = tuple(self.periods) or (None,) * self.dim
        if len(bounds) != self.dim or len(periods) != self.dim:
            raise ChartError("bounds/periods length must equal dim")
        for (lo, hi), per in zip(bounds, periods):
            if not lo < hi:
                raise ChartError(f"empty interval ({lo}, {hi})")
            if per is not None:
                if per <= 0 or not math.isfinite(lo) or not math.isclose(hi - lo, per, rel_tol=1e-12):
                    raise ChartError(f"periodic axis ({lo}, {hi}) does not match period {per}")
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(self, "periods", tuple(None if p is None else float(p) for p in periods))
        axes = [i for i, p in enumerate(self.periods) if p is not None]
        closed = [i for i, p in enumerate(self.periods) if p is None]
        object.__setattr__(self, "_paxes", np.array(axes, dtype=int))
        object.__setattr__(self, "_plo", np.array([bounds[i][0] for i in axes]))
        object.__setattr__(self, "_pper", np.array([self.periods[i] for i in axes]))
        object.__setattr__(self, "_all_periodic", not closed)
        object.__setattr__(self, "_caxes", np.array(closed, dtype=int))
        object.__setattr__(self, "_clo", np.array([bounds[i][0] for i in closed]))
        object.__setattr__(self, "_chi", np.array([bounds[i][1] for i in closed]))

    # constructors ----------------------------------------------------------

    @classmethod
    def euclidean(cls, dim: int, label: str = "R^n") -> "Chart":
        return cls(dim, ((-math.inf, math.inf),) * dim, label=label)

    @classmethod
    def torus(cls, dim: int = 2, period: float = 1.0, label: str = "flat torus") -> "Chart":
        return cls(dim, ((0.0, period),) * dim, (period,) * dim, label=label)

    # geometry --------------------------------------------------------------

    @property
    def periodic_axes(self) -> list[int]:
        return [i for i, p in enumerate(self.periods) if p is not None]

    @property
    def is_compact(self) -> bool:
        """True when every axis is periodic, i.e. the chart is a flat torus quotient."""
        return all(p is not None for p in self.periods)

    def wrap(self, P) -> np.ndarray:
        P = np.asarray(P)
        if P.dtype.kind != "f":
            P = P.astype(float)
        if not len(self._paxes):
            return P
        lo, per = self._plo, self._pper
        if P.dtype != lo.dtype:
            lo, per = lo.astype(P.dtype), per.astype(P.dtype)
        if self._all_periodic:
            r = np.mod(P - lo, per)
            return lo + np.where(r >= per, r - per, r)
        P = P.copy()
        r = np.mod(P[..., self._paxes] - lo, per)
        P[..., self._paxes] = lo + np.where(r >= per, r - per, r)
        return P

    def contains(self, P) -> np.ndarray:
        """Vectorised in-chart test; periodic axes always pass after wrapping."""
        P = self.wrap(P)
        ok = np.all(np.isfinite(P), axis=-1)
        if len(self._caxes):
            Q = P[..., self._caxes]
            ok &= np.all((Q > self._clo) & (Q < self._chi), axis=-1)
        if self.inside is not None:
            ok &= np.asarray(self.inside(P), dtype=bool)
        return ok

    def require(self, P) -> np.ndarray:
        P = np.asarray(P)
        if P.shape[-1] != self.dim:
            raise ChartError(f"expected {self.dim} coordinates, got {P.shape[-1]}")
        if not np.all(self.contains(P)):
            raise ChartError(f"point(s) outside chart {self.label!r}")
        return self.wrap(P)

    def reference_point(self) -> np.ndarray:
        """A deterministic interior point: box centre, 0, or one unit inside a half-line."""
        out = []
        for lo, hi in self.bounds:
            if math.isfinite(lo) and math.isfinite(hi):
                out.append((lo + hi) / 2)
            elif math.isfinite(lo):
                out.append(lo + 1.0)
            elif math.isfinite(hi):
                out.append(hi - 1.0)
            else:
                out.append(0.0)
        return np.array(out)

    # sampling --------------------------------------------------------------

    def _from_unit(self, U: np.ndarray) -> np.ndarray:
        """Map points of the open unit cube onto the chart.

        Finite axes are uniform (with a small margin), half-infinite axes use
        ``lo + exp(z)``, doubly infinite ones a standard normal, z = probit(u).
        """
        P = np.empty_like(U)
        for i, (lo, hi) in enumerate(self.bounds):
            u = U[..., i]
            if self.periods[i] is not None:
                P[..., i] = lo + u * (hi - lo)
            elif math.isfinite(lo) and math.isfinite(hi):
                m = SAMPLE_MARGIN * (hi - lo)
                P[..., i] = lo + m + u * (hi - lo - 2 * m)
            elif math.isfinite(lo):
                P[..., i] = lo + np.exp(ndtri(u))
            elif math.isfinite(hi):
                P[..., i] = hi - np.exp(ndtri(u))
            else:
                P[..., i] = ndtri(u)
        return P

    def _accept(self, P: np.ndarray) -> np.ndarray:
        return P[self.contains(P)]

    def sample(self, rng: np.random.Generator, m: int) -> np.ndarray:
        """``m`` pseudo-random in-chart points, deterministic given the generator state."""
        out = np.empty((0, self.dim))
        while len(out) < m:
            U = rng.random((max(2 * (m - len(out)), 16), self.dim))
            U = np.clip(U, 1e-12, 1 - 1e-12)
            out = np.concatenate([out, self._accept(self._from_unit(U))])
        return out[:m]

    def low_discrepancy(self, m: int = 50, seed: int = 0) -> np.ndarray:
        """``m`` scrambled-Halton points mapped into the chart."""
        eng = qmc.Halton(self.dim, scramble=True, seed=seed)
        out = np.empty((0, self.dim))
        while len(out) < m:
            U = np.clip(eng.random(2 * (m - len(out)) + 8), 1e-9, 1 - 1e-9)
            out = np.concatenate([out, self._accept(self._from_unit(U))])
        return out[:m]


def wrap_point(c: Chart, p: Sequence[float]) -> np.ndarray:
    """Reduce periodic coordinates of ``p`` into the chart's fundamental box."""
    return c.wrap(p)
