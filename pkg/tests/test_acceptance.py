"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are also collected and repeated in the pytest terminal summary.
"""

import math
import time
from dataclasses import replace
from functools import lru_cache

import numpy as np
import pytest

from statgeo import gallery
from statgeo.fields import FDSteps
from statgeo.geodesics import (BLOWUP, REACHED, ProbeConfig, integrate_geodesic, leading, lemma42_residual,
                               probe_batch, probe_two_sided, speed_law_residual)
from statgeo.hypersurface import PlanarCurve, gauss_equation_residual, planar_reparametrize
from statgeo.structure import (check_conjugate_symmetric, classify, duality_residual, estimate_sup_A,
                               nabla_hat_A, ros_mean)
from statgeo.verify import plane_sections, random_geodesics

NOGUCHI = "noguchi(sin(2*pi*x1),1/3,1/3,1/3)"
STRUCTURES = ["torus", "strip", NOGUCHI, "cayley(2)", "sphere(2)", "ellipsoid(1,2,3)", "paraboloid",
              "paraboloid(constant)"]


@lru_cache(maxsize=None)
def entry(key):
    return gallery.load(key)


@lru_cache(maxsize=None)
def trajectories(key):
    e = entry(key)
    dtype = np.longdouble if key == "strip" else np.float64
    cfg = ProbeConfig(t_max=5.0, dtype=dtype)
    return random_geodesics(e.structure, "statistical", 10, 0, cfg, e.sample_chart)


def test_01_torus_blowup(record_criterion):
    s = entry("torus").structure
    t0 = time.perf_counter()
    o = integrate_geodesic(s.connection("statistical"), ((0.0, 0.3), (-1.0, 0.0)), ProbeConfig())
    runtime = time.perf_counter() - t0
    tr = o.trajectory
    ts = np.linspace(0.0, 0.99, 400)
    Y = tr.dense(ts)
    exact = np.stack([np.log1p(-ts), np.full_like(ts, 0.3)], axis=-1)
    err = float(np.max(np.abs(Y[:, :2] - exact)))
    v99 = tr.dense(np.array([0.99]))[0, 2:4]
    speed99 = float(np.sqrt(v99 @ s.metric(Y[-1:, :2])[0] @ v99))
    ok = (o.verdict == BLOWUP and 0.99 <= o.t_lo and o.t_hi <= 1.01 and err < 1e-6
          and abs(speed99 - 100) <= 1.0 and runtime < 1.0)
    record_criterion(1, "torus blow-up", ok,
                     f"{o.verdict} t in [{o.t_lo:.8f}, {o.t_hi:.8f}], trajectory error {err:.2e}, "
                     f"speed(0.99) {speed99:.4f}, runtime {runtime:.3f} s")
    assert ok


def test_02_dual_blowup(record_criterion):
    s = entry("torus").structure
    t0 = time.perf_counter()
    fwd, bwd = probe_two_sided(s.connection("dual"), (0.0, 0.3), (-1.0, 0.0), ProbeConfig())
    runtime = time.perf_counter() - t0
    side, o = leading(fwd, bwd)
    ok = o.verdict == BLOWUP and runtime < 1.0
    record_criterion(2, "dual blow-up", ok,
                     f"{o.verdict} on the {side} half at t = {o.t_hi:.8f}, runtime {runtime:.3f} s")
    assert ok


def test_03_speed_law(record_criterion):
    worst = {k: max(speed_law_residual(o.trajectory, entry(k).structure) for o in trajectories(k))
             for k in STRUCTURES}
    key = max(worst, key=worst.get)
    ok = worst[key] < 1e-4
    record_criterion(3, "speed law", ok, f"max residual {worst[key]:.2e} ({key}) over {len(worst)} structures")
    assert ok


def test_04_lemma42(record_criterion):
    worst = {k: max(lemma42_residual(o.trajectory, entry(k).structure) for o in trajectories(k))
             for k in STRUCTURES}
    key = max(worst, key=worst.get)
    ok = worst[key] < 1e-4
    record_criterion(4, "lemma 4.2 identity", ok,
                     f"max residual {worst[key]:.2e} ({key}) over {len(worst)} structures")
    assert ok


def test_05_duality(record_criterion):
    worst = {}
    for k in STRUCTURES:
        e = entry(k)
        worst[k] = duality_residual(e.structure, e.sample_chart.low_discrepancy(50, seed=0))
    key = max(worst, key=worst.get)
    ok = worst[key] < 1e-6
    record_criterion(5, "duality identity", ok, f"max residual {worst[key]:.2e} ({key}), 50 points each")
    assert ok


def test_06_conjugate_symmetry_equivalence(record_criterion):
    rows = []
    for k in STRUCTURES:
        e = entry(k)
        cs = check_conjugate_symmetric(e.structure, e.sample_chart.low_discrepancy(50, seed=0))
        rows.append((k, cs.extra["nabla_hat_A_verdict"], cs.extra["curvature_verdict"]))
    bad = [r for r in rows if r[1] != r[2]]
    ok = not bad
    record_criterion(6, "conjugate symmetry equivalence", ok,
                     f"verdicts agree on {len(rows) - len(bad)}/{len(rows)} structures"
                     + (f"; disagree on {[r[0] for r in bad]}" if bad else ""))
    assert ok


def test_07_noguchi_completeness(record_criterion):
    s = entry(NOGUCHI).structure
    t0 = time.perf_counter()
    reports = [probe_batch(s, kind, 1000, 0) for kind in ("statistical", "dual")]
    runtime = time.perf_counter() - t0
    blowups = sum(r.counts[BLOWUP] for r in reports)
    vmax = max(r.max_speed for r in reports)
    bound = math.exp(2.0) + 1e-3
    ok = blowups == 0 and vmax <= bound and runtime < 60
    record_criterion(7, "noguchi completeness", ok,
                     f"{blowups} blow-ups in 2 x 2000 probes, max speed {vmax:.6f} <= {bound:.6f}, "
                     f"runtime {runtime:.1f} s")
    assert ok


def test_08_torus_falsifier(record_criterion):
    e = entry("torus")
    s = e.structure
    P = s.chart.low_discrepancy(50, seed=0)
    rep = classify(s, P)
    hA = float(np.max(np.abs(nabla_hat_A(s, P))))
    batch = probe_batch(s, "statistical", 1000, 0)
    ok = (not rep.trivial) and hA < 1e-10 and batch.counts[BLOWUP] >= 1
    record_criterion(8, "parallel cubic form yet incomplete", ok,
                     f"trivial={rep.trivial}, max |nabla_hat A| {hA:.1e}, "
                     f"{batch.counts[BLOWUP]} blow-ups in 2000 probes")
    assert ok


def test_09_strip(record_criterion):
    s = entry("strip").structure
    cfg = ProbeConfig(t_max=50.0, dtype=np.longdouble)
    halves = [integrate_geodesic(s.connection("statistical"), ((0.0, 0.0), v), cfg) for v in ((0.0, 1.0), (0.0, -1.0))]
    length = float(sum(o.trajectory.length for o in halves))
    complete = all(o.verdict == REACHED for o in halves)
    counts = (100, 1_000, 10_000, 100_000)
    sups = [estimate_sup_A(s, m, 0) for m in counts]
    growing = all(b > a for a, b in zip(sups, sups[1:]))
    ok = complete and length <= math.sqrt(math.pi) + 1e-3 and growing
    record_criterion(9, "strip", ok,
                     f"complete both ways to t=50: {complete}, length {length:.6f} "
                     f"(sqrt(pi) = {math.sqrt(math.pi):.6f}), sup A estimates {[f'{x:.2e}' for x in sups]}")
    assert ok


def test_10_gauss_equations(record_criterion):
    worst = {}
    for k in ("sphere(2)", "ellipsoid(1,2,3)", "paraboloid"):
        e = entry(k)
        r = gauss_equation_residual(e.immersion, e.sample_chart.low_discrepancy(20, seed=0))
        worst[k] = max(r["gauss"], r["gauss_dual"])
    key = max(worst, key=worst.get)
    ok = worst[key] < 1e-4
    record_criterion(10, "gauss equations", ok, f"max residual {worst[key]:.2e} ({key})")
    assert ok


def test_11_plane_sections(record_criterion):
    worst = {}
    for k in ("sphere(2)", "ellipsoid(1,2,3)", "paraboloid(constant)"):
        e = entry(k)
        worst[k] = plane_sections(e.immersion, 10, 0, 5.0, e.atlas)
    key = max(worst, key=worst.get)
    ok = worst[key] < 1e-5
    record_criterion(11, "plane sections", ok, f"max residual {worst[key]:.2e} ({key}), 10 geodesics each")
    assert ok


def test_12_parabola(record_criterion):
    c = PlanarCurve(lambda t: np.stack([t, t**2 - 1], axis=-1), (-3.0, 3.0),
                    rdot=lambda t: np.stack([np.ones_like(t), 2 * t], axis=-1), label="parabola")
    ts = np.array([0.0, 1.0, 2.0])
    det_err = float(np.max(np.abs(c.det(ts) - (ts**2 + 1))))
    rep = planar_reparametrize(c, t0=0.0)
    ok = det_err < 1e-10 and rep.parallel_residual < 1e-5
    record_criterion(12, "parabola reparametrization", ok,
                     f"det error {det_err:.1e}, parallelism residual {rep.parallel_residual:.2e}")
    assert ok


def test_13_cayley(record_criterion):
    e = entry("cayley(2)")
    s = e.structure
    hA = float(np.max(np.abs(nabla_hat_A(s, e.sample_chart.low_discrepancy(50, seed=0)))))
    counts = {k: probe_batch(s, k, 10, 0, region=e.sample_chart).counts[BLOWUP] for k in ("statistical", "dual")}
    ok = hA < 1e-4 and all(c >= 1 for c in counts.values())
    record_criterion(13, "cayley surface", ok, f"max |nabla_hat A| {hA:.2e}, blow-ups {counts}")
    assert ok


def test_14_ros_integral(record_criterion):
    mean, se = ros_mean(entry(NOGUCHI).structure, 100_000, 0)
    ok = abs(mean) <= 3 * se
    record_criterion(14, "ros integral", ok, f"mean {mean:.3e}, standard error {se:.3e}, z = {mean / se:.2f}")
    assert ok


# criterion 15: second-order convergence of every residual -----------------------------

# an order-2 stencil is exact on quadratic data, leaving only rounding error
ROUND_OFF = 1e-7


def _order2_structure(key, h):
    e = entry(key)
    steps = FDSteps(first=h, outer=2 * h, order=2)
    if e.kind == "structure":
        return e.structure.with_steps(steps)
    return replace(e.immersion, steps=steps).structure()


def _order2_immersion(key, h):
    return replace(entry(key).immersion, steps=FDSteps(first=h, outer=2 * h, order=2))


def _residuals():
    """(label, residual as a function of the step, base step)."""
    out = []
    for k in STRUCTURES:
        trs = [o.trajectory for o in trajectories(k)]
        # the time step and the spatial stencils of the structure are halved together
        for name, fn in (("speed law", speed_law_residual), ("lemma 4.2", lemma42_residual)):
            out.append((f"{k} {name}",
                        lambda h, k=k, trs=trs, fn=fn: max(fn(t, _order2_structure(k, h), h=h / 2, refine=False)
                                                           for t in trs), 2e-2))
        P = entry(k).sample_chart.low_discrepancy(50, seed=0)
        out.append((f"{k} duality", lambda h, k=k, P=P: duality_residual(_order2_structure(k, h), P), 2e-2))
    for k in ("sphere(2)", "ellipsoid(1,2,3)", "paraboloid"):
        P = entry(k).sample_chart.low_discrepancy(20, seed=0)
        for part in ("gauss", "gauss_dual"):
            out.append((f"{k} {part}",
                        lambda h, k=k, P=P, part=part: gauss_equation_residual(_order2_immersion(k, h), P)[part],
                        2e-2))
    P = entry("cayley(2)").sample_chart.low_discrepancy(50, seed=0)
    out.append(("cayley(2) nabla_hat A",
                lambda h: float(np.max(np.abs(nabla_hat_A(_order2_structure("cayley(2)", h), P)))), 2e-2))
    return out


def test_15_richardson(record_criterion):
    rows, exact, bad = [], [], []
    for label, fn, h in _residuals():
        a, b = fn(h), fn(h / 2)
        if a < ROUND_OFF and b < ROUND_OFF:
            exact.append(label)
            continue
        ratio = a / b if b > 0 else math.inf
        rows.append((label, ratio))
        if not ratio >= 3:
            bad.append(f"{label} ({a:.2e} -> {b:.2e})")
    worst = min(rows, key=lambda r: r[1])
    ok = not bad
    record_criterion(15, "order-2 convergence", ok,
                     f"{len(rows)} residuals, smallest halving ratio {worst[1]:.2f} ({worst[0]}); "
                     f"{len(exact)} already at round-off: {exact}" + (f"; failing {bad}" if bad else ""))
    assert ok
