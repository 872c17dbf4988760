import math
import os

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from statgeo import fastpath, gallery
from statgeo.chart import Chart
from statgeo.geodesics import (BLOWUP, EXITED, REACHED, ProbeConfig, arclength_reparametrize, integrate_batch,
                               integrate_geodesic, leading, lemma42_residual, probe_batch, probe_two_sided,
                               speed_law_residual)
from statgeo.io import structure_from_dict

FLAT = structure_from_dict({"dim": 2, "g": [["1", "0"], ["0", "1"]]})
FLAT_TORUS = structure_from_dict({"dim": 2, "bounds": [[0, 1], [0, 1]], "periods": [1, 1],
                                  "g": [["1", "0"], ["0", "1"]]})
TORUS = gallery.load("torus").structure


def test_straight_line():
    o = integrate_geodesic(FLAT.connection(), ((0.0, 0.0), (1.0, 0.0)), ProbeConfig(t_max=10))
    assert o.verdict == REACHED
    tr = o.trajectory
    assert np.max(np.abs(tr.x - np.stack([tr.t, np.zeros_like(tr.t)], axis=-1))) < 1e-8


def test_torus_forward_branch_decays_like_log():
    o = integrate_geodesic(TORUS.connection(), ((0.0, 0.3), (1.0, 0.0)), ProbeConfig(t_max=20))
    assert o.verdict == REACHED
    ts = np.linspace(0, 20, 101)
    Y = o.trajectory.dense(ts)
    assert np.max(np.abs(Y[:, 0] - np.log1p(ts))) < 1e-6
    assert np.max(np.abs(np.hypot(Y[:, 2], Y[:, 3]) - 1 / (1 + ts))) < 1e-6


def test_torus_blowup_branch_and_arclength():
    o = integrate_geodesic(TORUS.connection(), ((0.0, 0.3), (-1.0, 0.0)), ProbeConfig())
    assert o.verdict == BLOWUP and 0.99 <= o.t_lo <= o.t_hi <= 1.01
    tr = o.trajectory
    # arclength s(t) = -ln(1 - t) grows without bound
    m = tr.t <= 0.999
    exact = -np.log1p(-tr.t[m])
    assert np.max(np.abs(tr.s[m] - exact) / np.maximum(1, exact)) < 1e-5
    assert tr.s[-1] > 15
    ac = arclength_reparametrize(tr, TORUS)
    assert ac.residual < 1e-4


def test_straight_line_arclength_has_constant_velocity():
    o = integrate_geodesic(FLAT.connection(), ((0.0, 0.0), (0.6, 0.8)), ProbeConfig(t_max=3))
    ac = arclength_reparametrize(o.trajectory, FLAT)
    assert np.allclose(ac.rdot, ac.rdot[0], atol=1e-12)
    assert np.allclose(ac.Lambda, 0, atol=1e-12)


def test_trivial_residuals_vanish():
    o = integrate_geodesic(FLAT.connection(), ((0.0, 0.0), (1.0, 2.0)), ProbeConfig(t_max=3))
    assert speed_law_residual(o.trajectory, FLAT) < 1e-8
    assert lemma42_residual(o.trajectory, FLAT) < 1e-8


def test_exit_from_bounded_chart():
    s = structure_from_dict({"dim": 2, "bounds": [[-1, 1], [-1, 1]], "g": [["1", "0"], ["0", "1"]]})
    o = integrate_geodesic(s.connection(), ((0.0, 0.0), (1.0, 0.0)), ProbeConfig(t_max=10))
    assert o.verdict == EXITED
    assert o.t_exit == pytest.approx(1.0, abs=1e-3)


def test_flat_torus_never_escapes():
    r = probe_batch(FLAT_TORUS, "statistical", 200, 0, ProbeConfig(t_max=20))
    assert r.counts[REACHED] == 400 and r.blowup_fraction == 0


def test_torus_batch_finds_blowups():
    r = probe_batch(TORUS, "statistical", 100, 0)
    assert r.counts[BLOWUP] >= 1
    assert r.escape_min is not None and r.escape_min > 0


def test_probe_batch_is_deterministic():
    a = probe_batch(TORUS, "statistical", 30, 5).to_dict()
    b = probe_batch(TORUS, "statistical", 30, 5).to_dict()
    assert a == b


def test_dual_torus_escapes_on_the_other_side():
    fwd, bwd = probe_two_sided(TORUS.connection("dual"), (0.0, 0.3), (-1.0, 0.0))
    side, o = leading(fwd, bwd)
    assert (side, o.verdict) == ("backward", BLOWUP)


def test_no_blowup_before_one_over_sup_A():
    # with l(0) = 1 the speed is at most 1 / (1 - N t), so no escape before 1 / N
    for key in ("torus", "noguchi(sin(2*pi*x1),1/3,1/3,1/3)"):
        s = gallery.load(key).structure
        N = max(1.0, float(gallery.load(key).expected.get("sup_A").value)
                if "sup_A" in gallery.load(key).expected else 2 * math.pi)
        r = probe_batch(s, "statistical", 200, 1)
        esc = [o.t_lo for o in r.outcomes if o.verdict == BLOWUP]
        assert all(t >= 1 / N - 1e-3 for t in esc)


@pytest.mark.skipif(not fastpath.available(), reason="compiled prober not available")
def test_compiled_prober_matches_numpy_path(monkeypatch):
    s = gallery.load("noguchi(sin(2*pi*x1),1/3,1/3,1/3)").structure
    fast = probe_batch(s, "dual", 40, 3, ProbeConfig(t_max=20))
    monkeypatch.setenv("STATGEO_NO_JIT", "1")
    slow = probe_batch(s, "dual", 40, 3, ProbeConfig(t_max=20))
    assert fast.counts == slow.counts
    for a, b in zip(fast.outcomes, slow.outcomes):
        assert a.verdict == b.verdict
        assert a.max_speed == pytest.approx(b.max_speed, rel=1e-8)


@given(st.floats(0.05, 0.95), st.floats(0.05, 0.95), st.floats(0, 2 * math.pi))
def test_torus_speed_law_holds_on_random_geodesics(x, y, th):
    o = integrate_geodesic(TORUS.connection(), ((x, y), (math.cos(th), math.sin(th))), ProbeConfig(t_max=3))
    if len(o.trajectory) >= 8:
        assert speed_law_residual(o.trajectory, TORUS) < 1e-4


@given(st.floats(0.1, 3.0))
def test_velocity_scaling_is_reported(c):
    o = integrate_geodesic(TORUS.connection(), ((0.0, 0.3), (-c, 0.0)), ProbeConfig())
    assert o.scale == pytest.approx(c)
    assert o.verdict == BLOWUP


def test_batch_agrees_with_single_runs():
    P = np.array([[0.1, 0.2], [0.7, 0.4]])
    V = np.array([[1.0, 0.0], [-0.3, 0.8]])
    cfg = ProbeConfig(t_max=5)
    batch = integrate_batch(TORUS.connection(), P, V, cfg, record=False)
    for p, v, o in zip(P, V, batch):
        single = integrate_geodesic(TORUS.connection(), (p, v), cfg, record=False)
        assert single.verdict == o.verdict and single.t_hi == o.t_hi


def test_config_validation():
    with pytest.raises(ValueError):
        ProbeConfig(t_max=-1)
