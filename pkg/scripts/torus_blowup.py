"""Geodesic of the constant torus structure through (0, 0.3) heading in -x.

Prints the escape bracket, the distance to the closed form (ln(1 - t), 0.3)
at a few times, the speed against 1 / (1 - t), and the side on which the
dual connection escapes.
"""

import argparse
from dataclasses import dataclass

import numpy as np

from statgeo import gallery
from statgeo.geodesics import ProbeConfig, integrate_geodesic, leading, probe_two_sided


@dataclass
class Config:
    y0: float = 0.3
    speed_cap: float = 1e8


def main(cfg: Config):
    s = gallery.load("torus").structure
    o = integrate_geodesic(s.connection(), ((0.0, cfg.y0), (-1.0, 0.0)), ProbeConfig(speed_cap=cfg.speed_cap))
    print(f"verdict {o.verdict}, escape time in [{o.t_lo:.10f}, {o.t_hi:.10f}]")
    print(f"{'t':>8} {'|x - ln(1-t)|':>16} {'speed':>14} {'1/(1-t)':>14}")
    ts = np.array([0.0, 0.5, 0.9, 0.99, 0.999, 0.9999])
    Y = o.trajectory.dense(ts)
    for t, y in zip(ts, Y):
        speed = float(np.hypot(y[2], y[3]))
        print(f"{t:8.4f} {abs(y[0] - np.log1p(-t)):16.3e} {speed:14.6f} {1 / (1 - t):14.6f}")
    fwd, bwd = probe_two_sided(s.connection("dual"), (0.0, cfg.y0), (-1.0, 0.0))
    side, lead = leading(fwd, bwd)
    print(f"dual connection: {lead.verdict} on the {side} half at t = {lead.t_hi:.8f}")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--y0", type=float, default=Config.y0)
    ap.add_argument("--speed-cap", type=float, default=Config.speed_cap)
    a = ap.parse_args()
    main(Config(a.y0, a.speed_cap))
