"""Residual of the speed law and of the frame identity as the time step of
the finite differences is halved, on random geodesics of gallery entries.

With ``--order2`` the residuals use a plain central difference, whose error
falls by about four per halving until rounding takes over.
"""

import argparse
from dataclasses import dataclass, field

import numpy as np

from statgeo import gallery
from statgeo.geodesics import ProbeConfig, lemma42_residual, speed_law_residual
from statgeo.verify import random_geodesics


@dataclass
class Config:
    keys: list = field(default_factory=lambda: ["torus", "noguchi(sin(2*pi*x1),1/3,1/3,1/3)", "cayley(2)"])
    steps: list = field(default_factory=lambda: [8e-2, 4e-2, 2e-2, 1e-2, 5e-3])
    geodesics: int = 5
    seed: int = 0
    order2: bool = True


def main(cfg: Config):
    for key in cfg.keys:
        e = gallery.load(key)
        outs = random_geodesics(e.structure, "statistical", cfg.geodesics, cfg.seed, ProbeConfig(t_max=3.0),
                                e.sample_chart)
        trs = [o.trajectory for o in outs if len(o.trajectory) >= 8]
        print(key)
        print(f"  {'h':>8} {'speed law':>12} {'frame':>12}")
        for h in cfg.steps:
            sp = max(speed_law_residual(t, e.structure, h=h, refine=not cfg.order2) for t in trs)
            fr = max(lemma42_residual(t, e.structure, h=h, refine=not cfg.order2) for t in trs)
            print(f"  {h:8.3g} {sp:12.3e} {fr:12.3e}")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("keys", nargs="*", default=Config().keys)
    ap.add_argument("--geodesics", type=int, default=Config.geodesics)
    ap.add_argument("--seed", type=int, default=Config.seed)
    ap.add_argument("--refined", action="store_true", help="use the extrapolated derivative instead")
    a = ap.parse_args()
    main(Config(keys=a.keys, geodesics=a.geodesics, seed=a.seed, order2=not a.refined))
