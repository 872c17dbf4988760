"""Run the invariant suite on every gallery entry and print one line per check."""

import argparse
import time
from dataclasses import dataclass

from statgeo import gallery
from statgeo.verify import verify

ENTRIES = ["torus", "strip", "noguchi(sin(2*pi*x1),1/3,1/3,1/3)", "noguchi(0,1,1,1)", "cayley(2)", "sphere(2)",
           "ellipsoid(1,2,3)", "paraboloid", "paraboloid(constant)"]


@dataclass
class Config:
    seed: int = 0
    quick: bool = True


def main(cfg: Config):
    failed = 0
    for key in ENTRIES:
        t0 = time.perf_counter()
        rep = verify(gallery.load(key), seed=cfg.seed, quick=cfg.quick)
        d = rep.to_dict()
        print(f"{key}: {'PASS' if rep.passed else 'FAIL'} ({time.perf_counter() - t0:.1f} s)")
        for name, c in d["checks"].items():
            print(f"    {'ok ' if c['passed'] else 'BAD'} {name}: {c['value']}")
        failed += not rep.passed
    print(f"{len(ENTRIES) - failed}/{len(ENTRIES)} entries pass")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--full", action="store_true", help="full sample counts")
    a = ap.parse_args()
    main(Config(a.seed, not a.full))
