"""Command-line front end.

Every report is JSON with sorted keys on stdout (or ``--out``); trajectories
are CSV. Exit codes: 0 success, 1 verification failure, 2 unparsable input,
3 math-domain failure, 4 initial point outside the chart.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import gallery
from .chart import ChartError
from .expr import ParseError
from .geodesics import BLOWUP, ProbeConfig, leading, probe_batch, probe_two_sided
from .hypersurface import (ConormalDegenerate, Immersion, ImmersionError, TransversalityError,
                           conormal_duality_check, gauss_equation_residual)
from .io import FormatError, load_file
from .structure import DEFAULT_TOL, StatStructure, classify
from .verify import plane_sections, verify

EXIT_FAIL, EXIT_PARSE, EXIT_DOMAIN, EXIT_CHART = 1, 2, 3, 4


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# output -------------------------------------------------------------------------

def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return x


def dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def _emit(text: str, out: str | None):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# inputs -------------------------------------------------------------------------

class Target:
    """A resolved input: a gallery entry, or a structure/immersion from a file."""

    def __init__(self, spec: str):
        self.entry = None
        self.obj = None
        path = Path(spec)
        if path.suffix.lower() == ".json" or path.is_file():
            if not path.is_file():
                raise CliError(EXIT_PARSE, f"no such file: {spec}")
            self.obj = load_file(path)
            self.label = str(path)
        else:
            try:
                self.entry = gallery.load(spec)
            except gallery.UnknownKey:
                raise CliError(EXIT_PARSE, f"unknown gallery key or missing file: {spec!r}") from None
            except ValueError as exc:
                raise CliError(EXIT_PARSE, f"bad gallery parameters in {spec!r}: {exc}") from None
            self.label = self.entry.key

    @property
    def atlas(self):
        return self.entry.atlas if self.entry is not None else None

    @property
    def structure(self) -> StatStructure:
        if self.entry is not None:
            return self.entry.structure
        return self.obj.structure() if isinstance(self.obj, Immersion) else self.obj

    @property
    def immersion(self) -> Immersion:
        if self.entry is not None:
            if self.entry.kind == "structure":
                raise CliError(EXIT_PARSE, f"{self.label} is not a hypersurface")
            return self.entry.immersion
        if not isinstance(self.obj, Immersion):
            raise CliError(EXIT_PARSE, f"{self.label} describes a structure, not a hypersurface")
        return self.obj

    @property
    def region(self):
        if self.entry is not None:
            return self.entry.sample_chart
        if isinstance(self.obj, Immersion):
            return self.obj.sample_chart or self.obj.chart
        return self.obj.chart


def _vector(text: str, n: int, what: str) -> np.ndarray:
    try:
        v = np.array([float(x) for x in text.split(",")])
    except ValueError:
        raise CliError(EXIT_PARSE, f"--{what} must be comma-separated numbers") from None
    if v.shape != (n,):
        raise CliError(EXIT_PARSE, f"--{what} needs {n} components, got {v.size}")
    return v


def _cfg(a) -> ProbeConfig:
    cfg = ProbeConfig()
    if a.t_max is not None:
        cfg = replace(cfg, t_max=a.t_max)
    if a.speed_cap is not None:
        cfg = replace(cfg, speed_cap=a.speed_cap)
    return cfg


def _kind(a) -> str:
    if a.dual and a.metric:
        raise CliError(EXIT_PARSE, "--dual and --metric are exclusive")
    return "dual" if a.dual else "levi_civita" if a.metric else "statistical"


# commands -----------------------------------------------------------------------

def cmd_list(a) -> int:
    _emit(dumps({"examples": [{"key": k, "summary": s} for k, s in gallery.list_entries()]}), a.out)
    return 0


def cmd_describe(a) -> int:
    t = Target(a.input)
    s = t.structure
    P = t.region.low_discrepancy(a.samples or 50, seed=a.seed)
    rep = classify(s, P, tol=a.tol, seed=a.seed)
    pts = P[:5]
    out = {
        "input": t.label,
        "dim": s.dim,
        "classification": rep.to_dict(),
        "curvature_samples": [
            {"point": p, "ricci": s.ricci("statistical", p[None])[0],
             "ricci_dual": s.ricci("dual", p[None])[0],
             "scalar": float(np.einsum("ij,ij->", np.linalg.inv(s.metric(p[None])[0]),
                                       s.ricci("statistical", p[None])[0]))}
            for p in pts
        ],
    }
    _emit(dumps(out), a.out)
    return 0


def _summary(o) -> dict:
    esc = o.verdict == BLOWUP
    return {"verdict": o.verdict, "t_escape_lo": o.t_lo if esc else None, "t_escape_hi": o.t_hi if esc else None,
            "t_end": o.t_hi, "final_speed": o.final_speed, "max_speed": o.max_speed, "steps": o.steps,
            "flags": list(o.flags)}


def _atlas_csv(run) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    n = run.segments[0][1].dim if run.segments else 0
    w.writerow(["t"] + [f"x{i + 1}" for i in range(n)] + [f"v{i + 1}" for i in range(n)]
               + ["speed", "arclength", "patch"])
    t0 = s0 = 0.0
    for idx, tr in run.segments:
        for k in range(len(tr.t)):
            row = [tr.t[k] + t0, *tr.p[k], *tr.v[k], tr.l[k], tr.s[k] + s0]
            w.writerow([repr(float(x)) for x in row] + [idx])
        t0 += float(tr.t[-1])
        s0 += float(tr.s[-1])
    return buf.getvalue()


def cmd_probe(a) -> int:
    t = Target(a.input)
    kind = _kind(a)
    cfg = _cfg(a)
    s = t.structure
    p = _vector(a.point, s.dim, "point")
    v = _vector(a.dir, s.dim, "dir")
    if not np.all(np.isfinite(v)) or not np.any(v):
        raise CliError(EXIT_PARSE, "--dir must be a nonzero vector")
    if not bool(s.chart.contains(p[None])[0]):
        raise CliError(EXIT_CHART, f"point {a.point} lies outside the chart of {t.label}")
    want_csv = bool(a.format == "csv" or a.out)
    csv_text = None
    if t.atlas is not None:
        at = t.atlas
        X = at.immersion(0).map(p[None])[0]
        halves = []
        for sign in (1.0, -1.0):
            dX = at.ambient_velocity(0, p, sign * v)[0]
            run = at.integrate(kind, X, dX, cfg, record=want_csv and sign > 0)
            if want_csv and sign > 0:
                csv_text = _atlas_csv(run)
            halves.append(run.outcome)
        fwd, bwd = halves
    else:
        fwd, bwd = probe_two_sided(s.connection(kind), p, v, cfg, record=want_csv)
        if want_csv:
            csv_text = fwd.trajectory.to_csv()
    side, lead = leading(fwd, bwd)
    head = _summary(lead)
    report = {
        "input": t.label, "connection": kind, "point": p, "direction": v,
        "t_max": cfg.t_max, "speed_cap": cfg.speed_cap,
        "verdict": head["verdict"], "t_escape_lo": head["t_escape_lo"], "t_escape_hi": head["t_escape_hi"],
        "final_speed": head["final_speed"], "steps": head["steps"], "escape_side": side,
        "forward": _summary(fwd), "backward": _summary(bwd),
    }
    if a.format == "csv":
        _emit(csv_text, a.out)
        return 0
    if a.out:
        Path(a.out).write_text(csv_text)
    sys.stdout.write(dumps(report))
    return 0


def _atlas_batch(atlas, kind, samples, seed, cfg) -> dict:
    from .chart import make_rng
    X, V = atlas.random_tangent(make_rng(seed), samples)
    counts = {"Blowup": 0, "ExitedChart": 0, "ReachedHorizon": 0}
    esc, vmax = [], 0.0
    for x, u in zip(X, V):
        for sign in (1.0, -1.0):
            o = atlas.integrate(kind, x, sign * u, cfg, record=False).outcome
            counts[o.verdict] += 1
            vmax = max(vmax, o.max_speed)
            if o.verdict == BLOWUP:
                esc.append(o.t_hi)
    return {"connection": kind, "samples": samples, "probes": 2 * samples, "seed": seed, "counts": counts,
            "blowup_fraction": counts["Blowup"] / (2 * samples), "escape_min": min(esc) if esc else None,
            "escape_max": max(esc) if esc else None, "max_speed": vmax,
            "summary": "incompleteness found" if esc else "no incompleteness found"}


def cmd_probe_batch(a) -> int:
    t = Target(a.input)
    kind = _kind(a)
    cfg = _cfg(a)
    samples = a.samples or 1000
    if t.atlas is not None:
        rep = _atlas_batch(t.atlas, kind, samples, a.seed, cfg)
    else:
        region = t.region if t.entry is not None else None
        rep = probe_batch(t.structure, kind, samples, a.seed, cfg, region=region).to_dict()
    rep["input"] = t.label
    rep["t_max"] = cfg.t_max
    _emit(dumps(rep), a.out)
    return 0


def cmd_verify(a) -> int:
    t = Target(a.input)
    target = t.entry if t.entry is not None else t.obj
    rep = verify(target, seed=a.seed, quick=a.quick)
    _emit(dumps(rep.to_dict()), a.out)
    return 0 if rep.passed else EXIT_FAIL


def cmd_hypersurface(a) -> int:
    t = Target(a.input)
    im = t.immersion
    n = im.dim
    if a.action == "induce":
        p = _vector(a.point, n, "point") if a.point else t.region.reference_point()
        if not bool(im.chart.contains(p[None])[0]):
            raise CliError(EXIT_CHART, f"point {p.tolist()} lies outside the chart of {t.label}")
        ind = im.induce(p[None])
        st = im.structure()
        out = {"input": t.label, "point": p, "g": ind.g[0], "christoffel": ind.gamma[0],
               "shape_operator": ind.S[0], "tau": ind.tau[0], "conormal": ind.conormal[0],
               "transversal": ind.frame[0][:, -1], "cubic_form": st.cubic(p[None])[0],
               "weingarten_residual": ind.weingarten_residual}
    elif a.action == "residuals":
        P = t.region.low_discrepancy(a.samples or 20, seed=a.seed)
        out = {"input": t.label, "gauss": gauss_equation_residual(im, P)}
        try:
            out["conormal"] = conormal_duality_check(im, P)
        except ConormalDegenerate as exc:
            out["conormal"] = {"degenerate": True, "reason": str(exc)}
    else:
        count = a.samples or 10
        t_max = a.t_max if a.t_max is not None else 5.0
        worst = plane_sections(im, count, a.seed, t_max, t.atlas, _kind(a))
        out = {"input": t.label, "geodesics": count, "t_max": t_max, "seed": a.seed,
               "plane_section_residual": worst}
    _emit(dumps(out), a.out)
    return 0


# parser -------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser, probe: bool = False):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--out", default=None, help="write the report (or trajectory CSV) to this path")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    if probe:
        p.add_argument("--t-max", type=float, default=None)
        p.add_argument("--speed-cap", type=float, default=None)
        p.add_argument("--dual", action="store_true", help="use the dual connection")
        p.add_argument("--metric", action="store_true", help="use the Levi-Civita connection")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="statgeo", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("list-examples", help="gallery keys with one-line summaries")
    _common(p)
    p.set_defaults(func=cmd_list)
    p = sub.add_parser("describe", help="classification report")
    p.add_argument("input")
    _common(p)
    p.set_defaults(func=cmd_describe)
    p = sub.add_parser("probe", help="integrate one geodesic both ways")
    p.add_argument("input")
    p.add_argument("--point", required=True)
    p.add_argument("--dir", required=True)
    _common(p, probe=True)
    p.set_defaults(func=cmd_probe)
    p = sub.add_parser("probe-batch", help="random geodesics, both directions")
    p.add_argument("input")
    _common(p, probe=True)
    p.set_defaults(func=cmd_probe_batch)
    p = sub.add_parser("verify", help="invariant suite; exit 0 iff all checks pass")
    p.add_argument("input")
    p.add_argument("--quick", action="store_true", help="smaller sample counts")
    _common(p)
    p.set_defaults(func=cmd_verify)
    p = sub.add_parser("hypersurface", help="induced structure, Gauss residuals, plane sections")
    p.add_argument("action", choices=("induce", "residuals", "sections"))
    p.add_argument("input")
    p.add_argument("--point", default=None)
    _common(p, probe=True)
    p.set_defaults(func=cmd_hypersurface)
    return ap


def _join_vector_flags(argv: list[str]) -> list[str]:
    # "--dir -1,0" would otherwise read "-1,0" as an option
    out, it = [], iter(argv)
    for tok in it:
        if tok in ("--point", "--dir"):
            nxt = next(it, None)
            out.append(tok if nxt is None else f"{tok}={nxt}")
        else:
            out.append(tok)
    return out


def main(argv=None) -> int:
    ap = build_parser()
    argv = _join_vector_flags(list(sys.argv[1:] if argv is None else argv))
    try:
        a = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if a.format == "csv" and a.command != "probe":
        sys.stderr.write("statgeo: CSV output is only available for probe trajectories\n")
        return EXIT_PARSE
    try:
        with np.errstate(all="ignore"):
            return a.func(a)
    except CliError as exc:
        sys.stderr.write(f"statgeo: {exc}\n")
        return exc.code
    except ChartError as exc:
        sys.stderr.write(f"statgeo: {exc}\n")
        return EXIT_CHART
    except (FormatError, ParseError) as exc:
        sys.stderr.write(f"statgeo: cannot parse input: {exc}\n")
        return EXIT_PARSE
    except (ArithmeticError, np.linalg.LinAlgError, ImmersionError, TransversalityError, ValueError) as exc:
        sys.stderr.write(f"statgeo: math-domain failure: {exc}\n")
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
