"""Command-line front end.

Every command runs over an h-ladder, writes CSV reports and field dumps into
``--out`` and finishes with ``manifest.txt``.  Exit codes: 0 all verdicts as
expected, 1 a verdict failed, 2 inconclusive or a runtime/config error.

CSV columns per command:
  msh-check     point, margin, sigma_1..sigma_m        (msh_h<h>.csv)
                h, passed, worst_margin, points, creases (summary.csv)
  envelope      iteration, residual                    (residuals_h<h>.csv)
  exhaust       key, value                             (certificate_h<h>.csv)
  hyperconvex   h, worst_gap, worst_boundary_node, verdict
  bm-regular    h, gap, gap_tol, delta, verdict
  hessian-mass  h, total_mass, excluded, creases, error_estimate
  jensen        node, boundary, flagged, worst_drop    (scan_h<h>.csv)
  edwards       pair, node, gap, passed
  paper-examples  check, expected, observed, ok
"""
from __future__ import annotations

import argparse
import csv
import io
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .cone_algebra import ValidationError
from .envelopes import (EnvelopeProblem, SolverConfig, ball_mask, bm_regularity_test, build_exhaustion,
                        default_ball, default_samples, hyperconvexity_test, solve_envelope)
from .fields import msh_report
from .grid import ClosedForm, dump_field, eval_closed_form, make_domain
from .jensen import LPConfig, build_test_family, edwards_gap, jensen_boundary_scan
from .hessian_measure import hessian_density, mass_error_estimate

COMMANDS = ("msh-check", "envelope", "exhaust", "hyperconvex", "bm-regular", "hessian-mass",
            "jensen", "edwards", "paper-examples")
DOMAINS = {"disc": "disc", "ball": "ball", "hartogs": "hartogs_triangle", "hartogs_triangle": "hartogs_triangle",
           "polydisc": "polydisc", "reinhardt": "reinhardt", "box": "box"}
DEFAULT_H = {"disc": 0.05, "ball": 0.1, "hartogs_triangle": 0.04, "polydisc": 0.1, "reinhardt": 0.1, "box": 0.1}
EXTRA_KEYS = ("n", "k", "field", "recipe", "mode", "z0", "grid", "kind", "reach", "degree",
              "quadratics", "pairs", "base", "cone_tol")
STATUS = {"PASS": 0, "FAIL": 1, "FAIL-persistent": 1, "INCONCLUSIVE": 2}


class ConfigError(ValueError):
    pass


@dataclass
class Scenario:
    command: str
    domain: str = "disc"
    m: int = 1
    h: list = field(default_factory=list)
    seed: int = 0
    tol: float = 1e-10
    samples: int = 64
    out: Path = Path("hesslab_out")
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.domain not in DOMAINS:
            raise ConfigError(f"unknown domain {self.domain!r}; choose from {', '.join(DOMAINS)}")
        if any(b >= a for a, b in zip(self.h, self.h[1:])):
            raise ConfigError("h-ladder must be strictly decreasing")
        if any(x <= 0 for x in self.h):
            raise ConfigError("spacings must be positive")
        if self.m < 1:
            raise ConfigError("m must be >= 1")
        bad = set(self.extra) - set(EXTRA_KEYS)
        if bad:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(bad))}")

    @property
    def shape_id(self) -> str:
        return DOMAINS[self.domain]

    def get(self, key, default=None, cast=str):
        v = self.extra.get(key)
        return default if v is None else cast(v)

    def echo(self) -> dict:
        base = {"command": self.command, "domain": self.domain, "m": self.m,
                "h": ",".join(f"{x:g}" for x in self.h), "seed": self.seed, "tol": self.tol,
                "samples": self.samples, "out": str(self.out)}
        return {**base, **{k: str(v) for k, v in self.extra.items()}}


# --------------------------------------------------------------------------
# parsing


def read_config(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k.replace("-", "_")] = v
    return out


def parse_ladder(text: str) -> list:
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"bad h-ladder {text!r}") from None


def parse_field(spec: str) -> ClosedForm:
    """``name[:arg]``: sq_norm[:shift], phi_k:K, hartogs_exh, constant:C, abs_coord:J, log_abs_coord:J."""
    name, _, arg = spec.partition(":")
    try:
        if name == "sq_norm":
            return ClosedForm("sq_norm") if not arg else ClosedForm(
                "affine", {"terms": ((1.0, ClosedForm("sq_norm")),), "c": float(arg)})
        if name == "phi_k":
            return ClosedForm("phi_k", {"k": int(arg)})
        if name == "hartogs_exh":
            return ClosedForm("hartogs_exh")
        if name == "constant":
            return ClosedForm("constant", {"c": float(arg or 0.0)})
        if name in ("abs_coord", "log_abs_coord"):
            return ClosedForm(name, {"j": int(arg or 0)})
    except ValueError:
        raise ConfigError(f"bad field argument in {spec!r}") from None
    raise ConfigError(f"unknown field {spec!r}")


def parse_point(text: str) -> np.ndarray:
    try:
        return np.array([complex(x.strip().replace(" ", "")) for x in text.split(",")])
    except ValueError:
        raise ConfigError(f"bad point {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hesslab", description="Numerical laboratory for m-subharmonic functions.",
                                epilog=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--domain", help="disc, ball, hartogs, polydisc, reinhardt, box")
    p.add_argument("--m", type=int)
    p.add_argument("--h", help="comma separated, strictly decreasing spacings")
    p.add_argument("--seed", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--samples", type=int)
    p.add_argument("--out")
    p.add_argument("--config", help="flat key = value file; flags override it")
    p.add_argument("--grid", type=int, help="nodes across the domain diameter (sets h)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help=f"extra keys: {', '.join(EXTRA_KEYS)}")
    return p


def scenario_from_args(argv=None) -> Scenario:
    args = build_parser().parse_args(argv)
    cfg = read_config(args.config) if args.config else {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        cfg[k.strip()] = v.strip()
    for key in ("domain", "m", "h", "seed", "tol", "samples", "out", "grid"):
        v = getattr(args, key)
        if v is not None:
            cfg[key] = str(v)
    core = {k: cfg.pop(k) for k in ("domain", "m", "h", "seed", "tol", "samples", "out") if k in cfg}
    try:
        domain = core.get("domain", "disc")
        ladder = parse_ladder(core["h"]) if "h" in core else []
        s = Scenario(args.command, domain, int(core.get("m", 1)), ladder, int(core.get("seed", 0)),
                     float(core.get("tol", 1e-10)), int(core.get("samples", 64)),
                     Path(core.get("out", "hesslab_out")), cfg)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None
    return s


# --------------------------------------------------------------------------
# helpers


def _threads():
    raw = os.environ.get("HESSLAB_THREADS")
    if raw is None:
        return
    try:
        k = int(raw)
    except ValueError:
        raise ConfigError(f"HESSLAB_THREADS must be an integer, got {raw!r}") from None
    if k < 1:
        raise ConfigError("HESSLAB_THREADS must be >= 1")
    import numba
    if "NUMBA_THREADING_LAYER_PRIORITY" not in os.environ:
        # skip the tbb probe, which warns on old runtimes
        numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]
    numba.set_num_threads(min(k, numba.config.NUMBA_NUM_THREADS))


def write_atomic(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def to_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([f"{x:.12g}" if isinstance(x, float) else x for x in r])
    return buf.getvalue()


def _kind(s: Scenario, default_reduced: bool) -> str:
    kind = s.get("kind", "auto")
    if kind == "auto":
        from .grid import make_shape
        return "reinhardt" if default_reduced and make_shape(s.shape_id, _shape_params(s)).reinhardt else "cartesian"
    return kind


def _shape_params(s: Scenario) -> dict:
    sid = s.shape_id
    if sid == "reinhardt":
        return {"n": s.get("n", 3, int), "k": s.get("k", 2, int)}
    if sid in ("ball", "polydisc", "box"):
        return {"n": s.get("n", 2, int)}
    return {}


def _domain(s: Scenario, h: float, kind: str):
    reach = s.get("reach", 2 if kind == "reinhardt" else 1, int)
    return make_domain(s.shape_id, _shape_params(s), h=h, kind=kind, reach=reach)


def _ladder(s: Scenario) -> list:
    if s.h:
        return s.h
    grid = s.get("grid", None, int)
    if grid:
        from .grid import make_shape
        ext = make_shape(s.shape_id, _shape_params(s)).extent()
        return [max(hi - lo for lo, hi in ext) / grid]
    return [DEFAULT_H[s.shape_id]]


def _hname(h: float) -> str:
    return f"{h:g}".replace(".", "p")


def _cfg(s: Scenario) -> SolverConfig:
    return SolverConfig(tol=s.tol)


# --------------------------------------------------------------------------
# commands; each returns (status, files) where files maps name -> text


def cmd_msh_check(s: Scenario):
    cf = parse_field(s.get("field", "sq_norm"))
    files, rows, status = {}, [], 0
    for h in _ladder(s):
        d = _domain(s, h, _kind(s, cf.invariant))
        rep = msh_report(eval_closed_form(cf, d), s.m, tol=s.get("cone_tol", 1e-9, float), seed=s.seed)
        files[f"msh_h{_hname(h)}.csv"] = rep.to_csv()
        rows.append((h, int(rep.passed), rep.worst_margin, rep.n_points, rep.n_crease))
        status = max(status, 0 if rep.passed else 1)
    files["summary.csv"] = to_csv(["h", "passed", "worst_margin", "points", "creases"], rows)
    return status, files


def cmd_envelope(s: Scenario):
    mode = s.get("mode", "extremal")
    files, status = {}, 0
    for h in _ladder(s):
        d = _domain(s, h, _kind(s, False))
        dual = default_samples(d.n, s.m, s.seed, s.samples)
        if mode == "extremal":
            c, r = default_ball(d)
            p = EnvelopeProblem(d, s.m, "extremal", E=ball_mask(d, c, r), dual_samples=dual, seed=s.seed)
        else:
            f = eval_closed_form(parse_field(s.get("field", "sq_norm")), d)
            p = EnvelopeProblem(d, s.m, mode, f=f, dual_samples=dual, seed=s.seed)
        res = solve_envelope(p, _cfg(s))
        tag = _hname(h)
        files[f"residuals_h{tag}.csv"] = to_csv(["iteration", "residual"], enumerate(res.residual_history, 1))
        files[f"certificate_h{tag}.json"] = res.certificate_text()
        files[f"field_h{tag}.txt"] = dump_field(res.u)
        status = max(status, 2 if not res.converged else (0 if res.msh_certificate["passed"] else 1))
    return status, files


def _flatten(prefix, obj, out):
    if isinstance(obj, dict):
        for k, v in obj.items():
            _flatten(f"{prefix}{k}.", v, out)
    else:
        out.append((prefix[:-1], obj if isinstance(obj, (int, float, str)) else str(obj)))


def cmd_exhaust(s: Scenario):
    recipe = s.get("recipe", "bounded_mass")
    files, status = {}, 0
    for h in _ladder(s):
        d = _domain(s, h, "cartesian")
        base = s.get("base")
        base = eval_closed_form(parse_field(base), d) if base else None
        ex = build_exhaustion(d, s.m, recipe, _cfg(s), base=base, samples=s.samples, seed=s.seed)
        rows = []
        _flatten("", ex.certificate, rows)
        tag = _hname(h)
        files[f"certificate_h{tag}.csv"] = to_csv(["key", "value"], rows)
        files[f"field_h{tag}.txt"] = dump_field(ex.field)
        status = max(status, 0 if ex.certificate["passed"] else 1)
    return status, files


def cmd_hyperconvex(s: Scenario):
    ladder = _ladder(s)
    h = ladder[0]
    if len(ladder) > 1 and abs(ladder[1] - h / 2) > 1e-12:
        raise ConfigError("hyperconvex refines by halving; give h or h,h/2")
    d = _domain(s, h, _kind(s, True))
    v = hyperconvexity_test(d, s.m, cfg=_cfg(s), samples=s.samples, seed=s.seed)
    rows = [(hh, g, node, v.verdict) for hh, g, node in
            zip(v.details.get("h", []), v.details.get("max_gap", []), v.details.get("worst_node", []))]
    files = {"hyperconvex.csv": to_csv(["h", "worst_gap", "worst_boundary_node", "verdict"], rows)}
    return STATUS[v.verdict], files


def _default_z0(d):
    bnd = np.flatnonzero(d.boundary.ravel())
    pts = d.points(d.multi_index(bnd))
    axis = np.all(np.abs(pts[:, 1:]) < 1e-12, axis=1) & (np.abs(pts[:, 0].imag) < 1e-12) & (pts[:, 0].real > 0)
    if not axis.any():
        raise ConfigError("no boundary node on the positive first axis; pass z0")
    return pts[axis][np.argmin(pts[axis, 0].real)]


def cmd_bm_regular(s: Scenario):
    rows, status = [], 0
    for h in _ladder(s):
        # a barrier at one point is not torus invariant, so reduced grids are opt-in only
        d = _domain(s, h, _kind(s, False))
        z0 = parse_point(s.extra["z0"]) if "z0" in s.extra else _default_z0(d)
        v = bm_regularity_test(d, s.m, z0, _cfg(s), samples=s.samples, seed=s.seed)
        rows.append((h, v.details.get("gap", float("nan")), v.details.get("gap_tol", float("nan")),
                     v.details.get("delta", float("nan")), v.verdict))
        status = max(status, STATUS[v.verdict])
    return status, {"bm_regular.csv": to_csv(["h", "gap", "gap_tol", "delta", "verdict"], rows)}


def cmd_hessian_mass(s: Scenario):
    cf = parse_field(s.get("field", "sq_norm"))
    rows, footer = [], ""
    for h in _ladder(s):
        d = _domain(s, h, _kind(s, cf.invariant))
        md = hessian_density(eval_closed_form(cf, d), s.m)
        rows.append((h, md.total_mass, md.excluded, md.creases, mass_error_estimate(md)))
        footer = md.footer()
    text = to_csv(["h", "total_mass", "excluded", "creases", "error_estimate"], rows) + footer + "\n"
    return 0, {"hessian_mass.csv": text}


def cmd_jensen(s: Scenario):
    files, status = {}, 0
    for h in _ladder(s):
        d = _domain(s, h, "cartesian")
        fam = build_test_family(d, s.m, s.get("quadratics", 6, int), s.seed,
                                holomorphic_degree=s.get("degree", 2, int))
        rep = jensen_boundary_scan(d, s.m, fam)
        files[f"scan_h{_hname(h)}.csv"] = rep.to_csv(d)
        if np.any(d.interior.ravel()[rep.flagged]):
            status = 1
    return status, files


def cmd_edwards(s: Scenario):
    h = _ladder(s)[0]
    d = _domain(s, h, "cartesian")
    total = 20
    fam = build_test_family(d, s.m, max(1, total - 2 - 4 * d.n), s.seed)
    lp = LPConfig()
    rng = np.random.default_rng(s.seed)
    nodes = np.flatnonzero(d.masked.ravel())
    rows, status = [], 0
    for i in range(s.get("pairs", 10, int)):
        z = int(rng.choice(nodes))
        vals = np.full(d.dims, np.nan)
        vals[d.masked] = rng.normal(size=int(d.masked.sum()))
        gap = edwards_gap(z, fam.members[0].with_values(vals), fam, lp)
        ok = gap <= lp.duality_tol
        rows.append((i, z, gap, int(ok)))
        status = max(status, 0 if ok else 1)
    return status, {"edwards.csv": to_csv(["pair", "node", "gap", "passed"], rows)}


def cmd_paper_examples(s: Scenario):
    rows = []

    def check(name, expected, observed):
        rows.append((name, expected, observed, int(expected == observed)))

    d = make_domain("reinhardt", {"n": 3, "k": 2}, h=0.1, kind="reinhardt")
    phi = eval_closed_form(ClosedForm("phi_k", {"k": 2}), d)
    for m in (1, 2, 3):
        check(f"phi_2 msh m={m}", "pass" if m < 3 else "fail", "pass" if msh_report(phi, m).passed else "fail")
    hd = make_domain("hartogs_triangle", h=0.05)
    # log|z2| is harmonic; its stencil truncation error is below 1e-7 at this spacing
    rep = msh_report(eval_closed_form(ClosedForm("hartogs_exh"), hd), 1, tol=1e-6, detail=False)
    check("hartogs_exh msh m=1", "pass", "pass" if rep.passed else "fail")
    hr = make_domain("hartogs_triangle", h=0.04, kind="reinhardt", reach=2)
    for m, want in ((1, "PASS"), (2, "FAIL-persistent")):
        check(f"hartogs hyperconvex m={m}", want, hyperconvexity_test(hr, m, seed=s.seed).verdict)
    # radial terms: the moduli grid carries the whole construction
    bd = make_domain("ball", {"n": 2}, h=0.05, kind="reinhardt", reach=2)
    base = eval_closed_form(parse_field("sq_norm:-1"), bd)
    ex = build_exhaustion(bd, 2, "bounded_mass", base=base, seed=s.seed)
    c = ex.certificate
    check("bounded_mass sup|psi| <= 1", "yes", "yes" if c["sup_abs"] <= 1.0 else "no")
    check("bounded_mass mass <= 1.05", "yes", "yes" if c["mass"] <= 1.05 else "no")
    check("bounded_mass e0 membership", "yes", "yes" if c["e0"]["passed"] else "no")
    status = 0 if all(r[3] for r in rows) else 1
    return status, {"paper_examples.csv": to_csv(["check", "expected", "observed", "ok"], rows)}


HANDLERS = {"msh-check": cmd_msh_check, "envelope": cmd_envelope, "exhaust": cmd_exhaust,
            "hyperconvex": cmd_hyperconvex, "bm-regular": cmd_bm_regular, "hessian-mass": cmd_hessian_mass,
            "jensen": cmd_jensen, "edwards": cmd_edwards, "paper-examples": cmd_paper_examples}


def run_scenario(s: Scenario) -> int:
    t0 = time.perf_counter()
    status, files = HANDLERS[s.command](s)
    try:
        for name, text in sorted(files.items()):
            write_atomic(s.out / name, text)
        manifest = {**s.echo(), "status": status, "version": __version__,
                    "wall_time_s": f"{time.perf_counter() - t0:.3f}", "files": ",".join(sorted(files))}
        write_atomic(s.out / "manifest.txt", "".join(f"{k} = {v}\n" for k, v in manifest.items()))
    except OSError as e:
        print(f"hesslab: cannot write output: {e}", file=sys.stderr)
        return 2
    return status


def main(argv=None) -> int:
    try:
        _threads()
        s = scenario_from_args(argv)
    except (ConfigError, OSError) as e:
        print(f"hesslab: config error: {e}", file=sys.stderr)
        return 2
    try:
        status = run_scenario(s)
    except (ConfigError, ValidationError, ValueError, RuntimeError) as e:
        print(f"hesslab: {s.command} failed: {e}", file=sys.stderr)
        return 2
    print(f"{s.command}: exit {status} (reports in {s.out})")
    return status


if __name__ == "__main__":
    sys.exit(main())
