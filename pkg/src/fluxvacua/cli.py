"""Command line front end: every subcommand writes a CSV plus ``<out>.manifest.json``.

Exit status: 0 ok, 1 module error, 2 configuration error.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import platform
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__, blackhole, config, critsolve, density, izhc, lattice
from .errors import ConfigError, FluxVacuaError, InputError

EXIT_OK, EXIT_MODULE, EXIT_CONFIG = 0, 1, 2


# ---------------------------------------------------------------- output helpers


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return int(v)
    return v


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(v) for v in r])
    return path


def read_csv(path):
    path = Path(path)
    try:
        with path.open(encoding="utf-8", newline="") as fh:
            rows = list(csv.DictReader(fh))
            header = rows[0].keys() if rows else None
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    if not rows or header is None:
        raise InputError(f"{path} has no data rows")
    return rows


def sibling(out, suffix):
    out = Path(out)
    return out.with_name(out.stem + suffix + out.suffix)


def manifest_path(out):
    out = Path(out)
    return out.with_name(out.name + ".manifest.json")


def _versions():
    import pydantic
    import scipy
    import sympy
    import yaml

    return {
        "fluxvacua": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "sympy": sympy.__version__,
        "pydantic": pydantic.__version__,
        "pyyaml": yaml.__version__,
    }


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else repr(v)
    if isinstance(v, complex):
        return [v.real, v.imag]
    return v


def write_manifest(cfg, outputs, status, summary=None, error=None):
    data = {
        "command": cfg.command,
        "config": config.dump(cfg),
        "config_hash": config.config_hash(cfg),
        "seed": cfg.seed,
        "workers": cfg.workers,
        "versions": _versions(),
        "outputs": sorted(Path(p).name for p in outputs),
        "status": status,
        "summary": _jsonable(summary or {}),
        "error": _jsonable(error),
    }
    path = manifest_path(cfg.out)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _error_payload(exc):
    payload = {"type": type(exc).__name__, "message": str(exc)}
    for attr in ("point", "estimate", "error", "gradnorm", "eigenvalues", "trace", "field", "line"):
        if getattr(exc, attr, None) is not None:
            payload[attr] = getattr(exc, attr)
    return payload


# ---------------------------------------------------------------- runners


def run_lattice_scan(cfg):
    body = cfg.body.build(cfg.seed)
    f = cfg.observable.build(body.dim, cfg.seed)
    series = lattice.radial_sum_series(body, f, config.grid_values(cfg.L), cfg.workers)
    c = lattice.leading_coefficient(body, f, cfg.leading_method, cfg.leading_samples, cfg.seed)
    n = body.dim
    rows = []
    for r in series:
        lead = c.value * r.L ** (n / 2)
        rows.append((r.L, r.count, r.sum, lead, r.sum - lead))
    out = write_csv(cfg.out, ["L", "count", "sum", "leading_term", "residual"], rows)
    summary = {
        "leading_coefficient": c.value,
        "leading_stderr": c.stderr,
        "remainder_bound_exponent": 0.5 * (n - 1) if f.sharp else lattice.remainder_bound_exponent(n),
        "sharp_observable": f.sharp,
    }
    if cfg.fit:
        try:
            fit = lattice.remainder_exponent_fit([r[0] for r in rows], [r[2] for r in rows], c.value, n)
            summary["fit"] = {"beta": fit.beta, "stderr": fit.stderr, "band": list(fit.band),
                              "n_points": fit.n_points, "n_dropped": fit.n_dropped}
        except FluxVacuaError as exc:
            summary["fit"] = {"skipped": str(exc)}
    return [out], summary


def run_vacua_count(cfg):
    family = cfg.family.build()
    model = cfg.model.build(cfg.seed)
    region = cfg.region.build()
    bound = cfg.bound.build(cfg.seed) if cfg.bound is not None else None
    opts = {"grid_density": cfg.grid_density, "seed": cfg.seed}
    Ls = config.grid_values(cfg.L)
    censuses = critsolve.census_series(family, model, Ls, region, bound=bound, bound_L=cfg.bound_L,
                                       workers=cfg.workers, **opts)
    last = censuses[-1]
    m, n = family.m, family.n
    header = [f"G{i}" for i in range(n)] + [f"re_z{j}" for j in range(m)] + [f"im_z{j}" for j in range(m)]
    header += ["absdet", "degenerate", "boundary"]
    entries = sorted(last.vacua + last.degenerate_points,
                     key=lambda e: (e[0], tuple(e[1].Z.real), tuple(e[1].Z.imag)))
    rows = [list(G) + list(cp.Z.real) + list(cp.Z.imag) + [cp.absdet, cp.degenerate, cp.on_boundary]
            for G, cp in entries]
    out = write_csv(cfg.out, header, rows)
    integral = None
    if cfg.density is not None and not region.is_empty:
        integral = critsolve.density_integral(family, model, region, cfg.density.samples, cfg.density.seed,
                                              workers=cfg.workers, grid_density=cfg.grid_density)
    elif cfg.density is not None:
        integral = (0.0, 0.0)
    srows = []
    for c in censuses:
        N = c.totals["count"]
        row = [c.L, N, c.fluxes_scanned, c.degenerate_skipped, c.boundary_flagged, c.certified]
        if integral is not None:
            pred = c.L ** (n / 2) * integral[0]
            row += [pred, N / pred if pred else float("nan")]
        srows.append(row)
    sheader = ["L", "N", "fluxes_scanned", "degenerate_skipped", "boundary_flagged", "certified"]
    if integral is not None:
        sheader += ["prediction", "ratio"]
    summ = write_csv(sibling(cfg.out, ".summary"), sheader, srows)
    summary = {
        "certified": last.certified,
        "continuum_fluxes": [list(G) for G in last.continuum_fluxes],
        "note": last.note,
        "signature": list(family.signature),
    }
    if integral is not None:
        summary["density_integral"] = {"value": integral[0], "stderr": integral[1]}
    return [out, summ], summary


def run_density_compare(cfg):
    ens = cfg.ensemble.build()
    fns = {"gaussian": density.pf_density_gaussian, "indicator": density.pf_density_indicator}
    ests = [fns[f](ens, cfg.samples, cfg.seed, cfg.workers) for f in cfg.forms]
    out = write_csv(cfg.out, ["form", "value", "stderr", "samples"],
                    [(e.form, e.value, e.stderr, e.samples) for e in ests])
    summary = {"ensemble": ens.describe(), "defining_residual": ens.defining_residual(seed=cfg.seed)}
    if len(ests) == 2:
        a, b = ests
        summary["z_score"] = (a.value - b.value) / math.hypot(a.stderr, b.stderr)
    return [out], summary


def run_izhc_eval(cfg):
    ens = cfg.ensemble.build()
    icfg = izhc.IzhcConfig(m=cfg.m, eps=tuple(cfg.eps), eps_prime=tuple(cfg.eps_prime), n_haar=cfg.haar,
                           seed=cfg.seed, xi_max=cfg.xi_max, panel_nodes=cfg.panel_nodes, tol=cfg.tol,
                           workers=cfg.workers)
    res = izhc.izhc_density(ens, icfg)
    rows = [("trace", e, ep, v, "") for e, ep, v in res.regularization_trace]
    rows += [("eps-limit", 0.0, ep, v, "") for ep, v in zip(icfg.eps_prime, res.eps_prime_limits)]
    rows.append(("extrapolated", 0.0, 0.0, res.value, res.haar_stderr))
    out = write_csv(cfg.out, ["kind", "eps", "eps_prime", "value", "stderr"], rows)
    drows = [(r.direct.real, r.direct.imag, r.factored.real, r.factored.imag, r.displayed.real,
              r.displayed.imag, r.factored_deviation, r.displayed_deviation) for r in res.denominator]
    den = write_csv(sibling(cfg.out, ".denominator"),
                    ["direct_re", "direct_im", "factored_re", "factored_im", "displayed_re", "displayed_im",
                     "factored_deviation", "displayed_deviation"], drows)
    summary = {"value": res.value, "haar_stderr": res.haar_stderr, "raw_value": res.raw_value,
               "normalization": res.normalization,
               "max_factored_deviation": max(r.factored_deviation for r in res.denominator),
               "max_displayed_deviation": max(r.displayed_deviation for r in res.denominator)}
    return [out, den], summary


def run_bh_moment(cfg):
    rows, counts = [], {}
    for b3 in cfg.b3:
        ac = blackhole.AttractorConfig(b3, cfg.volWP, cfg.form, formal=cfg.formal)
        mom = blackhole.bh_density(ac, cfg.method, cfg.samples, cfg.seed)
        rows.append((b3, cfg.form, cfg.method, mom.value, mom.stderr, blackhole.closed_form(b3, cfg.form)))
        if cfg.L is not None:
            est = blackhole.bh_count_estimate(ac, cfg.L)
            counts[str(b3)] = {"count": est.count, "log_count": est.log_count,
                               "density_coefficient": est.density_coefficient, "overflow": est.overflow}
    out = write_csv(cfg.out, ["b3", "form", "method", "value", "stderr", "closed_form"], rows)
    return [out], ({"count_estimates": counts} if counts else {})


def _need(rows, cols, kind):
    missing = [c for c in cols if c not in rows[0]]
    if missing:
        raise InputError(f"plot kind {kind!r} needs columns {missing}")


def emit_plotdata(csv_path, kind, out):
    rows = read_csv(csv_path)
    if kind == "loglog-residual":
        _need(rows, ["L", "residual"], kind)
        data = [(math.log(float(r["L"])), math.log(abs(float(r["residual"]))))
                for r in rows if float(r["residual"]) != 0]
        return write_csv(out, ["log_L", "log_abs_residual"], data)
    if kind == "ratio-vs-L":
        _need(rows, ["L", "ratio"], kind)
        return write_csv(out, ["L", "ratio"], [(float(r["L"]), float(r["ratio"])) for r in rows])
    if kind == "trace":
        if "form" in rows[0]:
            _need(rows, ["form", "value", "stderr"], kind)
            data = []
            for r in rows:
                v, s = float(r["value"]), float(r["stderr"])
                data.append((r["form"], v, s, v - s, v + s))
            return write_csv(out, ["form", "value", "stderr", "lower", "upper"], data)
        _need(rows, ["kind", "eps", "eps_prime", "value"], kind)
        data = [(float(r["eps"]), float(r["eps_prime"]), float(r["value"])) for r in rows if r["kind"] == "trace"]
        return write_csv(out, ["eps", "eps_prime", "value"], data)
    raise InputError(f"unknown plot kind {kind!r}")


def run_plotdata(cfg):
    return [emit_plotdata(cfg.csv, cfg.kind, cfg.out)], {"source": Path(cfg.csv).name, "kind": cfg.kind}


RUNNERS = {
    "lattice-scan": run_lattice_scan,
    "vacua-count": run_vacua_count,
    "density-compare": run_density_compare,
    "izhc-eval": run_izhc_eval,
    "bh-moment": run_bh_moment,
    "plotdata": run_plotdata,
}


def run(cfg):
    """Execute a validated experiment; returns the exit status."""
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            outputs, summary = RUNNERS[cfg.command](cfg)
    except ConfigError as exc:
        write_manifest(cfg, [], "error", error=_error_payload(exc))
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # any failure inside a module is reported in the manifest
        write_manifest(cfg, [], "error", error=_error_payload(exc))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODULE
    write_manifest(cfg, outputs, "ok", summary)
    return EXIT_OK


# ---------------------------------------------------------------- argument parsing


def parse_grid(text):
    """'25', '1,2,4', 'log:1e2:1e6:20' or 'lin:1:10:10'."""
    text = text.strip()
    try:
        if text.startswith(("log:", "lin:")):
            kind, a, b, n = text.split(":")
            return {"start": float(a), "stop": float(b), "num": int(n),
                    "spacing": "log" if kind == "log" else "linear"}
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise ConfigError(f"cannot parse grid {text!r}", field="L") from None
    return vals[0] if len(vals) == 1 else vals


def parse_region(text, m):
    """'ball:R' or 'box:re_lo,re_hi,im_lo,im_hi'."""
    kind, _, rest = text.partition(":")
    try:
        if kind == "ball":
            return {"kind": "ball", "radius": float(rest), "m": m}
        if kind == "box":
            a, b, c, d = (float(v) for v in rest.split(","))
            return {"kind": "box", "re": [a, b], "im": [c, d], "m": m}
    except ValueError:
        pass
    raise ConfigError(f"cannot parse region {text!r}; use ball:R or box:re_lo,re_hi,im_lo,im_hi", field="region")


def _part(path, model_cls):
    """Load and validate one object file, with line diagnostics against that file."""
    data, node = config.load_part(path)
    config.validate_part(model_cls, data, node, str(path))
    return data


def _common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)


def build_parser():
    ap = argparse.ArgumentParser(prog="fluxvacua", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment described by a YAML file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="override the output path")
    p.add_argument("--workers", type=int)

    p = sub.add_parser("lattice-scan", help="radial lattice sums over star-shaped shells")
    p.add_argument("--body", required=True, help="YAML body file")
    p.add_argument("--observable", help="YAML observable file (default: constant 1)")
    p.add_argument("--L-grid", dest="L", required=True, help="25 | 1,2,4 | log:1e2:1e6:20")
    p.add_argument("--leading-method", default="quadrature", choices=["quadrature", "monte-carlo"])
    p.add_argument("--no-fit", action="store_true")
    _common(p)

    p = sub.add_parser("vacua-count", help="vacuum census over an integer flux family")
    p.add_argument("--family", required=True)
    p.add_argument("--model", help="YAML model file (default: flat)")
    p.add_argument("--L", required=True)
    p.add_argument("--region", required=True, help="ball:R or box:re_lo,re_hi,im_lo,im_hi")
    p.add_argument("--grid-density", type=float, default=2.0)
    p.add_argument("--density-samples", type=int, help="also estimate the density integral")
    _common(p)

    p = sub.add_parser("density-compare", help="Gaussian vs indicator critical-point density")
    p.add_argument("--ensemble", required=True)
    p.add_argument("--samples", type=int, default=100_000)
    _common(p)

    p = sub.add_parser("izhc-eval", help="eigenvalue/unitary-group density cross-check")
    p.add_argument("--ensemble", required=True)
    p.add_argument("--m", type=int, required=True, choices=[1, 2])
    p.add_argument("--schedule", default=",".join(str(v) for v in izhc.DEFAULT_SCHEDULE),
                   help="comma-separated decreasing regularizers used for eps and eps'")
    p.add_argument("--haar", type=int, default=32)
    _common(p)

    p = sub.add_parser("bh-moment", help="black-hole attractor moments")
    p.add_argument("--b3", required=True, help="integer or comma-separated list")
    p.add_argument("--form", default="gaussian", choices=list(blackhole.FORMS))
    p.add_argument("--method", default="closed-form", choices=list(blackhole.METHODS))
    p.add_argument("--samples", type=int, default=1_000_000)
    p.add_argument("--volWP", type=float, default=1.0)
    p.add_argument("--L", type=float)
    p.add_argument("--formal", action="store_true", help="allow odd or zero b3")
    _common(p)

    p = sub.add_parser("plotdata", help="columnar plot data from a result CSV")
    p.add_argument("--csv", required=True)
    p.add_argument("--kind", required=True, choices=["loglog-residual", "ratio-vs-L", "trace"])
    p.add_argument("--out", required=True)
    return ap


def config_from_args(args):
    cmd = args.command
    if cmd == "run":
        cfg = config.load(args.config)
        updates = {k: v for k, v in (("out", args.out), ("workers", args.workers)) if v is not None}
        return cfg.model_copy(update=updates) if updates else cfg
    data = {"command": cmd, "out": args.out}
    if cmd != "plotdata":
        data.update(seed=args.seed, workers=args.workers)
    if cmd == "lattice-scan":
        data.update(body=_part(args.body, config.BodySpec), L=parse_grid(args.L),
                    leading_method=args.leading_method, fit=not args.no_fit)
        if args.observable:
            data["observable"] = _part(args.observable, config.ObservableSpec)
    elif cmd == "vacua-count":
        fam = _part(args.family, config.FamilySpec)
        data.update(family=fam, L=parse_grid(args.L), region=parse_region(args.region, fam.get("m", 1)),
                    grid_density=args.grid_density)
        if args.model:
            data["model"] = _part(args.model, config.ModelSpec)
        if args.density_samples:
            data["density"] = {"samples": args.density_samples, "seed": args.seed}
    elif cmd == "density-compare":
        data.update(ensemble=_part(args.ensemble, config.EnsembleSpec), samples=args.samples)
    elif cmd == "izhc-eval":
        sched = parse_grid(args.schedule)
        sched = sched if isinstance(sched, list) else [sched]
        data.update(ensemble=_part(args.ensemble, config.EnsembleSpec), m=args.m, eps=sched, eps_prime=sched,
                    haar=args.haar)
    elif cmd == "bh-moment":
        try:
            b3 = [int(v) for v in args.b3.split(",")]
        except ValueError:
            raise ConfigError(f"cannot parse b3 {args.b3!r}", field="b3") from None
        data.update(b3=b3, form=args.form, method=args.method, samples=args.samples, volWP=args.volWP,
                    formal=args.formal)
        if args.L is not None:
            data["L"] = args.L
    elif cmd == "plotdata":
        data.update(csv=args.csv, kind=args.kind)
    return config.validate(data, source=f"{cmd} arguments")


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FluxVacuaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODULE
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
