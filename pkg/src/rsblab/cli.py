"""``rsblab`` command-line front end.

Exit codes: 0 all checks pass, 1 a check failed, 2 invalid configuration,
3 resource cap exceeded.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import montecarlo, spectral, verify
from .config import COMMANDS, RunConfig, load_config, resolved_text
from .core import derive_seed, sample_disorder, save_realization
from .errors import (ConfigError, InsufficientEnsemble, ResourceCapError, SchemaError,
                     ShapeMismatchError, SimulationError, ZeroTransverseField)
from .pathintegral import compile_model, exact_classical_sum, trotter_gap
from .stats import binning_analysis

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_CAP = 0, 1, 2, 3


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def write_csv(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_json(path: Path, doc):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not JSON serializable: {type(o)}")


def emit_plot_data(scan: verify.ScanResult, path) -> list[Path]:
    """Whitespace-delimited (axis, estimate, error) file plus a log-log companion when fitted."""
    if not scan.points:
        raise ValueError("empty scan")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# target: {scan.target or 'unknown'}", f"# columns: {scan.axis} estimate error"]
    lines += [f"{a!r} {e!r} {s!r}" for a, e, s, _ in scan.points]
    path.write_text("\n".join(lines) + "\n")
    out = [path]
    companion = path.with_name(path.stem + "_loglog" + path.suffix)
    if scan.fit is None:
        if companion.exists():
            companion.unlink()
        print(f"warning: {scan.note or 'no fit'}; log-log file not written", file=sys.stderr)
        return out
    f = scan.fit
    lines = [f"# log-log fit: slope {f['slope']!r} intercept {f['intercept']!r} residual {f['residual']!r}",
             f"# columns: log_{scan.axis} log_estimate log_error fit"]
    for a, e, s, _ in scan.points:
        la = math.log(a)
        lines.append(f"{la!r} {math.log(e)!r} {s / e!r} {f['slope'] * la + f['intercept']!r}")
    companion.write_text("\n".join(lines) + "\n")
    out.append(companion)
    return out


class Run:
    """Output layout and report collection for one command."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.out = Path(cfg.out_dir)
        self.reports: list[verify.CheckReport] = []
        self.info: dict = {}

    def dir(self, name: str) -> Path:
        d = self.out / name
        d.mkdir(parents=True, exist_ok=True)
        return d

    def realization(self, r: int, params=None, seed: int | None = None, tag: str = ""):
        params = params or self.cfg.params
        seed = derive_seed(self.cfg.master_seed, 0, r) if seed is None else seed
        dis = sample_disorder(params, seed)
        if self.cfg.save_disorder:
            save_realization(dis, self.dir("disorder") / f"{tag}r{r:04d}.json")
        return dis

    def add(self, report: verify.CheckReport):
        self.reports.append(report)

    def finish(self) -> int:
        ok = all(r.passed for r in self.reports)
        doc = {"command": self.cfg.command, "pass": ok,
               "checks": [r.to_dict() for r in self.reports], "info": self.info}
        write_json(self.dir("reports") / f"{self.cfg.command}.json", doc)
        for r in self.reports:
            print(f"{'PASS' if r.passed else 'FAIL'} {r.check_id}: worst {r.worst_violation:.3e} "
                  f"(tol {r.tolerance:.1e}, {r.instances} instances)")
        return EXIT_OK if ok else EXIT_FAIL


ED_TOLERANCES = {"closed_form_logZ": "tolerance", "closed_form_S3": "tolerance",
                 "duhamel_identity": "fd_tolerance", "magnitude": "tolerance", "s2_mean": "tolerance",
                 "s2_diagonal": "tolerance", "overlap2_mean": "tolerance", "harris": "tolerance",
                 "factorized_duhamel_R1": 1e-8, "factorized_duhamel_R3": 1e-8}
# Reported, not gating: at finite size the transverse field correlates S^2 on different sites.
ED_INFORMATIONAL = ("s2_offdiagonal", "overlap2_second")


def cmd_ed_check(run: Run):
    cfg, o = run.cfg, run.cfg.options
    params = cfg.params.with_(M=None)
    worst: dict[str, float] = {}
    for r in range(cfg.ensemble_count):
        dis = run.realization(r, params)
        for k, v in verify.ed_check_instance(params, dis, cfg.ed_cap, o["fd_step"]).items():
            worst[k] = max(worst.get(k, 0.0), v)
    rows = []
    for k, v in worst.items():
        tol = ED_TOLERANCES.get(k)
        rows.append((k, v, "" if tol is None else (o[tol] if isinstance(tol, str) else tol)))
        if tol is not None:
            run.add(verify.CheckReport(f"ed.{k}", cfg.ensemble_count, v,
                                       o[tol] if isinstance(tol, str) else tol))
    run.info["informational"] = {k: worst[k] for k in ED_INFORMATIONAL if k in worst}
    write_csv(run.dir("results") / "ed_check.csv", ["check", "worst", "tolerance"], rows)


def cmd_trotter_scan(run: Run):
    cfg, o = run.cfg, run.cfg.options
    params = cfg.params.with_(M=max(o["M_list"]))
    rows, order_violations, ratio_violations = [], 0, 0
    M_sorted = sorted(o["M_list"])
    for r in range(cfg.ensemble_count):
        dis = run.realization(r, params)
        prev = None
        for pt in trotter_gap(params, dis, M_sorted, cfg.enum_cap, cfg.ed_cap):
            ratio = ""
            if prev is not None:
                order_violations += pt.rel_error >= prev.rel_error
                ratio = prev.rel_error / pt.rel_error if pt.rel_error > 0 else math.inf
                if pt.M == 2 * prev.M:
                    ratio_violations += not (o["ratio_min"] <= ratio <= o["ratio_max"])
            rows.append((r, pt.M, pt.logZ_quantum, pt.log_weight + pt.logZ_classical, pt.rel_error, ratio))
            prev = pt
    write_csv(run.dir("results") / "trotter.csv",
              ["realization", "M", "logZ_quantum", "logCW_plus_logZcl", "rel_error", "halving_ratio"], rows)
    # worst_violation counts offending steps
    run.add(verify.CheckReport("trotter.strictly_decreasing", cfg.ensemble_count, order_violations, 0))
    run.add(verify.CheckReport("trotter.halving_ratio", cfg.ensemble_count, ratio_violations, 0,
                               {"range": [o["ratio_min"], o["ratio_max"]]}))


def cmd_mc_run(run: Run):
    cfg, o = run.cfg, run.cfg.options
    params = cfg.params
    rows, worst_z, compared = [], 0.0, 0
    for r in range(cfg.ensemble_count):
        dis = run.realization(r, params)
        model = compile_model(params, dis)
        res = montecarlo.run_experiment(params, dis, n_replicas=o["replicas"], sweeps=o["sweeps"],
                                        thermalization=o["thermalization"], measure_interval=o["interval"],
                                        master_seed=cfg.master_seed, realization_index=r,
                                        order=o["order"], model=model, worldlines=o["worldlines"])
        montecarlo.write_series(res, run.dir("results"), prefix=f"mc_r{r:04d}")
        est = {name: binning_analysis(s.samples) for name, s in res.series.items()}
        exact = {}
        if o["compare_exact"] and model.n_sites <= cfg.enum_cap:
            sums = exact_classical_sum(model, cfg.enum_cap)
            exact["mu3"] = float(sums.marginals.mean() / 2.0)
            if o["replicas"] >= 2:
                exact["rho3"] = verify.exact_replica_moments(model, 3, cfg.enum_cap)["rho"]
            compared += 1
        for name, b in est.items():
            z = ""
            if name in exact:
                z = abs(b.mean - exact[name]) / b.error if b.error > 0 else (0.0 if b.mean == exact[name] else math.inf)
                worst_z = max(worst_z, z)
            rows.append((r, name, b.mean, b.error, b.bin_width, exact.get(name, ""), z))
    write_csv(run.dir("results") / "mc_summary.csv",
              ["realization", "observable", "estimate", "error", "bin_width", "exact", "z"], rows)
    if compared:
        run.add(verify.CheckReport("mc.exact_agreement", compared, worst_z, o["sigmas"]))


def cmd_fkg_check(run: Run):
    cfg, o = run.cfg, run.cfg.options
    merged: dict[str, verify.CheckReport] = {}

    def add(rep):
        merged[rep.check_id] = merged[rep.check_id].merge(rep) if rep.check_id in merged else rep

    for r in range(cfg.ensemble_count):
        dis = run.realization(r, cfg.params)
        model = compile_model(cfg.params, dis)
        if "truncated_pair" in o["modes"]:
            add(verify.check_truncated_pairs(model, o["tolerance"], cfg.enum_cap))
        if "field_monotonicity" in o["modes"]:
            add(verify.check_field_monotonicity_classical(model, o["fd_tolerance"], cap=cfg.enum_cap))
            if o["quantum"]:
                add(verify.check_field_monotonicity_quantum(cfg.params, dis, o["fd_tolerance"],
                                                            cap=cfg.ed_cap))
    for rep in merged.values():
        run.add(rep)


def cmd_bound_check(run: Run):
    cfg, o = run.cfg, run.cfg.options
    four, harris = None, None
    for r in range(cfg.ensemble_count):
        dis = run.realization(r, cfg.params)
        model = compile_model(cfg.params, dis)
        rep = verify.check_four_point_bound(model, o["tolerance"], cfg.enum_cap)
        four = rep if four is None else four.merge(rep)
        if o["harris"]:
            p = cfg.params.with_(M=None, b1=0.0, b3=0.0)
            n = p.n_sites
            spec = spectral.solve(p, dis, cap=cfg.ed_cap)
            ops = {"m1": spectral.magnetization(n, 1, cfg.ed_cap), "m3": spectral.magnetization(n, 3, cfg.ed_cap)}
            rep = verify.check_harris(spec, ops, o["harris_slack"], commuting=("m3",) if p.J1 == 0 else ())
            worst = rep.worst_violation
            if 4 ** n <= cfg.ed_cap:
                for i in (1, 3):
                    dg = verify.duhamel_vs_gibbs_overlap(p, dis, i, cfg.ed_cap)
                    worst = max(worst, dg.duhamel - dg.gibbs, dg.gibbs - dg.duhamel - dg.commutator_term)
            rep = verify.CheckReport("harris_sandwich", 1, max(0.0, worst), o["harris_slack"])
            harris = rep if harris is None else harris.merge(rep)
    run.add(four)
    if harris is not None:
        run.add(harris)


def cmd_gg_check(run: Run):
    cfg, o = run.cfg, run.cfg.options
    n, comp = int(o["n"]), int(o["component"])
    L_list = o["L_list"] or (cfg.params.L,)
    rows, results = [], []
    for L in L_list:
        p = cfg.params.with_(L=L)
        if cfg.save_disorder:
            for r in range(cfg.ensemble_count):
                run.realization(r, p, tag=f"L{L}_")
        res = verify.gg_residual(p, cfg.ensemble_count, n=n, component=comp, f=o["f"],
                                 backend=o["backend"], master_seed=cfg.master_seed, workers=cfg.workers,
                                 min_ensemble=o["min_ensemble"],
                                 mc_options={"sweeps": o["sweeps"], "thermalization": o["thermalization"]})
        results.append(res)
        rows.append((L, n, comp, o["f"], res.residual, res.error, res.n_realizations))
    write_csv(run.dir("results") / "gg.csv",
              ["L", "n", "component", "f", "residual", "error", "n_realizations"], rows)
    if o["f"] == "one":
        worst = max(abs(x.residual) for x in results)
        run.add(verify.CheckReport("gg.relabeling_identity", len(results), worst, o["trivial_tolerance"]))
    elif len(results) >= 2:
        first, last = results[0], results[-1]
        near_zero = all(abs(x.residual) <= 2.0 * x.error for x in results)
        shrinks = abs(last.residual) < abs(first.residual)
        run.add(verify.CheckReport("gg.residual_trend", len(results), 0.0 if (near_zero or shrinks) else 1.0,
                                   0.0, {"L": list(L_list)}))
    else:
        run.info["note"] = "single size: residual reported without a trend test"


def cmd_scan(run: Run):
    cfg, o = run.cfg, run.cfg.options
    target, comp = o["target"], int(o["component"])
    if cfg.save_disorder:
        for L in o["L_list"]:
            p = cfg.params.with_(L=L)
            for r in range(cfg.ensemble_count):
                run.realization(r, p, seed=derive_seed(cfg.master_seed, 0, L, r), tag=f"L{L}_")
    scan = verify.variance_scan(cfg.params, o["L_list"], cfg.ensemble_count, target, component=comp,
                                backend=o["backend"], master_seed=cfg.master_seed, workers=cfg.workers,
                                cap=cfg.ed_cap)
    scans = {"": scan}
    if o["scale"] != "none":
        N = scan.axis_values ** cfg.params.d
        scans[f"_{o['scale']}"] = scan.scaled(N if o["scale"] == "volume" else np.sqrt(N))
    for suffix, s in scans.items():
        stem = f"scan_{target}{suffix}"
        write_csv(run.dir("results") / f"{stem}.csv", ["axis", "estimate", "error", "n_samples"], s.points)
        write_json(run.dir("reports") / f"{stem}_fit.json",
                   {"axis": s.axis, "target": target, "fit": s.fit, "note": s.note,
                    "caveat": "finite-size trends cannot distinguish slow convergence from an exceptional coupling point"})
        emit_plot_data(s, run.dir("results") / f"{stem}.dat")
    tested = scans[f"_{o['scale']}"] if o["scale"] != "none" else scan
    expect = o["expect"]
    if expect == "zero":
        run.add(verify.CheckReport("scan.zero", len(tested.points), float(np.max(np.abs(tested.estimates))),
                                   o["zero_tolerance"]))
    elif expect == "decreasing":
        rho, pval = verify.spearman_trend(tested) if len(tested.points) > 1 else (float("nan"), float("nan"))
        run.add(verify.CheckReport("scan.decreasing", len(tested.points),
                                   0.0 if verify.decreasing_trend(tested) else 1.0, 0.0,
                                   {"spearman": rho, "p_value": pval}))
    elif expect == "bounded":
        slope, se = verify.positive_trend_slope(tested)
        run.add(verify.CheckReport("scan.bounded", len(tested.points), max(0.0, slope - 2.0 * se), 0.0,
                                   {"slope": slope, "slope_error": se}))


HANDLERS = {"ed-check": cmd_ed_check, "trotter-scan": cmd_trotter_scan, "mc-run": cmd_mc_run,
            "fkg-check": cmd_fkg_check, "bound-check": cmd_bound_check, "gg-check": cmd_gg_check,
            "scan": cmd_scan}


def run(cfg: RunConfig) -> int:
    """Execute a validated config; returns the exit status."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved").write_text(resolved_text(cfg))
    job = Run(cfg)
    HANDLERS[cfg.command](job)
    return job.finish()


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rsblab", description="Finite-size checks for the random-field "
                                 "quantum Ising model and its path-integral representation.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="INI configuration file")
    ap.add_argument("--seed", type=int, help="master seed (overrides [ensemble] master_seed)")
    ap.add_argument("--out", help="output directory (overrides [output] dir)")
    ap.add_argument("--workers", type=int, help="worker processes (overrides [backend] workers)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.command, seed=args.seed, out_dir=args.out, workers=args.workers)
        return run(cfg)
    except ResourceCapError as exc:
        print(f"resource cap: {exc}", file=sys.stderr)
        return EXIT_CAP
    except (ConfigError, SchemaError, ShapeMismatchError, InsufficientEnsemble, ZeroTransverseField) as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationError as exc:
        print(f"simulation failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
