"""Command-line driver: ``homlab <experiment> [--config PATH] [--seed S] [--threads N] [--deterministic] [--out DIR]``.

Exit status: 0 success, 1 validation or I/O error, 2 numerical failure.
Every output file name carries the config hash; a manifest JSON records the
config echo, version, seeds and wall time.
"""

import argparse
import csv
import json
import math
import os
import subprocess
import sys
import time

import numpy as np

from . import __version__
from .config import EXPERIMENTS, ConfigError, load_config, parse_config
from .fields import build_partition, sample_field
from .io import field_hash, save_solution, write_field
from .radii import radius_report
from .statistics.montecarlo import default_threads, seeds
from .twoscale import IdentityViolation

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2
DIRECT_RETRY_MAX_CELLS = 1 << 16


class NumericalFailure(RuntimeError):
    pass


def _plain(v):
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.ndarray):
        return _plain(v.tolist())
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        f = float(v)
        return f if math.isfinite(f) else None
    return v


def _dump(obj):
    return json.dumps(_plain(obj), sort_keys=True, indent=1) + "\n"


def version_string():
    here = os.path.dirname(os.path.abspath(__file__))
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=here, capture_output=True,
                             text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


class Run:
    def __init__(self, cfg, threads):
        self.cfg = cfg
        self.threads = threads
        self.hash = cfg.hash()
        self.files = []
        self.seeds = []
        self.notes = []

    def path(self, stem, ext):
        name = f"{self.cfg.experiment}-{self.hash}-{stem}.{ext}" if stem else f"{self.cfg.experiment}-{self.hash}.{ext}"
        p = os.path.join(self.cfg.out, name)
        self.files.append(name)
        return p

    def write_text(self, stem, ext, text):
        with open(self.path(stem, ext), "w", encoding="utf-8") as fh:
            fh.write(text)

    def write_jsonl(self, stem, records):
        self.write_text(stem, "jsonl", "".join(json.dumps(_plain(r), sort_keys=True) + "\n" for r in records))

    def write_csv(self, stem, rows):
        with open(self.path(stem, "csv"), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            for row in rows:
                w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])


# ---------------------------------------------------------------------------
# experiments


def _correctors_with_retry(fld, tol, run):
    from .solver import compute_correctors

    sol = compute_correctors(fld, tol)
    if sol.converged:
        return sol
    if fld.grid.n_cells <= DIRECT_RETRY_MAX_CELLS:
        run.notes.append(f"seed {fld.seed}: iterative solve missed tol, retried with sparse LU")
        sol = compute_correctors(fld, tol, method="direct")
        if sol.converged:
            return sol
    raise NumericalFailure(f"corrector solve did not converge for seed {fld.seed} (residuals {sol.residuals})")


def exp_gen(run):
    cfg = run.cfg
    recs = []
    for n, s in enumerate(seeds(cfg.seed, cfg.N)):
        fld = sample_field(cfg.model, cfg.grid, s)
        write_field(run.path(f"{n:04d}", "dghm"), fld)
        recs.append({"index": n, "seed": s, "sha256": field_hash(fld), "model_id": fld.model_id})
        run.seeds.append(s)
    run.write_jsonl("fields", recs)
    return {"fields": len(recs)}


def exp_corrector(run):
    from .solver import voigt_reuss

    cfg = run.cfg
    recs = []
    for n, s in enumerate(seeds(cfg.seed, cfg.N)):
        fld = sample_field(cfg.model, cfg.grid, s)
        sol = _correctors_with_retry(fld, cfg.tol, run)
        save_solution(run.path(f"{n:04d}", "npz"), sol, deterministic=cfg.deterministic)
        vr = voigt_reuss(fld, sol.a_hom)
        recs.append({
            "index": n, "seed": s, "field_sha256": sol.field_hash, "a_hom": sol.a_hom,
            "residuals": sol.residuals, "iterations": [st.iterations for st in sol.stats],
            "sigma_residual": sol.sigma_residual, "flags": sol.flags,
            "voigt_reuss_gaps": [vr["lower_gap"], vr["upper_gap"]],
        })
        run.seeds.append(s)
    run.write_jsonl("realizations", recs)
    A = np.array([r["a_hom"] for r in recs])
    summary = {"a_hom_mean": A.mean(axis=0), "a_hom_se": A.std(axis=0, ddof=1) / math.sqrt(len(A)) if len(A) > 1 else None,
               "N": len(A)}
    run.write_text("summary", "json", _dump(summary))
    return summary


def _K(cfg):
    from .fields import empirical_K

    if cfg.K == "empirical":
        return empirical_K((sample_field(cfg.model, cfg.grid, s) for s in seeds(cfg.seed, cfg.N)), cfg.model.p, cfg.model.q)
    return float(cfg.K)


def exp_radii(run):
    from .statistics.montecarlo import run_realizations

    cfg = run.cfg
    K = _K(cfg)
    seed_list = seeds(cfg.seed, cfg.N)

    def one(s):
        fld = sample_field(cfg.model, cfg.grid, s)
        sol = _correctors_with_retry(fld, cfg.tol, run)
        return radius_report(fld, sol, cfg.model.p, cfg.model.q, K, cfg.C0, cfg.M0)

    reps = run_realizations(one, seed_list, run.threads)
    run.seeds.extend(seed_list)
    run.write_jsonl("reports", [json.loads(r.to_json()) for r in reps])
    summary = {"K": K, "r_e": [r.r_e for r in reps], "r_star": [r.r_star for r in reps],
               "truncated": int(sum(r.truncated for r in reps)), "recheck_ok": all(r.recheck() for r in reps)}
    run.write_text("summary", "json", _dump(summary))
    return summary


def exp_tails(run):
    from .statistics.tails import monte_carlo_radii

    cfg = run.cfg
    K = "empirical" if cfg.K == "empirical" else float(cfg.K)
    re_t, rs_t, reps, info = monte_carlo_radii(cfg.model, cfg.grid, cfg.N, cfg.C0, cfg.M0, K, cfg.seed, cfg.beta,
                                               cfg.tol, run.threads)
    run.seeds.extend(seeds(cfg.seed, cfg.N))
    if info["non_converged"]:
        raise NumericalFailure(f"{info['non_converged']} realizations did not converge")
    run.write_jsonl("reports", [json.loads(r.to_json()) for r in reps])
    run.write_csv("survival-r_e", re_t.csv_rows())
    run.write_csv("survival-r_star", rs_t.csv_rows())
    summary = {"r_e": re_t.summary(), "r_star": rs_t.summary(), "info": info,
               "note": "predicted orders use the measured hole-filling exponent; informational only"}
    run.write_text("summary", "json", _dump(summary))
    return summary


def exp_twoscale(run):
    from .twoscale import run_twoscale

    cfg = run.cfg
    res = run_twoscale(cfg.model, cfg.deltas, cfg.N, cfg.seed, cfg.tol, cfg.cells_per_period, cfg.R, cfg.grid.d,
                       beta=cfg.beta, threads=run.threads, macro_length=cfg.macro_length)
    run.seeds.extend(seeds(cfg.seed, cfg.N))
    run.write_csv("errors", res.csv_rows())
    summary = res.summary()
    run.write_text("summary", "json", _dump(summary))
    if res.flags["aborted"] and len(res.flags["aborted"]) == len(res.points):
        raise NumericalFailure("every two-scale point failed to converge")
    return summary


def exp_sgcheck(run):
    from .statistics.spectral_gap import spectral_gap_check

    cfg = run.cfg
    part = build_partition(cfg.grid, cfg.beta)
    out = {f: spectral_gap_check(cfg.model, cfg.grid, f, cfg.N, part, cfg.seed) for f in cfg.functionals}
    run.write_text("", "json", _dump({"checks": out, "passed": all(v["passed"] for v in out.values())}))
    return {f: {"ratio": v["ratio"], "se": v["se"], "passed": v["passed"]} for f, v in out.items()}


def exp_verify(run, inject=False):
    from .verify import run_verify

    rep = run_verify(run.cfg.seed, inject_sigma_fault=inject)
    seconds = rep.pop("seconds")
    run.notes.append(f"verify wall time {seconds:.2f}s")
    run.write_text("report", "json", _dump(rep))
    if not rep["passed"]:
        raise NumericalFailure("verify checks failed: " + ", ".join(rep["failed"]))
    return {"passed": True}


EXPERIMENT_FUNCS = {
    "gen": exp_gen, "corrector": exp_corrector, "radii": exp_radii, "tails": exp_tails,
    "twoscale": exp_twoscale, "sgcheck": exp_sgcheck, "verify": exp_verify,
}


# ---------------------------------------------------------------------------
# entry point


def build_parser():
    ap = argparse.ArgumentParser(prog="homlab", description="Stochastic homogenization experiments.")
    sub = ap.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name)
        p.add_argument("--config", metavar="PATH")
        p.add_argument("--seed", type=int, metavar="U64")
        p.add_argument("--threads", type=int, metavar="N")
        p.add_argument("--deterministic", action="store_true")
        p.add_argument("--out", metavar="DIR")
        if name == "verify":
            p.add_argument("--inject-sigma-fault", action="store_true", help="pollute sigma to test the checks")
    return ap


def _error(cls, msg, out_dir=None, code=EXIT_VALIDATION):
    rec = {"status": "error", "class": cls, "message": str(msg), "exit_code": code}
    sys.stderr.write(json.dumps(rec, sort_keys=True) + "\n")
    if out_dir:
        try:
            with open(os.path.join(out_dir, "error.json"), "w", encoding="utf-8") as fh:
                fh.write(_dump(rec))
        except OSError:
            pass
    return code


def run_experiment(args):
    overrides = {"seed": args.seed, "out": args.out, "threads": args.threads}
    if args.deterministic:
        overrides["deterministic"] = "true"
    try:
        if args.config:
            cfg = load_config(args.config, args.experiment, overrides)
        else:
            cfg = parse_config("", args.experiment, overrides)
    except ConfigError as exc:
        return _error("validation", exc)
    try:
        os.makedirs(cfg.out, exist_ok=True)
        probe = os.path.join(cfg.out, ".homlab-write-test")
        with open(probe, "w") as fh:
            fh.write("")
        os.remove(probe)
    except OSError as exc:
        return _error("io", f"output directory {cfg.out!r} is not writable: {exc}")
    # results are always reduced in seed order, so the thread count never changes outputs
    threads = cfg.threads or default_threads()
    run = Run(cfg, threads)
    t0 = time.time()
    status, code, result = "ok", EXIT_OK, None
    try:
        fn = EXPERIMENT_FUNCS[cfg.experiment]
        result = fn(run, args.inject_sigma_fault) if cfg.experiment == "verify" else fn(run)
    except (NumericalFailure, IdentityViolation) as exc:
        status, code = "numerical_failure", EXIT_NUMERICAL
        _error("numerical", exc, cfg.out, EXIT_NUMERICAL)
    except ValueError as exc:
        return _error("validation", exc, cfg.out)
    except OSError as exc:
        return _error("io", exc, cfg.out)
    manifest = {
        "config": cfg.echo(),
        "config_hash": run.hash,
        "version": version_string(),
        "experiment": cfg.experiment,
        "status": status,
        "exit_code": code,
        "seeds": run.seeds,
        "threads": threads,
        "files": run.files,
        "notes": run.notes,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(t0)),
        "wall_time": time.time() - t0,
        "result": result,
    }
    try:
        with open(os.path.join(cfg.out, f"manifest-{cfg.experiment}-{run.hash}.json"), "w", encoding="utf-8") as fh:
            fh.write(_dump(manifest))
    except OSError as exc:
        return _error("io", exc)
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    return run_experiment(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
