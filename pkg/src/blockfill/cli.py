"""blockfill command line: gen, fit, eval, diag, sweep, verify.

Exit codes: 0 success, 1 usage error, 2 algorithmic failure, 3 I/O error.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np

from . import io, verify
from .datagen import (compute_kappas, make_example, make_instance_exp, make_instance_poly,
                      make_instance_random, sample_labeled)
from .erm import DiagnosticsTrace, ErmConfig, Objective, SolverConfig, erm_double_stage, fit_factorized
from .errors import BlockfillError, InvalidInput
from .partition import partition_report, well_tempered_partition
from .risk import risk, risk_report, sigma_r_embed, spectral_event_check
from .rng import derive_seed

EXIT_OK, EXIT_USAGE, EXIT_ALGO, EXIT_IO = 0, 1, 2, 3

SWEEP_FIELDS = ["trial", "r_cut", "n", "seed", "status", "R_train", "R_test", "r_hat", "sigma_r",
                "good_spectral_event", "sigma_lower", "sigma_next_upper", "gap", "tail2", "tail1", "error"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as err:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from err


def report_schema() -> dict:
    text = resources.files("blockfill").joinpath("schemas/risk_report.schema.json").read_text()
    return json.loads(text)


def _config_record(command, args, skip=("func",)):
    body = {k: v for k, v in sorted(vars(args).items()) if k not in skip}
    body["command"] = command
    return {"config": body, "config_hash": io.content_hash(body)}


def _write_timing(out, seconds):
    io.write_json(Path(out) / "timing.json", {"wall_time": seconds})


def _solver(args, seed=None):
    return SolverConfig(max_sweeps=args.max_sweeps, rel_tol=args.rel_tol, ridge=args.ridge,
                        restarts=args.restarts, seed=args.seed if seed is None else seed)


# gen

def cmd_gen(args):
    t0 = time.perf_counter()
    adv = None
    if args.decay == "example":
        inst, adv = make_example(args.example, n=args.block, gamma=args.gamma)
        inst.seed = args.seed
    else:
        for name in ("n", "m", "n1", "m1", "d"):
            if getattr(args, name) is None:
                raise UsageError(f"--{name} is required for --decay {args.decay}")
        if args.decay == "poly":
            inst = make_instance_poly(args.n, args.m, args.n1, args.m1, args.d, args.gamma, args.C, args.seed)
        elif args.decay == "exp":
            inst = make_instance_exp(args.n, args.m, args.n1, args.m1, args.d, args.gamma, args.C, args.seed)
        else:
            inst = make_instance_random(args.n, args.m, args.n1, args.m1, args.d, args.seed)
    rec = _config_record("gen", args, skip=("func", "out"))
    inst.meta = dict(inst.meta, config_hash=rec["config_hash"])
    checks = inst.validate()
    if not all(checks.values()):
        raise BlockfillError(f"generated instance fails its invariants: {checks}", stage="gen")
    io.save_instance(inst, args.out, adversarial=adv)
    io.write_json(Path(args.out) / "kappas.json", compute_kappas(inst).as_dict())
    io.write_json(Path(args.out) / "config.json", rec)
    _write_timing(args.out, time.perf_counter() - t0)
    print(Path(args.out) / "manifest.json")
    return EXIT_OK


# fit

def _pinned_pair(args, inst_path):
    if args.pin_stage1 is None:
        return None
    if args.pin_stage1 == "adversarial":
        pair = io.load_adversarial(inst_path)
        if pair is None:
            raise InvalidInput("instance bundle has no adversarial pair to pin")
        return pair
    return io.load_pair_files(args.pin_stage1)


def _erm_config(args, inst, r_cut, p=None, seed=None):
    return ErmConfig(p=args.p if p is None else p, r_cut=r_cut, sigma_cut=args.sigma_cut, lam=args.lam,
                     mu=args.mu, n1=args.n1, n2=args.n2, n3=args.n3, n4=args.n4, exact=args.exact,
                     solver=_solver(args, seed))


def _fit_single(inst, args, r, seed):
    if args.exact:
        obj = Objective.population(inst.density("train"), inst.H)
    else:
        s = sample_labeled(inst, "train", args.n1, derive_seed(seed, "single"))
        obj = Objective.from_samples(inst.n, inst.m, s.x, s.y, s.z)
    fit = fit_factorized(obj, r, _solver(args, derive_seed(seed, "single-init")),
                         init_scale=inst.B, label="single")
    trace = DiagnosticsTrace(stage_losses={"single": fit.history},
                             restart_objectives={"single": fit.restart_objectives})
    return fit.pair, trace


def cmd_fit(args):
    t0 = time.perf_counter()
    inst = io.load_instance(args.instance)
    if args.mode == "single":
        if args.r is None:
            raise UsageError("--r is required for --mode single")
        pair, trace = _fit_single(inst, args, args.r, args.seed)
    else:
        if args.r_cut is None or args.p is None:
            raise UsageError("--p and --r-cut are required for --mode double")
        cfg = _erm_config(args, inst, args.r_cut)
        pair, trace = erm_double_stage(inst, cfg, stage1_pair=_pinned_pair(args, args.instance))
    rec = _config_record("fit", args, skip=("func", "out"))
    body = dict(trace.as_dict(timing=False), mode=args.mode, config_hash=rec["config_hash"],
                final_train_loss=risk(pair, inst, "train"))
    with io.atomic_dir(args.out) as tmp:
        io.save_pair_files(tmp, pair)
        io.write_json(tmp / "trace.json", body)
        io.write_json(tmp / "config.json", rec)
    io.write_json(Path(args.out) / "timing.json",
                  {"wall_time": time.perf_counter() - t0, "stages": trace.wall_time})
    print(Path(args.out) / "trace.json")
    return EXIT_OK


# eval

def cmd_eval(args):
    inst = io.load_instance(args.instance)
    pair = io.load_pair_files(args.embeddings)
    k = args.k if args.k is not None else min(pair.r, inst.d)
    r = args.r if args.r is not None else min(pair.r, inst.d)
    rep = risk_report(pair, inst, k, r, alpha=args.alpha, r_hat=args.r_hat,
                      sigma_cut=args.sigma_cut, r_cut=args.r_cut).as_dict()
    rec = _config_record("eval", args, skip=("func", "out"))
    rep["config_hash"] = rec["config_hash"]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_json(out / "report.json", rep)
    io.write_json(out / "report.schema.json", report_schema())
    print(out / "report.json")
    return EXIT_OK


# diag

def _diag_svd(args):
    res = verify.criterion_1(seed=args.seed, trials=args.trials, eta=args.eta)
    return dict(res["detail"], passed=res["passed"])


def _diag_balance(args):
    res = verify.criterion_2(seed=args.seed, trials=args.trials)
    return dict(res["detail"], passed=res["passed"])


def _diag_partition(args):
    if args.instance is not None:
        sig = io.load_instance(args.instance).sigma_star()
        source = "instance"
    elif args.matrix is not None:
        sig = np.linalg.svd(io.read_matrix(args.matrix), compute_uv=False)
        source = "matrix"
    else:
        raise UsageError("diag partition needs --instance or --matrix")
    sig = np.asarray(sig, dtype=float)
    out = {"source": source, "s": args.s, "spectrum": sig.tolist()}
    if not 2 <= args.s <= len(sig) or sig[args.s - 1] <= 0:
        return dict(out, feasible=False, passed=False,
                    reason=f"need 2 <= s <= {len(sig)} with sigma_s > 0")
    sigma = args.sigma if args.sigma is not None else math.sqrt(sig[0] * sig[args.s - 1])
    try:
        part = well_tempered_partition(sig, args.s, sigma)
    except InvalidInput as err:
        return dict(out, sigma=sigma, feasible=False, passed=False, reason=str(err))
    rep = partition_report(part, sig)
    return dict(out, sigma=sigma, feasible=True, passed=all(rep.values()), pivots=list(part.pivots),
                delta=part.delta, mu=part.mu, mu_literal=part.mu_literal, m_space=part.m_space,
                m_spec=part.m_spec, checks=rep)


def cmd_diag(args):
    t0 = time.perf_counter()
    body = {"svd-pert": _diag_svd, "partition": _diag_partition, "balance": _diag_balance}[args.check](args)
    rec = _config_record("diag", args, skip=("func", "out"))
    body["config_hash"] = rec["config_hash"]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_json(out / f"diag-{args.check}.json", body)
    _write_timing(out, time.perf_counter() - t0)
    print(f"{args.check}: {'pass' if body.get('passed') else 'fail'}")
    return EXIT_OK


# sweep

def _sweep_trial(task):
    inst, opts, trial, r_cut, n_samples, seed = task
    row = {"trial": trial, "r_cut": r_cut, "n": n_samples, "seed": seed}
    args = argparse.Namespace(**opts)
    args.n1 = args.n2 = args.n3 = args.n4 = n_samples
    try:
        if args.mode == "single":
            pair, trace = _fit_single(inst, args, r_cut, seed)
            r_hat = r_cut
        else:
            p = args.p if args.p is not None else min(r_cut * r_cut, min(inst.n, inst.m))
            pair, trace = erm_double_stage(inst, _erm_config(args, inst, r_cut, p=max(p, r_cut), seed=seed))
            r_hat = trace.r_hat
        row.update(status="ok", R_train=risk(pair, inst, "train"), R_test=risk(pair, inst, "test"),
                   r_hat=r_hat, sigma_r=sigma_r_embed(pair, inst, min(r_hat, pair.r)))
        ev = spectral_event_check(r_hat, args.sigma_cut, r_cut, inst.sigma_star())
        row["good_spectral_event"] = ev["holds"]
        row.update(ev["detail"])
    except BlockfillError as err:
        row.update(status=f"failed:{err.stage or 'unknown'}", error=str(err))
    return row


def _worker_count(requested):
    cap = os.environ.get("BLOCKFILL_THREADS")
    n = requested if requested is not None else 1
    if cap:
        try:
            n = min(n, max(int(cap), 1))
        except ValueError as err:
            raise UsageError(f"BLOCKFILL_THREADS must be an integer, got {cap!r}") from err
    return max(n, 1)


def cmd_sweep(args):
    t0 = time.perf_counter()
    inst = io.load_instance(args.instance)
    if not args.r_cut or not args.n_samples or args.seeds < 1:
        raise UsageError("sweep grid is empty")
    opts = {k: v for k, v in vars(args).items() if k != "func"}
    tasks = []
    trial = 0
    for rc in args.r_cut:
        for ns in args.n_samples:
            for _ in range(args.seeds):
                tasks.append((inst, opts, trial, rc, ns, derive_seed(args.seed, trial)))
                trial += 1
    workers = _worker_count(args.workers)
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_trial, tasks))
    else:
        rows = [_sweep_trial(t) for t in tasks]
    rows.sort(key=lambda r: r["trial"])
    rec = _config_record("sweep", args, skip=("func", "out", "workers"))
    with io.atomic_dir(args.out) as tmp:
        io.write_table(tmp / "sweep.csv", rows, SWEEP_FIELDS)
        io.write_json(tmp / "config.json", rec)
    _write_timing(args.out, time.perf_counter() - t0)
    failed = sum(not r["status"] == "ok" for r in rows)
    print(f"{len(rows)} trials, {failed} failed -> {Path(args.out) / 'sweep.csv'}")
    return EXIT_OK


# verify

def cmd_verify(args):
    try:
        names = verify.resolve_suites(args.suite)
    except KeyError as err:
        raise UsageError(f"unknown suite {err.args[0]!r}") from None
    results, timing = {}, {}
    for name in names:
        results[name], timing[name] = verify.run_suite(name)
        print(f"{name}: {'PASS' if results[name]['passed'] else 'FAIL'}")
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        io.write_json(out / "verify.json", results)
        io.write_json(out / "timing.json", timing)
    return EXIT_OK if all(r["passed"] for r in results.values()) else EXIT_ALGO


# parser

def _add_solver_flags(p):
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--restarts", type=int, default=5)
    p.add_argument("--max-sweeps", type=int, default=200)
    p.add_argument("--rel-tol", type=float, default=1e-10)
    p.add_argument("--ridge", type=float, default=1e-9)


def _add_erm_flags(p):
    p.add_argument("--p", type=int, help="stage-1 rank (double mode)")
    p.add_argument("--sigma-cut", type=float, default=1e-3)
    p.add_argument("--lam", type=float, help="distillation weight (default r_cut^4)")
    p.add_argument("--mu", type=float, help="covariance ridge (default B^2/n1)")
    for name in ("n1", "n2", "n3", "n4"):
        p.add_argument(f"--{name}", type=int, default=20000)
    p.add_argument("--exact", action="store_true", help="population losses instead of samples")


def build_parser():
    ap = _Parser(prog="blockfill", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate an instance bundle")
    g.add_argument("--decay", choices=["poly", "exp", "random", "example"], required=True)
    g.add_argument("--gamma", type=float, default=1.0)
    g.add_argument("--C", type=float, default=1.0)
    for name in ("n", "m", "n1", "m1", "d"):
        g.add_argument(f"--{name}", type=int)
    g.add_argument("--example", type=int, choices=[1, 2, 3], default=1)
    g.add_argument("--block", type=int, default=10, help="per-block size for examples")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    f = sub.add_parser("fit", help="fit embeddings on an instance")
    f.add_argument("--instance", required=True)
    f.add_argument("--mode", choices=["single", "double"], required=True)
    f.add_argument("--r", type=int, help="rank (single mode)")
    f.add_argument("--r-cut", type=int)
    f.add_argument("--pin-stage1", help="'adversarial' or a directory with F.mtx/G.mtx")
    _add_erm_flags(f)
    _add_solver_flags(f)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fit)

    e = sub.add_parser("eval", help="risk report for embeddings")
    e.add_argument("--instance", required=True)
    e.add_argument("--embeddings", required=True, help="directory with F.mtx/G.mtx")
    e.add_argument("--k", type=int)
    e.add_argument("--r", type=int)
    e.add_argument("--alpha", type=float, default=2.0)
    e.add_argument("--r-hat", type=int)
    e.add_argument("--sigma-cut", type=float)
    e.add_argument("--r-cut", type=int)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("diag", help="numerical diagnostics")
    d.add_argument("check", choices=["svd-pert", "partition", "balance"])
    d.add_argument("--trials", type=int, default=200)
    d.add_argument("--eta", type=float, default=0.5)
    d.add_argument("--s", type=int, default=2)
    d.add_argument("--sigma", type=float)
    d.add_argument("--instance")
    d.add_argument("--matrix")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_diag)

    s = sub.add_parser("sweep", help="grid of fits, one CSV row per trial")
    s.add_argument("--instance", required=True)
    s.add_argument("--mode", choices=["single", "double"], default="double")
    s.add_argument("--r-cut", type=_int_list, required=True)
    s.add_argument("--n-samples", type=_int_list, default=[20000])
    s.add_argument("--seeds", type=int, default=1, help="trials per grid point")
    s.add_argument("--workers", type=int)
    _add_erm_flags(s)
    _add_solver_flags(s)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("verify", help="run acceptance property suites")
    v.add_argument("--suite", default="all", help="'all' or comma-separated criterion numbers")
    v.add_argument("--out")
    v.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as err:
        print(f"blockfill: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except InvalidInput as err:
        print(f"blockfill: invalid input: {err}", file=sys.stderr)
        return EXIT_USAGE
    except BlockfillError as err:
        print(f"blockfill: failed: {err}", file=sys.stderr)
        return EXIT_ALGO
    except OSError as err:
        print(f"blockfill: i/o error: {err}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
