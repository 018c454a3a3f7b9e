"""Command-line front end: ``map-lab {run,verify,oracle,encode,embed,lowerbound,bench}``.

Exit codes: 0 success, 1 input error, 2 verification failure (a violated
inequality or a broken algorithm invariant), 3 resource limit.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from importlib import resources
from multiprocessing import Pool

import numpy as np

from .core import (InputError, Instance, InvariantError, ResourceError, StarMetric,
                   dump_instance, load_instance, write_trace_csv)
from .embedding import mst_embed
from .integrator import IntegratorConfig, StepUnderflow
from .offline import (FAMILIES, adversary_nonconvex, competitive_ratio, dp_oracle,
                      random_instance, random_offline_path, stay_put_baseline)
from .potentials import TOL_INEQ, check_inequalities, realized_view
from .reductions import encode_kserver, encode_mts, flip_monotonicity, nonneg_penalty
from .tree import run_tree
from .uniform import run_uniform
from .wstar import WStarParams, run_wstar

EXIT_OK, EXIT_INPUT, EXIT_VERIFY, EXIT_RESOURCE = 0, 1, 2, 3

DEFAULTS = {
    "h_init": 1e-3, "h_min": 1e-12, "h_max": 50.0, "tol": 1e-2, "bisect_tol": 1e-10,
    "err_tol": 1e-8, "eps_hold": 1e-8, "epsilon": 0.25, "tol_ineq": TOL_INEQ, "grid": 40,
    "penalty_a": 1e3, "hold_T": 200.0, "hinge_samples": 16,
}


class UsageError(InputError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def read_config(path) -> dict:
    """key=value lines; '#' starts a comment.  Unknown keys are an input error."""
    out = {}
    try:
        lines = open(path).read().splitlines()
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    for no, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{path}:{no}: expected key=value")
        key, val = (p.strip() for p in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in DEFAULTS:
            raise InputError(f"{path}:{no}: unknown key {key!r}")
        try:
            out[key] = type(DEFAULTS[key])(float(val))
        except ValueError as exc:
            raise InputError(f"{path}:{no}: bad value {val!r}") from exc
    return out


def resolve_config(args) -> dict:
    cfg = dict(DEFAULTS)
    path = getattr(args, "config", None) or os.environ.get("MAP_LAB_CONFIG")
    if path:
        cfg.update(read_config(path))
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def integrator_config(cfg: dict, record: bool = True) -> IntegratorConfig:
    return IntegratorConfig(h_init=cfg["h_init"], h_min=cfg["h_min"], h_max=cfg["h_max"],
                            tol=cfg["tol"], bisect_tol=cfg["bisect_tol"],
                            eps_hold=cfg["eps_hold"], err_tol=cfg["err_tol"],
                            record=record)


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------

def run_algorithm(algo: str, inst: Instance, cfg: dict, record: bool = True):
    icfg = integrator_config(cfg, record)
    if algo == "uniform":
        return run_uniform(inst, cfg=icfg), None
    if algo == "wstar":
        params = WStarParams(cfg["epsilon"], inst.n)
        return run_wstar(inst, params=params, cfg=icfg), params
    if algo == "tree":
        return run_tree(inst, cfg=icfg, hinge_samples=int(cfg["hinge_samples"])), None
    raise InputError(f"unknown algorithm {algo!r}")


def algo_params(algo: str, inst: Instance, cfg: dict, params) -> dict:
    out = {"n": inst.n, "tol": cfg["tol"], "h_init": cfg["h_init"], "h_min": cfg["h_min"],
           "eps_hold": cfg["eps_hold"]}
    if algo == "uniform":
        out["delta"] = 1.0 / inst.n
    elif algo == "wstar":
        out.update(params.as_dict())
    else:
        out["hinge_samples"] = int(cfg["hinge_samples"])
    return out


def _finite(v):
    return None if v is None or not math.isfinite(v) else v


def summary(algo, inst, cfg, run, params, offline=None, violations=None) -> dict:
    led = run.ledger
    out = {"algo": algo, "params": algo_params(algo, inst, cfg, params),
           "service": led.service, "movement": led.movement, "total": led.total,
           "phases": len(inst.phases), "steps": int(run.steps),
           "ratio": None, "violations": violations}
    if offline is not None:
        out["offline"] = offline
        out["ratio"] = _finite(competitive_ratio(led.total, offline, inst.metric.diameter()))
    return out


def schema() -> dict:
    return json.loads(resources.files("maplab").joinpath("summary.schema.json").read_text())


def emit(obj, path=None, validate: bool = True) -> None:
    if validate:
        import jsonschema
        jsonschema.validate(obj, schema())
    text = json.dumps(obj, indent=1, sort_keys=True) + "\n"
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _floats(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise InputError(f"expected comma-separated numbers, got {text!r}") from exc


def _ints(text: str) -> list:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise InputError(f"expected comma-separated integers, got {text!r}") from exc


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_run(args) -> int:
    cfg = resolve_config(args)
    inst = load_instance(args.instance)
    run, params = run_algorithm(args.algo, inst, cfg)
    offline = None
    if args.oracle:
        offline = dp_oracle(inst.with_durations(run.ledger.durations), int(cfg["grid"])).cost
    if args.trace:
        write_trace_csv(run.trace, args.trace)
        if args.plot:
            from .plotting import plot_trace
            plot_trace(run.trace, args.trace, title=f"{args.algo}, n={inst.n}")
    emit(summary(args.algo, inst, cfg, run, params, offline), args.summary)
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = resolve_config(args)
    inst = load_instance(args.instance)
    run, params = run_algorithm(args.algo, inst, cfg)
    # phases the run skipped carry no time, so any offline point is free there
    realized, run, keep = realized_view(inst, run)
    if args.offline == "oracle":
        res = dp_oracle(realized, int(cfg["grid"]))
        path, offline = res.path, res.cost
    elif args.offline == "random":
        path = random_offline_path(realized, np.random.default_rng(args.seed))
        offline = None
    else:
        if not args.offline_file:
            raise InputError("--offline file needs --offline-file")
        data = _load_json(args.offline_file)
        path = [np.asarray(y, dtype=float) for y in data]
        if len(path) != len(inst.phases):
            raise InputError("offline file needs one allocation per phase")
        path = [path[k] for k in keep]
        offline = None
    rep = check_inequalities(realized, run, path, args.algo, params,
                             tol_ineq=cfg["tol_ineq"], fault=args.inject_fault)
    report = rep.to_json()
    report["min_margin"] = _finite(report["min_margin"])
    report["potential_min"] = _finite(report["potential_min"])
    report["potential_floor"] = _finite(report["potential_floor"])
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(json.dumps(report, indent=1, sort_keys=True) + "\n")
    nviol = len(rep.violations) + (0 if rep.potential_min >= rep.potential_floor else 1)
    emit(summary(args.algo, inst, cfg, run, params, offline, nviol), args.summary)
    return EXIT_OK if nviol == 0 else EXIT_VERIFY


def cmd_oracle(args) -> int:
    cfg = resolve_config(args)
    inst = load_instance(args.instance)
    g = int(cfg["grid"])
    res = dp_oracle(inst, g)
    out = {"grid": g, "cost": res.cost, "service": res.service, "movement": res.movement,
           "path": [y.tolist() for y in res.path]}
    try:
        out["cost_2g"] = dp_oracle(inst, 2 * g).cost
    except ResourceError as exc:
        out["cost_2g"] = None
        out["notice"] = str(exc)
    emit(out, args.out, validate=False)
    return EXIT_OK


def cmd_encode(args) -> int:
    cfg = resolve_config(args)
    if args.kind == "mts":
        if not args.costs:
            raise InputError("encode mts needs --costs")
        costs = _load_json(args.costs)
        metric = StarMetric(np.asarray(_floats(args.weights))) if args.weights else None
        inst = encode_mts(costs, metric).instance
    elif args.kind == "kserver":
        if not args.requests or args.n is None:
            raise InputError("encode kserver needs --requests and --n")
        metric = StarMetric(np.asarray(_floats(args.weights)) if args.weights else np.ones(args.n))
        offsets = _floats(args.offsets) if args.offsets else None
        inst = encode_kserver(_ints(args.requests), args.k, metric, offsets,
                              hold_T=cfg["hold_T"]).instance
    elif args.kind == "flip":
        inst, _ = flip_monotonicity(load_instance(args.instance))
    else:
        inst = nonneg_penalty(load_instance(args.instance), cfg["penalty_a"])
    if args.out:
        dump_instance(inst, args.out)
    else:
        sys.stdout.write(json.dumps(inst.to_json(), indent=1, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_embed(args) -> int:
    D = np.asarray(_load_json(args.matrix), dtype=float)
    emb = mst_embed(D)
    out = Instance(emb.tree, []).to_json()
    out["point_map"] = emb.point_map
    out["eps_leaf"] = emb.eps_leaf
    emit(out, args.out, validate=False)
    return EXIT_OK


def cmd_lowerbound(args) -> int:
    if args.algo != "tree":
        raise InputError("the lower-bound adversary targets the tree algorithm")
    cfg = resolve_config(args)
    rows = []
    for n in _ints(args.n):
        res = adversary_nonconvex(n, args.rounds, integrator_config(cfg, record=False))
        rows.append({"n": n, "rounds": args.rounds, "online": res.online,
                     "service": res.online_service, "movement": res.online_movement,
                     "offline": res.offline, "ratio": res.ratio, "i_star": res.i_star})
    _write_rows(rows, args.csv)
    if args.csv and args.plot:
        from .plotting import plot_ratios
        plot_ratios(rows, args.csv, title="adaptive step-cost adversary")
    emit({"rows": rows}, args.out, validate=False)
    return EXIT_OK


def _default_algo(family: str) -> str:
    return {"weighted-hinge": "wstar", "tree-step": "tree"}.get(family, "uniform")


def _bench_one(job):
    family, algo, n, seed, phases, cfg = job
    inst = random_instance(n, phases, seed, family)
    run, _ = run_algorithm(algo, inst, cfg, record=False)
    realized = inst.with_durations(run.ledger.durations)
    if n <= 5:
        offline, how = dp_oracle(realized, int(cfg["grid"])).cost, "grid"
    else:
        corners = [np.eye(n)[i] for i in range(n)] + [np.full(n, 1.0 / n)]
        offline, how = min(stay_put_baseline(realized, y) for y in corners), "stay-put"
    ratio = competitive_ratio(run.ledger.total, offline, inst.metric.diameter())
    return {"family": family, "algo": algo, "n": n, "seed": seed,
            "online": run.ledger.total, "service": run.ledger.service,
            "movement": run.ledger.movement, "offline": offline, "offline_method": how,
            "ratio": ratio}


def cmd_bench(args) -> int:
    cfg = resolve_config(args)
    algo = args.algo or _default_algo(args.family)
    jobs = [(args.family, algo, n, seed, args.phases, cfg)
            for n in _ints(args.n) for seed in range(args.seeds)]
    if args.workers > 1:
        with Pool(args.workers) as pool:
            rows = pool.map(_bench_one, jobs)
    else:
        rows = [_bench_one(j) for j in jobs]
    _write_rows(rows, args.csv)
    if args.csv and args.plot:
        from .plotting import plot_ratios
        plot_ratios(rows, args.csv, title=f"{args.family} / {algo}")
    table = []
    for n in _ints(args.n):
        vals = [r["ratio"] for r in rows if r["n"] == n]
        table.append({"n": n, "mean_ratio": _finite(float(np.mean(vals))),
                      "max_ratio": _finite(float(np.max(vals))), "runs": len(vals)})
    emit({"family": args.family, "algo": algo, "grid": int(cfg["grid"]), "table": table},
         args.out, validate=False)
    return EXIT_OK


def _write_rows(rows, path):
    if not path or not rows:
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_common(p, integrator=True):
    p.add_argument("--config", help="key=value config file (default: $MAP_LAB_CONFIG)")
    if integrator:
        p.add_argument("--h-init", dest="h_init", type=float)
        p.add_argument("--h-min", dest="h_min", type=float)
        p.add_argument("--tol", type=float)
        p.add_argument("--eps-hold", dest="eps_hold", type=float)
        p.add_argument("--epsilon", type=float)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="map-lab", description="Online metric allocation laboratory.")
    sub = ap.add_subparsers(dest="cmd", required=True, parser_class=_Parser)
    algos = ("uniform", "wstar", "tree")

    p = sub.add_parser("run", help="integrate an online algorithm on an instance")
    p.add_argument("--algo", choices=algos, required=True)
    p.add_argument("--instance", required=True)
    p.add_argument("--trace", help="write the trace CSV here")
    p.add_argument("--summary", help="write the summary JSON here instead of stdout")
    p.add_argument("--oracle", action="store_true", help="also compute the grid offline optimum")
    p.add_argument("--grid", type=int)
    p.add_argument("--plot", action="store_true", help="render a figure next to the trace CSV")
    _add_common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("verify", help="certify the potential inequalities along a run")
    p.add_argument("--algo", choices=algos, required=True)
    p.add_argument("--instance", required=True)
    p.add_argument("--offline", choices=("oracle", "random", "file"), default="oracle")
    p.add_argument("--offline-file", dest="offline_file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid", type=int)
    p.add_argument("--tol-ineq", dest="tol_ineq", type=float)
    p.add_argument("--inject-fault", dest="inject_fault", type=float, default=0.0,
                   help="add this rate times t to every potential (tests the monitor)")
    p.add_argument("--report", help="write the full inequality report JSON here")
    p.add_argument("--summary")
    _add_common(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("oracle", help="grid offline optimum")
    p.add_argument("--instance", required=True)
    p.add_argument("--grid", type=int)
    p.add_argument("--out")
    _add_common(p, integrator=False)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("encode", help="build instances from other problems")
    p.add_argument("kind", choices=("mts", "kserver", "flip", "penalty"))
    p.add_argument("--costs", help="JSON list of task cost vectors (mts)")
    p.add_argument("--weights", help="comma-separated star weights")
    p.add_argument("--requests", help="comma-separated request points (kserver)")
    p.add_argument("--n", type=int)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--offsets", help="comma-separated offsets (kserver)")
    p.add_argument("--hold-T", dest="hold_T", type=float)
    p.add_argument("--instance", help="input instance (flip, penalty)")
    p.add_argument("--a", dest="penalty_a", type=float, help="penalty slope")
    p.add_argument("--out")
    _add_common(p, integrator=False)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("embed", help="MST tree embedding of a distance matrix")
    p.add_argument("--matrix", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("lowerbound", help="adaptive adversary against the tree algorithm")
    p.add_argument("--n", default="8", help="comma-separated sizes")
    p.add_argument("--rounds", type=int, default=10000)
    p.add_argument("--algo", default="tree")
    p.add_argument("--csv")
    p.add_argument("--plot", action="store_true")
    p.add_argument("--out")
    _add_common(p, integrator=False)
    p.set_defaults(func=cmd_lowerbound)

    p = sub.add_parser("bench", help="mean competitive ratios over random instances")
    p.add_argument("--family", choices=FAMILIES, required=True)
    p.add_argument("--algo", choices=algos)
    p.add_argument("--n", default="2,3,4")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--phases", type=int, default=6)
    p.add_argument("--grid", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--csv")
    p.add_argument("--plot", action="store_true")
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except SystemExit as exc:          # --help
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"map-lab: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except InputError as exc:
        print(f"map-lab: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (InvariantError, StepUnderflow) as exc:
        print(f"map-lab: verification failure: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except ResourceError as exc:
        print(f"map-lab: resource limit: {exc}", file=sys.stderr)
        return EXIT_RESOURCE


if __name__ == "__main__":
    sys.exit(main())
