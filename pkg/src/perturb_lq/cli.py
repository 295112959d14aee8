"""``perturb-lq`` command line entry point."""

from __future__ import annotations

import argparse
import json
import platform
import sys
from importlib import metadata
from pathlib import Path

import numpy as np
import pandas as pd

from . import experiments as ex
from .ambiguity import broadcast_noise, build_noise_model, load_noise_csv, zero_noise
from .constrained_scalar import ConstraintSpec, solve_constrained
from .dro_riccati import solve_dro, solve_nominal
from .errors import InvalidConfig, PerturbLqError
from .lq_core import InitialState, LqProblem, solve_classical
from .plotting import emit_plot
from .policy_gradient import AugmentedPolicy, TrainConfig, augment, cost, train

COMMANDS = ("riccati", "pg", "dro", "constrained", "mv", "track", "sweep")
FLOAT_FMT = "%.17g"

DEFAULT_SWEEPS = [
    {"param": "T", "grid": [3, 4, 5]},
    {"param": "kappa_tc", "grid": [500.0, 1000.0, 2000.0]},
    {"param": "lambda_step", "grid": [1.1e4, 1.1e5, 1.1e6]},
    {"param": "L_ols", "grid": [40, 60, 90]},
]


def read_json(path):
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"{path}: invalid JSON ({exc})") from None


def read_problem_document(doc):
    """Parse the shared problem document: problem, and optional noise, init, constraints, lambda.

    Noise is given as per-stage ``samples``, one sample set ``per_stage`` reused
    at every stage, or a ``csv`` path of samples reused at every stage.
    """
    if "problem" not in doc:
        raise InvalidConfig("document needs a 'problem' entry")
    problem = LqProblem.from_dict(doc["problem"])
    noise = None
    if "noise" in doc:
        spec = doc["noise"]
        if "csv" in spec:
            noise = load_noise_csv(spec["csv"], problem.T)
        elif "per_stage" in spec:
            noise = broadcast_noise(spec["per_stage"], problem.T)
        else:
            noise = build_noise_model(spec["samples"])
    init = InitialState.from_dict(doc["init"]) if "init" in doc else None
    cons = ConstraintSpec.from_dict(doc["constraints"], problem.T) if "constraints" in doc else None
    return problem, noise, init, cons


def write_csv(df: pd.DataFrame, path):
    df.to_csv(path, index=False, float_format=FLOAT_FMT, lineterminator="\n")


def write_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    raise TypeError(f"cannot serialize {type(x).__name__}")


def _flat(prefix, M):
    M = np.atleast_1d(np.asarray(M, dtype=float))
    return {f"{prefix}_{'_'.join(map(str, idx))}": float(v) for idx, v in np.ndenumerate(M)}


def gains_frame(T, **per_stage):
    """One row per stage with every per-stage array flattened into named columns."""
    rows = []
    for t in range(T):
        row = {"t": t}
        for name, arr in per_stage.items():
            row.update(_flat(name, arr[t]))
        rows.append(row)
    return pd.DataFrame(rows)


def versions():
    out = {"python": platform.python_version()}
    for pkg in ("artifact", "numpy", "scipy", "pandas", "matplotlib"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_riccati(args, doc, out):
    problem, noise, init, _ = read_problem_document(doc)
    sol = solve_classical(problem) if noise is None else solve_nominal(problem, noise)
    write_csv(gains_frame(problem.T, K=sol.K_star, L=sol.L_star, P=sol.P[:-1], r=sol.r[:-1], q=sol.q[:-1]),
              out / "gains.csv")
    write_json(sol.to_dict(), out / "solution.json")
    return {"problem": problem.to_dict(), "noise": None if noise is None else noise.to_dict()}


def cmd_dro(args, doc, out):
    problem, noise, init, _ = read_problem_document(doc)
    noise = noise or zero_noise(problem.T, problem.k)
    lam = args.lam if args.lam is not None else doc.get("lambda")
    if lam is None:
        lam = ex.default_penalty(problem, noise)
    sol = solve_dro(problem, noise, float(lam))
    lam_bar = np.array([s.lambda_bar for s in sol.stages])
    ric = sol.riccati
    write_csv(gains_frame(problem.T, K=ric.K_star, L=ric.L_star, P=ric.P[:-1], r=ric.r[:-1], q=ric.q[:-1],
                          lambda_bar=lam_bar), out / "gains.csv")
    write_json(sol.to_dict(), out / "solution.json")
    return {"problem": problem.to_dict(), "noise": noise.to_dict(), "lambda": float(lam)}


def cmd_constrained(args, doc, out):
    problem, noise, init, cons = read_problem_document(doc)
    cons = cons or ConstraintSpec.unconstrained(problem.T, problem.n)
    pw = solve_constrained(problem, cons, noise)
    write_csv(gains_frame(problem.T, K_hat=pw.K_hat, K_bar=pw.K_bar, P_hat=pw.P_hat[:-1], P_bar=pw.P_bar[:-1]),
              out / "gains.csv")
    write_json(pw.to_dict(), out / "solution.json")
    return {"problem": problem.to_dict(), "constraints": cons.to_dict(),
            "cone_condition": cons.cone_condition_holds()}


def cmd_pg(args, doc, out):
    problem, noise, init, _ = read_problem_document(doc)
    if init is None:
        raise InvalidConfig("policy gradient needs an 'init' entry")
    noise = noise or zero_noise(problem.T, problem.k)
    pg = dict(doc.get("pg", {}))
    eta = args.eta if args.eta is not None else pg.get("eta", "auto")
    iters = args.iters if args.iters is not None else pg.get("iters", 1000)
    lam = args.lam if args.lam is not None else doc.get("lambda")
    aug = augment(problem)
    if lam is None:
        ref = solve_nominal(problem, noise)
    else:
        lam = float(lam)
        ref = solve_dro(problem, noise, lam).riccati
    c_star = cost(aug, AugmentedPolicy.from_solution(ref), init, noise, lam)
    if "K0" in doc:
        K0 = AugmentedPolicy.from_dict(doc["K0"])
    else:
        K0 = AugmentedPolicy.zeros(problem.T, problem.n, problem.m)
    cfg = TrainConfig(eta=eta, max_iters=int(iters), tol_norm_grad=float(pg.get("tol_norm_grad", 1e-10)))
    res = train(aug, K0, init, noise, cfg, c_star=c_star, lam=lam)
    hist = ex._history_frame(res)
    write_csv(hist, out / "history.csv")
    write_json(res.policy.to_dict(), out / "policy.json")
    emit_plot({"policy gradient": hist["normalized_error"].abs()}, out / "pg_error.svg",
              title="normalized error", ylabel="(C - C*) / C", logy=True)
    return {"problem": problem.to_dict(), "noise": noise.to_dict(), "init": init.to_dict(),
            "eta": eta, "iters": int(iters), "lambda": lam, "converged": res.converged}


def cmd_mv(args, doc, out):
    d = dict(doc)
    if args.seed is not None:
        d["seed"] = args.seed
    if args.eta is not None:
        d["eta"] = args.eta
    if args.iters is not None:
        d["iters"] = args.iters
    cfg = ex.make_config(ex.MvConfig, d)
    res = ex.run_mv(cfg)
    write_csv(res.history, out / "history.csv")
    write_csv(res.compare, out / "compare.csv")
    c_cons = float(res.compare.set_index("policy").loc["constrained", "normalized_error"])
    emit_plot({"unconstrained policy gradient": res.history["normalized_error"].abs()}, out / "mv_error.svg",
              title="mean-variance: normalized error", ylabel="(C - C*) / C", logy=True,
              hlines={"constrained optimum": c_cons} if c_cons > 0 else None)
    return cfg.to_dict()


def _track_experiment(args, doc):
    exp = ex.TrackExperiment.from_dict(doc)
    if args.seed is not None:
        exp.seed = args.seed
    if args.eta is not None:
        exp.eta = args.eta
    if args.iters is not None:
        exp.iters = args.iters
    if args.lam is not None:
        exp.lam = args.lam
    return exp


def cmd_track(args, doc, out):
    exp = _track_experiment(args, doc)
    res = ex.run_tracking(exp)
    write_csv(res.history, out / "history.csv")
    write_csv(res.compare, out / "compare.csv")
    emit_plot({"policy gradient": res.history["normalized_error"].abs()}, out / "track_error.svg",
              title="tracking: normalized error", ylabel="(C - C*) / C", logy=True)
    emit_plot({"gain norm": res.history["gain_norm"]}, out / "track_gain.svg",
              title="tracking: gain size", ylabel="||K||_F")
    d = exp.to_dict()
    d["lambda_resolved"] = res.lam
    d["features"] = {k: v for k, v in res.tracking.features.items()}
    return d


def cmd_sweep(args, doc, out):
    d = dict(doc)
    sweeps = d.pop("sweeps", DEFAULT_SWEEPS)
    exp = _track_experiment(args, d.pop("experiment", d))
    table = ex.load_table(exp)
    for s in sweeps:
        spec = ex.make_config(ex.SweepSpec, s)
        df = ex.run_sweep(exp, spec, table)
        write_csv(df, out / f"sweep_{spec.param}.csv")
        series = {f"{spec.param}={v}": g["running_mean"].to_numpy() for v, g in df.groupby("value", sort=False)}
        emit_plot(series, out / f"sweep_{spec.param}.svg", title=f"sweep over {spec.param}",
                  ylabel="running mean of % cost difference")
    return {"experiment": exp.to_dict(), "sweeps": sweeps}


HANDLERS = {
    "riccati": cmd_riccati,
    "pg": cmd_pg,
    "dro": cmd_dro,
    "constrained": cmd_constrained,
    "mv": cmd_mv,
    "track": cmd_track,
    "sweep": cmd_sweep,
}


def _eta(s):
    return "auto" if s == "auto" else float(s)


def build_parser():
    p = argparse.ArgumentParser(prog="perturb-lq", description="Finite-horizon LQ solvers and experiments.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON config or problem document")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--eta", type=_eta, help="'auto' or a fixed step size")
    p.add_argument("--lambda", dest="lam", type=float, help="Wasserstein penalty")
    p.add_argument("--iters", type=int)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command in ("riccati", "pg", "dro", "constrained") and args.config is None:
            raise InvalidConfig(f"'{args.command}' needs --config pointing at a problem document")
        doc = read_json(args.config)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        resolved = HANDLERS[args.command](args, doc, out)
        write_json({"command": args.command, "seed": args.seed, "config": resolved, "versions": versions()},
                   out / "run_manifest.json")
    except PerturbLqError as exc:
        print(json.dumps(exc.to_dict()), file=sys.stderr)
        return 2
    except OSError as exc:
        print(json.dumps({"error": "io_error", "message": str(exc)}), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
