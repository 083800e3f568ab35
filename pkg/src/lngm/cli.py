"""Command-line interface.

Subcommands: ``fit`` (coordinate-ascent fit), ``gibbs`` (sampling oracle),
``simulate`` (generate data from a model), ``bench`` (scenario-grid study)
and ``diagnose`` (fit plus mixing-variable flag report).

Exit codes: 0 success, 2 validation error, 3 numerical failure,
4 non-convergence (results are still written).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from . import io as lio
from .diagnostics import v_diagnostics
from .errors import ModelError, NumericalError
from .gibbs import GibbsConfig, gibbs_run
from .models import GAUSSIAN, POISSON
from .noise import simulate_noise
from .vb import VbConfig, run

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_NONCONVERGENCE = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lngm",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, data_required=True):
        p.add_argument("--model", required=True, help="model config JSON")
        p.add_argument("--data", required=data_required, help="data CSV")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=0)

    p_fit = sub.add_parser("fit", help="coordinate-ascent variational fit")
    add_common(p_fit)
    p_fit.add_argument("--method", choices=["svi", "scvi"], default="scvi")
    p_fit.add_argument("--threshold", type=float, default=0.005)
    p_fit.add_argument("--max-iter", type=int, default=None)
    p_fit.add_argument("--mc-samples", type=int, default=500)

    p_diag = sub.add_parser("diagnose", help="fit and print the flag report")
    add_common(p_diag)
    p_diag.add_argument("--method", choices=["svi", "scvi"], default="scvi")
    p_diag.add_argument("--threshold", type=float, default=0.005)
    p_diag.add_argument("--max-iter", type=int, default=None)
    p_diag.add_argument("--mc-samples", type=int, default=500)
    p_diag.add_argument("--flag-multiplier", type=float, default=3.0)

    p_gibbs = sub.add_parser("gibbs", help="Gibbs sampling oracle")
    add_common(p_gibbs)
    p_gibbs.add_argument("--iterations", type=int, default=5000)
    p_gibbs.add_argument("--burn-in", type=int, default=1000)
    p_gibbs.add_argument("--thinning", type=int, default=1)
    p_gibbs.add_argument("--chains", type=int, default=1)

    p_sim = sub.add_parser("simulate", help="simulate data from a model")
    p_sim.add_argument("--model", required=True)
    p_sim.add_argument("--eta", type=float, required=True,
                       help="tail parameter used for every component (0 = Gaussian)")
    p_sim.add_argument("--n-data", type=int, default=None,
                       help="rows to emit (defaults to the latent size)")
    p_sim.add_argument("--out", required=True, help="output CSV path")
    p_sim.add_argument("--seed", type=int, default=0)

    p_bench = sub.add_parser("bench", help="scenario-grid simulation study")
    p_bench.add_argument("--sizes", default="50,100",
                         help="comma-separated latent sizes")
    p_bench.add_argument("--etas", default="0,1,10",
                         help="comma-separated tail parameters")
    p_bench.add_argument("--replicates", type=int, default=3)
    p_bench.add_argument("--out", required=True)
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.add_argument("--free-hyper", action="store_true",
                         help="put priors on the scale precisions")
    p_bench.add_argument("--gibbs-iterations", type=int, default=2000)
    p_bench.add_argument("--gibbs-burn-in", type=int, default=500)
    p_bench.add_argument("--methods", default="svi,scvi,gibbs")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except ModelError as err:
        print(f"validation error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL


def _dispatch(args) -> int:
    if args.command in ("fit", "diagnose"):
        return _cmd_fit(args, report=args.command == "diagnose")
    if args.command == "gibbs":
        return _cmd_gibbs(args)
    if args.command == "simulate":
        return _cmd_simulate(args)
    return _cmd_bench(args)


def _load(args):
    cfg = lio.load_model_config(args.model)
    data = lio.ingest_data(args.data)
    model = lio.build_model_from_config(cfg, data)
    return cfg, data, model


def _cmd_fit(args, report: bool = False) -> int:
    cfg, data, model = _load(args)
    vb_config = VbConfig(method=args.method, threshold=args.threshold,
                         max_iterations=args.max_iter,
                         mc_samples=args.mc_samples, seed=args.seed)
    t0 = time.perf_counter()
    result = run(model, data.y, vb_config)
    elapsed = time.perf_counter() - t0

    post = result.posterior
    summary = {
        "method": result.method,
        "converged": bool(result.converged),
        "iterations": int(result.n_iterations),
        "seconds": elapsed,
        "eta_mean": {c.name: float(result.state.eta_mean[i])
                     for i, c in enumerate(model.components)},
        "x_mean": post.marginal_mean().tolist(),
        "x_sd": post.marginal_sd().tolist(),
        "log_evidence_inner": float(post.log_evidence),
        "theta": {h: {"mean": post.theta_mean(h), "sd": post.theta_sd(h)}
                  for h in (post.points[0].theta if post.points else {})},
    }
    diag_rows = v_diagnostics(result,
                              flag_multiplier=getattr(args, "flag_multiplier", 3.0))
    resolved = {"command": args.command, "model": str(args.model),
                "data": str(args.data), "seed": args.seed,
                "method": args.method, "threshold": args.threshold,
                "max_iter": args.max_iter, "mc_samples": args.mc_samples}
    lio.write_run_dir(args.out, resolved, summary,
                      trace_rows=result.trace_rows(), diagnostic_rows=diag_rows)
    if report:
        flagged = [r for r in diag_rows if r.flagged]
        if flagged:
            print("flagged mixing variables (possible path outliers):")
            for r in flagged:
                print(f"  {r.component}[{r.index}]  E[V]={r.mean:.3f}  "
                      f"q50={r.q50:.3f}  q95={r.q95:.3f}")
        else:
            print("no mixing variables flagged")
    if not result.converged:
        print("warning: fit did not reach the convergence threshold",
              file=sys.stderr)
        return EXIT_NONCONVERGENCE
    return EXIT_OK


def _cmd_gibbs(args) -> int:
    cfg, data, model = _load(args)
    config = GibbsConfig(iterations=args.iterations, burn_in=args.burn_in,
                         thinning=args.thinning, chains=args.chains,
                         seed=args.seed)
    t0 = time.perf_counter()
    result = gibbs_run(model, data.y, config)
    elapsed = time.perf_counter() - t0
    summary = result.summary()
    summary["seconds"] = elapsed
    summary["approximate_x_step"] = result.approximate_x_step
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    resolved = {"command": "gibbs", "model": str(args.model),
                "data": str(args.data), "seed": args.seed,
                "iterations": args.iterations, "burn_in": args.burn_in,
                "thinning": args.thinning, "chains": args.chains}
    lio.write_run_dir(args.out, resolved, summary)
    _write_chains_csv(out / "chains.csv", result)
    return EXIT_OK


def _write_chains_csv(path, result) -> None:
    import csv as _csv
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["chain", "draw", "parameter", "value"])
        n_chains, n_keep, _ = result.x.shape
        for chain in range(n_chains):
            for draw in range(n_keep):
                for ci, comp in enumerate(result.model.components):
                    writer.writerow([chain, draw, f"eta.{comp.name}",
                                     repr(float(result.eta[chain, draw, ci]))])
                for name, vals in result.theta.items():
                    writer.writerow([chain, draw, f"theta.{name}",
                                     repr(float(vals[chain, draw]))])


def _cmd_simulate(args) -> int:
    cfg = lio.load_model_config(args.model)
    placeholder_n = _latent_rows(cfg)
    n_data = args.n_data or placeholder_n
    data_stub = lio.ObservationBundle(y=np.full(n_data, np.nan), columns={})
    model = lio.build_model_from_config(cfg, data_stub)
    if model.fixed_effects is not None:
        raise ModelError("simulate: models with fixed effects are not supported")
    rng = np.random.default_rng(args.seed)
    predictor = np.zeros(n_data)
    for comp, amap in zip(model.components, model.obs_maps):
        d = comp.base_matrix(comp.rho.value if comp.rho is not None else None)
        if d.shape[0] != d.shape[1]:
            raise ModelError(
                f"simulate: component {comp.name!r} has a non-square dependency "
                "matrix; only invertible components can be simulated")
        lam = simulate_noise(comp.noise, args.eta, comp.h, rng)
        x = spsolve(sp.csc_matrix(d * np.sqrt(comp.precision.value)), lam)
        predictor += np.asarray(x if amap is None else amap @ x).ravel()
    lik = model.likelihood
    if lik.kind == GAUSSIAN:
        y = predictor + rng.standard_normal(n_data) / np.sqrt(lik.precision.value)
    elif lik.kind == POISSON:
        y = rng.poisson(np.exp(predictor)).astype(float)
    else:
        y = (rng.random(n_data) < 1.0 / (1.0 + np.exp(-predictor))).astype(float)
    bundle = lio.ObservationBundle(y=y, columns={"x_true": predictor})
    lio.emit_data(bundle, args.out)
    print(f"wrote {n_data} rows to {args.out}")
    return EXIT_OK


def _latent_rows(cfg) -> int:
    comp0 = cfg["components"][0]
    if "n" in comp0:
        return int(comp0["n"])
    raise ModelError("simulate: cannot infer data size; pass --n-data")


def _cmd_bench(args) -> int:
    from .bench import bench_run
    sizes = [int(s) for s in str(args.sizes).split(",") if s]
    etas = [float(e) for e in str(args.etas).split(",") if e]
    methods = tuple(m for m in str(args.methods).split(",") if m)
    summary = bench_run(sizes, etas, args.replicates, args.out, seed=args.seed,
                        free_hyper=args.free_hyper, methods=methods,
                        gibbs_iterations=args.gibbs_iterations,
                        gibbs_burn_in=args.gibbs_burn_in)
    n_fail = len(summary.get("failures", []))
    print(f"bench: {len(summary.get('cells', {}))} cells, {n_fail} failed cells; "
          f"results in {args.out}")
    return EXIT_OK if n_fail == 0 else EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
