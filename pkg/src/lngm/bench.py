"""Seeded simulation-study harness.

Simulates first-order autoregressive data with heavy-tailed driving noise
over a (size x tail-parameter) scenario grid, fits each replicate with the
structured scheme, the collapsed scheme and the Gibbs oracle, and persists
method-versus-oracle scatter data plus wall-clock timings.  Each grid cell
owns a random stream derived from (seed, cell index), so reruns are
bit-identical; cells run in a process pool sized by the LNGM_WORKERS
environment variable.
"""

from __future__ import annotations

import csv
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from scipy.sparse.linalg import spsolve_triangular

from .gibbs import GibbsConfig, gibbs_run
from .models import Likelihood, ModelSpec, build_ar1, fixed, gamma_prior
from .noise import NoiseFamily, simulate_noise
from .vb import VbConfig, run

RHO = 0.9
SIGMA_X = 2.0
SIGMA_Y = 1.0
ALPHA_ETA = 5.0


def simulate_ar1_study(n: int, eta: float, rng: np.random.Generator,
                       rho: float = RHO, sigma_x: float = SIGMA_X,
                       sigma_y: float = SIGMA_Y):
    """One study replicate: standardized AR1 latent path, Gaussian readout."""
    lam = simulate_noise(NoiseFamily("nig", ALPHA_ETA), eta, np.ones(n), rng)
    d = build_ar1(n, rho).d_matrix.tocsr()
    x_std = spsolve_triangular(d, lam, lower=True)
    y = sigma_x * x_std + sigma_y * rng.standard_normal(n)
    return y, x_std


def study_model(n: int, free_hyper: bool = False, rho: float = RHO,
                sigma_x: float = SIGMA_X, sigma_y: float = SIGMA_Y) -> ModelSpec:
    """The fitting model for the study; hyperparameters fixed at the truth
    by default, or given Gamma(1, 0.5) priors when ``free_hyper``."""
    tau_x = 1.0 / sigma_x**2
    tau_y = 1.0 / sigma_y**2
    prec_x = gamma_prior(1.0, 0.5, init=tau_x) if free_hyper else fixed(tau_x)
    prec_y = gamma_prior(1.0, 0.5, init=tau_y) if free_hyper else fixed(tau_y)
    comp = build_ar1(n, rho, precision=prec_x, noise=NoiseFamily("nig", ALPHA_ETA))
    return ModelSpec(components=(comp,),
                     likelihood=Likelihood("gaussian", prec_y), n_data=n)


@dataclass
class CellRecord:
    n: int
    eta: float
    replicate: int
    method: str
    seconds: float
    converged: bool
    iterations: int
    eta_mean: float
    eta_sd: float
    x_mean: list
    x_sd: list
    v_mean: list


def run_cell(n: int, eta: float, replicate: int, seed: int, cell_index: int = 0,
             free_hyper: bool = False, methods=("svi", "scvi", "gibbs"),
             gibbs_iterations: int = 2000, gibbs_burn_in: int = 500,
             mc_samples: int = 500) -> list[CellRecord]:
    """Simulate one replicate and fit it with every requested method."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, cell_index)))
    y, _ = simulate_ar1_study(n, eta, rng)
    model = study_model(n, free_hyper=free_hyper)
    records = []
    for method in methods:
        t0 = time.perf_counter()
        if method == "gibbs":
            res = gibbs_run(model, y, GibbsConfig(
                iterations=gibbs_iterations, burn_in=gibbs_burn_in,
                seed=seed + cell_index))
            rec = CellRecord(
                n=n, eta=eta, replicate=replicate, method=method,
                seconds=time.perf_counter() - t0, converged=True,
                iterations=gibbs_iterations,
                eta_mean=res.eta_mean(), eta_sd=res.eta_sd(),
                x_mean=res.x_mean().tolist(), x_sd=res.x_sd().tolist(),
                v_mean=res.v_mean().tolist())
        else:
            res = run(model, y, VbConfig(method=method, seed=seed + cell_index,
                                         mc_samples=mc_samples))
            eta_sd = _vb_eta_sd(res)
            rec = CellRecord(
                n=n, eta=eta, replicate=replicate, method=method,
                seconds=time.perf_counter() - t0, converged=res.converged,
                iterations=res.n_iterations,
                eta_mean=float(res.state.eta_mean[0]), eta_sd=eta_sd,
                x_mean=res.posterior.marginal_mean().tolist(),
                x_sd=res.posterior.marginal_sd().tolist(),
                v_mean=np.asarray(res.state.v_plus[0]).tolist())
        records.append(rec)
    return records


def _vb_eta_sd(res) -> float:
    from .gig import gig_moment
    state = res.state
    if state.q_eta[0] is not None:
        m1 = gig_moment(1.0, state.q_eta[0])
        m2 = gig_moment(2.0, state.q_eta[0])
        return float(np.sqrt(max(m2 - m1 * m1, 0.0)))
    if state.eta_sampler[0] is not None:
        return float(np.sqrt(max(state.eta_sampler[0].variance(), 0.0)))
    return float("nan")


def _cell_task(payload):
    try:
        return run_cell(**payload), None
    except Exception as err:  # per-cell failures logged, grid continues
        return [], f"{type(err).__name__}: {err}"


def bench_run(sizes, etas, replicates: int, out_dir, seed: int = 0,
              free_hyper: bool = False, methods=("svi", "scvi", "gibbs"),
              gibbs_iterations: int = 2000, gibbs_burn_in: int = 500,
              workers: int | None = None) -> dict:
    """Run the full scenario grid and persist scatter/timing tables.

    Per-cell failures are logged into the summary and the grid continues.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tasks = [dict(n=int(n), eta=float(eta), replicate=r, seed=seed, cell_index=ci,
                  free_hyper=free_hyper, methods=tuple(methods),
                  gibbs_iterations=gibbs_iterations, gibbs_burn_in=gibbs_burn_in)
             for ci, (n, eta, r) in enumerate(
                 (n, eta, r) for n in sizes for eta in etas for r in range(replicates))]
    if workers is None:
        workers = int(os.environ.get("LNGM_WORKERS", "1"))

    all_records: list[CellRecord] = []
    failures = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_cell_task, tasks))
    else:
        results = [_cell_task(task) for task in tasks]
    for task, (recs, err) in zip(tasks, results):
        all_records.extend(recs)
        if err is not None:
            failures.append({"task": {k: v for k, v in task.items()
                                      if k != "methods"},
                             "error": err})

    _write_scatter(out / "scatter.csv", all_records)
    _write_timing(out / "timing.csv", all_records)
    summary = _summarize(all_records, failures)
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return summary


def _write_scatter(path, records: list[CellRecord]) -> None:
    by_key = {}
    for rec in records:
        by_key.setdefault((rec.n, rec.eta, rec.replicate), {})[rec.method] = rec
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "eta", "replicate", "node", "quantity",
                         "svi", "scvi", "gibbs"])
        for (n, eta, rep), methods in sorted(by_key.items()):
            ref = next(iter(methods.values()))
            for qty in ("x_mean", "x_sd", "v_mean"):
                length = len(getattr(ref, qty))
                for node in range(length):
                    row = [n, eta, rep, node, qty]
                    for m in ("svi", "scvi", "gibbs"):
                        rec = methods.get(m)
                        row.append("" if rec is None else
                                   repr(getattr(rec, qty)[node]))
                    writer.writerow(row)
            row = [n, eta, rep, "", "eta_mean"]
            for m in ("svi", "scvi", "gibbs"):
                rec = methods.get(m)
                row.append("" if rec is None else repr(rec.eta_mean))
            writer.writerow(row)


def _write_timing(path, records: list[CellRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "eta", "replicate", "method", "seconds",
                         "iterations", "converged"])
        for rec in records:
            writer.writerow([rec.n, rec.eta, rec.replicate, rec.method,
                             repr(rec.seconds), rec.iterations, int(rec.converged)])


def _summarize(records: list[CellRecord], failures) -> dict:
    summary: dict = {"failures": failures, "cells": {}}
    by_cell: dict = {}
    for rec in records:
        by_cell.setdefault((rec.n, rec.eta), {}).setdefault(rec.method, []).append(rec)
    for (n, eta), methods in sorted(by_cell.items()):
        cell = {}
        gibbs = methods.get("gibbs", [])
        gibbs_by_rep = {r.replicate: r for r in gibbs}
        for method, recs in methods.items():
            secs = [r.seconds for r in recs]
            cell[method] = {"mean_seconds": float(np.mean(secs)),
                            "replicates": len(recs)}
            if method != "gibbs" and gibbs_by_rep:
                vi_means, or_means = [], []
                for r in recs:
                    g = gibbs_by_rep.get(r.replicate)
                    if g is not None:
                        vi_means.append(r.x_mean)
                        or_means.append(g.x_mean)
                if vi_means:
                    vi = np.concatenate(vi_means)
                    oracle = np.concatenate(or_means)
                    slope = float(np.sum(vi * oracle) / np.sum(oracle * oracle))
                    cell[method]["x_mean_slope_vs_gibbs"] = slope
        summary["cells"][f"n={n},eta={eta}"] = cell
    return summary
