"""Gibbs sampler over (x, theta), V and eta: the in-repo sampling oracle.

Cycles three full conditionals: (x, theta) from the latent-Gaussian
posterior weighted by the current mixing draws, each V_i from its
conditional GIG, and eta from its conditional GIG.  The conditional
parameter assembly reuses the coordinate-ascent update functions with the
current draws standing in for the expectations, so the two code paths are
structurally identical by construction.

NIG driving noise only.  Gaussian likelihoods give exact x draws;
non-Gaussian likelihoods draw from the Laplace approximation of the
conditional and the result is flagged as approximate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ModelError, NumericalError
from .gig import GigParams, gig_sample
from .lgm import GridConfig, LgmSpec, hyper_posterior, sample_posterior
from .models import GAUSSIAN, ModelSpec
from .noise import NIG
from .vb import svi_update_eta, svi_update_v


@dataclass(frozen=True)
class GibbsConfig:
    iterations: int = 5000
    burn_in: int = 1000
    thinning: int = 1
    seed: int = 0
    chains: int = 1
    fix_v: bool = False          # keep V at h and skip V/eta draws
    grid: GridConfig = field(default_factory=GridConfig)
    jitter: float = 1e-8

    def __post_init__(self):
        if not 0 <= self.burn_in < self.iterations:
            raise ModelError("burn_in must be smaller than iterations")
        if self.thinning < 1 or self.chains < 1:
            raise ModelError("thinning and chains must be >= 1")


@dataclass
class GibbsResult:
    x: np.ndarray                 # (chains, kept, n_total)
    v: list[np.ndarray]           # per component (chains, kept, m_c)
    eta: np.ndarray               # (chains, kept, n_components)
    theta: dict                   # name -> (chains, kept)
    model: ModelSpec
    config: GibbsConfig
    approximate_x_step: bool

    def _flat(self, arr):
        return arr.reshape(-1, *arr.shape[2:])

    def x_mean(self) -> np.ndarray:
        return self._flat(self.x).mean(axis=0)

    def x_sd(self) -> np.ndarray:
        return self._flat(self.x).std(axis=0, ddof=1)

    def v_mean(self, comp: int = 0) -> np.ndarray:
        return self._flat(self.v[comp]).mean(axis=0)

    def v_sd(self, comp: int = 0) -> np.ndarray:
        return self._flat(self.v[comp]).std(axis=0, ddof=1)

    def eta_mean(self, comp: int = 0) -> float:
        return float(self._flat(self.eta)[:, comp].mean())

    def eta_sd(self, comp: int = 0) -> float:
        return float(self._flat(self.eta)[:, comp].std(ddof=1))

    def eta_draws(self, comp: int = 0) -> np.ndarray:
        return self._flat(self.eta)[:, comp]

    def v_draws(self, comp: int = 0) -> np.ndarray:
        return self._flat(self.v[comp])

    def summary(self) -> dict:
        out = {"x_mean": self.x_mean().tolist(), "x_sd": self.x_sd().tolist()}
        for ci, comp in enumerate(self.model.components):
            out[f"{comp.name}.eta_mean"] = self.eta_mean(ci)
            out[f"{comp.name}.eta_sd"] = self.eta_sd(ci)
            out[f"{comp.name}.eta_mcse"] = batch_means_mcse(self.eta_draws(ci))
            out[f"{comp.name}.eta_ess"] = effective_sample_size(self.eta_draws(ci))
            out[f"{comp.name}.v_mean"] = self.v_mean(ci).tolist()
        for name, vals in self.theta.items():
            flat = vals.reshape(-1)
            out[f"theta.{name}.mean"] = float(flat.mean())
            out[f"theta.{name}.sd"] = float(flat.std(ddof=1))
        if self.x.shape[0] > 1:
            out["x_split_rhat_max"] = float(np.max(
                [split_rhat(self.x[:, :, i]) for i in range(self.x.shape[2])]))
        return out


def gibbs_conditional_v_params(dx: np.ndarray, h: np.ndarray, eta: float) -> GigParams:
    """Conditional GIG parameters of V given the increments and eta.

    Delegates to the coordinate-ascent V update with the squared increment
    draws in place of their expectations.
    """
    return svi_update_v(dx**2, h, eta_inv_mean=1.0 / eta)


def gibbs_conditional_eta_params(v: np.ndarray, h: np.ndarray, alpha: float) -> GigParams:
    """Conditional GIG parameters of eta given the mixing draws."""
    return svi_update_eta(v, 1.0 / v, h, alpha)


def gibbs_run(model: ModelSpec, y, config: GibbsConfig | None = None) -> GibbsResult:
    """Run the Gibbs sampler; see the module docstring."""
    config = config or GibbsConfig()
    for c in model.components:
        if c.noise.kind != NIG:
            raise ModelError("the Gibbs sampler supports NIG noise only")
    approximate = model.likelihood.kind != GAUSSIAN
    y = np.asarray(y, dtype=float)

    n_keep = (config.iterations - config.burn_in) // config.thinning
    comps = model.components
    xs = np.empty((config.chains, n_keep, 0))
    vs = [np.empty((config.chains, n_keep, c.n_rows)) for c in comps]
    etas = np.empty((config.chains, n_keep, len(comps)))
    theta_store: dict[str, np.ndarray] = {}

    root = np.random.SeedSequence(config.seed)
    for chain, seq in enumerate(root.spawn(config.chains)):
        rng = np.random.default_rng(seq)
        cx, cv, ce, cth = _run_chain(model, y, config, rng)
        if xs.shape[2] == 0:
            xs = np.empty((config.chains, n_keep, cx.shape[1]))
            for name in cth:
                theta_store[name] = np.empty((config.chains, n_keep))
        xs[chain] = cx
        for ci in range(len(comps)):
            vs[ci][chain] = cv[ci]
        etas[chain] = ce
        for name, vals in cth.items():
            theta_store[name][chain] = vals

    return GibbsResult(x=xs, v=vs, eta=etas, theta=theta_store, model=model,
                       config=config, approximate_x_step=approximate)


def _run_chain(model: ModelSpec, y, config: GibbsConfig, rng: np.random.Generator):
    comps = model.components
    v = [c.h.copy() for c in comps]
    eta = np.array([rng.exponential(1.0 / c.noise.eta_prior_rate) for c in comps])

    n_keep = (config.iterations - config.burn_in) // config.thinning
    cx = None
    cv = [np.empty((n_keep, c.n_rows)) for c in comps]
    ce = np.empty((n_keep, len(comps)))
    cth: dict[str, np.ndarray] = {}
    warm = None
    kept = 0

    for sweep in range(config.iterations):
        weights = ([1.0 / c.h for c in comps] if config.fix_v
                   else [1.0 / vi for vi in v])
        spec = LgmSpec(model, v_minus=weights, grid=config.grid, jitter=config.jitter)
        try:
            post = hyper_posterior(spec, y, t0=warm)
        except NumericalError as err:
            raise NumericalError(f"Gibbs sweep {sweep}: {err}") from err
        warm = post.mode_t if post.mode_t.size else None
        x_draw, ks = sample_posterior(post, 1, rng)
        x_draw = x_draw[0]
        point = post.points[ks[0]]

        if not config.fix_v:
            for ci, comp in enumerate(comps):
                dx = np.asarray(point.d_all[post.row_slices[ci]] @ x_draw).ravel()
                v[ci] = np.atleast_1d(gig_sample(
                    gibbs_conditional_v_params(dx, comp.h, eta[ci]), rng))
                eta[ci] = gig_sample(
                    gibbs_conditional_eta_params(v[ci], comp.h,
                                                 comp.noise.eta_prior_rate), rng)

        if sweep >= config.burn_in and (sweep - config.burn_in) % config.thinning == 0:
            if cx is None:
                cx = np.empty((n_keep, x_draw.shape[0]))
                for name in point.theta:
                    cth[name] = np.empty(n_keep)
            cx[kept] = x_draw
            for ci in range(len(comps)):
                cv[ci][kept] = v[ci]
            ce[kept] = eta
            for name, val in point.theta.items():
                cth[name][kept] = val
            kept += 1

    return cx, cv, ce, cth


# ---------------------------------------------------------------------------
# Chain summaries
# ---------------------------------------------------------------------------

def batch_means_mcse(draws: np.ndarray) -> float:
    """Monte Carlo standard error of the mean by the batch-means method."""
    draws = np.asarray(draws, dtype=float).ravel()
    n = draws.size
    b = max(int(np.sqrt(n)), 2)
    k = n // b
    if k < 2:
        return float(draws.std(ddof=1) / np.sqrt(n))
    means = draws[: k * b].reshape(k, b).mean(axis=1)
    return float(means.std(ddof=1) / np.sqrt(k))


def effective_sample_size(draws: np.ndarray) -> float:
    """ESS from the initial positive sequence of autocorrelations."""
    draws = np.asarray(draws, dtype=float).ravel()
    n = draws.size
    centered = draws - draws.mean()
    var = centered @ centered / n
    if var == 0.0 or n < 10:
        return float(n)
    rho_sum = 0.0
    for lag in range(1, n // 2):
        rho = (centered[:-lag] @ centered[lag:]) / ((n - lag) * var)
        if rho <= 0.0:
            break
        rho_sum += rho
    return float(n / (1.0 + 2.0 * rho_sum))


def split_rhat(chains: np.ndarray) -> float:
    """Split-Rhat over (chains, draws)."""
    chains = np.asarray(chains, dtype=float)
    m, n = chains.shape
    half = n // 2
    parts = chains[:, :2 * half].reshape(2 * m, half)
    means = parts.mean(axis=1)
    b = half * means.var(ddof=1)
    w = parts.var(axis=1, ddof=1).mean()
    if w == 0.0:
        return 1.0
    var_hat = (half - 1) / half * w + b / half
    return float(np.sqrt(var_hat / w))
