"""Inner solver: Laplace-approximated latent Gaussian model posteriors.

Fits pi(x, theta | y) for a :class:`~lngm.models.ModelSpec` whose latent
precision is Q(theta) = D_all(theta)^T diag(w) D_all(theta), where w holds
the current inverse-mixing weights (E[1/V] per dependency row, ones for the
fixed-effect block) and D_all stacks sqrt(precision_c) * D_c(rho_c) over
components plus a diffuse identity block for fixed effects.

The hyperparameter posterior is evaluated on a regular grid in transformed
space centered at the numerically located mode of the Laplace marginal,
with +/- a few approximate posterior standard deviations per axis.  The
joint posterior of x is the weight-mixed collection of per-point Gaussians;
all downstream consumers need only means and second moments, which the
mixture supplies exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize
from scipy.special import expit, gammaln, logsumexp

from .errors import ModelError, NumericalError
from .factor import SymmetricFactor, fill_reducing_permutation
from .models import BERNOULLI, GAUSSIAN, POISSON, ModelSpec

_MAX_FREE_HYPERS = 4
_NEWTON_MAX_ITER = 100


@dataclass(frozen=True)
class GridConfig:
    points_per_dim: int = 9
    sd_multiplier: float = 3.0

    def __post_init__(self):
        if self.points_per_dim < 1 or self.points_per_dim % 2 == 0:
            raise ModelError("points_per_dim must be a positive odd integer")


@dataclass
class LgmSpec:
    """Model plus the current inverse-mixing weights (None means 1/h)."""

    model: ModelSpec
    v_minus: Sequence[np.ndarray] | None = None
    grid: GridConfig = field(default_factory=GridConfig)
    jitter: float = 1e-8


# ---------------------------------------------------------------------------
# Hyperparameter bookkeeping
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Hyper:
    name: str
    kind: str          # "positive" | "corr"
    prior: tuple
    init: float        # natural scale
    target: tuple      # ("lik",) | ("comp", idx, "precision") | ("comp", idx, "rho")


def _to_t(kind: str, v: float) -> float:
    if kind == "positive":
        return float(np.log(v))
    return float(np.log1p(v) - np.log1p(-v))


def _to_nat(kind: str, t: float) -> float:
    if kind == "positive":
        return float(np.exp(t))
    return float(np.tanh(0.5 * t))


def _log_prior_t(h: _Hyper, nat: float) -> float:
    """Hyperprior density in transformed space (natural prior + Jacobian)."""
    if h.kind == "positive":
        if h.prior and h.prior[0] == "gamma":
            _, shape, rate = h.prior
            return float(shape * np.log(rate) - gammaln(shape)
                         + shape * np.log(nat) - rate * nat)
        raise ModelError(f"unsupported prior {h.prior!r} for {h.name!r}")
    if h.prior and h.prior[0] == "uniform":
        return float(np.log(0.5) + np.log((1.0 - nat * nat) / 2.0))
    raise ModelError(f"unsupported prior {h.prior!r} for {h.name!r}")


class _Compiled:
    """Structure shared by every fit of the same model."""

    def __init__(self, model: ModelSpec):
        self.model = model
        self._d_cache: dict = {}
        comps = model.components
        offs_lat = np.cumsum([0] + [c.n_latent for c in comps])
        offs_row = np.cumsum([0] + [c.n_rows for c in comps])
        self.latent_slices = [slice(offs_lat[i], offs_lat[i + 1]) for i in range(len(comps))]
        self.row_slices = [slice(offs_row[i], offs_row[i + 1]) for i in range(len(comps))]
        self.n_comp_latent = int(offs_lat[-1])
        self.n_comp_rows = int(offs_row[-1])
        self.n_fixed = model.n_fixed
        self.n_total = self.n_comp_latent + self.n_fixed
        self.beta_slice = slice(self.n_comp_latent, self.n_total)

        blocks = []
        for comp, amap in zip(comps, model.obs_maps):
            blocks.append(sp.eye(comp.n_latent, format="csr") if amap is None else amap)
        if model.fixed_effects is not None:
            blocks.append(sp.csr_matrix(model.fixed_effects))
        self.a_full = sp.hstack(blocks, format="csr")

        hypers: list[_Hyper] = []
        lik = model.likelihood
        if lik.kind == GAUSSIAN:
            if not lik.precision.fixed:
                hypers.append(_Hyper("lik.precision", "positive", lik.precision.prior,
                                     lik.precision.value, ("lik",)))
        elif not lik.precision.fixed:
            raise ModelError(f"{lik.kind} likelihood has no free precision parameter")
        for i, comp in enumerate(comps):
            if not comp.precision.fixed:
                hypers.append(_Hyper(f"{comp.name}.precision", "positive",
                                     comp.precision.prior, comp.precision.value,
                                     ("comp", i, "precision")))
            if comp.rho is not None and not comp.rho.fixed:
                if comp.d_builder is None:
                    raise ModelError(
                        f"component {comp.name!r} has a free rho but no matrix builder")
                hypers.append(_Hyper(f"{comp.name}.rho", "corr", comp.rho.prior,
                                     comp.rho.value, ("comp", i, "rho")))
        if len(hypers) > _MAX_FREE_HYPERS:
            raise ModelError(
                f"{len(hypers)} free hyperparameters exceeds the engine limit "
                f"of {_MAX_FREE_HYPERS}")
        self.hypers = hypers

        # Fill-reducing ordering from a structural superset of every Q.
        d_pat = self._assemble_d(self._theta_dict(np.array([h.init for h in hypers])),
                                 absolute=True)
        pattern = (d_pat.T @ d_pat) + (abs(self.a_full).T @ abs(self.a_full))
        self.perm = fill_reducing_permutation(pattern)
        self.constraint = self._build_constraint()

    def _build_constraint(self):
        rows = []
        for comp, slc in zip(self.model.components, self.latent_slices):
            if comp.sum_to_zero:
                r = np.zeros(self.n_total)
                r[slc] = 1.0
                rows.append(r)
        return sp.csr_matrix(np.array(rows)) if rows else None

    def _theta_dict(self, tvec: np.ndarray) -> dict:
        theta = {}
        lik = self.model.likelihood
        if lik.kind == GAUSSIAN:
            theta["lik.precision"] = lik.precision.value
        for comp in self.model.components:
            theta[f"{comp.name}.precision"] = comp.precision.value
            if comp.rho is not None:
                theta[f"{comp.name}.rho"] = comp.rho.value
        for h, t in zip(self.hypers, np.atleast_1d(tvec)):
            theta[h.name] = _to_nat(h.kind, float(t))
        return theta

    def _assemble_d(self, theta: dict, absolute: bool = False) -> sp.csr_matrix:
        key = None
        if not absolute:
            key = tuple(theta.get(f"{c.name}.rho") for c in self.model.components) + \
                tuple(theta[f"{c.name}.precision"] for c in self.model.components)
            cached = self._d_cache.get(key)
            if cached is not None:
                return cached
        blocks = []
        for comp in self.model.components:
            rho = theta.get(f"{comp.name}.rho")
            d = comp.base_matrix(rho)
            tau = theta[f"{comp.name}.precision"]
            d = d * np.sqrt(tau)
            blocks.append(abs(d) if absolute else d)
        d_all = sp.block_diag(blocks, format="csr")
        if self.n_fixed:
            d_all = sp.block_diag(
                [d_all, sp.eye(self.n_fixed) * np.sqrt(self.model.fixed_effects_precision)],
                format="csr")
        d_all = sp.csr_matrix(d_all)
        if key is not None:
            if len(self._d_cache) > 256:
                self._d_cache.clear()
            self._d_cache[key] = d_all
        return d_all

    def weights_vector(self, v_minus: Sequence[np.ndarray] | None) -> np.ndarray:
        parts = []
        for i, comp in enumerate(self.model.components):
            if v_minus is None:
                parts.append(1.0 / comp.h)
            else:
                w = np.asarray(v_minus[i], dtype=float)
                if w.shape != (comp.n_rows,):
                    raise ModelError(
                        f"v_minus[{i}] has shape {w.shape}, expected ({comp.n_rows},)")
                parts.append(w)
        if self.n_fixed:
            parts.append(np.ones(self.n_fixed))
        return np.concatenate(parts)


def _compiled(model: ModelSpec) -> _Compiled:
    cache = getattr(model, "_engine_cache", None)
    if cache is None:
        cache = _Compiled(model)
        object.__setattr__(model, "_engine_cache", cache)
    return cache


# ---------------------------------------------------------------------------
# Likelihood terms
# ---------------------------------------------------------------------------

def _lik_value(kind, y, eta, tau):
    if kind == GAUSSIAN:
        return float(np.sum(0.5 * np.log(tau / (2.0 * np.pi))
                            - 0.5 * tau * (y - eta) ** 2))
    if kind == POISSON:
        return float(np.sum(y * eta - np.exp(eta) - gammaln(y + 1.0)))
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def _lik_grad_curv(kind, y, eta, tau):
    if kind == GAUSSIAN:
        return tau * (y - eta), np.full_like(eta, tau)
    if kind == POISSON:
        lam = np.exp(np.minimum(eta, 35.0))
        return y - lam, np.maximum(lam, 1e-10)
    p = expit(eta)
    return y - p, np.maximum(p * (1.0 - p), 1e-10)


# ---------------------------------------------------------------------------
# Single-theta Laplace fit
# ---------------------------------------------------------------------------

@dataclass
class LaplaceFit:
    theta: dict
    mode: np.ndarray
    factor: SymmetricFactor
    prior_logdet: float
    log_marginal: float        # Laplace marginal incl. hyperprior, transformed scale
    d_all: sp.csr_matrix
    mean: np.ndarray           # constraint-corrected mean
    sigma_ct: np.ndarray | None
    b_inv: np.ndarray | None
    constraint: sp.csr_matrix | None

    def correct_draws(self, draws: np.ndarray) -> np.ndarray:
        if self.constraint is None:
            return draws
        cx = np.asarray(self.constraint @ draws.T)
        return draws - (self.sigma_ct @ (self.b_inv @ cx)).T

    def marginal_var_diag(self) -> np.ndarray:
        diag = self.factor.inverse_diag()
        if self.constraint is not None:
            diag = diag - np.einsum("ik,kl,il->i", self.sigma_ct, self.b_inv, self.sigma_ct)
        return np.maximum(diag, 0.0)

    def dx_diag(self, d: sp.spmatrix) -> np.ndarray:
        out = self.factor.inv_quadratic_diag(d)
        if self.constraint is not None:
            ds = np.asarray(d @ self.sigma_ct)
            out = out - np.einsum("ik,kl,il->i", ds, self.b_inv, ds)
        return np.maximum(out, 0.0)


class NewtonFailure(NumericalError):
    def __init__(self, message: str, last_iterate: np.ndarray):
        super().__init__(message)
        self.last_iterate = last_iterate


def _fit_theta(comp_: _Compiled, tvec: np.ndarray, w: np.ndarray,
               y: np.ndarray, jitter: float) -> LaplaceFit:
    theta = comp_._theta_dict(tvec)
    d_all = comp_._assemble_d(theta)
    q_prior = (d_all.T @ sp.diags(w) @ d_all).tocsc()
    prior_factor = SymmetricFactor(q_prior, comp_.perm, jitter)

    mask = np.isfinite(y)
    a = comp_.a_full[mask]
    y_obs = y[mask]
    kind = comp_.model.likelihood.kind
    tau = theta.get("lik.precision", 1.0)

    if mask.sum() == 0:
        x = np.zeros(comp_.n_total)
        factor = prior_factor
        loglik = 0.0
    elif kind == GAUSSIAN:
        q_post = (q_prior + tau * (a.T @ a)).tocsc()
        factor = SymmetricFactor(q_post, comp_.perm, jitter)
        x = factor.solve(tau * np.asarray(a.T @ y_obs).ravel())
        loglik = _lik_value(kind, y_obs, np.asarray(a @ x).ravel(), tau)
    else:
        x = np.zeros(comp_.n_total)
        factor = None

        def objective(xv):
            return (_lik_value(kind, y_obs, np.asarray(a @ xv).ravel(), tau)
                    - 0.5 * float(xv @ (q_prior @ xv)))

        for _ in range(_NEWTON_MAX_ITER):
            eta = np.asarray(a @ x).ravel()
            g, c = _lik_grad_curv(kind, y_obs, eta, tau)
            q_post = (q_prior + (a.T @ sp.diags(c) @ a)).tocsc()
            factor = SymmetricFactor(q_post, comp_.perm, jitter)
            x_new = factor.solve(np.asarray(a.T @ (c * eta + g)).ravel())
            step = x_new - x
            obj_cur = objective(x)
            scale = 1.0
            obj_new = objective(x + step)
            for _ in range(30):
                if np.isfinite(obj_new) and obj_new >= obj_cur - 1e-12:
                    break
                scale *= 0.5
                obj_new = objective(x + scale * step)
            x = x + scale * step
            if np.max(np.abs(scale * step)) < 1e-9 * (1.0 + np.max(np.abs(x))):
                break
        else:
            raise NewtonFailure(
                f"Laplace Newton iteration did not converge in {_NEWTON_MAX_ITER} steps",
                x)
        loglik = _lik_value(kind, y_obs, np.asarray(a @ x).ravel(), tau)

    quad = float(x @ (q_prior @ x))
    log_marg = (loglik - 0.5 * quad + 0.5 * prior_factor.logdet - 0.5 * factor.logdet)
    for h in comp_.hypers:
        log_marg += _log_prior_t(h, theta[h.name])

    mean = x
    sigma_ct = b_inv = None
    constraint = comp_.constraint
    if constraint is not None:
        sigma_ct = factor.solve(np.asarray(constraint.T.todense()))
        b = np.asarray(constraint @ sigma_ct)
        b_inv = np.linalg.inv(b)
        mean = x - sigma_ct @ (b_inv @ np.asarray(constraint @ x).ravel())

    return LaplaceFit(theta=theta, mode=x, factor=factor,
                      prior_logdet=prior_factor.logdet, log_marginal=log_marg,
                      d_all=d_all, mean=mean, sigma_ct=sigma_ct, b_inv=b_inv,
                      constraint=constraint)


def laplace_conditional(spec: LgmSpec, theta, y) -> LaplaceFit:
    """Gaussian approximation of pi(x | theta, y) at a single theta.

    ``theta`` maps hyperparameter names to natural values; omitted free
    parameters sit at their initial values.
    """
    comp_ = _compiled(spec.model)
    theta = dict(theta or {})
    tvec = np.array([_to_t(h.kind, theta.get(h.name, h.init)) for h in comp_.hypers])
    w = comp_.weights_vector(spec.v_minus)
    y = np.asarray(y, dtype=float)
    if y.shape != (spec.model.n_data,):
        raise ModelError(f"y has shape {y.shape}, expected ({spec.model.n_data},)")
    return _fit_theta(comp_, tvec, w, y, spec.jitter)


# ---------------------------------------------------------------------------
# Hyperparameter grid posterior
# ---------------------------------------------------------------------------

@dataclass
class LgmPosterior:
    points: list[LaplaceFit]
    weights: np.ndarray
    log_evidence: float
    mode_t: np.ndarray
    n_total: int
    latent_slices: list[slice]
    row_slices: list[slice]
    beta_slice: slice

    _mean_cache: np.ndarray | None = None
    _sd_cache: np.ndarray | None = None

    def marginal_mean(self) -> np.ndarray:
        if self._mean_cache is None:
            self._mean_cache = sum(w * p.mean for w, p in zip(self.weights, self.points))
        return self._mean_cache

    def marginal_sd(self) -> np.ndarray:
        if self._sd_cache is None:
            mean = self.marginal_mean()
            second = sum(w * (p.marginal_var_diag() + p.mean**2)
                         for w, p in zip(self.weights, self.points))
            self._sd_cache = np.sqrt(np.maximum(second - mean**2, 0.0))
        return self._sd_cache

    def theta_values(self, name: str) -> np.ndarray:
        return np.array([p.theta[name] for p in self.points])

    def theta_mean(self, name: str) -> float:
        return float(self.weights @ self.theta_values(name))

    def theta_sd(self, name: str) -> float:
        v = self.theta_values(name)
        m = self.weights @ v
        return float(np.sqrt(max(self.weights @ (v - m) ** 2, 0.0)))

    def component_dx_moments(self, comp_idx: int) -> np.ndarray:
        """d_i = E[(D(theta) x)_i^2] for one component, mixed over the grid."""
        rows = self.row_slices[comp_idx]
        out = 0.0
        for w, p in zip(self.weights, self.points):
            d = sp.csr_matrix(p.d_all[rows])
            dmu = np.asarray(d @ p.mean).ravel()
            out = out + w * (dmu**2 + p.dx_diag(d))
        return np.asarray(out)


def hyper_posterior(spec: LgmSpec, y, t0: np.ndarray | None = None) -> LgmPosterior:
    """Grid posterior over free hyperparameters, centered at the mode of the
    Laplace marginal; a single point when every hyperparameter is fixed."""
    comp_ = _compiled(spec.model)
    w = comp_.weights_vector(spec.v_minus)
    y = np.asarray(y, dtype=float)
    if y.shape != (spec.model.n_data,):
        raise ModelError(f"y has shape {y.shape}, expected ({spec.model.n_data},)")
    free = comp_.hypers
    jitter = spec.jitter

    def neg_log_marg(tvec):
        try:
            return -_fit_theta(comp_, np.asarray(tvec, dtype=float), w, y, jitter).log_marginal
        except NumericalError:
            return np.inf

    if not free:
        fit = _fit_theta(comp_, np.array([]), w, y, jitter)
        return LgmPosterior(points=[fit], weights=np.array([1.0]),
                            log_evidence=fit.log_marginal, mode_t=np.array([]),
                            n_total=comp_.n_total, latent_slices=comp_.latent_slices,
                            row_slices=comp_.row_slices, beta_slice=comp_.beta_slice)

    start = np.array([_to_t(h.kind, h.init) for h in free]) if t0 is None else np.asarray(t0, float)
    res = minimize(neg_log_marg, start, method="BFGS",
                   options={"gtol": 1e-5, "maxiter": 200})
    mode_t = res.x
    if not np.isfinite(res.fun):
        raise NumericalError("hyperparameter mode search failed (no finite value)")

    d = len(free)
    step = 1e-3
    hess = np.empty((d, d))
    f0 = res.fun
    for i in range(d):
        for j in range(i, d):
            ei = np.zeros(d); ei[i] = step
            ej = np.zeros(d); ej[j] = step
            fpp = neg_log_marg(mode_t + ei + ej)
            fpm = neg_log_marg(mode_t + ei - ej)
            fmp = neg_log_marg(mode_t - ei + ej)
            fmm = neg_log_marg(mode_t - ei - ej)
            hess[i, j] = hess[j, i] = (fpp - fpm - fmp + fmm) / (4.0 * step * step)
    try:
        cov = np.linalg.inv(hess)
        sds = np.sqrt(np.diag(cov))
        if not np.all(np.isfinite(sds)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        sds = np.ones(d)

    k = spec.grid.points_per_dim
    axes = [mode_t[i] + spec.grid.sd_multiplier * sds[i] * np.linspace(-1.0, 1.0, k)
            for i in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    tgrid = np.stack([m.ravel() for m in mesh], axis=1)

    points, logs = [], []
    for tvec in tgrid:
        try:
            fit = _fit_theta(comp_, tvec, w, y, jitter)
            points.append(fit)
            logs.append(fit.log_marginal)
        except NumericalError as err:
            raise NumericalError(
                f"factorization failed at grid point "
                f"{comp_._theta_dict(tvec)}: {err}") from err
    logs = np.asarray(logs)
    if not np.any(np.isfinite(logs)):
        raise NumericalError("all hyperparameter grid weights underflowed")
    weights = np.exp(logs - np.max(logs))
    weights /= weights.sum()
    log_step = float(np.sum([np.log(ax[1] - ax[0]) for ax in axes])) if k > 1 else 0.0
    log_evidence = float(logsumexp(logs) + log_step)
    return LgmPosterior(points=points, weights=weights, log_evidence=log_evidence,
                        mode_t=mode_t, n_total=comp_.n_total,
                        latent_slices=comp_.latent_slices,
                        row_slices=comp_.row_slices, beta_slice=comp_.beta_slice)


def dx_second_moments(post: LgmPosterior, d_matrix) -> np.ndarray:
    """d_i = E[(D x)_i^2] under the grid-mixed posterior for a fixed D."""
    d = sp.csr_matrix(d_matrix)
    if d.shape[1] != post.n_total:
        raise ModelError(
            f"d_matrix has {d.shape[1]} columns, expected {post.n_total}")
    out = 0.0
    for w, p in zip(post.weights, post.points):
        dmu = np.asarray(d @ p.mean).ravel()
        out = out + w * (dmu**2 + p.dx_diag(d))
    return np.asarray(out)


def sample_posterior(post: LgmPosterior, count: int, rng: np.random.Generator):
    """Joint draws of (x, theta): returns (x draws (count, n), grid indices)."""
    ks = rng.choice(len(post.points), p=post.weights, size=count)
    x = np.empty((count, post.n_total))
    for k in np.unique(ks):
        idx = np.flatnonzero(ks == k)
        p = post.points[k]
        draws = p.mean + p.factor.sample(rng, idx.size)
        x[idx] = p.correct_draws(draws) if p.constraint is not None else draws
    return x, ks
