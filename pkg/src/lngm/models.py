"""Model library: dependency matrices, latent components, model specs.

A latent component is defined by a sparse dependency matrix D (m rows by n
latent entries) such that D x equals the driving-noise vector, per-row
constants h, and a driving-noise family.  The builders below produce the
standard matrices for i.i.d., random-walk, autoregressive, SAR and ICAR
components; arbitrary matrices (e.g. externally assembled Matern/SPDE
operators) go through :func:`build_custom`.

Hyperparameters attached to a component (scale precision, autocorrelation)
are carried as :class:`HyperSetting` values; the inference engine decides
whether they sit on the hyperparameter grid or stay fixed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .errors import ModelError
from .noise import NIG, T_STUDENT, NoiseFamily

GAUSSIAN = "gaussian"
POISSON = "poisson"
BERNOULLI = "bernoulli"


@dataclass(frozen=True)
class HyperSetting:
    """A scalar hyperparameter: either fixed or given a prior.

    ``kind`` selects the unbounded transform used by the grid engine:
    "positive" (log) or "corr" (Fisher-style logit onto (-1, 1)).
    ``prior`` is ("gamma", shape, rate) for positive parameters or
    ("uniform",) for correlations; ignored when ``fixed``.
    """

    value: float
    fixed: bool = True
    prior: tuple = ()
    kind: str = "positive"

    def __post_init__(self):
        if self.kind not in ("positive", "corr"):
            raise ModelError(f"unknown hyperparameter kind {self.kind!r}")
        if self.kind == "positive" and not self.value > 0:
            raise ModelError("positive hyperparameter must have value > 0")
        if self.kind == "corr" and not -1 < self.value < 1:
            raise ModelError("correlation hyperparameter must lie in (-1, 1)")
        if not self.fixed and not self.prior:
            raise ModelError("free hyperparameter needs a prior")


def fixed(value: float, kind: str = "positive") -> HyperSetting:
    return HyperSetting(value=value, kind=kind)


def gamma_prior(shape: float, rate: float, init: float | None = None) -> HyperSetting:
    return HyperSetting(value=init if init is not None else shape / rate,
                        fixed=False, prior=("gamma", shape, rate), kind="positive")


def uniform_corr_prior(init: float = 0.0) -> HyperSetting:
    return HyperSetting(value=init, fixed=False, prior=("uniform",), kind="corr")


@dataclass(frozen=True)
class LatentComponent:
    """One latent random effect: D x_c = driving noise."""

    name: str
    d_matrix: sp.csr_matrix
    h: np.ndarray
    noise: NoiseFamily = field(default_factory=NoiseFamily)
    precision: HyperSetting = field(default_factory=lambda: fixed(1.0))
    rho: HyperSetting | None = None
    d_builder: Callable[[float], sp.csr_matrix] | None = None
    sum_to_zero: bool = False

    def __post_init__(self):
        d = sp.csr_matrix(self.d_matrix)
        h = np.atleast_1d(np.asarray(self.h, dtype=float))
        if h.shape != (d.shape[0],):
            raise ModelError(
                f"component {self.name!r}: h has length {h.shape[0]}, "
                f"expected one entry per row of D ({d.shape[0]})")
        if np.any(h <= 0) or not np.all(np.isfinite(h)):
            raise ModelError(f"component {self.name!r}: h must be positive and finite")
        if self.noise.kind == T_STUDENT and np.any(h != 1.0):
            raise ModelError("t-Student noise requires h = 1 (discrete-space models)")
        object.__setattr__(self, "d_matrix", d)
        object.__setattr__(self, "h", h)

    @property
    def n_rows(self) -> int:
        return self.d_matrix.shape[0]

    @property
    def n_latent(self) -> int:
        return self.d_matrix.shape[1]

    def base_matrix(self, rho_value: float | None = None) -> sp.csr_matrix:
        if rho_value is None or self.d_builder is None:
            return self.d_matrix
        return self.d_builder(rho_value)

    def with_noise(self, noise: NoiseFamily) -> "LatentComponent":
        return replace(self, noise=noise)


@dataclass(frozen=True)
class Likelihood:
    kind: str = GAUSSIAN
    precision: HyperSetting = field(default_factory=lambda: fixed(1.0))

    def __post_init__(self):
        if self.kind not in (GAUSSIAN, POISSON, BERNOULLI):
            raise ModelError(f"unknown likelihood {self.kind!r}")


@dataclass(frozen=True)
class ModelSpec:
    """Full model: latent components, optional fixed effects, likelihood.

    ``obs_maps`` holds one sparse matrix per component mapping its latent
    vector into the linear predictor of each data row; ``None`` entries mean
    the identity map (data row i observes latent entry i).
    """

    components: tuple[LatentComponent, ...]
    likelihood: Likelihood
    n_data: int
    obs_maps: tuple[sp.csr_matrix | None, ...] | None = None
    fixed_effects: np.ndarray | None = None
    fixed_effects_precision: float = 1e-6

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ModelError("model needs at least one latent component")
        maps = self.obs_maps
        if maps is None:
            maps = tuple(None for _ in comps)
        maps = tuple(maps)
        if len(maps) != len(comps):
            raise ModelError("obs_maps must have one entry per component")
        checked = []
        for comp, amap in zip(comps, maps):
            if amap is None:
                if comp.n_latent != self.n_data:
                    raise ModelError(
                        f"component {comp.name!r}: identity observation map needs "
                        f"n_latent == n_data ({comp.n_latent} != {self.n_data})")
                checked.append(None)
            else:
                amap = sp.csr_matrix(amap)
                if amap.shape != (self.n_data, comp.n_latent):
                    raise ModelError(
                        f"component {comp.name!r}: observation map shape {amap.shape} "
                        f"!= ({self.n_data}, {comp.n_latent})")
                checked.append(amap)
        fe = self.fixed_effects
        if fe is not None:
            fe = np.atleast_2d(np.asarray(fe, dtype=float))
            if fe.shape[0] != self.n_data:
                raise ModelError(
                    f"fixed-effects design has {fe.shape[0]} rows, expected {self.n_data}")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "obs_maps", tuple(checked))
        object.__setattr__(self, "fixed_effects", fe)

    @property
    def n_latent(self) -> int:
        return sum(c.n_latent for c in self.components)

    @property
    def n_fixed(self) -> int:
        return 0 if self.fixed_effects is None else self.fixed_effects.shape[1]


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------

def build_ar1(n: int, rho: float, rho_setting: HyperSetting | None = None,
              **kw) -> LatentComponent:
    """First-order autoregression; stationary leading row sqrt(1 - rho^2).

    ``rho_setting`` optionally puts a prior on the autocorrelation; by
    default it stays fixed at ``rho``.
    """
    if n < 2:
        raise ModelError("build_ar1: n must be >= 2")
    if not -1 < rho < 1:
        raise ValueError("build_ar1: rho must lie in (-1, 1)")

    def build(r: float) -> sp.csr_matrix:
        rows = np.concatenate(([0], np.arange(1, n), np.arange(1, n)))
        cols = np.concatenate(([0], np.arange(0, n - 1), np.arange(1, n)))
        vals = np.concatenate(([np.sqrt(1.0 - r * r)],
                               np.full(n - 1, -r), np.ones(n - 1)))
        return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))

    kw.setdefault("name", "ar1")
    rho_setting = rho_setting if rho_setting is not None else fixed(rho, "corr")
    return LatentComponent(d_matrix=build(rho), h=np.ones(n), d_builder=build,
                           rho=rho_setting, **kw)


def build_rw1(n: int, **kw) -> LatentComponent:
    """First differences: (n-1) x n."""
    if n < 2:
        raise ModelError("build_rw1: n must be >= 2")
    d = sp.diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1],
                 shape=(n - 1, n), format="csr")
    kw.setdefault("name", "rw1")
    return LatentComponent(d_matrix=d, h=np.ones(n - 1), **kw)


def build_rw2(n: int, **kw) -> LatentComponent:
    """Second differences: (n-2) x n."""
    if n < 3:
        raise ModelError("build_rw2: n must be >= 3")
    d = sp.diags([np.ones(n - 2), -2.0 * np.ones(n - 2), np.ones(n - 2)],
                 [0, 1, 2], shape=(n - 2, n), format="csr")
    kw.setdefault("name", "rw2")
    return LatentComponent(d_matrix=d, h=np.ones(n - 2), **kw)


def build_iid(n: int, **kw) -> LatentComponent:
    if n < 1:
        raise ModelError("build_iid: n must be >= 1")
    kw.setdefault("name", "iid")
    return LatentComponent(d_matrix=sp.eye(n, format="csr"), h=np.ones(n), **kw)


def build_sar(adjacency, rho: float, rho_setting: HyperSetting | None = None,
              **kw) -> LatentComponent:
    """Simultaneous autoregression D = I - rho W, W the row-standardized
    adjacency matrix."""
    w = np.asarray(sp.csr_matrix(adjacency).toarray(), dtype=float)
    n = w.shape[0]
    if w.shape != (n, n):
        raise ModelError("build_sar: adjacency must be square")
    if not np.array_equal(w, w.T):
        raise ModelError("build_sar: adjacency must be symmetric")
    if np.any(np.diag(w) != 0):
        raise ModelError("build_sar: adjacency must have no self-loops")
    if not set(np.unique(w)) <= {0.0, 1.0}:
        raise ModelError("build_sar: adjacency must be 0/1")
    deg = w.sum(axis=1)
    if np.any(deg == 0):
        isolated = np.flatnonzero(deg == 0)
        raise ModelError(
            f"build_sar: isolated node(s) {isolated.tolist()}; "
            "row standardization undefined")
    if not -1 < rho < 1:
        raise ValueError("build_sar: rho must lie in (-1, 1)")
    w_std = sp.csr_matrix(w / deg[:, None])

    def build(r: float) -> sp.csr_matrix:
        return sp.csr_matrix(sp.eye(n) - r * w_std)

    kw.setdefault("name", "sar")
    rho_setting = rho_setting if rho_setting is not None else fixed(rho, "corr")
    return LatentComponent(d_matrix=build(rho), h=np.ones(n), d_builder=build,
                           rho=rho_setting, **kw)


def build_icar(edges, n: int | None = None, **kw) -> LatentComponent:
    """Intrinsic CAR: one row per undirected edge, +1 at the lower node
    index and -1 at the higher one, so D^T D is the graph Laplacian."""
    edges = [(int(i), int(j)) for i, j in edges]
    if not edges:
        raise ModelError("build_icar: empty edge list")
    if any(i == j for i, j in edges):
        raise ModelError("build_icar: self-loop in edge list")
    n_nodes = n if n is not None else max(max(i, j) for i, j in edges) + 1
    if any(i >= n_nodes or j >= n_nodes or i < 0 or j < 0 for i, j in edges):
        raise ModelError("build_icar: edge index out of range")
    m = len(edges)
    rows = np.repeat(np.arange(m), 2)
    cols = np.array([[min(i, j), max(i, j)] for i, j in edges]).ravel()
    vals = np.tile([1.0, -1.0], m)
    d = sp.csr_matrix((vals, (rows, cols)), shape=(m, n_nodes))
    kw.setdefault("name", "icar")
    return LatentComponent(d_matrix=d, h=np.ones(m), **kw)


def build_ar_p(n: int, autocorrs, **kw) -> LatentComponent:
    """Autoregression of order p; Toeplitz with the lag coefficients on the
    lower diagonals.  The first p rows are identity rows (diffuse start)."""
    phi = np.atleast_1d(np.asarray(autocorrs, dtype=float))
    p = len(phi)
    if p < 1:
        raise ModelError("build_ar_p: need at least one autocorrelation")
    if n <= p:
        raise ModelError("build_ar_p: n must exceed the order")
    diagonals = [np.ones(n)]
    offsets = [0]
    for k, coeff in enumerate(phi, start=1):
        col = np.full(n - k, -coeff)
        col[: max(p - k, 0)] = 0.0  # keep the first p rows as identity
        diagonals.append(col)
        offsets.append(-k)
    d = sp.diags(diagonals, offsets, shape=(n, n), format="csr")
    kw.setdefault("name", f"ar{p}")
    return LatentComponent(d_matrix=d, h=np.ones(n), **kw)


def build_custom(d_matrix, h, **kw) -> LatentComponent:
    """Wrap a user-supplied dependency matrix (e.g. kappa^2 C + G operators
    assembled elsewhere) with explicit h constants."""
    d = sp.csr_matrix(d_matrix)
    h = np.atleast_1d(np.asarray(h, dtype=float))
    if h.shape != (d.shape[0],):
        raise ModelError(
            f"build_custom: h has length {h.shape[0]}, expected {d.shape[0]}")
    kw.setdefault("name", "custom")
    return LatentComponent(d_matrix=d, h=h, **kw)


def observation_matrix(n_data: int, n_latent: int, index, weight=None) -> sp.csr_matrix:
    """Sparse map placing data row i on latent entry index[i] with optional
    weight (defaults to 1); used for shared/repeated latent entries."""
    index = np.asarray(index, dtype=int)
    if index.shape != (n_data,):
        raise ModelError("observation_matrix: index must have one entry per data row")
    if np.any(index < 0) or np.any(index >= n_latent):
        raise ModelError("observation_matrix: latent index out of range")
    w = np.ones(n_data) if weight is None else np.asarray(weight, dtype=float)
    return sp.csr_matrix((w, (np.arange(n_data), index)), shape=(n_data, n_latent))
