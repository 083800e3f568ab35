"""Driving-noise families for non-Gaussian latent increments.

Each family is a normal variance-mean mixture: increment_i | V_i is
N(0, V_i) and the mixing variable V_i has a GIG-form prior indexed by the
tail parameter eta and the per-row constant h_i:

* NIG:       V | eta ~ InverseGaussian(h, h^2 / eta)  = GIG(-1/2, 1/eta, h^2/eta)
* t-Student: V | eta ~ InverseGamma(eta/2, eta/2)     = GIG(-eta/2, 0, eta)
* GAL:       V | eta ~ Gamma(h/eta, rate=1/eta)       = GIG(h/eta, 2/eta, 0)

eta -> 0 recovers the Gaussian model for NIG and GAL; for t-Student eta is
the degrees of freedom.  The t-Student family requires h = 1 (discrete-space
models only, since its mixing law is not closed under convolution).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ModelError
from .gig import GigParams, gig_sample

NIG = "nig"
T_STUDENT = "t-student"
GAL = "gal"
_KINDS = (NIG, T_STUDENT, GAL)


@dataclass(frozen=True)
class NoiseFamily:
    """Driving-noise specification.

    ``eta_prior_rate`` is the rate of the exponential prior on eta.  For the
    t-Student family an arbitrary prior density may be supplied through
    ``eta_log_prior`` (log density of eta); the exponential prior is the
    default for all three families.
    """

    kind: str = NIG
    eta_prior_rate: float = 5.0
    eta_log_prior: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ModelError(f"unknown noise kind {self.kind!r}; expected one of {_KINDS}")
        if not (np.isfinite(self.eta_prior_rate) and self.eta_prior_rate > 0):
            raise ModelError("eta_prior_rate must be positive")

    def log_prior_eta(self, eta):
        if self.eta_log_prior is not None:
            return self.eta_log_prior(eta)
        return np.log(self.eta_prior_rate) - self.eta_prior_rate * np.asarray(eta)


def mixing_prior(family: NoiseFamily, eta: float, h=1.0) -> GigParams:
    """GIG parameters of the conditional mixing law V | eta.

    ``h`` may be a scalar or a vector of per-row constants.
    """
    h = np.asarray(h, dtype=float)
    if not (np.isfinite(eta) and eta > 0):
        raise ModelError("mixing_prior: eta must be positive")
    if np.any(h <= 0):
        raise ModelError("mixing_prior: h must be positive")
    if family.kind == NIG:
        return GigParams(np.broadcast_to(-0.5, h.shape) if h.ndim else -0.5,
                         1.0 / eta, h * h / eta)
    if family.kind == T_STUDENT:
        if np.any(h != 1.0):
            raise ModelError("t-Student noise requires h = 1 (discrete-space models)")
        # Inverse-Gamma(eta/2, eta/2); note p = -eta/2 so that a = 0 is a
        # valid GIG boundary.
        p = np.broadcast_to(-eta / 2.0, h.shape) if h.ndim else -eta / 2.0
        b = np.broadcast_to(eta, h.shape) if h.ndim else eta
        return GigParams(p, 0.0, b)
    # GAL: Gamma(shape = h/eta, rate = 1/eta)
    return GigParams(h / eta, 2.0 / eta, 0.0)


def simulate_noise(family: NoiseFamily, eta: float, h, rng: np.random.Generator):
    """Simulate standardized driving noise via the two-stage mixture.

    ``eta = 0`` yields the Gaussian limit exactly (V = h).
    """
    h = np.atleast_1d(np.asarray(h, dtype=float))
    if np.any(h <= 0):
        raise ModelError("simulate_noise: h must be positive")
    if eta == 0.0:
        if family.kind == T_STUDENT:
            raise ModelError("t-Student noise has no eta = 0 limit")
        v = h.copy()
    else:
        v = gig_sample(mixing_prior(family, eta, h), rng)
        v = np.atleast_1d(np.asarray(v))
    return rng.standard_normal(h.shape) * np.sqrt(v)
