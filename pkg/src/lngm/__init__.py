"""Inference for latent non-Gaussian Markov random field models.

Latent fields whose increments D x are driven by heavy-tailed
(normal variance-mixture) noise, fitted by structured / collapsed
coordinate-ascent variational Bayes around a Laplace-approximation
latent-Gaussian solver, with a Gibbs sampler as the sampling oracle.
"""

from .bessel import log_bessel_k
from .errors import ModelError, NumericalError
from .gig import (GigParams, gig_entropy, gig_log_moment, gig_log_pdf,
                  gig_moment, gig_sample, tabulated_inverse_cdf)
from .lgm import (GridConfig, LgmPosterior, LgmSpec, dx_second_moments,
                  hyper_posterior, laplace_conditional, sample_posterior)
from .models import (BERNOULLI, GAUSSIAN, POISSON, HyperSetting, LatentComponent,
                     Likelihood, ModelSpec, build_ar1, build_ar_p, build_custom,
                     build_icar, build_iid, build_rw1, build_rw2, build_sar,
                     fixed, gamma_prior, observation_matrix, uniform_corr_prior)
from .noise import GAL, NIG, T_STUDENT, NoiseFamily, mixing_prior, simulate_noise
from .vb import (SCVI, SVI, VbConfig, VbResult, VbState, elbo, run,
                 scvi_eta_log_kernel, scvi_update_v, svi_update_eta, svi_update_v)

__version__ = "0.1.0"

__all__ = [
    "log_bessel_k", "ModelError", "NumericalError",
    "GigParams", "gig_log_pdf", "gig_moment", "gig_sample", "gig_log_moment",
    "gig_entropy", "tabulated_inverse_cdf",
    "GridConfig", "LgmSpec", "LgmPosterior", "laplace_conditional",
    "hyper_posterior", "dx_second_moments", "sample_posterior",
    "HyperSetting", "LatentComponent", "Likelihood", "ModelSpec",
    "build_ar1", "build_ar_p", "build_custom", "build_icar", "build_iid",
    "build_rw1", "build_rw2", "build_sar", "fixed", "gamma_prior",
    "uniform_corr_prior", "observation_matrix",
    "GAUSSIAN", "POISSON", "BERNOULLI",
    "NoiseFamily", "NIG", "T_STUDENT", "GAL", "mixing_prior", "simulate_noise",
    "VbConfig", "VbResult", "VbState", "SVI", "SCVI", "run", "elbo",
    "svi_update_v", "svi_update_eta", "scvi_eta_log_kernel", "scvi_update_v",
]
