"""scikit-learn style front end for the EM estimator."""

import math

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .estimator import EmOptions, ReparamState, map_em
from .posterior import SymbolPrior, as_observed, posterior_batch
from .signal_model import apply_cfo


class SparseChannelEstimator(BaseEstimator):
    """Joint sparse-channel, CFO and noise-level estimator for one OFDM frame.

    ``fit`` takes a frame (a simulator ``FrameInstance`` or an
    ``ObservedFrame``) rather than a design matrix: the observation model is
    fixed and each frame is a single sample.

    Parameters
    ----------
    mode : {"map", "ml"}
        ``"map"`` uses the Laplace prior on the scaled taps, ``"ml"`` drops it.
    tau : "auto" or float
        Prior scale. ``"auto"`` uses the empirical-Bayes value from an
        unregularized full-training pilot run.
    max_iter : int or None
        Iteration cap; ``None`` means 100 with full training, 300 otherwise.
    tol_g, tol_eps, tol_rho : float
        Stopping thresholds on the relative change of ``g``, the absolute
        change of ``epsilon`` and the relative change of ``rho``.
    cfo_grid_points : int
        Coarse grid size of the CFO search.
    cfo_bracket : float
        Half width of the local CFO search after the first iteration.
    estimate_epsilon : bool
        Hold the CFO at its initial value when false.
    engine : {"batch", "sequential"}
        Symbol posterior implementation.
    prior_variance : float
        Per real component variance of the unknown samples.

    Attributes
    ----------
    h_ : ndarray of complex, shape (L,)
    epsilon_, sigma_, tau_ : float
    posterior_ : PosteriorMoments
    trace_ : EmTrace
    layout_ : CompositeLayout
    n_iter_ : int
    converged_ : bool
    """

    def __init__(
        self,
        mode="map",
        tau="auto",
        max_iter=None,
        tol_g=1e-6,
        tol_eps=1e-7,
        tol_rho=1e-6,
        cfo_grid_points=256,
        cfo_bracket=0.02,
        estimate_epsilon=True,
        engine="batch",
        prior_variance=0.5,
    ):
        self.mode = mode
        self.tau = tau
        self.max_iter = max_iter
        self.tol_g = tol_g
        self.tol_eps = tol_eps
        self.tol_rho = tol_rho
        self.cfo_grid_points = cfo_grid_points
        self.cfo_bracket = cfo_bracket
        self.estimate_epsilon = estimate_epsilon
        self.engine = engine
        self.prior_variance = prior_variance

    def _options(self):
        return EmOptions(**self.get_params())

    def fit(self, X, y=None, init=None, pilot=None):
        """Estimate channel, CFO and noise level from frame ``X``; ``y`` is ignored."""
        res = map_em(X, self._options(), init=init, pilot=pilot)
        self.h_ = res.channel.taps
        self.epsilon_ = res.epsilon
        self.sigma_ = res.sigma
        self.tau_ = res.tau
        self.posterior_ = res.posterior
        self.trace_ = res.trace
        self.n_iter_ = res.n_iter
        self.converged_ = res.converged
        self.result_ = res
        self.layout_ = as_observed(X).layout
        return self

    def _posterior(self, X):
        obs = as_observed(X)
        if obs.channel_len != self.h_.size:
            raise ValueError(f"frame expects {obs.channel_len} taps, model has {self.h_.size}")
        prior = SymbolPrior.isotropic(obs.layout.n_unknown, self.prior_variance)
        h_bar = np.concatenate([self.h_.real, self.h_.imag])
        tau = self.tau_ if math.isfinite(self.tau_) else math.inf
        state = ReparamState.from_physical(h_bar, self.epsilon_, self.sigma_, tau)
        return obs, posterior_batch(obs.y, state, prior, obs)

    def predict(self, X=None):
        """Posterior mean of the unknown transmit samples.

        Without ``X`` the posterior of the fitted frame is returned; otherwise
        the fitted channel, CFO and noise level are applied to frame ``X``.
        """
        check_is_fitted(self, "h_")
        if X is None:
            layout, post = self.layout_, self.posterior_
        else:
            obs, post = self._posterior(X)
            layout = obs.layout
        return layout.unknown_to_complex(post.mean)[layout.unknown_index]

    def transform(self, X):
        """Received samples with the estimated CFO removed."""
        check_is_fitted(self, "h_")
        return apply_cfo(-self.epsilon_, as_observed(X).r)

    def score(self, X, y=None):
        """Log evidence ``log p(y | h, eps, sigma)`` of frame ``X`` under the fitted parameters."""
        check_is_fitted(self, "h_")
        return float(self._posterior(X)[1].log_evidence)
