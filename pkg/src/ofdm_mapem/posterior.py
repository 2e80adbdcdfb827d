"""Posterior moments of the unknown symbols and the expected channel regressors.

Given a parameter iterate ``(hbar, eps, sigma)`` the observation is linear
Gaussian in the unknown block ``chi = [Re x_U, Im x_U]``::

    y = A xbar_T + B chi + eta,    eta ~ N(0, 0.5 sigma^2 I)

so ``p(chi | y)`` is Gaussian. :func:`posterior_batch` conditions on all
``2N`` rows at once; :func:`posterior_sequential` runs a measurement-only
Kalman filter over the constant state ``chi`` one sample (two rows) at a
time. Both return identical moments.
"""

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
from scipy import linalg

from ._validation import check_complex_vector, check_mask, check_permutation
from .signal_model import (
    ChannelImpulseResponse,
    CompositeLayout,
    cfo_phases,
    channel_matrix,
    channel_regressor,
    interleave,
    real_gram,
    real_rows,
    symbol_matrix,
)

LOG_2PI = np.log(2 * np.pi)


class PosteriorError(np.linalg.LinAlgError):
    """Conditioning failed (non-PSD prior or a singular system)."""


# --------------------------------------------------------------------------
# Observation geometry
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ObservedFrame:
    """What the receiver knows about a frame.

    ``x_known`` holds the training samples; entries outside the training
    mask are ignored (set to zero).
    """

    r: np.ndarray
    training_mask: np.ndarray
    x_known: np.ndarray
    permutation: np.ndarray
    channel_len: int

    def __post_init__(self):
        r = check_complex_vector(self.r, "r")
        n = r.size
        mask = check_mask(self.training_mask, n)
        x_known = np.where(mask, check_complex_vector(self.x_known, "x_known", n), 0)
        order = check_permutation(self.permutation, n)
        if not 1 <= self.channel_len <= n:
            raise ValueError(f"channel_len must lie in [1, {n}], got {self.channel_len}")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "training_mask", mask)
        object.__setattr__(self, "x_known", x_known)
        object.__setattr__(self, "permutation", order)

    @property
    def n(self):
        return self.r.size

    @cached_property
    def layout(self):
        return CompositeLayout(self.training_mask)

    @cached_property
    def y(self):
        """Interleaved real observation vector."""
        return interleave(self.r)

    @cached_property
    def x_bar_training(self):
        return self.layout.to_real(self.x_known)[self.layout.training_positions]

    def with_training_mask(self, mask, x_known):
        return ObservedFrame(self.r, mask, x_known, self.permutation, self.channel_len)


def as_observed(frame):
    """Accept a :class:`ObservedFrame` or anything shaped like a simulator frame."""
    if isinstance(frame, ObservedFrame):
        return frame
    return ObservedFrame(
        r=frame.r,
        training_mask=frame.training_mask,
        x_known=np.where(frame.training_mask, frame.x, 0),
        permutation=frame.permutation,
        channel_len=frame.channel_len,
    )


# --------------------------------------------------------------------------
# Moment containers
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SymbolPrior:
    """Gaussian prior ``N(mean, covariance)`` on ``chi = [Re x_U, Im x_U]``."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.covariance, dtype=np.float64)
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise ValueError("prior covariance must be square and match the mean")
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12):
            raise PosteriorError("prior covariance is not symmetric")
        if mean.size and np.linalg.eigvalsh(cov).min() < -1e-10:
            raise PosteriorError("prior covariance is not positive semi-definite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def dim(self):
        return self.mean.size

    @classmethod
    def isotropic(cls, n_unknown, variance=0.5):
        """Zero-mean prior with ``variance`` per real component (0.5 for unit-power proper symbols)."""
        d = 2 * n_unknown
        return cls(np.zeros(d), variance * np.eye(d))


@dataclass(frozen=True)
class PosteriorMoments:
    mean: np.ndarray
    covariance: np.ndarray
    log_evidence: Optional[float] = field(default=None, compare=False)

    @property
    def dim(self):
        return self.mean.size

    @property
    def second_moment(self):
        return np.outer(self.mean, self.mean) + self.covariance


@dataclass(frozen=True)
class RegressorMoments:
    """``E[calM | y]`` (``m_mean``) and ``E[calM^T calM | y]`` (``mtm_mean``).

    ``s_mean`` is the complex regressor ``E[S]`` before the CFO rotation and
    ``gram`` the complex ``E[S^H S]``; ``m_mean`` at any CFO follows from
    ``s_mean`` and ``mtm_mean`` does not depend on the CFO at all.
    """

    m_mean: np.ndarray
    mtm_mean: np.ndarray
    s_mean: np.ndarray
    gram: np.ndarray

    def at_epsilon(self, epsilon):
        n = self.s_mean.shape[0]
        m_mean = real_rows(cfo_phases(epsilon, n)[:, None] * self.s_mean)
        return RegressorMoments(m_mean, self.mtm_mean, self.s_mean, self.gram)

    def correlate(self, r, epsilon):
        """``E[calM(eps)]^T y`` computed in complex form: ``[Re v, Im v]`` with ``v = S^H C_eps^* r``."""
        n = self.s_mean.shape[0]
        v = self.s_mean.conj().T @ (np.conj(cfo_phases(epsilon, n)) * r)
        return np.concatenate([v.real, v.imag])

    def correlate_grid(self, r, epsilons):
        """:meth:`correlate` for many CFO values; returns shape ``(len(epsilons), 2L)``."""
        n = self.s_mean.shape[0]
        eps = np.atleast_1d(np.asarray(epsilons, dtype=np.float64))
        derot = np.exp(-2j * np.pi * np.outer(eps, np.arange(n)) / n) * r[None, :]
        v = derot @ self.s_mean.conj()
        return np.concatenate([v.real, v.imag], axis=1)


# --------------------------------------------------------------------------
# Linear algebra helpers
# --------------------------------------------------------------------------


def _cholesky(S, what):
    """Lower Cholesky factor with a ``1e-10 * trace / dim`` jitter retry."""
    try:
        return linalg.cholesky(S, lower=True, check_finite=False)
    except linalg.LinAlgError:
        pass
    d = S.shape[0]
    jitter = 1e-10 * max(np.trace(S), np.finfo(float).tiny) / d
    try:
        return linalg.cholesky(S + jitter * np.eye(d), lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise PosteriorError(f"{what} is singular beyond the jitter floor") from exc


def _logdet_chol(C):
    return 2.0 * np.sum(np.log(np.diag(C)))


def split_symbol_matrix(h_bar, epsilon, frame):
    """``(A, B)``: columns of ``M`` acting on the training and unknown blocks."""
    layout = frame.layout
    h = ChannelImpulseResponse.from_real_composite(h_bar)
    M = symbol_matrix(h, epsilon, frame.permutation, layout)
    return M[:, layout.training_positions], M[:, layout.unknown_positions]


def _iterate_parts(gamma):
    rho = float(gamma.rho)
    return np.asarray(gamma.g, dtype=np.float64) / rho, float(gamma.epsilon), 0.5 / rho**2


def _check_prior(prior, frame):
    if prior.dim != 2 * frame.layout.n_unknown:
        raise ValueError(
            f"prior has dimension {prior.dim}, frame has {2 * frame.layout.n_unknown} unknown components"
        )


# --------------------------------------------------------------------------
# Posterior engines
# --------------------------------------------------------------------------


def posterior_batch(y, gamma_hat, prior, frame):
    """Exact Gaussian conditioning of the unknown symbols on all observations.

    ``gamma_hat`` is any object with ``g``, ``epsilon`` and ``rho``
    attributes (``hbar = g / rho``, ``sigma = 1 / rho``). The information
    form is used when the prior covariance is positive definite and the
    gain (covariance) form otherwise. The returned moments carry
    ``log_evidence = log p(y | gamma)``.
    """
    frame = as_observed(frame)
    _check_prior(prior, frame)
    y = np.asarray(y, dtype=np.float64)
    h_bar, epsilon, v = _iterate_parts(gamma_hat)
    A, B = split_symbol_matrix(h_bar, epsilon, frame)
    resid = y - A @ frame.x_bar_training - B @ prior.mean
    n_obs = y.size

    if prior.dim == 0:
        log_ev = -0.5 * (n_obs * (LOG_2PI + np.log(v)) + resid @ resid / v)
        return PosteriorMoments(np.zeros(0), np.zeros((0, 0)), log_ev)

    try:
        C0 = linalg.cholesky(prior.covariance, lower=True, check_finite=False)
    except linalg.LinAlgError:
        C0 = None
    if C0 is not None and np.diag(C0).min() > 1e-12 * np.sqrt(np.abs(np.diag(prior.covariance)).max()):
        prec0 = linalg.cho_solve((C0, True), np.eye(prior.dim))
        Lam = prec0 + B.T @ B / v
        Cl = _cholesky(0.5 * (Lam + Lam.T), "posterior precision")
        Bt_r = B.T @ resid / v
        cov = linalg.cho_solve((Cl, True), np.eye(prior.dim))
        cov = 0.5 * (cov + cov.T)
        shift = cov @ Bt_r
        mean = prior.mean + shift
        log_ev = -0.5 * (
            n_obs * (LOG_2PI + np.log(v))
            + _logdet_chol(C0)
            + _logdet_chol(Cl)
            + resid @ resid / v
            - Bt_r @ shift
        )
        return PosteriorMoments(mean, cov, log_ev)

    # singular prior: gain form on the 2N x 2N innovation covariance
    S0B = prior.covariance @ B.T
    S = B @ S0B + v * np.eye(n_obs)
    Cs = _cholesky(0.5 * (S + S.T), "innovation covariance")
    K = linalg.cho_solve((Cs, True), S0B.T).T
    mean = prior.mean + K @ resid
    cov = prior.covariance - K @ S0B.T
    cov = 0.5 * (cov + cov.T)
    alpha = linalg.solve_triangular(Cs, resid, lower=True, check_finite=False)
    log_ev = -0.5 * (n_obs * LOG_2PI + _logdet_chol(Cs) + alpha @ alpha)
    return PosteriorMoments(mean, cov, log_ev)


def posterior_sequential(y, gamma_hat, prior, frame, order=None):
    """Measurement-update-only Kalman filter over the constant symbol state.

    Samples are processed in ``order`` (default ``0..N-1``); each step
    conditions on the two real rows of one received sample. The log
    evidence accumulates from the innovations.
    """
    frame = as_observed(frame)
    _check_prior(prior, frame)
    y = np.asarray(y, dtype=np.float64)
    h_bar, epsilon, v = _iterate_parts(gamma_hat)
    A, B = split_symbol_matrix(h_bar, epsilon, frame)
    y_eff = y - A @ frame.x_bar_training
    n = frame.n
    if order is None:
        order = np.arange(n)
    mean = prior.mean.copy()
    cov = prior.covariance.copy()
    log_ev = 0.0
    I2 = np.eye(2)
    for k in order:
        rows = slice(2 * k, 2 * k + 2)
        Bk = B[rows]
        innov = y_eff[rows] - Bk @ mean
        PBt = cov @ Bk.T
        S = Bk @ PBt + v * I2
        Cs = _cholesky(0.5 * (S + S.T), "innovation covariance")
        K = linalg.cho_solve((Cs, True), PBt.T).T
        mean = mean + K @ innov
        cov = cov - K @ PBt.T
        cov = 0.5 * (cov + cov.T)
        alpha = linalg.solve_triangular(Cs, innov, lower=True, check_finite=False)
        log_ev += -0.5 * (2 * LOG_2PI + _logdet_chol(Cs) + alpha @ alpha)
    return PosteriorMoments(mean, cov, log_ev)


# --------------------------------------------------------------------------
# Expected regressors
# --------------------------------------------------------------------------


def _psd_factor(cov):
    """``F`` with ``F @ F.T == cov`` (negative eigenvalues clipped)."""
    if cov.size == 0:
        return np.zeros((0, 0))
    w, V = np.linalg.eigh(0.5 * (cov + cov.T))
    keep = w > 0
    return V[:, keep] * np.sqrt(w[keep])


def regressor_statistics(post, frame):
    """Complex ``E[S]`` and ``E[S^H S]`` where ``S`` is the channel regressor of ``P x``.

    ``S`` is linear in the symbols, so with ``Cov(chi) = F F^T``:
    ``E[S^H S] = E[S]^H E[S] + sum_i S(f_i)^H S(f_i)``.
    """
    frame = as_observed(frame)
    layout = frame.layout
    L = frame.channel_len
    order = frame.permutation
    x_mean = frame.x_known + layout.unknown_to_complex(post.mean)
    s_mean = channel_regressor(x_mean[order], L)
    gram = s_mean.conj().T @ s_mean
    F = _psd_factor(post.covariance)
    if F.shape[1]:
        Xf = layout.unknown_to_complex(F)[order]  # (N, m)
        Sf = channel_regressor(Xf, L)  # (N, L, m)
        Sf = Sf.transpose(2, 0, 1).reshape(-1, L)
        gram = gram + Sf.conj().T @ Sf
    gram = 0.5 * (gram + gram.conj().T)
    return s_mean, gram


def expected_regressors(post, gamma_hat, frame):
    """``E[calM | y, gamma]`` and ``E[calM^T calM | y, gamma]`` at ``gamma_hat.epsilon``."""
    frame = as_observed(frame)
    if post.dim != 2 * frame.layout.n_unknown:
        raise ValueError("posterior dimension does not match the frame")
    s_mean, gram = regressor_statistics(post, frame)
    m_mean = real_rows(cfo_phases(float(gamma_hat.epsilon), frame.n)[:, None] * s_mean)
    return RegressorMoments(m_mean, real_gram(gram), s_mean, gram)


class StructureMatrices:
    """Explicit expansion ``calM = sum_n xbar_n G_n`` at a fixed CFO and permutation.

    ``G`` has shape ``(2N, 2N, 2L)``: ``G[n]`` is the regressor built from
    the ``n``-th unit vector of the ``xbar`` layout. It is materialized on
    first access and kept for the lifetime of the object.
    """

    def __init__(self, frame, epsilon):
        self.frame = as_observed(frame)
        self.epsilon = float(epsilon)

    @cached_property
    def G(self):
        frame = self.frame
        layout = frame.layout
        n2 = 2 * frame.n
        out = np.empty((n2, n2, 2 * frame.channel_len))
        for idx in range(n2):
            e = np.zeros(n2)
            e[idx] = 1.0
            out[idx] = channel_matrix(layout.from_real(e), self.epsilon, frame.permutation, frame.channel_len)
        return out

    def expected(self, post):
        """Regressor moments by direct summation over the structure matrices."""
        frame = self.frame
        layout = frame.layout
        n2 = 2 * frame.n
        mean = np.zeros(n2)
        mean[layout.training_positions] = frame.x_bar_training
        mean[layout.unknown_positions] = post.mean
        second = np.outer(mean, mean)
        u = layout.unknown_positions
        second[np.ix_(u, u)] += post.covariance
        G = self.G
        m_mean = np.tensordot(mean, G, axes=1)
        T = np.tensordot(second, G, axes=1)  # (2N, rows, 2L)
        mtm = np.einsum("mrp,mrq->pq", G, T)
        return m_mean, 0.5 * (mtm + mtm.T)
