"""Joint MAP-EM estimation of a sparse channel, CFO and noise level.

The iterate is ``gamma = (g, eps, rho)`` with ``g = hbar / sigma`` and
``rho = 1 / sigma``; ``tau`` scales the Laplace prior on ``g``. Each EM
iteration

1. computes the posterior of the unknown symbols at the current iterate
   (E-step) and from it ``E[calM]`` and ``E[calM^T calM]``;
2. builds the penalty matrix ``E = diag(E[1 / lambda_j])`` from the
   variance-mean mixture representation of the l1 prior;
3. maximizes the auxiliary function over ``eps`` with ``g`` replaced by its
   closed form (the cost concentrated in the CFO), then sets ``g`` and
   ``rho`` to their joint stationary point for that ``eps``.

``ml_em`` runs the same loop with the penalty switched off.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import linalg

from .posterior import (
    LOG_2PI,
    PosteriorMoments,
    SymbolPrior,
    as_observed,
    expected_regressors,
    posterior_batch,
    posterior_sequential,
    regressor_statistics,
)
from .signal_model import ChannelImpulseResponse, cfo_phases

logger = logging.getLogger(__name__)

# |g_j| floor inside E[1/lambda_j]
CLAMP_DELTA = 1e-8
RHO_MIN = 1e-6
RHO_MAX = 1e6
TAU_FLOOR = 1e-12
GOLDEN = (math.sqrt(5) - 1) / 2


@dataclass(frozen=True)
class ReparamState:
    """EM iterate in the scaled parametrization."""

    g: np.ndarray
    epsilon: float
    rho: float
    tau: float = math.inf

    def __post_init__(self):
        g = np.asarray(self.g, dtype=np.float64)
        if g.ndim != 1 or g.size % 2:
            raise ValueError("g must be a real vector of even length 2L")
        if not (self.rho > 0 and self.tau > 0):
            raise ValueError("rho and tau must be positive")
        if abs(self.epsilon) > 0.5:
            raise ValueError("|epsilon| must be <= 0.5")
        object.__setattr__(self, "g", g)

    @property
    def h_bar(self):
        return self.g / self.rho

    @property
    def sigma(self):
        return 1.0 / self.rho

    @property
    def channel(self):
        return ChannelImpulseResponse.from_real_composite(self.h_bar)

    @classmethod
    def from_physical(cls, h_bar, epsilon, sigma, tau=math.inf):
        rho = 1.0 / sigma
        return cls(np.asarray(h_bar, dtype=np.float64) * rho, float(epsilon), rho, tau)


@dataclass(frozen=True)
class PenaltyMatrix:
    """Diagonal of ``E``; entry ``j`` is ``E[1 / lambda_j | g_hat_j]``."""

    diag: np.ndarray

    @property
    def matrix(self):
        return np.diag(self.diag)


# --------------------------------------------------------------------------
# Prior machinery
# --------------------------------------------------------------------------


def e_lambda_inv(g_hat, tau, delta=CLAMP_DELTA):
    """Posterior mean of the inverse mixing variance for the l1 prior: ``tau / |g_hat|``.

    ``|g_hat|`` is floored at ``delta`` so the result stays finite.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    return tau / np.maximum(np.abs(g_hat), delta)


def penalty_matrix(g_hat, tau):
    return PenaltyMatrix(np.atleast_1d(e_lambda_inv(np.asarray(g_hat, dtype=np.float64), tau)))


def prior_gradient(g, penalty, tau):
    """``dQ_prior/dg = -E g / tau^2``."""
    return -penalty.diag * np.asarray(g) / tau**2


def log_prior(g, tau):
    """Laplace log-density of ``g``: ``-sum |g_j| / tau - 2L log(2 tau)``."""
    g = np.asarray(g)
    return -np.sum(np.abs(g)) / tau - g.size * math.log(2 * tau)


def q_prior(g, g_hat, tau, penalty=None):
    """Quadratic surrogate of :func:`log_prior` around ``g_hat`` (tight at ``g = g_hat``)."""
    g = np.asarray(g)
    g_hat = np.asarray(g_hat)
    if penalty is None:
        penalty = penalty_matrix(g_hat, tau)
    E = penalty.diag
    return float(
        -np.sum(E * g**2) / (2 * tau**2)
        + np.sum(E * g_hat**2) / (2 * tau**2)
        - np.sum(np.abs(g_hat)) / tau
        - g.size * math.log(2 * tau)
    )


# --------------------------------------------------------------------------
# Likelihood part of the auxiliary function
# --------------------------------------------------------------------------


def k_y(rho, n):
    """Constant of the Gaussian observation density as written for ``2n`` real rows."""
    return -n * LOG_2PI - 0.5 * n * math.log(0.5) + n * math.log(rho**2)


def expected_log_symbol_prior(post, prior):
    """``E[log p(chi) | y]`` under the posterior (constant in the iterate)."""
    d = prior.dim
    if d == 0:
        return 0.0
    w, V = np.linalg.eigh(prior.covariance)
    keep = w > 1e-12 * max(w.max(), 1e-300)
    Vk, wk = V[:, keep], w[keep]
    dm = post.mean - prior.mean
    proj_cov = np.einsum("ij,jk,ki->i", Vk.T, post.covariance, Vk)
    quad = np.sum((proj_cov + (Vk.T @ dm) ** 2) / wk)
    return float(-0.5 * (keep.sum() * LOG_2PI + np.sum(np.log(wk)) + quad))


def q_ml(g, rho, y, moments, e_log_prior=0.0):
    """``Q_ML`` with ``Sigma_y = 0.5 rho^-2 I``: ``K_y - rho^2 y'y + 2 rho y'E[calM]g - g'E[calM'calM]g``."""
    n = y.size // 2
    quad = rho**2 * (y @ y) - 2 * rho * (y @ (moments.m_mean @ g)) + g @ moments.mtm_mean @ g
    return float(e_log_prior + k_y(rho, n) - quad)


def q_ml_gradient_g(g, rho, y, moments):
    return 2 * (rho * (moments.m_mean.T @ y) - moments.mtm_mean @ g)


def q_ml_gradient_rho(g, rho, y, moments):
    n = y.size // 2
    return 2 * n / rho - 2 * (rho * (y @ y) - y @ (moments.m_mean @ g))


def _system_matrix(mtm, penalty, tau):
    W = np.array(mtm, dtype=np.float64, copy=True)
    if penalty is not None and math.isfinite(tau):
        W[np.diag_indices_from(W)] += penalty.diag / (2 * tau**2)
    return 0.5 * (W + W.T)


def _factor(W):
    try:
        return linalg.cho_factor(W, lower=True, check_finite=False)
    except linalg.LinAlgError:
        d = W.shape[0]
        jitter = 1e-10 * max(np.trace(W), np.finfo(float).tiny) / d
        try:
            return linalg.cho_factor(W + jitter * np.eye(d), lower=True, check_finite=False)
        except linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError("channel normal equations are singular") from exc


def concentrated_g(epsilon, rho, moments, penalty, y, tau=math.inf):
    """Closed-form ``g = [E[calM'calM] + E / (2 tau^2)]^-1 E[calM]' rho y`` at ``epsilon``.

    ``moments`` may have been computed at another CFO; its ``m_mean`` is
    re-evaluated at ``epsilon``. ``penalty=None`` gives the unpenalized
    normal equations.
    """
    m = moments.at_epsilon(epsilon)
    W = _system_matrix(m.mtm_mean, penalty, tau)
    return linalg.cho_solve(_factor(W), rho * (m.m_mean.T @ y), check_finite=False)


def rho_update(y, m_mean, g):
    """Positive root of ``n = rho^2 y'y - rho y'E[calM]g`` (the rho-stationarity condition)."""
    y = np.asarray(y, dtype=np.float64)
    yty = float(y @ y)
    if yty <= 0:
        raise ValueError("rho update needs a nonzero observation")
    n = y.size // 2
    b = float(y @ (m_mean @ g))
    rho = (b + math.sqrt(b * b + 4 * n * yty)) / (2 * yty)
    return min(max(rho, RHO_MIN), RHO_MAX)


def tau_empirical_bayes(h_ml, sigma_ml):
    """Empirical-Bayes prior scale ``sum |hbar_ML| / sigma_ML / 2L`` (floored at 1e-12)."""
    h_ml = np.asarray(h_ml, dtype=np.float64)
    if sigma_ml <= 0:
        raise ValueError("sigma_ml must be positive")
    tau = float(np.sum(np.abs(h_ml)) / sigma_ml / h_ml.size)
    if tau < TAU_FLOOR:
        logger.warning("empirical-Bayes tau %.3g below floor; using %.0e", tau, TAU_FLOOR)
        return TAU_FLOOR
    return tau


# --------------------------------------------------------------------------
# Concentrated auxiliary function
# --------------------------------------------------------------------------


class ConcentratedObjective:
    """Auxiliary function of one EM iteration with ``g`` concentrated out.

    The E-step moments, the penalty matrix and ``rho`` are frozen; only the
    CFO rotation of ``E[calM]`` varies with ``epsilon``. Calling the object
    returns ``Q(g(eps), eps, rho)``; array input is evaluated elementwise.
    """

    def __init__(self, frame, moments, penalty, tau, rho, g_hat, e_log_prior=0.0):
        self.frame = as_observed(frame)
        self.moments = moments
        self.penalty = penalty
        self.tau = tau
        self.rho = rho
        self.g_hat = np.asarray(g_hat, dtype=np.float64)
        self.e_log_prior = e_log_prior
        self.y = self.frame.y
        self.yty = float(self.y @ self.y)
        self.n = self.frame.n
        self.W = _system_matrix(moments.mtm_mean, penalty, tau)
        self._cho = _factor(self.W)

    @property
    def penalized(self):
        return self.penalty is not None and math.isfinite(self.tau)

    def correlation(self, epsilon):
        """``E[calM(eps)]' y``; vectorized over ``epsilon``."""
        eps = np.asarray(epsilon, dtype=np.float64)
        if eps.ndim == 0:
            return self.moments.correlate(self.frame.r, float(eps))
        return self.moments.correlate_grid(self.frame.r, eps)

    def explained(self, epsilon):
        """``b' W^-1 b`` with ``b = E[calM(eps)]' y``; the only eps-dependent part."""
        b = self.correlation(epsilon)
        sol = linalg.cho_solve(self._cho, b.T, check_finite=False)
        return np.sum(b.T * sol, axis=0) if b.ndim == 2 else float(b @ sol)

    def g(self, epsilon, rho=None):
        rho = self.rho if rho is None else rho
        return rho * linalg.cho_solve(self._cho, self.correlation(epsilon), check_finite=False)

    def joint_rho(self, epsilon):
        """Stationary ``rho`` when ``g`` and ``rho`` are optimized together at ``epsilon``.

        Iterating ``g <- g(eps, rho)`` and ``rho <- rho_update(g)`` converges
        to ``rho^2 = n / (y'y - b'W^-1 b)``.
        """
        resid = self.yty - self.explained(epsilon)
        if resid <= self.yty * 1e-300 or not math.isfinite(resid):
            return RHO_MAX
        return min(max(math.sqrt(self.n / resid), RHO_MIN), RHO_MAX)

    def _const(self, rho):
        c = self.e_log_prior + k_y(rho, self.n)
        if self.penalized:
            E = self.penalty.diag
            c += (
                np.sum(E * self.g_hat**2) / (2 * self.tau**2)
                - np.sum(np.abs(self.g_hat)) / self.tau
                - self.g_hat.size * math.log(2 * self.tau)
            )
        return c

    def q(self, g, epsilon, rho):
        """Full auxiliary function ``Q_ML + Q_prior`` at an arbitrary point."""
        g = np.asarray(g, dtype=np.float64)
        b = self.correlation(epsilon)
        quad = rho**2 * self.yty - 2 * rho * (b @ g) + g @ self.W @ g
        return float(self._const(rho) - quad)

    def gradient(self, g, epsilon, rho):
        """``(dQ/dg, dQ/drho)`` of the full auxiliary function."""
        b = self.correlation(epsilon)
        dg = 2 * (rho * b - self.W @ g)
        drho = 2 * self.n / rho - 2 * (rho * self.yty - b @ g)
        return dg, float(drho)

    def __call__(self, epsilon):
        val = self._const(self.rho) - self.rho**2 * (self.yty - self.explained(epsilon))
        return val if np.ndim(val) else float(val)


def q_concentrated(epsilon, rho, tau, y, frame, prior, gamma_hat, mode="map"):
    """Concentrated auxiliary value at ``epsilon`` for the E-step taken at ``gamma_hat``."""
    frame = as_observed(frame)
    y = np.asarray(y, dtype=np.float64)
    post = posterior_batch(y, gamma_hat, prior, frame)
    moments = expected_regressors(post, gamma_hat, frame)
    penalty = penalty_matrix(gamma_hat.g, tau) if mode == "map" else None
    obj = ConcentratedObjective(
        frame, moments, penalty, tau, rho, gamma_hat.g, expected_log_symbol_prior(post, prior)
    )
    return obj(epsilon)


# --------------------------------------------------------------------------
# One-dimensional CFO search
# --------------------------------------------------------------------------


def golden_section_max(f, lo, hi, tol=1e-7, max_iter=200):
    """Maximize a unimodal ``f`` on ``[lo, hi]``; returns ``(x, f(x))``."""
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    return (c, fc) if fc >= fd else (d, fd)


def cfo_search(q, bracket=(-0.5, 0.5), grid_points=256, tol=1e-7, vectorized=False):
    """Maximize ``q`` over ``bracket``: coarse grid, then golden section around the best point.

    Ties on the grid go to the smaller ``epsilon``.
    """
    lo, hi = float(bracket[0]), float(bracket[1])
    if not -0.5 <= lo < hi <= 0.5:
        raise ValueError(f"invalid CFO bracket {bracket}")
    grid = np.linspace(lo, hi, grid_points)
    vals = np.asarray(q(grid)) if vectorized else np.array([q(e) for e in grid])
    i = int(np.argmax(vals))
    a = grid[max(i - 1, 0)]
    b = grid[min(i + 1, grid_points - 1)]
    x, fx = golden_section_max(lambda e: float(q(e)), a, b, tol=tol)
    if fx > vals[i]:
        return float(x)
    return float(grid[i])


# --------------------------------------------------------------------------
# EM driver
# --------------------------------------------------------------------------


@dataclass
class EmOptions:
    mode: str = "map"
    tau: object = "auto"
    max_iter: Optional[int] = None
    tol_g: float = 1e-6
    tol_eps: float = 1e-7
    tol_rho: float = 1e-6
    cfo_grid_points: int = 256
    cfo_bracket: float = 0.02
    estimate_epsilon: bool = True
    engine: str = "batch"
    prior_variance: float = 0.5

    def __post_init__(self):
        if self.mode not in ("map", "ml"):
            raise ValueError(f"mode must be 'map' or 'ml', got {self.mode!r}")
        if self.engine not in ("batch", "sequential"):
            raise ValueError(f"engine must be 'batch' or 'sequential', got {self.engine!r}")
        if self.tau != "auto":
            if not isinstance(self.tau, (int, float)) or not self.tau > 0:
                raise ValueError(f"tau must be 'auto' or a positive number, got {self.tau!r}")
        if self.max_iter is not None and self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        if self.cfo_grid_points < 3:
            raise ValueError("cfo_grid_points must be at least 3")

    def iteration_cap(self, n_unknown):
        if self.max_iter is not None:
            return self.max_iter
        return 100 if n_unknown == 0 else 300


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    state: ReparamState
    q_start: float  # Q(gamma_i; gamma_i)
    q_value: float  # Q(gamma_{i+1}; gamma_i)
    objective: float  # log p(y | gamma_{i+1}) + log p(g_{i+1})
    dg: float
    deps: float
    drho: float


@dataclass
class EmTrace:
    records: list = field(default_factory=list)
    initial_objective: float = float("nan")
    converged: bool = False
    flags: set = field(default_factory=set)

    @property
    def n_iter(self):
        return len(self.records)

    @property
    def q_trace(self):
        return [r.q_value for r in self.records]

    @property
    def objective_trace(self):
        return [self.initial_objective] + [r.objective for r in self.records]

    def ascent_violations(self, slack=1e-8):
        """Iterations where the M-step or the objective decreased beyond ``slack`` (relative)."""
        bad = []
        for r in self.records:
            if r.q_value < r.q_start - slack * max(1.0, abs(r.q_start)):
                bad.append(("q", r.iteration, r.q_start, r.q_value))
        obj = self.objective_trace
        for i in range(1, len(obj)):
            if obj[i] < obj[i - 1] - slack * max(1.0, abs(obj[i - 1])):
                bad.append(("objective", i, obj[i - 1], obj[i]))
        return bad


@dataclass
class EmResult:
    channel: ChannelImpulseResponse
    epsilon: float
    sigma: float
    tau: float
    posterior: object
    trace: EmTrace
    state: ReparamState
    mode: str
    last_objective: Optional[ConcentratedObjective] = field(default=None, repr=False)

    @property
    def converged(self):
        return self.trace.converged

    @property
    def n_iter(self):
        return self.trace.n_iter

    def to_record(self):
        return {
            "h_hat_re": self.channel.taps.real.tolist(),
            "h_hat_im": self.channel.taps.imag.tolist(),
            "epsilon_hat": self.epsilon,
            "sigma_hat": self.sigma,
            "tau_used": self.tau if math.isfinite(self.tau) else None,
            "mode": self.mode,
            "iterations": self.n_iter,
            "converged": self.converged,
            "q_trace": self.trace.q_trace,
            "objective_trace": self.trace.objective_trace,
        }


def _e_step(obs, state, prior, engine):
    fn = posterior_batch if engine == "batch" else posterior_sequential
    return fn(obs.y, state, prior, obs)


def initial_state(obs, prior, epsilon=None, tau=math.inf, grid_points=256, tol=1e-7):
    """Starting iterate from the symbol prior alone.

    The symbol posterior is replaced by the prior, which makes the
    regression ``r ~ C_eps S h`` linear in ``h`` with known first and second
    moments of ``S``. ``h`` is concentrated out and, unless ``epsilon`` is
    given, the CFO maximizing the explained energy is found by grid plus
    golden-section search. ``sigma`` comes from the residual energy.
    """
    L, n = obs.channel_len, obs.n
    s_mean, gram = regressor_statistics(PosteriorMoments(prior.mean, prior.covariance), obs)
    gram = gram + 1e-12 * np.trace(gram).real / L * np.eye(L)
    cho = linalg.cho_factor(gram, lower=True)
    k = np.arange(n)

    def explained(eps):
        eps = np.atleast_1d(np.asarray(eps, dtype=np.float64))
        derot = np.exp(-2j * np.pi * np.outer(eps, k) / n) * obs.r
        b = derot @ s_mean.conj()
        sol = linalg.cho_solve(cho, b.T)
        val = np.real(np.sum(b.T.conj() * sol, axis=0))
        return val if val.size > 1 else float(val[0])

    if epsilon is None:
        epsilon = cfo_search(explained, (-0.5, 0.5), grid_points, tol, vectorized=True)
    b = s_mean.conj().T @ (np.conj(cfo_phases(epsilon, n)) * obs.r)
    h = linalg.cho_solve(cho, b)
    sigma2 = max(float(np.sum(np.abs(obs.r) ** 2)) - float(np.real(np.vdot(b, h))), 0.0) / n
    sigma = min(max(math.sqrt(sigma2), 1.0 / RHO_MAX), 1.0 / RHO_MIN)
    h_bar = np.concatenate([h.real, h.imag])
    return ReparamState.from_physical(h_bar, epsilon, sigma, tau)


def _full_training_view(frame):
    """Pilot observation with every transmitted sample known, or ``None`` if unavailable."""
    obs = as_observed(frame)
    if obs.training_mask.all():
        return obs
    x = getattr(frame, "x", None)
    if x is None:
        return None
    return obs.with_training_mask(np.ones(obs.n, dtype=bool), x)


def pilot_tau(frame, options=None, pilot=None):
    """Empirical-Bayes ``tau`` from an unregularized full-training run."""
    if pilot is None:
        pilot = _full_training_view(frame)
    if pilot is None:
        raise ValueError("tau='auto' needs a full-training pilot observation")
    opts = replace(options or EmOptions(), mode="ml", tau="auto", max_iter=None)
    res = ml_em(pilot, opts)
    return tau_empirical_bayes(res.state.h_bar, res.sigma), res


def map_em(frame, options=None, init=None, prior=None, pilot=None):
    """Run the EM iterations and return an :class:`EmResult`.

    ``frame`` is an :class:`~ofdm_mapem.posterior.ObservedFrame` or a
    simulator frame (only its observable fields are used, except that
    ``tau='auto'`` builds the full-training pilot from it when ``pilot`` is
    not given). ``init`` may hold ``epsilon``, ``h`` (complex taps) and
    ``sigma``; missing entries come from :func:`initial_state`.
    """
    opts = options or EmOptions()
    obs = as_observed(frame)
    layout = obs.layout
    if prior is None:
        prior = SymbolPrior.isotropic(layout.n_unknown, opts.prior_variance)
    trace = EmTrace()

    if opts.mode == "ml":
        tau = math.inf
    elif opts.tau == "auto":
        tau, _ = pilot_tau(frame, opts, pilot)
    else:
        tau = float(opts.tau)
    if tau <= TAU_FLOOR:
        trace.flags.add("tau_floor")
    # an infinite prior scale switches the penalty off
    penalized = opts.mode == "map" and math.isfinite(tau)

    init = dict(init or {})
    if "epsilon" in init:
        eps0 = float(init["epsilon"])
    elif opts.estimate_epsilon:
        eps0 = None
    else:
        eps0 = 0.0
    state = initial_state(obs, prior, eps0, tau, opts.cfo_grid_points, opts.tol_eps)
    eps0 = state.epsilon
    if "h" in init:
        h = np.asarray(init["h"], dtype=np.complex128)
        sigma = float(init.get("sigma", state.sigma))
        state = ReparamState.from_physical(np.concatenate([h.real, h.imag]), eps0, sigma, tau)
    elif "sigma" in init:
        state = ReparamState.from_physical(state.h_bar, eps0, float(init["sigma"]), tau)

    def objective(post, st):
        val = post.log_evidence
        return val + log_prior(st.g, tau) if penalized else val

    post = _e_step(obs, state, prior, opts.engine)
    trace.initial_objective = objective(post, state)
    bracket = (-0.5, 0.5)
    obj = None

    for it in range(1, opts.iteration_cap(layout.n_unknown) + 1):
        moments = expected_regressors(post, state, obs)
        penalty = penalty_matrix(state.g, tau) if penalized else None
        obj = ConcentratedObjective(
            obs, moments, penalty, tau, state.rho, state.g, expected_log_symbol_prior(post, prior)
        )
        q_start = obj.q(state.g, state.epsilon, state.rho)

        eps = state.epsilon
        if opts.estimate_epsilon:
            cand = cfo_search(obj, bracket, opts.cfo_grid_points, opts.tol_eps, vectorized=True)
            edge = min(cand - bracket[0], bracket[1] - cand) < opts.tol_eps
            if edge and bracket != (-0.5, 0.5):
                cand = cfo_search(obj, (-0.5, 0.5), opts.cfo_grid_points, opts.tol_eps, vectorized=True)
            # keep the previous CFO unless the search actually improved Q
            if obj.explained(cand) >= obj.explained(eps):
                eps = cand

        rho = obj.joint_rho(eps)
        if rho in (RHO_MIN, RHO_MAX):
            trace.flags.add("rho_clamped")
        g = obj.g(eps, rho)
        new = ReparamState(g, eps, rho, tau)
        q_value = obj.q(g, eps, rho)

        post = _e_step(obs, new, prior, opts.engine)
        dg = float(np.linalg.norm(g - state.g) / max(np.linalg.norm(g), 1e-300))
        deps = abs(eps - state.epsilon)
        drho = abs(rho - state.rho) / rho
        trace.records.append(
            IterationRecord(it, new, q_start, q_value, objective(post, new), dg, deps, drho)
        )
        state = new
        if dg < opts.tol_g and deps < opts.tol_eps and drho < opts.tol_rho:
            trace.converged = True
            break
        w = opts.cfo_bracket
        bracket = (max(-0.5, eps - w), min(0.5, eps + w))

    if not trace.converged:
        logger.info("EM stopped at the iteration cap (%d) without converging", trace.n_iter)
    return EmResult(
        channel=state.channel,
        epsilon=state.epsilon,
        sigma=state.sigma,
        tau=tau,
        posterior=post,
        trace=trace,
        state=state,
        mode=opts.mode,
        last_objective=obj,
    )


def ml_em(frame, options=None, init=None, prior=None):
    """Unregularized EM: :func:`map_em` with the penalty switched off."""
    opts = replace(options or EmOptions(), mode="ml")
    return map_em(frame, opts, init=init, prior=prior)
