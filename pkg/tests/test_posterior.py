import numpy as np
import pytest
from scipy.stats import multivariate_normal

from conftest import random_state, small_frame
from ofdm_mapem.posterior import (
    PosteriorError,
    PosteriorMoments,
    StructureMatrices,
    SymbolPrior,
    as_observed,
    expected_regressors,
    posterior_batch,
    posterior_sequential,
    split_symbol_matrix,
)
from ofdm_mapem.signal_model import channel_matrix


def _setup(rng, n=8, L=2, training=0.5, perm="identity", seed=0):
    f = small_frame(n=n, L=L, training=training, perm=perm, seed=seed)
    obs = as_observed(f)
    prior = SymbolPrior.isotropic(obs.layout.n_unknown)
    return obs, prior, random_state(L, rng)


def test_batch_matches_joint_gaussian_conditioning(rng):
    obs, prior, state = _setup(rng)
    A, B = split_symbol_matrix(state.h_bar, state.epsilon, obs)
    v = 0.5 * state.sigma**2
    mu_y = A @ obs.x_bar_training
    cov_y = B @ prior.covariance @ B.T + v * np.eye(obs.y.size)
    cross = prior.covariance @ B.T
    gain = np.linalg.solve(cov_y, cross.T).T
    mean = gain @ (obs.y - mu_y)
    cov = prior.covariance - gain @ cross.T
    post = posterior_batch(obs.y, state, prior, obs)
    np.testing.assert_allclose(post.mean, mean, atol=1e-10)
    np.testing.assert_allclose(post.covariance, cov, atol=1e-10)
    assert np.isclose(post.log_evidence, multivariate_normal(mu_y, cov_y).logpdf(obs.y))


@pytest.mark.parametrize("seed", range(5))
def test_sequential_matches_batch(rng, seed):
    obs, prior, state = _setup(rng, n=16, L=3, training=0.25, perm=seed, seed=seed)
    a = posterior_batch(obs.y, state, prior, obs)
    b = posterior_sequential(obs.y, state, prior, obs, order=rng.permutation(obs.n))
    np.testing.assert_allclose(b.mean, a.mean, rtol=1e-8, atol=1e-10)
    np.testing.assert_allclose(b.covariance, a.covariance, rtol=1e-8, atol=1e-10)
    assert np.isclose(a.log_evidence, b.log_evidence, rtol=1e-10)


def test_posterior_covariance_is_psd_and_shrinks(rng):
    obs, prior, state = _setup(rng, n=16, L=4, training=0.5)
    post = posterior_batch(obs.y, state, prior, obs)
    np.testing.assert_allclose(post.covariance, post.covariance.T, atol=1e-14)
    assert np.linalg.eigvalsh(post.covariance).min() > -1e-12
    assert np.linalg.eigvalsh(prior.covariance - post.covariance).min() > -1e-12


def test_singular_prior_uses_gain_form(rng):
    obs, _, state = _setup(rng)
    d = 2 * obs.layout.n_unknown
    V = rng.standard_normal((d, 3))
    prior = SymbolPrior(np.zeros(d), V @ V.T)
    a = posterior_batch(obs.y, state, prior, obs)
    b = posterior_sequential(obs.y, state, prior, obs)
    np.testing.assert_allclose(a.mean, b.mean, atol=1e-9)
    np.testing.assert_allclose(a.covariance, b.covariance, atol=1e-9)
    assert np.isclose(a.log_evidence, b.log_evidence)
    # regularized nonsingular prior converges to the singular result
    c = posterior_batch(obs.y, state, SymbolPrior(np.zeros(d), V @ V.T + 1e-9 * np.eye(d)), obs)
    np.testing.assert_allclose(c.mean, a.mean, atol=1e-5)


def test_full_training_has_empty_posterior(rng):
    obs, prior, state = _setup(rng, training=1.0)
    post = posterior_batch(obs.y, state, prior, obs)
    assert post.dim == 0
    A, _ = split_symbol_matrix(state.h_bar, state.epsilon, obs)
    v = 0.5 * state.sigma**2
    ref = multivariate_normal(A @ obs.x_bar_training, v * np.eye(obs.y.size)).logpdf(obs.y)
    assert np.isclose(post.log_evidence, ref)
    assert np.isclose(posterior_sequential(obs.y, state, prior, obs).log_evidence, ref)


def test_prior_validation():
    with pytest.raises(PosteriorError):
        SymbolPrior(np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(PosteriorError):
        SymbolPrior(np.zeros(2), -np.eye(2))
    with pytest.raises(ValueError):
        SymbolPrior(np.zeros(3), np.eye(2))


def test_prior_dimension_mismatch(rng):
    obs, _, state = _setup(rng)
    with pytest.raises(ValueError):
        posterior_batch(obs.y, state, SymbolPrior.isotropic(1), obs)


def test_factored_regressors_match_structure_matrices(rng):
    obs, prior, state = _setup(rng, n=8, L=3, training=0.5, perm=2)
    post = posterior_batch(obs.y, state, prior, obs)
    mom = expected_regressors(post, state, obs)
    m_mean, mtm = StructureMatrices(obs, state.epsilon).expected(post)
    np.testing.assert_allclose(mom.m_mean, m_mean, atol=1e-12)
    np.testing.assert_allclose(mom.mtm_mean, mtm, atol=1e-12)


def test_regressor_gram_does_not_depend_on_cfo(rng):
    obs, prior, state = _setup(rng, n=8, L=2)
    post = posterior_batch(obs.y, state, prior, obs)
    _, mtm_a = StructureMatrices(obs, 0.1).expected(post)
    _, mtm_b = StructureMatrices(obs, -0.37).expected(post)
    np.testing.assert_allclose(mtm_a, mtm_b, atol=1e-12)
    mom = expected_regressors(post, state, obs)
    assert np.linalg.eigvalsh(mom.mtm_mean).min() > -1e-12
    np.testing.assert_allclose(mom.mtm_mean - mom.m_mean.T @ mom.m_mean, (mom.mtm_mean - mom.m_mean.T @ mom.m_mean).T)
    assert np.linalg.eigvalsh(mom.mtm_mean - mom.m_mean.T @ mom.m_mean).min() > -1e-10


def test_correlate_grid_matches_dense_product(rng):
    obs, prior, state = _setup(rng, n=8, L=2)
    post = posterior_batch(obs.y, state, prior, obs)
    mom = expected_regressors(post, state, obs)
    eps = np.array([-0.3, 0.0, 0.21])
    grid = mom.correlate_grid(obs.r, eps)
    for e, row in zip(eps, grid):
        np.testing.assert_allclose(row, mom.at_epsilon(e).m_mean.T @ obs.y, atol=1e-12)
        np.testing.assert_allclose(mom.correlate(obs.r, e), row, atol=1e-12)


def test_regressors_match_monte_carlo_sampling(rng):
    obs, prior, state = _setup(rng, n=8, L=2, training=0.5)
    post = posterior_batch(obs.y, state, prior, obs)
    mom = expected_regressors(post, state, obs)
    samples = rng.multivariate_normal(post.mean, post.covariance, size=10_000)
    layout = obs.layout
    acc = []
    for chi in samples:
        x = obs.x_known + layout.unknown_to_complex(chi)
        M = channel_matrix(x, state.epsilon, obs.permutation, obs.channel_len)
        acc.append(np.concatenate([M.ravel(), (M.T @ M).ravel()]))
    acc = np.array(acc)
    mean = acc.mean(axis=0)
    se = acc.std(axis=0, ddof=1) / np.sqrt(len(acc))
    ref = np.concatenate([mom.m_mean.ravel(), mom.mtm_mean.ravel()])
    assert np.all(np.abs(mean - ref) <= 3 * se + 1e-12)


def test_second_moment():
    post = PosteriorMoments(np.array([1.0, 2.0]), np.eye(2))
    np.testing.assert_allclose(post.second_moment, [[2, 2], [2, 5]])
