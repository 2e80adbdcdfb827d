import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ofdm_mapem.signal_model import (
    ChannelImpulseResponse,
    CompositeLayout,
    apply_cfo,
    build_circulant,
    build_observation_row,
    cfo_phases,
    channel_matrix,
    circulant_matvec,
    circular_convolve,
    deinterleave,
    dft,
    idft,
    interleave,
    invert_permutation,
    permutation_matrix,
    random_permutation,
    real_gram,
    real_rows,
    simulate_received,
    symbol_matrix,
    to_real_composite,
)


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def test_identity_channel_passes_signal(rng):
    x = crandn(rng, 16)
    r = simulate_received(np.array([1.0]), 0.0, np.arange(16), x, 0.0)
    np.testing.assert_allclose(r, x)


def test_circulant_structure_and_fft_path(rng):
    for n in (5, 64):
        c = crandn(rng, n)
        C = build_circulant(c)
        np.testing.assert_allclose(C[:, 0], c)
        np.testing.assert_allclose(C[1:, 1:], C[:-1, :-1])
        x = crandn(rng, n)
        np.testing.assert_allclose(circulant_matvec(c, x), C @ x, atol=1e-12)


def test_circulant_is_diagonalized_by_dft(rng):
    n = 16
    c = crandn(rng, n)
    C = build_circulant(c)
    F = dft(np.eye(n), axis=0)
    D = F @ C @ F.conj().T
    np.testing.assert_allclose(D, np.diag(np.fft.fft(c)), atol=1e-12)


def test_unitary_dft_round_trip(rng):
    x = crandn(rng, 32)
    np.testing.assert_allclose(idft(dft(x)), x, atol=1e-13)
    assert np.isclose(np.linalg.norm(dft(x)), np.linalg.norm(x))


def test_cfo_rotation():
    np.testing.assert_allclose(apply_cfo(0.0, np.ones(8)), np.ones(8))
    np.testing.assert_allclose(cfo_phases(0.5, 4), np.exp(1j * np.pi * np.arange(4) / 4))
    with pytest.raises(ValueError):
        apply_cfo(0.7, np.ones(4))


def test_permutation_matrix_and_inverse():
    order = random_permutation(10, 3)
    P = permutation_matrix(order)
    x = np.arange(10.0)
    np.testing.assert_allclose(P @ x, x[order])
    np.testing.assert_array_equal(order[invert_permutation(order)], np.arange(10))
    with pytest.raises(ValueError):
        permutation_matrix(np.array([0, 0, 1]))


def test_channel_real_composite_round_trip(rng):
    h = ChannelImpulseResponse(crandn(rng, 5))
    back = ChannelImpulseResponse.from_real_composite(h.real_composite)
    np.testing.assert_array_equal(back.taps, h.taps)
    assert list(ChannelImpulseResponse(np.array([0, 1, 0, 2j])).support) == [1, 3]


def test_interleave_round_trip(rng):
    r = crandn(rng, 7)
    y = interleave(r)
    assert y[0] == r[0].real and y[1] == r[0].imag
    np.testing.assert_array_equal(deinterleave(y), r)


def test_layout_blocks(rng):
    mask = np.array([1, 0, 1, 1, 0, 0], dtype=bool)
    x = crandn(rng, 6)
    xbar, layout = to_real_composite(x, mask)
    t = mask.sum()
    np.testing.assert_array_equal(xbar[:t], x[mask].real)
    np.testing.assert_array_equal(xbar[t:6], x[~mask].real)
    np.testing.assert_array_equal(xbar[6 : 6 + t], x[mask].imag)
    np.testing.assert_array_equal(layout.from_real(xbar), x)
    chi = xbar[layout.unknown_positions]
    np.testing.assert_array_equal(layout.unknown_to_complex(chi)[~mask], x[~mask])


def test_real_rows_and_gram(rng):
    A = crandn(rng, 6, 3)
    v = crandn(rng, 3)
    Ar = real_rows(A)
    np.testing.assert_allclose(deinterleave(Ar @ np.concatenate([v.real, v.imag])), A @ v, atol=1e-12)
    np.testing.assert_allclose(Ar.T @ Ar, real_gram(A.conj().T @ A), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(
    n=st.integers(4, 24),
    L=st.integers(1, 4),
    eps=st.floats(-0.5, 0.5),
    seed=st.integers(0, 2**31),
    train=st.floats(0, 1),
)
def test_both_factorizations_reproduce_noiseless_observation(n, L, eps, seed, train):
    rng = np.random.default_rng(seed)
    L = min(L, n)
    x = crandn(rng, n)
    h = crandn(rng, L)
    order = rng.permutation(n)
    mask = rng.uniform(size=n) < train
    y = interleave(simulate_received(h, eps, order, x, 0.0))
    layout = CompositeLayout(mask)
    M = symbol_matrix(h, eps, order, layout)
    np.testing.assert_allclose(M @ layout.to_real(x), y, atol=1e-10)
    calM = channel_matrix(x, eps, order, L)
    hbar = np.concatenate([h.real, h.imag])
    np.testing.assert_allclose(calM @ hbar, y, atol=1e-10)
    k = int(rng.integers(n))
    Mk, calMk = build_observation_row(k, x, eps, hbar, order, layout)
    np.testing.assert_allclose(Mk, M[2 * k : 2 * k + 2], atol=1e-12)
    np.testing.assert_allclose(calMk, calM[2 * k : 2 * k + 2], atol=1e-12)
    np.testing.assert_allclose(Mk @ layout.to_real(x), y[2 * k : 2 * k + 2], atol=1e-10)


def test_convolution_matches_numpy(rng):
    h = crandn(rng, 3)
    x = crandn(rng, 10)
    full = np.convolve(h, x)
    expected = full[:10].copy()
    expected[:2] += full[10:]
    np.testing.assert_allclose(circular_convolve(h, x), expected, atol=1e-12)


def test_noise_statistics():
    n = 200_000
    x = np.zeros(n, dtype=complex)
    r = simulate_received(np.array([1.0]), 0.0, np.arange(n), x, 0.5, rng=1)
    assert abs(np.var(r.real) - 0.125) < 3e-3
    assert abs(np.var(r.imag) - 0.125) < 3e-3
    assert abs(np.mean(r.real * r.imag)) < 3e-3


def test_invalid_inputs(rng):
    with pytest.raises(ValueError):
        simulate_received(crandn(rng, 9), 0.0, np.arange(8), crandn(rng, 8), 0.1)
    with pytest.raises(ValueError):
        simulate_received(crandn(rng, 2), 0.0, np.arange(8), crandn(rng, 8), -1.0)
    with pytest.raises(IndexError):
        build_observation_row(8, crandn(rng, 8), 0.0, np.zeros(4), np.arange(8))
