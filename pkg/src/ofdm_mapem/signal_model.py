"""Signal algebra for the post-CP OFDM model ``r = C_eps H P x + eta``.

Two real-valued layouts are used throughout:

* observations are *interleaved* per sample, ``y = [Re r_0, Im r_0, Re r_1, ...]``,
  so that sample ``k`` owns rows ``2k`` and ``2k + 1``;
* transmitted signals are *block stacked*,
  ``xbar = [Re x_T, Re x_U, Im x_T, Im x_U]`` where ``T`` are the training
  (known) samples and ``U`` the unknown ones. :class:`CompositeLayout` holds
  the index maps between this layout and the complex vector.

Channel vectors use ``hbar = [Re h, Im h]``.
"""

from dataclasses import dataclass, field

import numpy as np

from ._validation import (
    check_complex_vector,
    check_epsilon,
    check_mask,
    check_permutation,
)

# Above this size circulant products go through the FFT.
FFT_THRESHOLD = 32


def dft(x, axis=-1):
    """Unitary DFT."""
    return np.fft.fft(x, axis=axis, norm="ortho")


def idft(x, axis=-1):
    """Unitary inverse DFT."""
    return np.fft.ifft(x, axis=axis, norm="ortho")


# --------------------------------------------------------------------------
# Circulant matrices
# --------------------------------------------------------------------------


def build_circulant(first_column):
    """Circulant matrix whose column ``j`` is ``first_column`` rolled down by ``j``."""
    c = np.asarray(first_column)
    if c.ndim != 1 or c.size == 0:
        raise ValueError("first_column must be a non-empty 1-D vector")
    n = c.size
    idx = (np.arange(n)[:, None] - np.arange(n)[None, :]) % n
    return c[idx]


def circulant_matvec(first_column, x):
    """Compute ``build_circulant(first_column) @ x`` (circular convolution)."""
    c = np.asarray(first_column)
    x = np.asarray(x)
    if c.shape[0] != x.shape[0]:
        raise ValueError("dimension mismatch between circulant and vector")
    if c.shape[0] > FFT_THRESHOLD:
        y = np.fft.ifft(np.fft.fft(c)[(...,) + (None,) * (x.ndim - 1)] * np.fft.fft(x, axis=0), axis=0)
        if np.isrealobj(c) and np.isrealobj(x):
            y = y.real
        return y
    return build_circulant(c) @ x


def pad_channel(taps, n):
    """Zero-pad ``taps`` to length ``n`` (the first column of the channel matrix)."""
    taps = np.asarray(taps)
    if taps.size > n:
        raise ValueError(f"channel length {taps.size} exceeds frame length {n}")
    out = np.zeros(n, dtype=np.result_type(taps.dtype, np.complex128))
    out[: taps.size] = taps
    return out


def circular_convolve(h, x):
    """Circular convolution of ``h`` (zero padded to ``len(x)``) with ``x``."""
    return circulant_matvec(pad_channel(h, len(x)), np.asarray(x, dtype=np.complex128))


# --------------------------------------------------------------------------
# CFO and permutations
# --------------------------------------------------------------------------


def cfo_phases(epsilon, n):
    """Diagonal of ``C_eps``: ``exp(j 2 pi eps k / n)`` for ``k = 0..n-1``."""
    return np.exp(2j * np.pi * epsilon * np.arange(n) / n)


def apply_cfo(epsilon, s):
    """Rotate sample ``k`` of ``s`` by ``exp(j 2 pi epsilon k / N)``."""
    epsilon = check_epsilon(epsilon)
    s = check_complex_vector(s, "s")
    return cfo_phases(epsilon, s.size) * s


def identity_permutation(n):
    return np.arange(n, dtype=np.intp)


def random_permutation(n, seed):
    return np.random.default_rng(seed).permutation(n).astype(np.intp)


def permutation_matrix(order):
    """Matrix ``P`` with ``(P x)[i] = x[order[i]]``."""
    order = check_permutation(order)
    n = order.size
    P = np.zeros((n, n))
    P[np.arange(n), order] = 1.0
    return P


def apply_permutation(order, x):
    return np.asarray(x)[order]


def invert_permutation(order):
    inv = np.empty_like(order)
    inv[order] = np.arange(order.size)
    return inv


# --------------------------------------------------------------------------
# Channel impulse response
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ChannelImpulseResponse:
    """Complex ``L``-tap FIR channel."""

    taps: np.ndarray

    def __post_init__(self):
        taps = check_complex_vector(self.taps, "taps")
        taps.setflags(write=False)
        object.__setattr__(self, "taps", taps)

    @property
    def length(self):
        return self.taps.size

    @property
    def support(self):
        return np.flatnonzero(self.taps != 0)

    @property
    def real_composite(self):
        """``hbar = [Re h, Im h]``."""
        return np.concatenate([self.taps.real, self.taps.imag])

    @classmethod
    def from_real_composite(cls, h_bar):
        h_bar = np.asarray(h_bar, dtype=np.float64)
        if h_bar.ndim != 1 or h_bar.size % 2:
            raise ValueError("real-composite channel must have even length")
        L = h_bar.size // 2
        return cls(h_bar[:L] + 1j * h_bar[L:])


# --------------------------------------------------------------------------
# Received signal
# --------------------------------------------------------------------------


def simulate_received(h, epsilon, order, x, sigma, rng=None):
    """Draw ``r = C_eps H P x + eta`` with ``eta`` proper complex Gaussian.

    ``sigma**2`` is the complex noise variance per sample, so real and
    imaginary parts each have variance ``sigma**2 / 2``.
    """
    taps = h.taps if isinstance(h, ChannelImpulseResponse) else check_complex_vector(h, "h")
    x = check_complex_vector(x, "x")
    n = x.size
    if taps.size > n:
        raise ValueError(f"channel length {taps.size} exceeds frame length {n}")
    order = check_permutation(order, n)
    epsilon = check_epsilon(epsilon)
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    clean = cfo_phases(epsilon, n) * circular_convolve(taps, x[order])
    if sigma == 0:
        return clean
    rng = np.random.default_rng(rng)
    noise = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return clean + sigma * np.sqrt(0.5) * noise


# --------------------------------------------------------------------------
# Real-composite layouts
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CompositeLayout:
    """Index maps for ``xbar = [Re x_T, Re x_U, Im x_T, Im x_U]``."""

    training_mask: np.ndarray
    training_index: np.ndarray = field(init=False)
    unknown_index: np.ndarray = field(init=False)

    def __post_init__(self):
        mask = np.asarray(self.training_mask, dtype=bool).copy()
        mask.setflags(write=False)
        object.__setattr__(self, "training_mask", mask)
        object.__setattr__(self, "training_index", np.flatnonzero(mask))
        object.__setattr__(self, "unknown_index", np.flatnonzero(~mask))

    @property
    def n(self):
        return self.training_mask.size

    @property
    def n_training(self):
        return self.training_index.size

    @property
    def n_unknown(self):
        return self.unknown_index.size

    @property
    def natural_index(self):
        """``xbar = concat([Re x, Im x])[natural_index]``."""
        n = self.n
        return np.concatenate(
            [self.training_index, self.unknown_index, n + self.training_index, n + self.unknown_index]
        )

    @property
    def training_positions(self):
        """Positions of training entries inside ``xbar``."""
        n, t = self.n, self.n_training
        return np.concatenate([np.arange(t), n + np.arange(t)])

    @property
    def unknown_positions(self):
        """Positions of the unknown block ``[Re x_U, Im x_U]`` inside ``xbar``."""
        n, t = self.n, self.n_training
        return np.concatenate([np.arange(t, n), n + np.arange(t, n)])

    def to_real(self, x):
        x = np.asarray(x, dtype=np.complex128)
        return np.concatenate([x.real, x.imag])[self.natural_index]

    def from_real(self, x_bar):
        x_bar = np.asarray(x_bar, dtype=np.float64)
        z = np.empty(2 * self.n)
        z[self.natural_index] = x_bar
        return z[: self.n] + 1j * z[self.n :]

    def unknown_to_complex(self, chi):
        """Embed an unknown-block vector (or matrix of column vectors) as complex samples.

        Training entries are zero.
        """
        chi = np.asarray(chi, dtype=np.float64)
        u = self.n_unknown
        out = np.zeros((self.n,) + chi.shape[1:], dtype=np.complex128)
        out[self.unknown_index] = chi[:u] + 1j * chi[u:]
        return out


def to_real_composite(x, training_mask):
    """Return ``(xbar, layout)`` for complex ``x`` and its training mask."""
    x = check_complex_vector(x, "x")
    mask = check_mask(training_mask, x.size)
    layout = CompositeLayout(mask)
    return layout.to_real(x), layout


def interleave(r):
    """``[Re r_0, Im r_0, Re r_1, ...]``."""
    r = np.asarray(r, dtype=np.complex128)
    return np.column_stack([r.real, r.imag]).ravel()


def deinterleave(y):
    y = np.asarray(y, dtype=np.float64)
    return y[0::2] + 1j * y[1::2]


def real_rows(A):
    """Real-composite form of a complex matrix acting on ``[Re v; Im v]``.

    Rows are interleaved per sample: row ``2k`` is ``[Re A_k, -Im A_k]`` and
    row ``2k+1`` is ``[Im A_k, Re A_k]``.
    """
    A = np.asarray(A, dtype=np.complex128)
    n, m = A.shape
    out = np.empty((2 * n, 2 * m))
    out[0::2, :m] = A.real
    out[0::2, m:] = -A.imag
    out[1::2, :m] = A.imag
    out[1::2, m:] = A.real
    return out


def real_gram(G):
    """``real_rows(A).T @ real_rows(A)`` given the complex Gram ``G = A^H A``."""
    G = np.asarray(G, dtype=np.complex128)
    return np.block([[G.real, -G.imag], [G.imag, G.real]])


# --------------------------------------------------------------------------
# Symbol-linear and channel-linear observation matrices
# --------------------------------------------------------------------------


def _convolution_index(n, L):
    return (np.arange(n)[:, None] - np.arange(L)[None, :]) % n


def channel_regressor(s, L):
    """``S[k, l] = s[(k - l) mod N]`` so that ``S @ h`` is circular convolution.

    ``s`` may carry trailing dimensions; the result has shape ``(N, L, ...)``.
    """
    s = np.asarray(s)
    return s[_convolution_index(s.shape[0], L)]


def symbol_matrix(h, epsilon, order, layout=None):
    """Stacked ``M`` with ``y = M xbar`` (columns in ``layout`` order).

    Without a layout the columns follow ``[Re x, Im x]``.
    """
    taps = h.taps if isinstance(h, ChannelImpulseResponse) else np.asarray(h, dtype=np.complex128)
    n = len(order)
    H = build_circulant(pad_channel(taps, n))
    T = cfo_phases(epsilon, n)[:, None] * H[:, invert_permutation(np.asarray(order))]
    M = real_rows(T)
    if layout is not None:
        M = M[:, layout.natural_index]
    return M


def channel_matrix(x, epsilon, order, L):
    """Stacked ``calM`` (``2N x 2L``) with ``y = calM hbar`` in the noiseless case."""
    x = np.asarray(x, dtype=np.complex128)
    S = channel_regressor(x[order], L)
    return real_rows(cfo_phases(epsilon, x.size)[:, None] * S)


def build_observation_row(k, x, epsilon, h_bar, order, layout=None):
    """Per-sample blocks ``(Mbar_k, calMbar_k)`` of the two factorizations.

    ``Mbar_k`` is ``2 x 2N`` (acting on ``xbar``) and ``calMbar_k`` is
    ``2 x 2L`` (acting on ``hbar``); both reproduce ``[Re r_k, Im r_k]``.
    """
    x = check_complex_vector(x, "x")
    n = x.size
    if not 0 <= k < n:
        raise IndexError(f"sample index {k} out of range for N={n}")
    order = check_permutation(order, n)
    epsilon = check_epsilon(epsilon)
    h = ChannelImpulseResponse.from_real_composite(h_bar)
    psi = 2 * np.pi * k * epsilon / n
    H = build_circulant(pad_channel(h.taps, n))[k, invert_permutation(order)]
    a = np.cos(psi) * H.real - np.sin(psi) * H.imag
    b = np.sin(psi) * H.real + np.cos(psi) * H.imag
    M_k = np.block([[a, -b], [b, a]])
    if layout is not None:
        M_k = M_k[:, layout.natural_index]
    s_row = x[order][(k - np.arange(h.length)) % n]
    a_c = np.cos(psi) * s_row.real - np.sin(psi) * s_row.imag
    b_c = np.sin(psi) * s_row.real + np.cos(psi) * s_row.imag
    calM_k = np.block([[a_c, -b_c], [b_c, a_c]])
    return M_k, calM_k
