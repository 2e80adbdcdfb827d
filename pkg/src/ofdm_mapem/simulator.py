"""Reproducible experiment instances: sparse channels, frames and noise."""

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from ._validation import check_mask
from .signal_model import (
    ChannelImpulseResponse,
    identity_permutation,
    idft,
    random_permutation,
    simulate_received,
)

SCHEMA_VERSION = 1

MODULATIONS = ("gaussian", "qpsk")
CHANNEL_GAINS = ("unit", "per_tap")

# spawn-key namespaces for SeedSequence; trial streams use (TRIAL_STREAM, t)
TRIAL_STREAM = 0
TRAINING_STREAM = 1


class InstanceFormatError(ValueError):
    """A frame file could not be parsed or failed validation."""


class SchemaVersionError(InstanceFormatError):
    """A frame file was written with an unsupported schema version."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Setup of one Monte-Carlo experiment.

    Defaults reproduce the numerical example: 64 subcarriers, a 20-tap
    channel with 6 nonzero taps, ``epsilon = 0.2537`` and 62.5 % training.

    ``channel_gain`` fixes the SNR convention. With ``"unit"`` the channel is
    scaled to unit norm, so ``snr_db`` is the SNR at the receiver. With
    ``"per_tap"`` the nonzero taps keep their CN(0, 1) draw and ``snr_db`` is
    the SNR per unit-gain path; the average receive SNR is then higher by
    ``10 log10(n_nonzero_taps)`` dB.
    """

    n_subcarriers: int = 64
    channel_len: int = 20
    n_nonzero_taps: int = 6
    snr_db: float = 10.0
    epsilon: float = 0.2537
    training_fraction: float = 0.625
    modulation: str = "gaussian"
    permutation_seed: Union[int, str] = "identity"
    rng_seed: int = 0
    n_trials: int = 100
    training_offset: int = 0
    channel_gain: str = "unit"

    def __post_init__(self):
        if not 0 < self.n_nonzero_taps <= self.channel_len <= self.n_subcarriers:
            raise ValueError(
                "need 0 < n_nonzero_taps <= channel_len <= n_subcarriers, got "
                f"{self.n_nonzero_taps}, {self.channel_len}, {self.n_subcarriers}"
            )
        if abs(self.epsilon) > 0.5:
            raise ValueError(f"|epsilon| must be <= 0.5, got {self.epsilon}")
        if not 0.0 <= self.training_fraction <= 1.0:
            raise ValueError(f"training_fraction must lie in [0, 1], got {self.training_fraction}")
        n_train = self.training_fraction * self.n_subcarriers
        if not math.isclose(n_train, round(n_train), abs_tol=1e-9):
            raise ValueError(
                f"training_fraction * n_subcarriers = {n_train} is not an integer"
            )
        if self.modulation not in MODULATIONS:
            raise ValueError(f"modulation must be one of {MODULATIONS}, got {self.modulation!r}")
        if self.permutation_seed != "identity" and not isinstance(self.permutation_seed, int):
            raise ValueError("permutation_seed must be an integer or 'identity'")
        if self.n_trials < 1:
            raise ValueError("n_trials must be positive")
        if not math.isfinite(self.snr_db):
            raise ValueError("snr_db must be finite")
        if self.channel_gain not in CHANNEL_GAINS:
            raise ValueError(f"channel_gain must be one of {CHANNEL_GAINS}, got {self.channel_gain!r}")
        if not 0 <= self.training_offset < self.n_subcarriers:
            raise ValueError("training_offset must lie in [0, n_subcarriers)")

    @property
    def n_training(self):
        return int(round(self.training_fraction * self.n_subcarriers))

    @property
    def n_unknown(self):
        return self.n_subcarriers - self.n_training

    def training_mask(self):
        """Contiguous (cyclic) training block starting at ``training_offset``."""
        mask = np.zeros(self.n_subcarriers, dtype=bool)
        mask[(self.training_offset + np.arange(self.n_training)) % self.n_subcarriers] = True
        return mask

    def permutation(self):
        if self.permutation_seed == "identity":
            return identity_permutation(self.n_subcarriers)
        return random_permutation(self.n_subcarriers, self.permutation_seed)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class FrameInstance:
    """One transmitted frame together with its ground truth."""

    config: ExperimentConfig
    x: np.ndarray
    training_mask: np.ndarray
    true_h: ChannelImpulseResponse
    true_epsilon: float
    sigma: float
    r: np.ndarray
    permutation: np.ndarray
    bits: Optional[np.ndarray] = None
    trial: int = 0

    @property
    def n_subcarriers(self):
        return self.x.size

    @property
    def channel_len(self):
        return self.config.channel_len

    @property
    def x_known(self):
        """Transmitted signal with the unknown samples zeroed."""
        return np.where(self.training_mask, self.x, 0)

    def with_training_mask(self, mask):
        return dataclasses.replace(self, training_mask=check_mask(mask, self.x.size))


# --------------------------------------------------------------------------
# Random draws
# --------------------------------------------------------------------------


def draw_sparse_channel(L, n_nonzero, rng, normalize=True):
    """Uniformly random support of size ``n_nonzero`` with CN(0, 1) taps.

    The channel is rescaled to unit norm unless ``normalize`` is false.
    """
    if not 0 < n_nonzero <= L:
        raise ValueError(f"need 0 < n_nonzero <= L, got n_nonzero={n_nonzero}, L={L}")
    rng = np.random.default_rng(rng)
    support = np.sort(rng.choice(L, size=n_nonzero, replace=False))
    taps = np.zeros(L, dtype=np.complex128)
    taps[support] = np.sqrt(0.5) * (rng.standard_normal(n_nonzero) + 1j * rng.standard_normal(n_nonzero))
    if normalize:
        taps /= np.linalg.norm(taps)
    return ChannelImpulseResponse(taps)


def sigma_from_snr(snr_db, signal_power=1.0):
    """Complex noise standard deviation for the given SNR."""
    if signal_power <= 0:
        raise ValueError("signal_power must be positive")
    return math.sqrt(signal_power / 10 ** (snr_db / 10))


QPSK_POINTS = np.array([1 + 1j, -1 + 1j, 1 - 1j, -1 - 1j]) / math.sqrt(2)


def qpsk_modulate(bits):
    """Gray-mapped QPSK: bit pairs ``(b0, b1)`` select the sign of the real/imag part."""
    bits = np.asarray(bits, dtype=np.int8).reshape(-1, 2)
    return QPSK_POINTS[bits[:, 0] + 2 * bits[:, 1]]


def qpsk_demodulate(symbols):
    symbols = np.asarray(symbols)
    bits = np.empty((symbols.size, 2), dtype=np.int8)
    bits[:, 0] = symbols.real < 0
    bits[:, 1] = symbols.imag < 0
    return bits.ravel()


def training_sequence(cfg):
    """Known constant-modulus QPSK pilot samples, fixed for a given ``rng_seed``."""
    ss = np.random.SeedSequence(cfg.rng_seed, spawn_key=(TRAINING_STREAM,))
    rng = np.random.default_rng(ss)
    return qpsk_modulate(rng.integers(0, 2, size=2 * cfg.n_training))


def trial_rng(cfg, trial):
    """Independent generator for trial ``trial`` split from ``cfg.rng_seed``."""
    return np.random.default_rng(np.random.SeedSequence(cfg.rng_seed, spawn_key=(TRIAL_STREAM, trial)))


def generate_frame(cfg, rng=None, trial=0):
    """Draw one frame: channel, payload, noise.

    The training block occupies ``n_training`` contiguous time samples
    starting at ``cfg.training_offset`` (leading by default). In
    ``gaussian`` mode the unknown samples are CN(0, 1); in ``qpsk`` mode they
    are the unitary IDFT of a QPSK block, so each unknown data subcarrier
    carries two bits.
    """
    if rng is None:
        rng = trial_rng(cfg, trial)
    n, n_t = cfg.n_subcarriers, cfg.n_training
    h = draw_sparse_channel(
        cfg.channel_len, cfg.n_nonzero_taps, rng, normalize=cfg.channel_gain == "unit"
    )

    mask = cfg.training_mask()
    x = np.empty(n, dtype=np.complex128)
    x[mask] = training_sequence(cfg)
    bits = None
    n_u = n - n_t
    if cfg.modulation == "gaussian":
        x[~mask] = np.sqrt(0.5) * (rng.standard_normal(n_u) + 1j * rng.standard_normal(n_u))
    elif n_u:
        bits = rng.integers(0, 2, size=2 * n_u).astype(np.int8)
        x[~mask] = idft(qpsk_modulate(bits))
    else:
        bits = np.zeros(0, dtype=np.int8)
    order = cfg.permutation()
    sigma = sigma_from_snr(cfg.snr_db)
    r = simulate_received(h, cfg.epsilon, order, x, sigma, rng)
    return FrameInstance(
        config=cfg,
        x=x,
        training_mask=mask,
        true_h=h,
        true_epsilon=cfg.epsilon,
        sigma=sigma,
        r=r,
        permutation=order,
        bits=bits,
        trial=trial,
    )


def empirical_snr_db(frames):
    """``10 log10(sum |C H P x|^2 / sum |eta|^2)`` over a set of frames."""
    sig = noise = 0.0
    for f in frames:
        clean = simulate_received(f.true_h, f.true_epsilon, f.permutation, f.x, 0.0)
        sig += np.sum(np.abs(clean) ** 2)
        noise += np.sum(np.abs(f.r - clean) ** 2)
    return 10 * np.log10(sig / noise)


# --------------------------------------------------------------------------
# Persistence
# --------------------------------------------------------------------------


def frame_to_dict(frame):
    return {
        "schema_version": SCHEMA_VERSION,
        "config": frame.config.to_dict(),
        "trial": frame.trial,
        "x_re": frame.x.real.tolist(),
        "x_im": frame.x.imag.tolist(),
        "mask": frame.training_mask.astype(bool).tolist(),
        "h_re": frame.true_h.taps.real.tolist(),
        "h_im": frame.true_h.taps.imag.tolist(),
        "epsilon": frame.true_epsilon,
        "sigma": frame.sigma,
        "r_re": frame.r.real.tolist(),
        "r_im": frame.r.imag.tolist(),
        "perm": frame.permutation.tolist(),
        "bits": None if frame.bits is None else frame.bits.tolist(),
    }


def frame_from_dict(data):
    if not isinstance(data, dict):
        raise InstanceFormatError("frame record must be a JSON object")
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(
            f"unsupported schema_version {version!r}; this build reads version {SCHEMA_VERSION}"
        )
    try:
        cfg = ExperimentConfig.from_dict(data["config"])
        x = np.asarray(data["x_re"], dtype=np.float64) + 1j * np.asarray(data["x_im"], dtype=np.float64)
        r = np.asarray(data["r_re"], dtype=np.float64) + 1j * np.asarray(data["r_im"], dtype=np.float64)
        taps = np.asarray(data["h_re"], dtype=np.float64) + 1j * np.asarray(data["h_im"], dtype=np.float64)
        mask = np.asarray(data["mask"])
        perm = np.asarray(data["perm"], dtype=np.intp)
        bits = data.get("bits")
        bits = None if bits is None else np.asarray(bits, dtype=np.int8)
        frame = FrameInstance(
            config=cfg,
            x=x,
            training_mask=check_mask(mask, x.size),
            true_h=ChannelImpulseResponse(taps),
            true_epsilon=float(data["epsilon"]),
            sigma=float(data["sigma"]),
            r=r,
            permutation=perm,
            bits=bits,
            trial=int(data.get("trial", 0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InstanceFormatError(f"malformed frame record: {exc}") from exc
    if r.shape != x.shape or x.size != cfg.n_subcarriers:
        raise InstanceFormatError("signal lengths disagree with config.n_subcarriers")
    if np.sort(perm).tolist() != list(range(x.size)):
        raise InstanceFormatError("perm is not a permutation")
    return frame


def persist_instance(frame, path):
    Path(path).write_text(json.dumps(frame_to_dict(frame)))


def load_instance(path):
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InstanceFormatError(f"{path}: not valid JSON ({exc})") from exc
    return frame_from_dict(data)
