"""Monte-Carlo experiments: NMSE and BER metrics, symbol detection, reports and CSV output."""

import csv
import dataclasses
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ._validation import check_complex_vector
from .estimator import EmOptions, map_em, ml_em, pilot_tau, tau_empirical_bayes
from .signal_model import CompositeLayout, apply_cfo, dft, idft, invert_permutation, pad_channel
from .simulator import (
    TRIAL_STREAM,
    ExperimentConfig,
    generate_frame,
    qpsk_demodulate,
)

logger = logging.getLogger(__name__)

MODES = ("map", "ml")
SWEEP_HEADER = (
    "mode",
    "snr_db",
    "training_fraction",
    "trials",
    "iterations_cap",
    "nmse_mean",
    "nmse_median",
    "nmse_std",
    "ber_mean",
    "converged_fraction",
)
ASCENT_SLACK = 1e-8
# channel bins weaker than this are not equalized by division
WEAK_BIN = 1e-6


def fmt(value):
    """Float formatting used in every emitted file (17 significant digits)."""
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "nan"
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


# --------------------------------------------------------------------------
# Metrics and detection
# --------------------------------------------------------------------------


def nmse(h_true, h_hat):
    """``(h - h_hat)^H (h - h_hat) / (h^H h)``."""
    h_true = check_complex_vector(h_true, "h_true")
    h_hat = check_complex_vector(h_hat, "h_hat", h_true.size)
    energy = np.vdot(h_true, h_true).real
    if energy == 0:
        raise ValueError("NMSE is undefined for an all-zero true channel")
    err = h_true - h_hat
    return float(np.vdot(err, err).real / energy)


def detect_symbols(frame, h_hat, epsilon_hat, posterior=None):
    """Hard QPSK bit decisions for the data block of a ``qpsk`` frame.

    The received samples are de-rotated by ``-epsilon_hat`` and equalized
    per DFT bin by the zero-padded channel estimate, which gives an estimate
    of the permuted transmit block. Bins where the channel estimate is
    below ``WEAK_BIN`` take the DFT of the symbol-posterior reconstruction
    instead. The data samples are then undone from their IDFT spreading and
    sliced.
    """
    if frame.config.modulation != "qpsk" or frame.bits is None:
        raise ValueError("symbol detection needs a qpsk-mode frame")
    n = frame.n_subcarriers
    h_hat = check_complex_vector(h_hat, "h_hat")
    mask = frame.training_mask
    if mask.all():
        return np.zeros(0, dtype=np.int8)

    z = dft(apply_cfo(-float(epsilon_hat), frame.r))
    H = np.fft.fft(pad_channel(h_hat, n))
    weak = np.abs(H) < WEAK_BIN
    S = np.empty(n, dtype=np.complex128)
    S[~weak] = z[~weak] / H[~weak]
    if weak.any():
        if posterior is None:
            raise ValueError("channel estimate has near-zero bins; a symbol posterior is required")
        S[weak] = dft(_posterior_signal(frame, posterior)[frame.permutation])[weak]
    permuted = idft(S)
    x_hat = permuted[invert_permutation(frame.permutation)]
    return qpsk_demodulate(dft(x_hat[~mask]))


def _posterior_signal(frame, posterior):
    """Transmit block with the unknown samples replaced by their posterior mean."""
    layout = CompositeLayout(frame.training_mask)
    return frame.x_known + layout.unknown_to_complex(posterior.mean)


def bit_error_rate(bits, bits_hat):
    bits = np.asarray(bits)
    bits_hat = np.asarray(bits_hat)
    if bits.shape != bits_hat.shape:
        raise ValueError("bit vectors differ in length")
    if bits.size == 0:
        return 0.0
    return float(np.mean(bits != bits_hat))


# --------------------------------------------------------------------------
# Trials
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TrialResult:
    trial_id: int
    mode: str
    nmse: float
    epsilon_error: float
    sigma_hat: float
    ber: Optional[float]
    iterations: int
    converged: bool
    tau: Optional[float] = None
    ascent_violations: int = 0
    error: Optional[str] = None

    def __post_init__(self):
        if self.error is None:
            if not self.nmse >= 0:
                raise ValueError("nmse must be non-negative")
            if self.ber is not None and not 0 <= self.ber <= 1:
                raise ValueError("ber must lie in [0, 1]")

    @property
    def ok(self):
        return self.error is None

    @classmethod
    def failed(cls, trial_id, mode, message):
        nan = float("nan")
        return cls(trial_id, mode, nan, nan, nan, None, 0, False, error=message)


def _trial_result(frame, res, mode):
    ber = None
    if frame.config.modulation == "qpsk":
        bits_hat = detect_symbols(frame, res.channel.taps, res.epsilon, res.posterior)
        ber = bit_error_rate(frame.bits, bits_hat)
    return TrialResult(
        trial_id=frame.trial,
        mode=mode,
        nmse=nmse(frame.true_h.taps, res.channel.taps),
        epsilon_error=float(res.epsilon - frame.true_epsilon),
        sigma_hat=float(res.sigma),
        ber=ber,
        iterations=res.n_iter,
        converged=bool(res.converged),
        tau=float(res.tau) if math.isfinite(res.tau) else None,
        ascent_violations=len(res.trace.ascent_violations(ASCENT_SLACK)),
    )


def run_trial(cfg, trial, modes=MODES, options=None):
    """Estimate one frame with every requested mode on the same data.

    With ``tau='auto'`` the empirical-Bayes pilot is run once per trial;
    at full training the ML run itself is the pilot.
    """
    opts = options or EmOptions()
    frame = generate_frame(cfg, trial=trial)
    out = {}
    ml_res = None
    if "ml" in modes:
        try:
            ml_res = ml_em(frame, opts)
            out["ml"] = _trial_result(frame, ml_res, "ml")
        except Exception as exc:  # noqa: BLE001 - recorded, the sweep continues
            logger.warning("trial %d (ml) failed: %s", trial, exc)
            out["ml"] = TrialResult.failed(trial, "ml", f"{type(exc).__name__}: {exc}")
    if "map" in modes:
        try:
            tau = opts.tau
            if tau == "auto":
                reuse = ml_res is not None and frame.training_mask.all() and opts.max_iter is None
                if reuse:
                    tau = tau_empirical_bayes(ml_res.state.h_bar, ml_res.sigma)
                else:
                    tau, _ = pilot_tau(frame, opts)
            res = map_em(frame, dataclasses.replace(opts, mode="map", tau=tau))
            out["map"] = _trial_result(frame, res, "map")
        except Exception as exc:  # noqa: BLE001
            logger.warning("trial %d (map) failed: %s", trial, exc)
            out["map"] = TrialResult.failed(trial, "map", f"{type(exc).__name__}: {exc}")
    return out


def _run_trial_args(args):
    return run_trial(*args)


# --------------------------------------------------------------------------
# Reports
# --------------------------------------------------------------------------


def aggregate(results):
    """Mean/median/std of NMSE, mean BER and convergence over successful trials."""
    ok = [r for r in results if r.ok]
    nm = np.array([r.nmse for r in ok], dtype=np.float64)
    bers = [r.ber for r in ok if r.ber is not None]
    nan = float("nan")
    return {
        "n_ok": len(ok),
        "n_failed": len(results) - len(ok),
        "nmse_mean": float(nm.mean()) if nm.size else nan,
        "nmse_median": float(np.median(nm)) if nm.size else nan,
        "nmse_std": float(nm.std(ddof=1)) if nm.size > 1 else nan,
        "ber_mean": float(np.mean(bers)) if bers else nan,
        "ber_median": float(np.median(bers)) if bers else nan,
        "ber_std": float(np.std(bers, ddof=1)) if len(bers) > 1 else nan,
        "converged_fraction": float(np.mean([r.converged for r in ok])) if ok else nan,
        "ascent_violations": int(sum(r.ascent_violations for r in ok)),
    }


def _close(a, b, tol):
    if isinstance(a, float) and isinstance(b, float) and math.isnan(a) and math.isnan(b):
        return True
    return abs(a - b) <= tol * max(1.0, abs(a), abs(b))


@dataclass
class SweepReport:
    config: ExperimentConfig
    options: dict
    modes: tuple
    results: dict  # mode -> list[TrialResult]
    aggregates: dict = field(default_factory=dict)
    wall_clock: float = 0.0
    seed_manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.aggregates:
            self.aggregates = {m: aggregate(self.results[m]) for m in self.modes}

    def paired_fraction(self, better="map", worse="ml"):
        """Fraction of trials where ``better`` has strictly lower NMSE than ``worse``."""
        pairs = [
            (a.nmse, b.nmse)
            for a, b in zip(self.results[better], self.results[worse])
            if a.ok and b.ok
        ]
        return float(np.mean([a < b for a, b in pairs])) if pairs else float("nan")

    def check_consistency(self, tol=1e-12):
        for m in self.modes:
            fresh = aggregate(self.results[m])
            for key, val in fresh.items():
                if not _close(val, self.aggregates[m][key], tol):
                    raise ValueError(
                        f"stored aggregate {m}.{key}={self.aggregates[m][key]!r} "
                        f"disagrees with recomputed value {val!r}"
                    )

    def to_dict(self):
        return {
            "config": self.config.to_dict(),
            "options": self.options,
            "modes": list(self.modes),
            "results": {m: [dataclasses.asdict(r) for r in rs] for m, rs in self.results.items()},
            "aggregates": self.aggregates,
            "wall_clock": self.wall_clock,
            "seed_manifest": self.seed_manifest,
        }

    @classmethod
    def from_dict(cls, data):
        report = cls(
            config=ExperimentConfig.from_dict(data["config"]),
            options=data["options"],
            modes=tuple(data["modes"]),
            results={m: [TrialResult(**r) for r in rs] for m, rs in data["results"].items()},
            aggregates=data["aggregates"],
            wall_clock=data["wall_clock"],
            seed_manifest=data["seed_manifest"],
        )
        report.check_consistency()
        return report

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, allow_nan=True))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def options_to_dict(options):
    return dataclasses.asdict(options)


def run_monte_carlo(cfg, modes=MODES, options=None, n_jobs=1, trials=None):
    """Paired Monte-Carlo run of ``cfg.n_trials`` frames.

    Every mode sees the same frame in each trial. Trial ``t`` draws from
    ``SeedSequence(cfg.rng_seed, spawn_key=(0, t))``, so results do not
    depend on ``n_jobs`` or on execution order.
    """
    modes = tuple(m for m in MODES if m in set(modes))
    if not modes:
        raise ValueError("at least one of 'map', 'ml' must be requested")
    opts = options or EmOptions()
    trial_ids = list(range(cfg.n_trials)) if trials is None else list(trials)
    start = time.perf_counter()
    jobs = [(cfg, t, modes, opts) for t in trial_ids]
    if n_jobs == 1:
        per_trial = [_run_trial_args(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            per_trial = list(pool.map(_run_trial_args, jobs))
    results = {m: [r[m] for r in per_trial] for m in modes}
    manifest = {
        "rng_seed": cfg.rng_seed,
        "trial_spawn_keys": [[TRIAL_STREAM, t] for t in trial_ids],
        "permutation_seed": cfg.permutation_seed,
    }
    return SweepReport(
        config=cfg,
        options=options_to_dict(opts),
        modes=modes,
        results=results,
        wall_clock=time.perf_counter() - start,
        seed_manifest=manifest,
    )


# --------------------------------------------------------------------------
# Sweeps and CSV output
# --------------------------------------------------------------------------


def sweep(base_cfg, snrs, trainings, modes=MODES, options=None, n_jobs=1):
    """Run :func:`run_monte_carlo` over ``snrs x trainings``; returns the reports."""
    reports = []
    for tf in trainings:
        for snr in snrs:
            cfg = dataclasses.replace(base_cfg, snr_db=float(snr), training_fraction=float(tf))
            reports.append(run_monte_carlo(cfg, modes, options, n_jobs))
    return reports


def sweep_rows(reports):
    rows = []
    for rep in reports:
        cap = EmOptions(**rep.options).iteration_cap(rep.config.n_unknown)
        for mode in rep.modes:
            agg = rep.aggregates[mode]
            rows.append(
                {
                    "mode": mode,
                    "snr_db": rep.config.snr_db,
                    "training_fraction": rep.config.training_fraction,
                    "trials": agg["n_ok"],
                    "iterations_cap": cap,
                    "nmse_mean": agg["nmse_mean"],
                    "nmse_median": agg["nmse_median"],
                    "nmse_std": agg["nmse_std"],
                    "ber_mean": agg["ber_mean"],
                    "converged_fraction": agg["converged_fraction"],
                }
            )
    return rows


def _write_csv(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([row[k] if isinstance(row[k], str) else fmt(row[k]) for k in header])
    return buf.getvalue()


def sweep_csv(reports):
    """Table-shaped CSV, one row per (training fraction, SNR, mode)."""
    return _write_csv(SWEEP_HEADER, sweep_rows(reports))


BER_HEADER = ("trial", "ber_ml", "ber_map")


def ber_csv(report):
    """Per-trial BER for each mode followed by a ``mean`` row."""
    if report.config.modulation != "qpsk":
        raise ValueError("BER output needs a qpsk-mode report")
    by_mode = {m: {r.trial_id: r for r in report.results.get(m, [])} for m in MODES}
    ids = sorted({t for rs in by_mode.values() for t in rs})
    rows = []
    for t in ids:
        row = {"trial": str(t)}
        for m in MODES:
            r = by_mode[m].get(t)
            row[f"ber_{m}"] = r.ber if r is not None and r.ok else float("nan")
        rows.append(row)
    mean = {"trial": "mean"}
    for m in MODES:
        mean[f"ber_{m}"] = report.aggregates[m]["ber_mean"] if m in report.aggregates else float("nan")
    rows.append(mean)
    return _write_csv(BER_HEADER, rows)


def ber_plot_data(report):
    """Scatter and running-average series per mode (the content of a per-trial BER plot)."""
    data = {"snr_db": report.config.snr_db, "training_fraction": report.config.training_fraction}
    for m in report.modes:
        ok = [r for r in report.results[m] if r.ok and r.ber is not None]
        ber = np.array([r.ber for r in ok])
        data[m] = {
            "trial": [r.trial_id for r in ok],
            "ber": ber.tolist(),
            "running_mean": (np.cumsum(ber) / np.arange(1, ber.size + 1)).tolist(),
            "average": float(ber.mean()) if ber.size else None,
        }
    return data
