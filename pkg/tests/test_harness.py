import csv
import dataclasses
import io
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ofdm_mapem import harness
from ofdm_mapem.estimator import EmOptions, map_em, ml_em
from ofdm_mapem.harness import (
    SWEEP_HEADER,
    SweepReport,
    TrialResult,
    ber_csv,
    ber_plot_data,
    bit_error_rate,
    detect_symbols,
    nmse,
    run_monte_carlo,
    sweep,
    sweep_csv,
)
from ofdm_mapem.posterior import PosteriorMoments
from ofdm_mapem.simulator import ExperimentConfig, generate_frame

SMALL = dict(n_subcarriers=16, channel_len=4, n_nonzero_taps=2, training_fraction=0.5)


def test_nmse_examples():
    h = np.array([1 + 1j, 0.5, -2j])
    assert nmse(h, h) == 0
    assert nmse(h, np.zeros(3)) == 1
    assert math.isclose(nmse(h, 2 * h), 1.0)
    with pytest.raises(ValueError):
        nmse(np.zeros(3), h)
    with pytest.raises(ValueError):
        nmse(h, h[:2])


@settings(max_examples=25, deadline=None)
@given(phase=st.floats(0, 2 * np.pi), seed=st.integers(0, 1000))
def test_nmse_global_phase_invariance(phase, seed):
    rng = np.random.default_rng(seed)
    h = rng.standard_normal(5) + 1j * rng.standard_normal(5)
    g = h + 0.1 * (rng.standard_normal(5) + 1j * rng.standard_normal(5))
    rot = np.exp(1j * phase)
    assert math.isclose(nmse(rot * h, rot * g), nmse(h, g), rel_tol=1e-9, abs_tol=1e-15)


def test_perfect_knowledge_detects_every_bit():
    cfg = ExperimentConfig(modulation="qpsk", snr_db=400, permutation_seed=3)
    for t in range(5):
        f = generate_frame(cfg, trial=t)
        bits = detect_symbols(f, f.true_h.taps, f.true_epsilon)
        assert bit_error_rate(f.bits, bits) == 0


def test_wrong_cfo_destroys_detection():
    cfg = ExperimentConfig(modulation="qpsk", snr_db=400, epsilon=0.0)
    errors = total = 0
    for t in range(25):
        f = generate_frame(cfg, trial=t)
        bits = detect_symbols(f, f.true_h.taps, 0.5)
        errors += np.sum(bits != f.bits)
        total += bits.size
    assert total >= 1000
    # chance level: the residual phase ramp makes errors correlated, so the band is loose
    assert 0.35 < errors / total < 0.65


def test_weak_bins_fall_back_to_posterior():
    f = generate_frame(ExperimentConfig(modulation="qpsk", snr_db=400))
    mask = f.training_mask
    layout_chi = np.concatenate([f.x[~mask].real, f.x[~mask].imag])
    post = PosteriorMoments(layout_chi, np.zeros((layout_chi.size, layout_chi.size)))
    zero = np.zeros(f.channel_len, dtype=complex)
    # the all-zero channel estimate leaves only the posterior route
    bits = detect_symbols(f, zero, f.true_epsilon, post)
    assert bit_error_rate(f.bits, bits) == 0
    with pytest.raises(ValueError):
        detect_symbols(f, zero, f.true_epsilon)


def test_detection_rejects_gaussian_frames():
    f = generate_frame(ExperimentConfig())
    with pytest.raises(ValueError):
        detect_symbols(f, f.true_h.taps, f.true_epsilon)


def test_known_everything_beats_ml_estimates():
    cfg = ExperimentConfig(modulation="qpsk", channel_gain="per_tap", n_trials=100)
    known = est = 0.0
    for t in range(cfg.n_trials):
        f = generate_frame(cfg, trial=t)
        known += bit_error_rate(f.bits, detect_symbols(f, f.true_h.taps, f.true_epsilon))
        res = ml_em(f)
        est += bit_error_rate(f.bits, detect_symbols(f, res.channel.taps, res.epsilon, res.posterior))
    assert known < est


def test_trial_result_invariants():
    with pytest.raises(ValueError):
        TrialResult(0, "ml", -1.0, 0.0, 1.0, None, 1, True)
    with pytest.raises(ValueError):
        TrialResult(0, "ml", 0.1, 0.0, 1.0, 1.5, 1, True)
    bad = TrialResult.failed(3, "map", "boom")
    assert not bad.ok and math.isnan(bad.nmse)


def _strip(report):
    d = report.to_dict()
    d.pop("wall_clock")
    return d


def test_monte_carlo_is_deterministic():
    cfg = ExperimentConfig(n_trials=1, rng_seed=11, **SMALL)
    a = run_monte_carlo(cfg)
    b = run_monte_carlo(cfg)
    assert json.dumps(_strip(a)) == json.dumps(_strip(b))
    assert a.seed_manifest["trial_spawn_keys"] == [[0, 0]]


def test_monte_carlo_pairs_modes_on_same_frame():
    cfg = ExperimentConfig(n_trials=2, rng_seed=5, **SMALL)
    rep = run_monte_carlo(cfg, options=EmOptions(tau=0.5))
    f = generate_frame(cfg, trial=1)
    assert math.isclose(rep.results["ml"][1].nmse, nmse(f.true_h.taps, ml_em(f).channel.taps))
    assert math.isclose(
        rep.results["map"][1].nmse, nmse(f.true_h.taps, map_em(f, EmOptions(tau=0.5)).channel.taps)
    )


def test_full_training_reuses_ml_run_as_pilot():
    cfg = ExperimentConfig(n_trials=1, **dict(SMALL, training_fraction=1.0))
    rep = run_monte_carlo(cfg)
    f = generate_frame(cfg, trial=0)
    ref = map_em(f)
    assert math.isclose(rep.results["map"][0].tau, ref.tau, rel_tol=1e-12)
    assert math.isclose(rep.results["map"][0].nmse, nmse(f.true_h.taps, ref.channel.taps), rel_tol=1e-12)


def test_failed_trial_is_recorded(monkeypatch):
    real = harness.ml_em

    def flaky(frame, *a, **k):
        if frame.trial == 1:
            raise np.linalg.LinAlgError("synthetic failure")
        return real(frame, *a, **k)

    monkeypatch.setattr(harness, "ml_em", flaky)
    cfg = ExperimentConfig(n_trials=3, **SMALL)
    rep = run_monte_carlo(cfg, modes=["ml"])
    assert [r.ok for r in rep.results["ml"]] == [True, False, True]
    assert rep.aggregates["ml"]["n_failed"] == 1
    assert "synthetic failure" in rep.results["ml"][1].error


def test_report_round_trip_and_consistency_check(tmp_path):
    cfg = ExperimentConfig(n_trials=3, modulation="qpsk", **SMALL)
    rep = run_monte_carlo(cfg)
    path = tmp_path / "rep.json"
    rep.save(path)
    back = SweepReport.load(path)
    assert back.aggregates == rep.aggregates
    nm = [r.nmse for r in rep.results["map"]]
    assert math.isclose(back.aggregates["map"]["nmse_mean"], np.mean(nm), rel_tol=1e-12)
    assert math.isclose(back.aggregates["map"]["nmse_median"], np.median(nm), rel_tol=1e-12)
    data = json.loads(path.read_text())
    data["aggregates"]["ml"]["nmse_mean"] *= 1.01
    path.write_text(json.dumps(data))
    with pytest.raises(ValueError):
        SweepReport.load(path)


def test_sweep_csv_layout_and_determinism():
    base = ExperimentConfig(n_trials=2, rng_seed=7, **SMALL)
    reps = sweep(base, [5, 10], [1.0, 0.5])
    text = sweep_csv(reps)
    rows = list(csv.DictReader(io.StringIO(text)))
    assert tuple(text.splitlines()[0].split(",")) == SWEEP_HEADER
    assert len(rows) == 8
    assert {(r["mode"], float(r["snr_db"]), float(r["training_fraction"])) for r in rows} == {
        (m, s, t) for m in ("map", "ml") for s in (5.0, 10.0) for t in (1.0, 0.5)
    }
    caps = {float(r["training_fraction"]): int(r["iterations_cap"]) for r in rows}
    assert caps == {1.0: 100, 0.5: 300}
    value = rows[0]["nmse_mean"]
    assert float(value) == reps[0].aggregates["map"]["nmse_mean"]
    assert text == sweep_csv(sweep(base, [5, 10], [1.0, 0.5]))


def test_ber_outputs():
    cfg = ExperimentConfig(n_trials=3, modulation="qpsk", **SMALL)
    rep = run_monte_carlo(cfg)
    rows = list(csv.reader(io.StringIO(ber_csv(rep))))
    assert rows[0] == ["trial", "ber_ml", "ber_map"]
    assert [r[0] for r in rows[1:]] == ["0", "1", "2", "mean"]
    assert math.isclose(float(rows[-1][2]), np.mean([float(r[2]) for r in rows[1:-1]]), rel_tol=1e-12)
    plot = ber_plot_data(rep)
    assert plot["map"]["running_mean"][-1] == pytest.approx(plot["map"]["average"])
    with pytest.raises(ValueError):
        ber_csv(run_monte_carlo(dataclasses.replace(cfg, modulation="gaussian", n_trials=1)))


def test_map_is_sparser_than_ml():
    cfg = ExperimentConfig(training_fraction=1.0, channel_gain="per_tap", n_trials=10)
    rep_ok = 0
    for t in range(cfg.n_trials):
        f = generate_frame(cfg, trial=t)
        ml = np.sum(np.abs(ml_em(f).channel.taps) < 1e-3)
        mp = np.sum(np.abs(map_em(f).channel.taps) < 1e-3)
        rep_ok += mp >= ml
    assert rep_ok >= 9
