"""Command line interface: ``ofdm-mapem {simulate,estimate,montecarlo,sweep,ber}``."""

import argparse
import json
import sys
from pathlib import Path

import jsonschema

from .estimator import EmOptions, map_em
from .harness import ber_csv, ber_plot_data, fmt, run_monte_carlo, sweep, sweep_csv
from .simulator import ExperimentConfig, generate_frame, load_instance, persist_instance

RESULT_SCHEMA = {
    "type": "object",
    "required": [
        "h_hat_re",
        "h_hat_im",
        "epsilon_hat",
        "sigma_hat",
        "tau_used",
        "iterations",
        "converged",
        "q_trace",
    ],
    "properties": {
        "h_hat_re": {"type": "array", "items": {"type": "number"}, "minItems": 1},
        "h_hat_im": {"type": "array", "items": {"type": "number"}, "minItems": 1},
        "epsilon_hat": {"type": "number", "minimum": -0.5, "maximum": 0.5},
        "sigma_hat": {"type": "number", "exclusiveMinimum": 0},
        "tau_used": {"type": ["number", "null"]},
        "mode": {"enum": ["map", "ml"]},
        "iterations": {"type": "integer", "minimum": 0},
        "converged": {"type": "boolean"},
        "q_trace": {"type": "array", "items": {"type": "number"}},
        "objective_trace": {"type": "array", "items": {"type": "number"}},
    },
}


def validate_record(record):
    jsonschema.validate(record, RESULT_SCHEMA)
    if len(record["h_hat_re"]) != len(record["h_hat_im"]):
        raise jsonschema.ValidationError("h_hat_re and h_hat_im differ in length")
    return record


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}") from exc


def _modes(text):
    modes = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in modes if m not in ("map", "ml")]
    if bad or not modes:
        raise argparse.ArgumentTypeError(f"modes must be drawn from map,ml; got {text!r}")
    return modes


def _tau(text):
    if text == "auto":
        return text
    try:
        value = float(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError("tau must be 'auto' or a positive number") from exc
    if not value > 0:
        raise argparse.ArgumentTypeError("tau must be positive")
    return value


def _perm_seed(text):
    return text if text == "identity" else int(text)


def _add_config_flags(p, seed_required=True, grid=False):
    """Flags mirroring :class:`ExperimentConfig`; ``grid`` makes SNR and training lists."""
    d = ExperimentConfig()
    p.add_argument("--seed", type=int, required=seed_required, help="master RNG seed")
    p.add_argument("--subcarriers", type=int, default=d.n_subcarriers)
    p.add_argument("--channel-len", type=int, default=d.channel_len)
    p.add_argument("--nonzero-taps", type=int, default=d.n_nonzero_taps)
    if grid:
        p.add_argument("--snr", type=_floats, default=[5.0, 10.0], help="SNR values in dB")
        p.add_argument("--training", type=_floats, default=[1.0, 0.625], help="training fractions")
    else:
        p.add_argument("--snr", type=float, default=d.snr_db, help="SNR in dB")
        p.add_argument("--training", type=float, default=d.training_fraction, help="training fraction")
    p.add_argument("--epsilon", type=float, default=d.epsilon)
    p.add_argument("--modulation", choices=("gaussian", "qpsk"), default=d.modulation)
    p.add_argument("--permutation-seed", type=_perm_seed, default=d.permutation_seed)
    p.add_argument("--trials", type=int, default=d.n_trials)
    p.add_argument("--training-offset", type=int, default=d.training_offset)
    p.add_argument("--channel-gain", choices=("unit", "per_tap"), default=d.channel_gain)


def _add_option_flags(p):
    d = EmOptions()
    p.add_argument("--mode", choices=("map", "ml"), default=d.mode)
    p.add_argument("--tau", type=_tau, default=d.tau)
    p.add_argument("--max-iter", type=int, default=d.max_iter)
    p.add_argument("--tol-g", type=float, default=d.tol_g)
    p.add_argument("--tol-eps", type=float, default=d.tol_eps)
    p.add_argument("--tol-rho", type=float, default=d.tol_rho)
    p.add_argument("--cfo-grid-points", type=int, default=d.cfo_grid_points)
    p.add_argument("--engine", choices=("batch", "sequential"), default=d.engine)


def _config(args, **override):
    values = dict(
        n_subcarriers=args.subcarriers,
        channel_len=args.channel_len,
        n_nonzero_taps=args.nonzero_taps,
        snr_db=args.snr,
        epsilon=args.epsilon,
        training_fraction=args.training,
        modulation=args.modulation,
        permutation_seed=args.permutation_seed,
        rng_seed=args.seed if args.seed is not None else 0,
        n_trials=args.trials,
        training_offset=args.training_offset,
        channel_gain=args.channel_gain,
    )
    values.update(override)
    return ExperimentConfig(**values)


def _options(args):
    return EmOptions(
        mode=args.mode,
        tau=args.tau,
        max_iter=args.max_iter,
        tol_g=args.tol_g,
        tol_eps=args.tol_eps,
        tol_rho=args.tol_rho,
        cfo_grid_points=args.cfo_grid_points,
        engine=args.engine,
    )


def _emit(text, out):
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ofdm-mapem", description="Sparse OFDM channel and CFO estimation experiments."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write frame instance files")
    _add_config_flags(p)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("estimate", help="estimate one frame file")
    p.add_argument("frame")
    _add_option_flags(p)
    p.add_argument("--out", default=None)

    p = sub.add_parser("montecarlo", help="paired Monte-Carlo run, JSON report")
    _add_config_flags(p)
    _add_option_flags(p)
    p.add_argument("--modes", type=_modes, default=["map", "ml"])
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default=None)

    p = sub.add_parser("sweep", help="SNR x training grid, one CSV row per mode")
    _add_config_flags(p, grid=True)
    _add_option_flags(p)
    p.add_argument("--modes", type=_modes, default=["map", "ml"])
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default=None)

    p = sub.add_parser("ber", help="qpsk BER study, per-trial CSV")
    _add_config_flags(p)
    _add_option_flags(p)
    p.add_argument("--modes", type=_modes, default=["map", "ml"])
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default=None)
    p.add_argument("--plot-data", default=None, help="JSON file with scatter and running means")
    return parser


def _simulate(args):
    cfg = _config(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for t in range(cfg.n_trials):
        persist_instance(generate_frame(cfg, trial=t), out / f"frame_{t:04d}.json")
    print(json.dumps({"frames": cfg.n_trials, "out_dir": str(out)}))


def _estimate(args):
    frame = load_instance(args.frame)
    res = map_em(frame, _options(args))
    record = validate_record(res.to_record())
    _emit(json.dumps(record) + "\n", args.out)


def _montecarlo(args):
    report = run_monte_carlo(_config(args), args.modes, _options(args), args.jobs)
    text = json.dumps(report.to_dict(), indent=1)
    _emit(text + "\n", args.out)
    for m in report.modes:
        agg = report.aggregates[m]
        print(
            f"{m}: nmse_mean={fmt(agg['nmse_mean'])} ber_mean={fmt(agg['ber_mean'])} "
            f"failed={agg['n_failed']}",
            file=sys.stderr,
        )


def _sweep(args):
    base = _config(args, snr_db=args.snr[0], training_fraction=args.training[0])
    reports = sweep(base, args.snr, args.training, args.modes, _options(args), args.jobs)
    _emit(sweep_csv(reports), args.out)


def _ber(args):
    cfg = _config(args, modulation="qpsk")
    report = run_monte_carlo(cfg, args.modes, _options(args), args.jobs)
    _emit(ber_csv(report), args.out)
    if args.plot_data:
        Path(args.plot_data).write_text(json.dumps(ber_plot_data(report), indent=1))


COMMANDS = {
    "simulate": _simulate,
    "estimate": _estimate,
    "montecarlo": _montecarlo,
    "sweep": _sweep,
    "ber": _ber,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on usage errors
    try:
        COMMANDS[args.command](args)
    except Exception as exc:  # noqa: BLE001 - reported as one structured line
        err = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        print(json.dumps(err), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
