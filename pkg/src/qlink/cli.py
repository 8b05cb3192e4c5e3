"""Command-line front end.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime or data
error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from pathlib import Path

from . import __version__
from . import config as cfgmod
from .analysis import analyze, fidelity_budget, format_results_table, fringe_rows, table_column
from .errors import CalibrationError, ConfigError, DataError, DomainError, FitError
from .forecast import CSV_COLUMNS, atom_atom_fidelity_at, forecast_sweep, sweep_rows
from .linkmodel import efficiency_factors, noise_rates, overall_detection_probability, snr_model
from .logio import manifest_path, read_log, write_log, write_manifest
from .qfcfit import fit_qfc, read_table
from .simengine import signal_fraction, simulate_run

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v <= 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="qlink", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"qlink {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="generate an event log")
    s.add_argument("--config", help="JSON config document (default: configuration A)")
    s.add_argument("--seed", type=_u64, help="overrides run.seed")
    s.add_argument("--events", type=_positive_int, help="overrides the run target with an event count")
    s.add_argument("--threads", type=_positive_int, help="worker threads (default: QLINK_THREADS or CPU count)")
    s.add_argument("--out", required=True, help="output CSV path")

    a = sub.add_parser("analyze", help="estimate visibilities, fidelity and S from a log")
    a.add_argument("log", help="event log CSV")
    a.add_argument("--out", required=True, help="output directory for reports")
    a.add_argument("--bootstrap", type=_positive_int, metavar="N", help="also compute N-resample bootstrap errors")

    f = sub.add_parser("forecast", help="fidelity and rate versus distance")
    f.add_argument("--config")
    f.add_argument("--distance-min", type=float, default=0.1)
    f.add_argument("--distance-max", type=float, default=200.0)
    f.add_argument("--points", type=int, default=50)
    f.add_argument("--out", required=True, help="output CSV path")

    q = sub.add_parser("fit-qfc", help="fit converter efficiency and noise curves")
    q.add_argument("data", help="CSV with columns curve,pump_power_w,value")
    q.add_argument("--length-m", type=float, default=0.040, help="waveguide length")
    q.add_argument("--out", required=True, help="output JSON path")

    b = sub.add_parser("budget", help="itemized fidelity-loss and efficiency budgets")
    b.add_argument("--config")
    return p


def _cmd_simulate(args) -> int:
    started = time.time()
    doc = cfgmod.load(args.config)
    run = doc.run_config(seed=args.seed, events=args.events)
    log = simulate_run(run, threads=args.threads)
    h = cfgmod.config_hash(doc)
    write_log(args.out, log, h)
    s = log.summary
    try:
        snr = signal_fraction(log)
    except DomainError:
        snr = math.nan
    write_manifest(args.out, h, run.seed, [str(args.out)], started,
                   {"summary": s, "config": cfgmod.to_dict(doc)})
    print(f"attempts={s['attempts']} events={s['events']} "
          f"simulated_min={s['simulated_duration_s'] / 60:.1f} rate_per_min={s['event_rate_per_min']:.1f} "
          f"snr={snr:.1f} snr_model={snr_model(run.link):.1f}"
          + (" truncated" if s["truncated"] else ""))
    return EXIT_OK


def _cmd_analyze(args) -> int:
    started = time.time()
    log, meta = read_log(args.log)
    if len(log) == 0:
        raise DataError(f"{args.log}: log has no events")
    try:
        vis, fid, curves = analyze(log)
    except (FitError, DomainError) as exc:
        raise DataError(f"{args.log}: {exc}") from None
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"{out}: cannot create ({exc.strerror})") from None
    h = meta.get("config_sha256")
    report = {"config_sha256": h, "visibility": vis.to_dict(), "fidelity": fid.to_dict()}
    if args.bootstrap:
        from .analysis import bootstrap

        report["bootstrap"] = bootstrap(log, resamples=args.bootstrap)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    table = format_results_table([table_column(log, fid)])
    (out / "table.txt").write_text(f"# config_sha256={h}\n{table}\n")
    with (out / "fringes.csv").open("w", newline="") as fh:
        fh.write(f"# config_sha256={h}\n")
        w = csv.writer(fh)
        w.writerow(["photon_state", "alpha_deg", "dark_fraction", "se", "n_total"])
        for state, a, p, se, n in fringe_rows(curves):
            w.writerow([state, repr(a), repr(p), repr(se), n])
    outputs = [str(out / n) for n in ("report.json", "table.txt", "fringes.csv")]
    write_manifest(out / "analysis", h, meta.get("header", {}).get("seed"), outputs, started)
    print(table)
    print(f"v_bar={vis.v_bar:.4f}+-{vis.v_bar_se:.4f} fidelity={fid.fidelity_lower_bound:.4f}+-{fid.fidelity_se:.4f} "
          f"S={fid.chsh_s:.3f}+-{fid.chsh_se:.3f}")
    return EXIT_OK


def _cmd_forecast(args) -> int:
    if not (0 < args.distance_min < args.distance_max):
        raise ConfigError("need 0 < --distance-min < --distance-max")
    if args.points < 2:
        raise ConfigError("--points must be at least 2")
    started = time.time()
    doc = cfgmod.load(args.config)
    cur, imp = doc.traps()
    rows = sweep_rows(forecast_sweep(args.distance_min, args.distance_max, args.points, [cur, imp], doc.link))
    h = cfgmod.config_hash(doc)
    try:
        with open(args.out, "w", newline="") as fh:
            fh.write(f"# config_sha256={h}\n")
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for r in rows:
                w.writerow([repr(float(x)) for x in r])
    except OSError as exc:
        raise DataError(f"{args.out}: cannot write ({exc.strerror})") from None
    write_manifest(args.out, h, None, [str(args.out)], started)
    c = doc.forecast.two_photon_contrast
    print(f"atom-atom fidelity at 20 km: current={atom_atom_fidelity_at(20.0, cur, doc.link, c):.3f} "
          f"improved={atom_atom_fidelity_at(20.0, imp, doc.link, c):.3f}")
    return EXIT_OK


def _cmd_fit_qfc(args) -> int:
    data = read_table(args.data)
    if not data:
        raise DataError(f"{args.data}: no data points")
    try:
        res = fit_qfc(data, length_m=args.length_m)
    except FitError as exc:
        raise DataError(f"{args.data}: {exc}") from None
    Path(args.out).write_text(json.dumps(res.to_dict(), indent=2, sort_keys=True) + "\n")
    for arm, fit in res.arms.items():
        print(f"{arm}: eta_max={fit.eta_max:.4f} eta_nor={fit.eta_nor:.1f} 1/(W m^2) peak_power_w={fit.peak_power_w:.4f}")
    if res.internal:
        print(f"internal: eta_max={res.internal.eta_max:.4f} eta_nor={res.internal.eta_nor:.1f} 1/(W m^2)")
    if res.noise:
        print(f"noise: n_dc={res.noise.n_dc:.1f} cps alpha_asr={res.noise.alpha_asr:.1f} cps/(W m) "
              f"reduction_at_peak={res.noise.reduction_at_peak:.3f}")
    if res.operating_efficiency is not None:
        print(f"operating point: p_arm_w={res.operating_power_p_w:.4f} s_arm_w={res.operating_power_s_w:.4f} "
              f"efficiency={res.operating_efficiency:.4f}")
    if res.snr_optimal_power_w is not None:
        print(f"snr-optimal total pump power: {res.snr_optimal_power_w:.4f} W")
    return EXIT_OK


def _cmd_budget(args) -> int:
    doc = cfgmod.load(args.config)
    link = doc.link
    if not link.decoherence.calibrated:
        raise CalibrationError("decoherence parameters are not calibrated; set link.decoherence.v0_per_state, "
                               "dephasing_time_sensitive_s and dephasing_time_insensitive_s, or use a preset")
    b = fidelity_budget(link)
    print("fidelity loss (percentage points)")
    for k in ("readout", "decoherence", "snr", "drifts"):
        print(f"  {k:<12} {b[k]:6.2f}")
    print(f"  {'achieved':<12} {b['achieved']:6.2f}")
    print(f"  {'residual':<12} {b['residual']:6.2f}")
    print("efficiency per attempt")
    for k, v in efficiency_factors(link).items():
        print(f"  {k:<24} {v:.4g}")
    print(f"  {'overall':<24} {overall_detection_probability(link):.4g}")
    nr = noise_rates(link)
    print(f"noise: qfc={nr['qfc_noise']:.1f} cps dark={nr['dark_count']:.1f} cps snr={snr_model(link):.1f}")
    return EXIT_OK


_COMMANDS = {
    "simulate": _cmd_simulate,
    "analyze": _cmd_analyze,
    "forecast": _cmd_forecast,
    "fit-qfc": _cmd_fit_qfc,
    "budget": _cmd_budget,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, CalibrationError) as exc:
        print(f"qlink {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, DomainError, FitError, OSError) as exc:
        print(f"qlink {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
