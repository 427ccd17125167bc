"""Command-line front end.

Exit codes: 0 success, 2 configuration or input error, 3 analysis error.
"""

from __future__ import annotations

import argparse
import sys

from . import analysis as an
from . import pipeline as pl
from .correlator import CalibrationError, write_fingerprint_csv
from .probe import ProbeError
from .receiver import CaptureFile, CaptureFormatError, write_capture
from .scenario import ConfigError, builtin_names, load_scenario

EXIT_CONFIG = 2
EXIT_ANALYSIS = 3


def _scenario(args):
    overrides = {"seed": args.seed} if getattr(args, "seed", None) is not None else None
    return load_scenario(args.config, overrides)


def _open_capture(args, scenario) -> CaptureFile:
    cap = CaptureFile(args.capture, scenario.probe.frame_duration)
    if cap.sample_rate != scenario.probe.sample_rate:
        raise ConfigError("probe", f"capture sample rate {cap.sample_rate:g} Hz does not match the scenario")
    if cap.frame_len != scenario.probe.frame_samples:
        raise ConfigError("probe.frame_duration_s", f"capture frame length {cap.frame_len} does not match the scenario")
    return cap


def _timing_line(t) -> str:
    return f"f_max={t.f_max:.2f} Hz delta_f={t.delta_f:.3f} Hz sample_rate={t.sample_rate:.6g} Hz"


def cmd_simulate(args) -> int:
    sc = _scenario(args)
    sim = pl.Simulation(sc)
    frames = pl.ordered_map(sim.__getitem__, range(len(sim)), args.threads)
    write_capture(args.out, frames, len(sim))
    print(f"{sc.name}: wrote {len(sim)} frames x {len(sim.probe.waveform)} samples to {args.out}")
    print(_timing_line(sim.timing))
    return 0


def cmd_fingerprint(args) -> int:
    sc = _scenario(args)
    result = pl.process(_open_capture(args, sc), sc, threads=args.threads, direct=args.direct_correlation)
    write_fingerprint_csv(result.fingerprint, args.out)
    if args.peaks_out:
        an.write_peaks_csv(result.peaks, args.peaks_out)
    fp = result.fingerprint
    print(f"{sc.name}: {len(fp.power_db)} bins from {fp.n_frames_averaged} frames, "
          f"calibration offset {fp.calibration_offset_db:.3f} dB -> {args.out}")
    return 0


def cmd_spectrum(args) -> int:
    sc = _scenario(args)
    result = pl.process(_open_capture(args, sc), sc, threads=args.threads, direct=args.direct_correlation)
    if args.peaks_out:
        an.write_peaks_csv(result.peaks, args.peaks_out)
    gauge = pl.select_gauge(result, args.peak_a, args.peak_b)
    series = pl.gauge_series(result, gauge)
    spec = an.spectrum(series, args.window or sc.analysis.window)
    an.write_spectrum_csv(spec, args.out)
    tone = an.detect_tone(spec, sc.analysis.exclude_below_hz)
    flag = "" if tone.peak_snr_db >= sc.analysis.min_snr_db else " (below detection threshold)"
    print(f"gauge {gauge.gauge_length_m:.3f} m between lags {gauge.bin_a} and {gauge.bin_b}")
    print(f"frequency={tone.frequency:.3f} Hz peak_snr_db={tone.peak_snr_db:.2f}{flag}")
    return 0


def cmd_report(args) -> int:
    sc = _scenario(args)
    rep = pl.report(sc, threads=args.threads, window=args.window)
    sys.stdout.write(rep.text())
    return 0


def cmd_scenarios(args) -> int:
    for name in builtin_names():
        print(name)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ccotdr", description="Coherent-correlation OTDR sensing simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, capture=False):
        if capture:
            p.add_argument("capture", help="capture file written by 'simulate'")
        p.add_argument("--config", required=True, help="scenario YAML file or built-in scenario name")
        p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        p.add_argument("--threads", type=int, default=1, help="frames processed in parallel")

    p = sub.add_parser("simulate", help="simulate frames and write a capture file")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    for name, func, help_ in (
        ("fingerprint", cmd_fingerprint, "averaged, calibrated fingerprint CSV"),
        ("spectrum", cmd_spectrum, "normalised differential-phase spectrum CSV"),
    ):
        p = sub.add_parser(name, help=help_)
        common(p, capture=True)
        p.add_argument("--out", required=True)
        p.add_argument("--peaks-out", default=None, help="also write the detected peak set as CSV")
        p.add_argument("--direct-correlation", action="store_true", help="use the direct-sum correlator")
        p.set_defaults(func=func)
        if name == "spectrum":
            p.add_argument("--peak-a", type=int, default=None, help="1-based rank of the first gauge peak")
            p.add_argument("--peak-b", type=int, default=None, help="1-based rank of the second gauge peak")
            p.add_argument("--window", default=None)

    p = sub.add_parser("report", help="run the whole chain and print a summary table")
    common(p)
    p.add_argument("--window", default=None)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("scenarios", help="list built-in scenarios")
    p.set_defaults(func=cmd_scenarios)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ProbeError, CaptureFormatError, FileNotFoundError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (an.AnalysisError, CalibrationError) as e:
        print(f"analysis error: {e}", file=sys.stderr)
        return EXIT_ANALYSIS


if __name__ == "__main__":
    sys.exit(main())
