"""
ADI command line interface

    python -m adi_service.cli [--seed N] [--config scenario.json] [--out DIR] <command> ...

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical error,
1 anything unexpected.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from adi_service.config import config
from adi_service.errors import ADIError, ConfigurationError, DataError
from adi_service.harness import (
    DiagnosisReport,
    ScenarioConfig,
    atomic_write_text,
    baseline_from_recordings,
    export_deviation,
    interrogate_recordings,
    load_baseline,
    load_cycle,
    load_di_table,
    load_report,
    load_scenario,
    plot_deviation,
    report_from_di_table,
    roc_sweep,
    run_scenario,
    save_baseline,
    save_report,
    simulate_recordings,
)
from adi_service.structsim import signatures_from_records

logger = logging.getLogger(__name__)


def _scenario(args: argparse.Namespace) -> ScenarioConfig:
    scenario = load_scenario(args.config)
    if args.seed is not None:
        scenario = scenario.model_copy(update={'seed': args.seed})
    return scenario


def _emit_report(report: DiagnosisReport, out: Path) -> None:
    text = report.render_text()
    save_report(report, out / 'report.json')
    atomic_write_text(out / 'report.txt', text)
    sys.stdout.write(text)


def cmd_simulate(args: argparse.Namespace) -> int:
    root = simulate_recordings(_scenario(args), args.out / 'recordings', n_jobs=args.jobs)
    print(f"✅ Recordings written to {root}")
    return 0


def cmd_baseline(args: argparse.Namespace) -> int:
    directory = Path(args.directory)
    baseline = baseline_from_recordings(directory, _scenario(args).spectral_params(), args.baseline_id)
    path = save_baseline(baseline, args.out / f'baseline_{baseline.baseline_id}.json')
    print(f"✅ Baseline '{baseline.baseline_id}' ({baseline.n_datasets} cycles) written to {path}")
    return 0


def cmd_interrogate(args: argparse.Namespace) -> int:
    scenario = _scenario(args)
    report = interrogate_recordings(
        load_baseline(args.baseline),
        args.cases,
        scenario.spectral_params(),
        threshold=args.threshold,
        window_bins=args.window_bins,
        band=tuple(args.band) if args.band else None,
        positions=scenario.build_model().transducer_positions(),
    )
    _emit_report(report, args.out)
    return 0


def _report_from_source(source: Path, threshold: float) -> DiagnosisReport:
    if source.suffix.lower() == '.csv':
        return report_from_di_table(load_di_table(source), threshold=threshold)
    return load_report(source)


def cmd_report(args: argparse.Namespace) -> int:
    _emit_report(_report_from_source(Path(args.source), args.threshold), args.out)
    return 0


def cmd_export_deviation(args: argparse.Namespace) -> int:
    baseline = load_baseline(args.baseline)
    case_dir = Path(args.case)
    signatures = signatures_from_records(load_cycle(case_dir), _scenario(args).spectral_params(), label=case_dir.name)
    pair = (args.pair[0], args.pair[1])
    stem = args.out / f'deviation_{case_dir.name}_{pair[0]}_{pair[1]}'
    frame = export_deviation(baseline, signatures, pair, stem.with_suffix('.csv'), window_bins=args.window_bins)
    if args.plot:
        plot_deviation(
            frame,
            stem.with_suffix('.png'),
            threshold=args.threshold,
            title=f"{case_dir.name}: actuator {pair[0]} -> sensor {pair[1]}",
        )
    print(f"✅ Deviation spectrum written to {stem.with_suffix('.csv')}")
    return 0


def cmd_roc(args: argparse.Namespace) -> int:
    report = _report_from_source(Path(args.source), args.threshold)
    healthy, damaged = report.detection_samples()
    if not healthy or not damaged:
        raise DataError("ROC needs cases marked both with and without damage")
    calibration = roc_sweep(healthy, damaged, args.false_alarm_cost, args.miss_cost, args.out / 'roc.csv')
    print(f"✅ Threshold {calibration.threshold:.4f} (cost {calibration.min_cost:.3f}); table in {args.out / 'roc.csv'}")
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    _emit_report(run_scenario(_scenario(args), n_jobs=args.jobs), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='adi', description="Active damage interrogation toolkit")
    parser.add_argument('--seed', type=int, default=None, help="Override the scenario seed")
    parser.add_argument('--config', type=Path, default=None, help="Scenario JSON (default scenario when omitted)")
    parser.add_argument('--out', type=Path, default=Path(config.OUTPUT_DIR), help="Output directory")
    parser.add_argument('--log-level', default=config.LOG_LEVEL)
    parser.add_argument('--jobs', type=int, default=config.MAX_WORKERS, help="Worker threads")
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('simulate', help="Write simulated recordings for every baseline cycle and case")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser('baseline', help="Accumulate a baseline from a directory of cycle_NN recordings")
    p.add_argument('directory')
    p.add_argument('--baseline-id', default=None)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser('interrogate', help="Interrogate case recordings against a baseline")
    p.add_argument('baseline')
    p.add_argument('cases', nargs='+')
    p.add_argument('--threshold', type=float, default=config.DETECTION_THRESHOLD)
    p.add_argument('--window-bins', type=int, default=config.WINDOW_BINS)
    p.add_argument('--band', type=float, nargs=2, metavar=('LOW', 'HIGH'), default=None)
    p.set_defaults(func=cmd_interrogate)

    p = sub.add_parser('report', help="Render a saved report or a prepared DI table")
    p.add_argument('source')
    p.add_argument('--threshold', type=float, default=config.DETECTION_THRESHOLD)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser('export-deviation', help="Export one pair's deviation spectrum")
    p.add_argument('baseline')
    p.add_argument('case')
    p.add_argument('--pair', type=int, nargs=2, metavar=('ACTUATOR', 'SENSOR'), required=True)
    p.add_argument('--window-bins', type=int, default=config.WINDOW_BINS)
    p.add_argument('--threshold', type=float, default=config.DETECTION_THRESHOLD)
    p.add_argument('--plot', action='store_true')
    p.set_defaults(func=cmd_export_deviation)

    p = sub.add_parser('roc', help="Sweep detection thresholds over a report's cases")
    p.add_argument('source')
    p.add_argument('--threshold', type=float, default=config.DETECTION_THRESHOLD)
    p.add_argument('--false-alarm-cost', type=float, default=1.0)
    p.add_argument('--miss-cost', type=float, default=1.0)
    p.set_defaults(func=cmd_roc)

    p = sub.add_parser('run', help="Run a full scenario end to end")
    p.set_defaults(func=cmd_run)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format='%(asctime)s - %(levelname)s - %(message)s')

    try:
        config.validate()
        if args.jobs < 1:
            raise ConfigurationError(f"--jobs must be >= 1 (got {args.jobs})")
        return args.func(args)
    except ADIError as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        return e.exit_code
    except Exception as e:
        logger.exception(f"❌ Unexpected error: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
