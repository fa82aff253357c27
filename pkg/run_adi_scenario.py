#!/usr/bin/env python3
"""
ADI - Default Scenario Run
Simulates the two healthy and nine damaged cases, prints the decision table
and calibrates a detection threshold from the results
"""

import logging
import sys
from pathlib import Path

from adi_service.config import config
from adi_service.harness import default_scenario, roc_sweep, run_scenario, save_report

# Set up logging
logging.basicConfig(level=config.LOG_LEVEL, format='%(asctime)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)


def main():
    """Run the default scenario"""
    print("🔍 Active Damage Interrogation - Default Scenario")
    print("=" * 60)

    out = Path(config.OUTPUT_DIR)
    report = run_scenario(default_scenario())
    save_report(report, out / 'report.json')

    print(report.render_text())

    healthy, damaged = report.detection_samples()
    calibration = roc_sweep(healthy, damaged, path=out / 'roc.csv')
    best = calibration.roc.loc[calibration.roc['cost'].idxmin()]

    print("📊 Threshold calibration:")
    print(f"   Chosen threshold: {calibration.threshold:.3f}")
    print(f"   PD: {best['pd']:.2f}   FAR: {best['far']:.2f}")
    print(f"\n✅ Report saved to: {out / 'report.json'}")

    missed = [row.label for row in report.rows if row.damage_present and not row.detected]
    false_alarms = [row.label for row in report.rows if row.damage_present is False and row.detected]
    if missed or false_alarms:
        print(f"⚠️ Missed: {missed or 'none'}   False alarms: {false_alarms or 'none'}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
