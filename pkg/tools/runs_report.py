#!/usr/bin/env python3
"""
Runs Report CLI Tool

Print a formatted report of the runs.jsonl ledger in a run directory.

Usage:
    python tools/runs_report.py runs/toy                 # All recent runs
    python tools/runs_report.py runs/toy train-ae        # Only stage-1 training runs
    python tools/runs_report.py runs/toy --limit 20      # Show 20 runs
    python tools/runs_report.py runs/toy --failures      # Errors grouped by type
"""

import sys
from collections import Counter
from pathlib import Path
from typing import Any, Dict, List, Optional

sys.path.insert(0, str(Path(__file__).parent.parent))

from run_logger import RUN_KINDS, RunLogger


def key_metric(run: Dict[str, Any]) -> str:
    """One headline number per command kind"""
    kind = run.get('kind')
    outputs = run.get('outputs') or {}
    if kind in ('train-ae', 'train-diffusion'):
        loss = outputs.get('final_loss')
        try:
            return f"loss={float(loss):.4g} @{outputs.get('iterations', '?')}"
        except (TypeError, ValueError):
            return 'N/A'
    if kind == 'eval':
        return f"rows={outputs.get('rows', 'N/A')}"
    if kind == 'bench':
        ratio = outputs.get('step_ratio_20_over_2')
        return f"20/2={float(ratio):.3f}" if isinstance(ratio, (int, float)) else 'N/A'
    if kind == 'generate-data':
        return f"n={outputs.get('n_samples', 'N/A')} {outputs.get('domain', '')}".strip()
    return 'N/A'


def print_last_n_runs(runs: List[Dict[str, Any]], n: int = 10):
    print("\n" + "-" * 70)
    print(f"LAST {min(n, len(runs))} RUNS")
    print("-" * 70)
    print(f"{'Timestamp':<20} {'Kind':<16} {'Status':<9} {'Seconds':>8}  {'Metric'}")
    print("-" * 70)

    for run in runs[:n]:
        timestamp = run.get('timestamp', 'N/A')[:19]
        status = (run.get('status') or 'N/A').upper()
        duration = run.get('duration_seconds')
        seconds = f"{duration:8.1f}" if isinstance(duration, (int, float)) else f"{'N/A':>8}"
        print(f"{timestamp:<20} {run.get('kind', 'N/A'):<16} {status:<9} {seconds}  {key_metric(run)}")


def failure_counts(runs: List[Dict[str, Any]]) -> Counter:
    """Error records keyed by exception class name"""
    counts: Counter = Counter()
    for run in runs:
        error = run.get('error')
        if error:
            counts[error.split(':', 1)[0] if ':' in error else 'Error'] += 1
    return counts


def print_failure_categories(runs: List[Dict[str, Any]]):
    print("\n" + "-" * 70)
    print("FAILURES")
    print("-" * 70)
    counts = failure_counts(runs)
    if not counts:
        print("No failures recorded.")
        return
    for category, count in counts.most_common():
        print(f"  {category:<30} {count}")


def main(argv: Optional[List[str]] = None) -> int:
    args = list(sys.argv[1:] if argv is None else argv)
    if not args or args[0] in ('-h', '--help'):
        print(__doc__)
        return 0 if args else 1

    run_dir = Path(args.pop(0))
    kind_filter = None
    limit = 10
    show_failures = False

    i = 0
    while i < len(args):
        arg = args[i]
        if arg in RUN_KINDS:
            kind_filter = arg
        elif arg == '--limit' and i + 1 < len(args):
            limit = int(args[i + 1])
            i += 1
        elif arg == '--failures':
            show_failures = True
        i += 1

    ledger = RunLogger(run_dir, enabled=False)
    runs = ledger.get_history(limit=max(limit, 100), kind=kind_filter)
    if not runs:
        print(f"No runs found in {run_dir}.")
        return 0

    summary = ledger.summarize()
    print("=" * 70)
    print(f"RUNS REPORT  {run_dir}")
    print("=" * 70)
    print(f"Total runs: {summary['total_runs']}")
    print(f"Error rate: {summary['error_rate']:.1%}")
    print(f"Date range: {summary['first_run'][:19]} to {summary['last_run'][:19]}")
    print("\nBy command:")
    for kind, count in summary['by_kind'].items():
        print(f"  {kind}: {count}")

    if show_failures:
        print_failure_categories(runs)

    print_last_n_runs(runs, limit)
    return 0


if __name__ == '__main__':
    sys.exit(main())
