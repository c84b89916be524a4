#!/usr/bin/env python3

"""
Convergence Analysis Tool
Analizza un log di convergenza del GA (optimize o experiment) e genera un report
"""

import csv
import sys
from dataclasses import dataclass
from datetime import datetime
from typing import List, Optional

IMPROVEMENT_MILESTONE = 0.75


# Colors for terminal output
class Colors:
    HEADER = '\033[95m'
    BLUE = '\033[94m'
    CYAN = '\033[96m'
    GREEN = '\033[92m'
    YELLOW = '\033[93m'
    RED = '\033[91m'
    END = '\033[0m'
    BOLD = '\033[1m'


@dataclass
class ConvergenceLog:
    """Serie per generazione estratta dal CSV."""
    kind: str                      # "optimize" or "experiment"
    generations: List[int]
    best: List[float]              # best (optimize) or mean_best (experiment)
    spread: List[float]            # std of the population or std of best across runs
    mean: Optional[List[float]] = None


def load_log(filename: str) -> ConvergenceLog:
    """Load a convergence CSV (`generation,best,mean,std` or `generation,mean_best,std_best`)"""
    try:
        with open(filename, newline='') as f:
            rows = list(csv.DictReader(f))
    except FileNotFoundError:
        print(f"{Colors.RED}Error: Log file '{filename}' not found{Colors.END}")
        sys.exit(1)

    if not rows:
        print(f"{Colors.RED}Error: '{filename}' has no data rows{Colors.END}")
        sys.exit(1)

    columns = set(rows[0])
    try:
        generations = [int(r['generation']) for r in rows]
        if {'best', 'mean', 'std'} <= columns:
            return ConvergenceLog(
                kind="optimize",
                generations=generations,
                best=[float(r['best']) for r in rows],
                spread=[float(r['std']) for r in rows],
                mean=[float(r['mean']) for r in rows],
            )
        if {'mean_best', 'std_best'} <= columns:
            return ConvergenceLog(
                kind="experiment",
                generations=generations,
                best=[float(r['mean_best']) for r in rows],
                spread=[float(r['std_best']) for r in rows],
            )
    except (KeyError, ValueError) as e:
        print(f"{Colors.RED}Error: Malformed row in '{filename}': {e}{Colors.END}")
        sys.exit(1)

    print(f"{Colors.RED}Error: Unrecognized columns {sorted(columns)} in '{filename}'{Colors.END}")
    sys.exit(1)


def milestone_generation(log: ConvergenceLog, fraction: float = IMPROVEMENT_MILESTONE) -> Optional[int]:
    """Prima generazione che raggiunge `fraction` del miglioramento totale."""
    total = log.best[-1] - log.best[0]
    if total <= 0:
        return None
    target = log.best[0] + fraction * total
    for generation, value in zip(log.generations, log.best):
        if value >= target:
            return generation
    return log.generations[-1]


def last_improvement(log: ConvergenceLog) -> int:
    """Ultima generazione in cui il best e' migliorato."""
    last = log.generations[0]
    for i in range(1, len(log.best)):
        if log.best[i] > log.best[i - 1]:
            last = log.generations[i]
    return last


def print_header(text: str):
    """Print a colored header"""
    print(f"\n{Colors.BOLD}{Colors.BLUE}{'='*70}{Colors.END}")
    print(f"{Colors.BOLD}{Colors.BLUE}{text:^70}{Colors.END}")
    print(f"{Colors.BOLD}{Colors.BLUE}{'='*70}{Colors.END}\n")


def print_section(text: str):
    """Print a section title"""
    print(f"\n{Colors.CYAN}{Colors.BOLD}{text}{Colors.END}")
    print(f"{Colors.CYAN}{'-'*len(text)}{Colors.END}")


def analyze_convergence(log: ConvergenceLog):
    """Analyze the best-fitness series"""
    print_section("📈 CONVERGENCE ANALYSIS")

    start, end = log.best[0], log.best[-1]
    label = "Best" if log.kind == "optimize" else "Mean best over runs"
    print(f"\n{Colors.BOLD}{label}:{Colors.END}")
    print(f"  Generation 0:       {start:>12.6f}")
    print(f"  Generation {log.generations[-1]:<8}{end:>12.6f}")

    improvement = end - start
    color = Colors.GREEN if improvement > 0 else Colors.YELLOW
    print(f"  Total improvement:  {color}{improvement:>+12.6f}{Colors.END}")

    milestone = milestone_generation(log)
    if milestone is None:
        print(f"  {int(IMPROVEMENT_MILESTONE * 100)}% of improvement: {Colors.YELLOW}n/a (no improvement){Colors.END}")
    else:
        print(f"  {int(IMPROVEMENT_MILESTONE * 100)}% of improvement at generation {milestone}")
    print(f"  Last improvement at generation {last_improvement(log)}")

    if any(b < a for a, b in zip(log.best, log.best[1:])) and log.kind == "optimize":
        print(f"  {Colors.RED}✗ Best fitness decreased at some generation (elitism broken?){Colors.END}")
    elif log.kind == "optimize":
        print(f"  {Colors.GREEN}✓ Best fitness monotone non-decreasing{Colors.END}")


def analyze_spread(log: ConvergenceLog):
    """Analyze diversity / run-to-run spread"""
    print_section("🎯 SPREAD ANALYSIS")

    what = "Population std" if log.kind == "optimize" else "Std of best across runs"
    print(f"\n{Colors.BOLD}{what}:{Colors.END}")
    print(f"  Initial: {log.spread[0]:.6f}")
    print(f"  Final:   {log.spread[-1]:.6f}")
    if log.mean is not None:
        gap = log.best[-1] - log.mean[-1]
        print(f"  Final best - mean gap: {gap:.6f}")


def save_report(log: ConvergenceLog, source: str, output_file: str):
    """Save analysis report to Markdown file"""
    timestamp = datetime.now().strftime('%Y-%m-%d %H:%M:%S')
    milestone = milestone_generation(log)

    with open(output_file, 'w') as f:
        f.write("# GA Convergence - Analysis Report\n\n")
        f.write(f"**Generated**: {timestamp}\n")
        f.write(f"**Source**: `{source}` ({log.kind} log, {len(log.generations)} generations)\n\n")

        f.write("## Summary\n\n")
        f.write("| Metric | Value |\n")
        f.write("|--------|-------|\n")
        f.write(f"| Initial best | {log.best[0]:.6f} |\n")
        f.write(f"| Final best | {log.best[-1]:.6f} |\n")
        f.write(f"| Total improvement | {log.best[-1] - log.best[0]:+.6f} |\n")
        f.write(f"| {int(IMPROVEMENT_MILESTONE * 100)}% of improvement at | "
                f"{'n/a' if milestone is None else f'generation {milestone}'} |\n")
        f.write(f"| Last improvement at | generation {last_improvement(log)} |\n")
        f.write(f"| Final spread | {log.spread[-1]:.6f} |\n\n")

        f.write("## Series\n\n")
        f.write("| Generation | Best | Spread |\n")
        f.write("|-----------:|-----:|-------:|\n")
        for generation, best, spread in zip(log.generations, log.best, log.spread):
            f.write(f"| {generation} | {best:.6f} | {spread:.6f} |\n")

    print(f"\n{Colors.GREEN}✓ Report saved to {output_file}{Colors.END}")


def main():
    if len(sys.argv) < 2:
        print(f"Usage: {sys.argv[0]} <convergence.csv> [output_report.md]")
        sys.exit(1)

    log_file = sys.argv[1]
    output_file = sys.argv[2] if len(sys.argv) > 2 else "convergence_report.md"

    log = load_log(log_file)

    print_header("🧬 GA CONVERGENCE ANALYSIS")
    analyze_convergence(log)
    analyze_spread(log)
    save_report(log, log_file, output_file)


if __name__ == "__main__":
    main()
