"""
Command-line surface of the stereo tuner.

    python -m app disparity  --left L.pgm --right R.pgm [--params P.json] --out D.pfm
    python -m app optimize   --left L.pgm --right R.pgm --gt GT.pfm --log conv.csv --out best.json
    python -m app experiment --left L.pgm --right R.pgm --gt GT.pfm --runs 5 --log exp.csv --out best.json
    python -m app eval       --pred D.pfm --gt GT.pfm --d-max 63
    python -m app synth      --out-left L.pgm --out-right R.pgm --out-gt GT.pfm

Exit codes: 0 success, 1 usage error, 2 data/format error,
3 WLS non-convergence with --strict.
"""

import argparse
import logging
import sys
import time
from pathlib import Path
from typing import Callable, List, Optional, TypeVar

from app.config import DEFAULT_EXPERIMENT_RUNS, DEFAULT_GA_CONFIG, DEFAULT_SYNTH, default_workers, setup_logging
from app.ga import (
    FitnessRecord,
    GAConfig,
    decode,
    midpoint_chromosome,
    run_experiment,
    run_ga,
    validate_ga_config,
    write_experiment_csv,
    write_history_csv,
)
from app.img import (
    DisparityMap,
    GrayImage,
    disparity_to_depth,
    load_pfm,
    load_pgm,
    require_same_shape,
    save_pfm,
    save_pgm,
)
from app.metrics import SSIM_WINDOW, FitnessMetric, MetricReport, evaluate, percent_change
from app.params import DEFAULT_NUM_DISPARITIES, ParameterSet, load_parameter_set, save_parameter_set
from app.sgbm import PipelineResult, run_pipeline
from app.synth import SynthPattern, SynthSpec, generate, validate_synth_spec

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NOT_CONVERGED = 3

_INPUT_FLAGS = ("left", "right", "gt", "pred")

T = TypeVar("T")


class CliError(Exception):
    """Failure carrying the process exit code."""

    def __init__(self, exit_code: int, message: str):
        super().__init__(message)
        self.exit_code = exit_code


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; here usage errors are exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ============================================================================
# HELPER FUNCTIONS
# ============================================================================

def _load(loader: Callable[[Path], T], path: Path) -> T:
    try:
        return loader(path)
    except OSError as e:
        raise CliError(EXIT_DATA, f"{path}: {e.strerror or e}")
    except ValueError as e:
        raise CliError(EXIT_DATA, f"{path}: {e}")


def _load_pair(args) -> tuple:
    left = _load(load_pgm, args.left)
    right = _load(load_pgm, args.right)
    try:
        require_same_shape(left, right)
    except ValueError as e:
        raise CliError(EXIT_DATA, f"{args.left} / {args.right}: {e}")
    return left, right


def _load_triple(args) -> tuple:
    left, right = _load_pair(args)
    gt = _load(load_pfm, args.gt)
    try:
        require_same_shape(left, gt)
    except ValueError as e:
        raise CliError(EXIT_DATA, f"{args.gt}: {e}")
    if left.width < SSIM_WINDOW or left.height < SSIM_WINDOW:
        raise CliError(
            EXIT_DATA,
            f"{args.left}: scoring needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {left.width}x{left.height}",
        )
    return left, right, gt


def _ga_config(args, generations: int) -> GAConfig:
    values = dict(DEFAULT_GA_CONFIG)
    values.update(
        population_size=args.pop,
        generations=generations,
        rng_seed=args.seed,
        fitness_metric=args.metric,
    )
    ok, message = validate_ga_config(values)
    if not ok:
        raise CliError(EXIT_USAGE, message)
    return GAConfig(**values)


def _pipeline(left: GrayImage, right: GrayImage, params: ParameterSet, workers: int, strict: bool) -> PipelineResult:
    result = run_pipeline(left, right, params, workers=workers)
    if not result.wls_converged and strict:
        raise CliError(
            EXIT_NOT_CONVERGED,
            f"WLS did not converge after {result.wls_iterations} iterations (--strict)",
        )
    return result


def _baseline_params(args, num_disparities: int) -> ParameterSet:
    if args.baseline_params is not None:
        return _load(load_parameter_set, args.baseline_params).with_num_disparities(num_disparities)
    return decode(midpoint_chromosome(), num_disparities=num_disparities)


def _print_comparison(metric: FitnessMetric, baseline: MetricReport, best: MetricReport) -> None:
    print(f"metric,{metric.value}")
    print("name,baseline,best,change_percent")
    for name in (FitnessMetric.MSE, FitnessMetric.PSNR, FitnessMetric.SSIM):
        b = getattr(baseline, name.value)
        o = getattr(best, name.value)
        change = percent_change(b, o, name)
        print(f"{name.value},{b:.6f},{o:.6f},{change:.6f}")


def _report_against_baseline(args, left, right, gt, best: ParameterSet) -> None:
    d_max = args.num_disparities - 1
    baseline = _pipeline(left, right, _baseline_params(args, args.num_disparities), args.workers, args.strict)
    optimized = _pipeline(left, right, best, args.workers, args.strict)
    _print_comparison(
        FitnessMetric(args.metric),
        evaluate(gt, baseline.disparity, d_max),
        evaluate(gt, optimized.disparity, d_max),
    )


def _log_generation(record: FitnessRecord) -> None:
    logger.debug(f"📈 gen {record.generation} best chromosome {record.best_chromosome}")


# ============================================================================
# SUBCOMMANDS
# ============================================================================

def cmd_disparity(args) -> int:
    """SGBM + WLS on a stereo pair; writes the PFM disparity map."""
    left, right = _load_pair(args)
    params = _load(load_parameter_set, args.params) if args.params else ParameterSet()
    if args.num_disparities is not None:
        params = params.with_num_disparities(args.num_disparities)
    if (args.focal is None) != (args.baseline is None):
        raise CliError(EXIT_USAGE, "--focal and --baseline must be given together")

    started = time.perf_counter()
    result = _pipeline(left, right, params, args.workers, args.strict)
    elapsed = time.perf_counter() - started

    save_pfm(result.disparity, args.out)
    if args.focal is not None:
        depth_path = Path(f"{args.out}.depth.pfm")
        try:
            depth = disparity_to_depth(result.disparity, args.focal, args.baseline)
        except ValueError as e:
            raise CliError(EXIT_USAGE, str(e))
        save_pfm(depth, depth_path)
        logger.info(f"💾 Depth map written to {depth_path}")

    print(f"size,{left.width}x{left.height}")
    print(f"valid_percent,{result.disparity.valid_fraction() * 100:.6f}")
    print(f"wall_time_s,{elapsed:.6f}")
    logger.info(f"💾 Disparity written to {args.out}")
    return EXIT_OK


def cmd_optimize(args) -> int:
    """Runs the GA and writes the best ParameterSet plus the convergence CSV."""
    cfg = _ga_config(args, args.gens)
    left, right, gt = _load_triple(args)

    result = run_ga(
        cfg, left, right, gt, args.num_disparities,
        workers=args.workers,
        on_generation=_log_generation,
    )
    write_history_csv(result.history, args.log)
    save_parameter_set(result.best, args.out)
    logger.info(f"💾 Best parameters written to {args.out}, convergence log to {args.log}")

    _report_against_baseline(args, left, right, gt, result.best)
    return EXIT_OK


def cmd_experiment(args) -> int:
    """Independent GA runs aggregated into a mean/std convergence CSV."""
    if args.runs < 1:
        raise CliError(EXIT_USAGE, f"--runs must be >= 1, got {args.runs}")
    cfg = _ga_config(args, args.gens)
    left, right, gt = _load_triple(args)

    summary = run_experiment(cfg, args.runs, left, right, gt, args.num_disparities, workers=args.workers)
    write_experiment_csv(summary, args.log)
    save_parameter_set(summary.best, args.out)

    finals = [run.best_fitness for run in summary.runs]
    print(f"runs,{args.runs}")
    print(f"final_mean_best,{summary.mean_best[-1]:.6f}")
    print(f"final_std_best,{summary.std_best[-1]:.6f}")
    print(f"overall_best,{max(finals):.6f}")
    _report_against_baseline(args, left, right, gt, summary.best)
    return EXIT_OK


def cmd_eval(args) -> int:
    """Prints `mse,psnr,ssim` for a predicted map against ground truth."""
    if args.d_max < 1:
        raise CliError(EXIT_USAGE, f"--d-max must be >= 1, got {args.d_max}")
    pred: DisparityMap = _load(load_pfm, args.pred)
    gt: DisparityMap = _load(load_pfm, args.gt)
    try:
        report = evaluate(gt, pred, args.d_max)
    except ValueError as e:
        raise CliError(EXIT_DATA, f"{args.pred} / {args.gt}: {e}")
    print(report.csv_line())
    return EXIT_OK


def cmd_synth(args) -> int:
    """Writes a synthetic pair with exact ground truth."""
    spec = SynthSpec(
        width=args.width,
        height=args.height,
        true_disparity=args.disparity,
        pattern=SynthPattern(args.pattern),
        noise_seed=args.noise_seed,
    )
    ok, message = validate_synth_spec(spec)
    if not ok:
        raise CliError(EXIT_USAGE, message)

    left, right, gt = generate(spec)
    save_pgm(left, args.out_left)
    save_pgm(right, args.out_right)
    save_pfm(gt, args.out_gt)
    logger.info(f"🎲 Synthetic pair written: {args.out_left}, {args.out_right}, {args.out_gt}")
    return EXIT_OK


# ============================================================================
# PARSER
# ============================================================================

def _add_pair_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--left", type=Path, required=True, help="left image (PGM)")
    p.add_argument("--right", type=Path, required=True, help="right image (PGM)")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--workers", type=int, default=None, help="parallel workers (default: available CPUs)")
    p.add_argument("--strict", action="store_true", help="exit 3 when WLS does not converge")


def _add_ga_flags(p: argparse.ArgumentParser) -> None:
    _add_pair_flags(p)
    p.add_argument("--gt", type=Path, required=True, help="ground-truth disparity (PFM)")
    p.add_argument("--metric", default=DEFAULT_GA_CONFIG["fitness_metric"],
                   choices=[m.value for m in FitnessMetric])
    p.add_argument("--gens", type=int, default=DEFAULT_GA_CONFIG["generations"])
    p.add_argument("--pop", type=int, default=DEFAULT_GA_CONFIG["population_size"])
    p.add_argument("--seed", type=int, default=DEFAULT_GA_CONFIG["rng_seed"])
    p.add_argument("--num-disparities", type=int, default=DEFAULT_NUM_DISPARITIES)
    p.add_argument("--baseline-params", type=Path, default=None,
                   help="ParameterSet used as baseline in the report (default: all genes = 5)")
    p.add_argument("--log", type=Path, required=True, help="convergence CSV")
    p.add_argument("--out", type=Path, required=True, help="best ParameterSet (JSON)")
    _add_run_flags(p)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stereo-tuner", description="SGBM + WLS stereo disparity with GA parameter tuning")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    parser.add_argument("--quiet", action="store_true", help="only warnings and errors")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("disparity", help="compute a disparity map")
    _add_pair_flags(p)
    p.add_argument("--params", type=Path, default=None, help="ParameterSet JSON (default: built-in defaults)")
    p.add_argument("--num-disparities", type=int, default=None)
    p.add_argument("--out", type=Path, required=True, help="output disparity (PFM)")
    p.add_argument("--focal", type=float, default=None, help="focal length in pixels")
    p.add_argument("--baseline", type=float, default=None, help="stereo baseline")
    _add_run_flags(p)
    p.set_defaults(handler=cmd_disparity)

    p = sub.add_parser("optimize", help="tune parameters with the genetic optimizer")
    _add_ga_flags(p)
    p.set_defaults(handler=cmd_optimize)

    p = sub.add_parser("experiment", help="independent GA runs, mean/std convergence")
    _add_ga_flags(p)
    p.add_argument("--runs", type=int, default=DEFAULT_EXPERIMENT_RUNS)
    p.set_defaults(handler=cmd_experiment)

    p = sub.add_parser("eval", help="compare a disparity map with ground truth")
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--gt", type=Path, required=True)
    p.add_argument("--d-max", type=int, default=DEFAULT_NUM_DISPARITIES - 1)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic stereo pair")
    p.add_argument("--width", type=int, default=DEFAULT_SYNTH["width"])
    p.add_argument("--height", type=int, default=DEFAULT_SYNTH["height"])
    p.add_argument("--disparity", type=int, default=DEFAULT_SYNTH["true_disparity"])
    p.add_argument("--pattern", default=DEFAULT_SYNTH["pattern"], choices=[s.value for s in SynthPattern])
    p.add_argument("--noise-seed", type=int, default=DEFAULT_SYNTH["noise_seed"])
    p.add_argument("--out-left", type=Path, required=True)
    p.add_argument("--out-right", type=Path, required=True)
    p.add_argument("--out-gt", type=Path, required=True)
    p.set_defaults(handler=cmd_synth)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging("WARNING" if args.quiet else args.log_level)

    if getattr(args, "workers", 0) is None:
        args.workers = default_workers()
    if getattr(args, "workers", 1) < 1:
        print(f"error: --workers must be >= 1, got {args.workers}", file=sys.stderr)
        return EXIT_USAGE

    try:
        return args.handler(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error: {e.filename or ''}: {e.strerror or e}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as e:
        # Inputs that load fine but are too small for a stage (Sobel, SSIM window)
        inputs = " / ".join(str(getattr(args, k)) for k in _INPUT_FLAGS if getattr(args, k, None) is not None)
        print(f"error: {inputs}: {e}", file=sys.stderr)
        return EXIT_DATA
