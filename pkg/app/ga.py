"""
Genetic Optimizer - Automatic tuning of the SGBM + WLS parameters
=================================================================

The nine pipeline parameters are encoded as 28 integer genes in [1, 10]:

    alpha           genes  1-5   (x1-1)*10^4 + (x2-1)*10^3 + (x3-1)*10^2 + (x4-1)*10 + x5
    beta            genes  6-10  same positional scheme, then beta := max(beta, alpha + 1)
    delta_lr        genes 11-12  (a-1)*10 + b
    eta             genes 13-14
    gamma           genes 15-16
    speckle_window  genes 17-19  (a-1)*100 + (b-1)*10 + c
    speckle_range   genes 20-22
    lambda          genes 23-27  five-gene scheme
    sigma           gene  28     (x28 - 1) / 10

Each generation: evaluate -> record -> keep the elite unchanged -> fill the
rest with offspring (tournament of 2, two-point crossover, uniform mutation).

Random draw order (PCG64 seeded with GAConfig.rng_seed, coordinator only):
    1. initial population: population_size x 28 integers, chromosome by chromosome
    2. per offspring pair, in order:
       a. parent 1 tournament: 2 integers in [0, population_size)
       b. parent 2 tournament: 2 integers in [0, population_size)
       c. crossover decision: 1 float in [0, 1)
       d. only if crossing over: 2 integers in [0, 28] (cut points)
       e. mutation of child 1: 28 floats, then 28 integers in [1, 10]
       f. mutation of child 2: same (drawn even if child 2 is discarded)
Fitness evaluation never touches the generator, so results do not depend on
the number of workers.
"""

import csv
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from app.img import DisparityMap, GrayImage, require_same_shape
from app.metrics import FitnessMetric, evaluate, fitness_of
from app.params import DEFAULT_NUM_DISPARITIES, MatchParams, ParameterSet, WlsParams, repair_beta
from app.sgbm import run_pipeline

logger = logging.getLogger(__name__)

GENE_COUNT = 28
GENE_MIN = 1
GENE_MAX = 10
MIDPOINT_GENE = 5
TOURNAMENT_SIZE = 2

# Fitness of a chromosome whose pipeline run failed
WORST_FITNESS = -1.0e9

# (first gene, gene count) per parameter, 0-based
GENE_LAYOUT: Dict[str, Tuple[int, int]] = {
    "alpha": (0, 5),
    "beta": (5, 5),
    "delta_lr": (10, 2),
    "eta": (12, 2),
    "gamma": (14, 2),
    "speckle_window": (16, 3),
    "speckle_range": (19, 3),
    "lambda": (22, 5),
    "sigma": (27, 1),
}


# ========================================
# Data structures
# ========================================

@dataclass(frozen=True)
class Chromosome:
    """28 integer genes, each in [1, 10]."""
    genes: Tuple[int, ...]

    def __post_init__(self):
        genes = tuple(int(g) for g in self.genes)
        if len(genes) != GENE_COUNT:
            raise ValueError(f"chromosome must have {GENE_COUNT} genes, got {len(genes)}")
        if any(g < GENE_MIN or g > GENE_MAX for g in genes):
            raise ValueError(f"genes must lie in [{GENE_MIN}, {GENE_MAX}]: {genes}")
        object.__setattr__(self, "genes", genes)

    def __str__(self) -> str:
        return "-".join(str(g) for g in self.genes)


class GAConfig(BaseModel):
    """GA run settings (defaults = population 30, 100 generations, 0.6 / 0.3, elite 5)."""
    model_config = ConfigDict(frozen=True)

    population_size: int = Field(30, ge=2)
    generations: int = Field(100, ge=0)
    crossover_probability: float = Field(0.6, ge=0.0, le=1.0)
    mutation_probability: float = Field(0.3, ge=0.0, le=1.0)
    elite_count: int = Field(5, ge=1)
    rng_seed: int = Field(0, ge=0, lt=2 ** 64)
    fitness_metric: FitnessMetric = FitnessMetric.SSIM

    @model_validator(mode="after")
    def _check_elite(self) -> "GAConfig":
        if self.elite_count >= self.population_size:
            raise ValueError(
                f"elite_count ({self.elite_count}) must be smaller than population_size ({self.population_size})"
            )
        return self


@dataclass
class FitnessRecord:
    """Riga del log di convergenza per una generazione."""
    generation: int
    best: float
    mean: float
    std: float
    best_chromosome: Chromosome

    def csv_row(self) -> List[str]:
        return [str(self.generation), f"{self.best:.6f}", f"{self.mean:.6f}", f"{self.std:.6f}"]


@dataclass
class GAResult:
    """Outcome of one GA run."""
    best: ParameterSet
    best_chromosome: Chromosome
    best_fitness: float
    history: List[FitnessRecord] = field(default_factory=list)
    evaluations: int = 0
    elapsed_seconds: float = 0.0


@dataclass
class ExperimentSummary:
    """Independent GA runs aggregated per generation."""
    mean_best: List[float]
    std_best: List[float]
    best: ParameterSet
    best_fitness: float
    runs: List[GAResult] = field(default_factory=list)


# ========================================
# Encoding
# ========================================

def _positional(genes: Sequence[int]) -> int:
    """(g1-1)*10^(k-1) + ... + (g_{k-1}-1)*10 + g_k"""
    value = 0
    for g in genes[:-1]:
        value = value * 10 + (g - 1)
    return value * 10 + genes[-1]


def decode_values(c: Chromosome) -> Dict[str, Union[int, float]]:
    """Raw parameter values (beta already repaired)."""
    values: Dict[str, Union[int, float]] = {}
    for name, (start, count) in GENE_LAYOUT.items():
        segment = c.genes[start:start + count]
        if name == "sigma":
            values[name] = (segment[0] - 1) / 10
        else:
            values[name] = _positional(segment)
    values["beta"] = repair_beta(values["alpha"], values["beta"])
    return values


def decode(c: Chromosome, num_disparities: int = DEFAULT_NUM_DISPARITIES) -> ParameterSet:
    """Chromosome -> ParameterSet; total, never rejects."""
    v = decode_values(c)
    match = MatchParams(
        alpha=v["alpha"],
        beta=v["beta"],
        eta=v["eta"],
        gamma=v["gamma"],
        delta_lr=v["delta_lr"],
        speckle_window=v["speckle_window"],
        speckle_range=v["speckle_range"],
        num_disparities=num_disparities,
    )
    return ParameterSet(match=match, wls=WlsParams(sigma=v["sigma"], **{"lambda": v["lambda"]}))


def midpoint_chromosome() -> Chromosome:
    """All genes = 5; the baseline configuration of the optimize report."""
    return Chromosome((MIDPOINT_GENE,) * GENE_COUNT)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


# ========================================
# Operators
# ========================================

def random_chromosome(rng: np.random.Generator) -> Chromosome:
    return Chromosome(tuple(rng.integers(GENE_MIN, GENE_MAX + 1, size=GENE_COUNT)))


def crossover_at(a: Chromosome, b: Chromosome, i: int, j: int) -> Tuple[Chromosome, Chromosome]:
    """Swaps the segment [i, j) between the two parents."""
    ga, gb = list(a.genes), list(b.genes)
    ga[i:j], gb[i:j] = gb[i:j], ga[i:j]
    return Chromosome(tuple(ga)), Chromosome(tuple(gb))


def two_point_crossover(a: Chromosome, b: Chromosome, rng: np.random.Generator) -> Tuple[Chromosome, Chromosome]:
    i, j = sorted(int(x) for x in rng.integers(0, GENE_COUNT + 1, size=2))
    return crossover_at(a, b, i, j)


def mutate(c: Chromosome, p: float, rng: np.random.Generator) -> Chromosome:
    """Each gene is redrawn uniformly from [1, 10] with probability p."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"mutation probability must lie in [0, 1], got {p}")
    hit = rng.random(GENE_COUNT) < p
    fresh = rng.integers(GENE_MIN, GENE_MAX + 1, size=GENE_COUNT)
    return Chromosome(tuple(np.where(hit, fresh, np.asarray(c.genes))))


def _tournament(fitness: Sequence[float], rng: np.random.Generator) -> int:
    i, j = (int(x) for x in rng.integers(0, len(fitness), size=TOURNAMENT_SIZE))
    if fitness[j] > fitness[i] or (fitness[j] == fitness[i] and j < i):
        return j
    return i


# ========================================
# Fitness
# ========================================

@dataclass(frozen=True)
class FitnessContext:
    """Read-only inputs shared by every fitness evaluation."""
    left: GrayImage
    right: GrayImage
    gt: DisparityMap
    metric: FitnessMetric
    d_range: int


def evaluate_fitness(
    c: Chromosome,
    left: GrayImage,
    right: GrayImage,
    gt: DisparityMap,
    metric: FitnessMetric,
    d_range: int,
) -> float:
    """
    decode -> SGBM -> WLS -> metric; "higher is better".
    Pipeline failures score WORST_FITNESS instead of raising.
    """
    try:
        require_same_shape(left, right, gt)
        params = decode(c, num_disparities=d_range)
        result = run_pipeline(left, right, params)
        report = evaluate(gt, result.disparity, d_max=d_range - 1)
        return float(fitness_of(report, metric))
    except Exception as e:
        logger.warning(f"⚠️  Fitness evaluation failed for {c}: {e}")
        return WORST_FITNESS


_fitness_context: Optional[FitnessContext] = None


def initialize_fitness_context(context: FitnessContext) -> None:
    """Worker initializer: keeps the shared inputs in the worker process."""
    global _fitness_context
    _fitness_context = context


def get_fitness_context() -> Optional[FitnessContext]:
    return _fitness_context


def _evaluate_genes(genes: Tuple[int, ...]) -> float:
    ctx = _fitness_context
    return evaluate_fitness(Chromosome(genes), ctx.left, ctx.right, ctx.gt, ctx.metric, ctx.d_range)


class FitnessEvaluator:
    """
    Evaluates populations, in-process or on a process pool.
    Results are cached by genotype (fitness is a pure function).
    """

    def __init__(self, context: FitnessContext, workers: int = 1):
        self.context = context
        self.workers = max(1, int(workers))
        self.cache: Dict[Tuple[int, ...], float] = {}
        self.evaluations = 0
        self._pool: Optional[ProcessPoolExecutor] = None

    def __enter__(self) -> "FitnessEvaluator":
        if self.workers > 1:
            self._pool = ProcessPoolExecutor(
                max_workers=self.workers,
                initializer=initialize_fitness_context,
                initargs=(self.context,),
            )
        else:
            initialize_fitness_context(self.context)
        return self

    def __exit__(self, *exc):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def evaluate(self, population: Sequence[Chromosome]) -> List[float]:
        pending = []
        for c in population:
            if c.genes not in self.cache and c.genes not in pending:
                pending.append(c.genes)

        if pending:
            if self._pool is not None:
                chunk = max(1, len(pending) // (self.workers * 4))
                scores = list(self._pool.map(_evaluate_genes, pending, chunksize=chunk))
            else:
                scores = [_evaluate_genes(genes) for genes in pending]
            self.cache.update(zip(pending, scores))
            self.evaluations += len(pending)

        return [self.cache[c.genes] for c in population]


# ========================================
# Optimization loop
# ========================================

def validate_ga_config(values: Dict) -> Tuple[bool, str]:
    """
    Valida le impostazioni del GA.

    Returns:
        (bool, str): (is_valid, error_message)
    """
    try:
        GAConfig(**values)
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(p) for p in first.get("loc", ())) or "config"
        return False, f"{where}: {first.get('msg')}"
    return True, "OK"


def _record(generation: int, population: List[Chromosome], fitness: List[float]) -> FitnessRecord:
    best_index = max(range(len(fitness)), key=lambda i: (fitness[i], -i))
    scores = np.asarray(fitness, dtype=np.float64)
    return FitnessRecord(
        generation=generation,
        best=float(scores[best_index]),
        mean=float(scores.mean()),
        std=float(scores.std()),
        best_chromosome=population[best_index],
    )


def _next_generation(
    cfg: GAConfig,
    population: List[Chromosome],
    fitness: List[float],
    rng: np.random.Generator,
) -> List[Chromosome]:
    ranked = sorted(range(len(population)), key=lambda i: (-fitness[i], i))
    offspring = [population[i] for i in ranked[:cfg.elite_count]]

    while len(offspring) < cfg.population_size:
        parent_a = population[_tournament(fitness, rng)]
        parent_b = population[_tournament(fitness, rng)]
        if rng.random() < cfg.crossover_probability:
            child_a, child_b = two_point_crossover(parent_a, parent_b, rng)
        else:
            child_a, child_b = parent_a, parent_b
        child_a = mutate(child_a, cfg.mutation_probability, rng)
        child_b = mutate(child_b, cfg.mutation_probability, rng)
        offspring.append(child_a)
        if len(offspring) < cfg.population_size:
            offspring.append(child_b)
    return offspring


def run_ga(
    cfg: GAConfig,
    left: GrayImage,
    right: GrayImage,
    gt: DisparityMap,
    d_range: int,
    workers: int = 1,
    on_generation: Optional[Callable[[FitnessRecord], None]] = None,
) -> GAResult:
    """
    Generational GA with elitism. history[g] describes generation g, so a run
    with G generations has G + 1 records.
    """
    require_same_shape(left, right, gt)
    started = time.perf_counter()
    rng = make_rng(cfg.rng_seed)
    context = FitnessContext(left, right, gt, FitnessMetric(cfg.fitness_metric), d_range)

    logger.info(
        f"🧬 GA start: pop={cfg.population_size}, gens={cfg.generations}, "
        f"metric={context.metric.value}, seed={cfg.rng_seed}, workers={workers}"
    )

    population = [random_chromosome(rng) for _ in range(cfg.population_size)]
    history: List[FitnessRecord] = []

    with FitnessEvaluator(context, workers=workers) as evaluator:
        for generation in range(cfg.generations + 1):
            fitness = evaluator.evaluate(population)
            record = _record(generation, population, fitness)
            history.append(record)
            logger.info(
                f"🧬 Gen {generation}/{cfg.generations}: best={record.best:.6f} "
                f"mean={record.mean:.6f} std={record.std:.6f}"
            )
            if on_generation is not None:
                on_generation(record)
            if generation == cfg.generations:
                break
            population = _next_generation(cfg, population, fitness, rng)
        evaluations = evaluator.evaluations

    final = history[-1]
    elapsed = time.perf_counter() - started
    logger.info(f"🏁 GA done in {elapsed:.1f}s ({evaluations} evaluations), best={final.best:.6f}")
    return GAResult(
        best=decode(final.best_chromosome, num_disparities=d_range),
        best_chromosome=final.best_chromosome,
        best_fitness=final.best,
        history=history,
        evaluations=evaluations,
        elapsed_seconds=elapsed,
    )


def random_search(
    budget: int,
    left: GrayImage,
    right: GrayImage,
    gt: DisparityMap,
    metric: FitnessMetric,
    d_range: int,
    seed: int = 0,
    workers: int = 1,
) -> Tuple[ParameterSet, float]:
    """Best of `budget` independent random chromosomes."""
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    rng = make_rng(seed)
    candidates = [random_chromosome(rng) for _ in range(budget)]
    context = FitnessContext(left, right, gt, FitnessMetric(metric), d_range)
    with FitnessEvaluator(context, workers=workers) as evaluator:
        fitness = evaluator.evaluate(candidates)
    best_index = max(range(budget), key=lambda i: (fitness[i], -i))
    return decode(candidates[best_index], num_disparities=d_range), fitness[best_index]


def run_experiment(
    cfg: GAConfig,
    runs: int,
    left: GrayImage,
    right: GrayImage,
    gt: DisparityMap,
    d_range: int,
    workers: int = 1,
) -> ExperimentSummary:
    """`runs` independent GA runs with seeds rng_seed, rng_seed + 1, ..."""
    if runs < 1:
        raise ValueError(f"runs must be >= 1, got {runs}")
    results = []
    for k in range(runs):
        run_cfg = cfg.model_copy(update={"rng_seed": cfg.rng_seed + k})
        logger.info(f"🔁 Run {k + 1}/{runs} (seed={run_cfg.rng_seed})")
        results.append(run_ga(run_cfg, left, right, gt, d_range, workers=workers))

    best_per_gen = np.array([[r.best for r in res.history] for res in results])
    winner = max(results, key=lambda r: r.best_fitness)
    return ExperimentSummary(
        mean_best=[float(v) for v in best_per_gen.mean(axis=0)],
        std_best=[float(v) for v in best_per_gen.std(axis=0)],
        best=winner.best,
        best_fitness=winner.best_fitness,
        runs=results,
    )


# ========================================
# Convergence logs
# ========================================

def write_history_csv(history: Sequence[FitnessRecord], path: Union[str, Path]) -> None:
    """CSV `generation,best,mean,std`, one row per generation."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["generation", "best", "mean", "std"])
        for record in history:
            writer.writerow(record.csv_row())


def write_experiment_csv(summary: ExperimentSummary, path: Union[str, Path]) -> None:
    """CSV `generation,mean_best,std_best` across independent runs."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["generation", "mean_best", "std_best"])
        for g, (mean, std) in enumerate(zip(summary.mean_best, summary.std_best)):
            writer.writerow([str(g), f"{mean:.6f}", f"{std:.6f}"])


def is_monotone(history: Sequence[FitnessRecord]) -> bool:
    """True when the best fitness never decreases between generations."""
    return all(b.best >= a.best or math.isclose(a.best, b.best) for a, b in zip(history, history[1:]))
