import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from app.ga import (
    GENE_COUNT,
    WORST_FITNESS,
    Chromosome,
    GAConfig,
    crossover_at,
    decode,
    decode_values,
    evaluate_fitness,
    is_monotone,
    make_rng,
    midpoint_chromosome,
    mutate,
    random_chromosome,
    random_search,
    run_experiment,
    run_ga,
    two_point_crossover,
    validate_ga_config,
    write_history_csv,
)
from app.img import DisparityMap
from app.metrics import FitnessMetric
from app.params import ParameterSet
from app.sgbm import run_pipeline

genes = st.lists(st.integers(1, 10), min_size=GENE_COUNT, max_size=GENE_COUNT)


def digits_value(segment):
    """Positional formula evaluated digit by digit with explicit powers of ten."""
    k = len(segment)
    total = segment[-1]
    for i, g in enumerate(segment[:-1]):
        total += (g - 1) * 10 ** (k - 1 - i)
    return total


# ========================================
# Encoding
# ========================================

def test_decode_minimum():
    p = decode(Chromosome((1,) * GENE_COUNT))
    flat = p.to_flat_dict()
    assert (flat["alpha"], flat["beta"]) == (1, 2)
    assert flat["delta_lr"] == flat["eta"] == flat["gamma"] == 1
    assert flat["speckle_window"] == flat["speckle_range"] == 1
    assert flat["lambda"] == 1 and flat["sigma"] == 0.0


def test_decode_maximum():
    flat = decode(Chromosome((10,) * GENE_COUNT)).to_flat_dict()
    assert flat["alpha"] == 100000 and flat["lambda"] == 100000
    assert flat["beta"] == 100001
    assert flat["delta_lr"] == flat["eta"] == flat["gamma"] == 100
    assert flat["speckle_window"] == flat["speckle_range"] == 1000
    assert flat["sigma"] == pytest.approx(0.9)


def test_decode_repairs_beta():
    g = [1] * GENE_COUNT
    g[4] = 5
    g[9] = 3
    assert decode(Chromosome(tuple(g))).match.beta == 6


def test_midpoint_baseline():
    flat = decode(midpoint_chromosome()).to_flat_dict()
    assert flat["alpha"] == 44445 and flat["beta"] == 44446
    assert flat["eta"] == flat["gamma"] == flat["delta_lr"] == 45
    assert flat["speckle_window"] == flat["speckle_range"] == 445
    assert flat["lambda"] == 44445 and flat["sigma"] == pytest.approx(0.4)


@settings(max_examples=2000, deadline=None)
@given(genes)
def test_decode_matches_digit_formula(values):
    c = Chromosome(tuple(values))
    decoded = decode_values(c)
    alpha = digits_value(values[0:5])
    assert decoded["alpha"] == alpha
    assert decoded["beta"] == max(digits_value(values[5:10]), alpha + 1)
    assert decoded["delta_lr"] == digits_value(values[10:12])
    assert decoded["eta"] == digits_value(values[12:14])
    assert decoded["gamma"] == digits_value(values[14:16])
    assert decoded["speckle_window"] == digits_value(values[16:19])
    assert decoded["speckle_range"] == digits_value(values[19:22])
    assert decoded["lambda"] == digits_value(values[22:27])
    assert decoded["sigma"] == (values[27] - 1) / 10

    params = decode(c)
    assert params.match.alpha < params.match.beta
    assert 1 <= params.wls.lambda_ <= 100000


def test_decode_bulk_random():
    rng = make_rng(123)
    for _ in range(100000 // 50):
        batch = rng.integers(1, 11, size=(50, GENE_COUNT))
        for row in batch:
            v = decode_values(Chromosome(tuple(row)))
            assert v["alpha"] == digits_value(list(row[0:5]))
            assert v["alpha"] < v["beta"]


def test_chromosome_invariants():
    with pytest.raises(ValueError):
        Chromosome((1,) * 27)
    with pytest.raises(ValueError):
        Chromosome((0,) + (1,) * 27)


# ========================================
# Operators
# ========================================

def test_random_chromosome_is_deterministic():
    assert random_chromosome(make_rng(5)) == random_chromosome(make_rng(5))


def test_random_chromosome_frequencies():
    rng = make_rng(0)
    samples = np.array([random_chromosome(rng).genes for _ in range(10000)])
    counts = np.stack([(samples == v).sum(axis=0) for v in range(1, 11)])
    expected = 1000
    sigma = np.sqrt(10000 * 0.1 * 0.9)
    assert np.all(np.abs(counts - expected) <= 4 * sigma)


def test_crossover_segments():
    ones = Chromosome((1,) * GENE_COUNT)
    tens = Chromosome((10,) * GENE_COUNT)
    assert crossover_at(ones, tens, 7, 7) == (ones, tens)
    assert crossover_at(ones, tens, 0, GENE_COUNT) == (tens, ones)

    child_a, child_b = crossover_at(ones, tens, 5, 9)
    assert [i for i, g in enumerate(child_a.genes) if g == 10] == [5, 6, 7, 8]
    assert [i for i, g in enumerate(child_b.genes) if g == 1] == [5, 6, 7, 8]


@settings(max_examples=200, deadline=None)
@given(genes, genes, st.integers(0, 2 ** 32 - 1))
def test_crossover_preserves_genes_per_position(a, b, seed):
    ca, cb = Chromosome(tuple(a)), Chromosome(tuple(b))
    child_a, child_b = two_point_crossover(ca, cb, make_rng(seed))
    for i in range(GENE_COUNT):
        assert {child_a.genes[i], child_b.genes[i]} == {a[i], b[i]}


def test_mutation_extremes():
    c = random_chromosome(make_rng(1))
    assert mutate(c, 0.0, make_rng(2)) == c

    rng = make_rng(3)
    samples = np.array([mutate(c, 1.0, rng).genes for _ in range(10000)])
    counts = np.stack([(samples == v).sum(axis=0) for v in range(1, 11)])
    assert np.all(np.abs(counts - 1000) <= 4 * np.sqrt(900))


def test_mutation_rejects_bad_probability():
    with pytest.raises(ValueError):
        mutate(midpoint_chromosome(), 1.5, make_rng(0))


# ========================================
# Configuration
# ========================================

def test_ga_config_defaults():
    cfg = GAConfig()
    assert (cfg.population_size, cfg.generations, cfg.elite_count) == (30, 100, 5)
    assert (cfg.crossover_probability, cfg.mutation_probability) == (0.6, 0.3)


@pytest.mark.parametrize("values", [
    {"population_size": 5, "elite_count": 5},
    {"crossover_probability": 1.2},
    {"mutation_probability": -0.1},
    {"fitness_metric": "accuracy"},
])
def test_validate_ga_config_rejects(values):
    ok, message = validate_ga_config(values)
    assert not ok and message


# ========================================
# Fitness
# ========================================

def test_self_generated_ground_truth_scores_perfectly(small_pair):
    left, right, _ = small_pair
    c = midpoint_chromosome()
    gt = run_pipeline(left, right, decode(c, num_disparities=16)).disparity
    assert evaluate_fitness(c, left, right, gt, FitnessMetric.SSIM, 16) == pytest.approx(1.0, abs=1e-9)
    assert evaluate_fitness(c, left, right, gt, FitnessMetric.MSE, 16) == 0.0


def test_fitness_is_pure(small_pair):
    left, right, gt = small_pair
    c = random_chromosome(make_rng(8))
    first = evaluate_fitness(c, left, right, gt, FitnessMetric.PSNR, 16)
    assert first == evaluate_fitness(c, left, right, gt, FitnessMetric.PSNR, 16)
    assert first > WORST_FITNESS


def test_fitness_failure_gives_sentinel(small_pair):
    left, right, _ = small_pair
    wrong_size = DisparityMap.constant(10, 10, 1.0)
    score = evaluate_fitness(midpoint_chromosome(), left, right, wrong_size, FitnessMetric.SSIM, 16)
    assert score == WORST_FITNESS


# ========================================
# Optimization loop
# ========================================

def small_config(**overrides):
    values = dict(population_size=6, generations=3, elite_count=2, rng_seed=4, fitness_metric="ssim")
    values.update(overrides)
    return GAConfig(**values)


def test_zero_generations_returns_best_initial(small_pair):
    left, right, gt = small_pair
    result = run_ga(small_config(generations=0), left, right, gt, 16)
    assert len(result.history) == 1
    assert result.best_fitness == result.history[0].best
    assert isinstance(result.best, ParameterSet)


def test_history_shape_and_callback(small_pair):
    left, right, gt = small_pair
    seen = []
    result = run_ga(small_config(), left, right, gt, 16, on_generation=seen.append)
    assert [r.generation for r in result.history] == [0, 1, 2, 3]
    assert seen == result.history
    assert all(r.std >= 0 and r.best >= r.mean for r in result.history)
    assert is_monotone(result.history)


def test_same_seed_same_history(small_pair, tmp_path):
    left, right, gt = small_pair
    first = run_ga(small_config(), left, right, gt, 16)
    second = run_ga(small_config(), left, right, gt, 16, workers=2)
    assert first.best_chromosome == second.best_chromosome
    write_history_csv(first.history, tmp_path / "a.csv")
    write_history_csv(second.history, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.csv").read_text().splitlines()[0] == "generation,best,mean,std"


def test_random_search_budget(small_pair):
    left, right, gt = small_pair
    best, score = random_search(4, left, right, gt, FitnessMetric.SSIM, 16, seed=2)
    again, score_again = random_search(4, left, right, gt, FitnessMetric.SSIM, 16, seed=2)
    assert score == score_again and best == again
    with pytest.raises(ValueError):
        random_search(0, left, right, gt, FitnessMetric.SSIM, 16)


def test_experiment_aggregates_runs(small_pair):
    left, right, gt = small_pair
    summary = run_experiment(small_config(generations=1), 2, left, right, gt, 16)
    assert len(summary.runs) == 2
    assert len(summary.mean_best) == len(summary.std_best) == 2
    assert all(s >= 0.0 for s in summary.std_best)
    assert summary.mean_best[0] == pytest.approx(np.mean([r.history[0].best for r in summary.runs]))
    assert summary.best_fitness == max(r.best_fitness for r in summary.runs)


@pytest.mark.slow
@pytest.mark.parametrize("metric", ["mse", "psnr", "ssim"])
@pytest.mark.parametrize("seed", range(5))
def test_elitism_is_monotone_at_scale(small_pair, metric, seed):
    left, right, gt = small_pair
    cfg = GAConfig(rng_seed=seed, fitness_metric=metric)
    result = run_ga(cfg, left, right, gt, 16, workers=4)
    assert len(result.history) == cfg.generations + 1
    assert is_monotone(result.history)
