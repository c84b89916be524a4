import numpy as np
import pytest

from app.img import INVALID_DISPARITY
from app.synth import SynthPattern, SynthSpec, generate, validate_synth_spec


def test_zero_disparity():
    left, right, gt = generate(SynthSpec(width=32, height=16, true_disparity=0))
    assert np.array_equal(left.data, right.data)
    assert np.all(gt.data == 0.0)


def test_default_pair_ground_truth():
    spec = SynthSpec()
    left, right, gt = generate(spec)
    assert (gt.width, gt.height) == (128, 96)
    assert np.all(gt.data[:, :8] == INVALID_DISPARITY)
    assert np.all(gt.data[:, 8:] == 8.0)
    assert np.array_equal(left.data[:, 8:], right.data[:, :-8])


@pytest.mark.parametrize("pattern", list(SynthPattern))
def test_patterns_are_deterministic(pattern):
    spec = SynthSpec(width=40, height=24, true_disparity=5, pattern=pattern, noise_seed=9)
    a = generate(spec)
    b = generate(spec)
    for x, y in zip(a, b):
        assert np.array_equal(x.data, y.data)


def test_seed_changes_texture():
    a, _, _ = generate(SynthSpec(width=40, height=24, noise_seed=1))
    b, _, _ = generate(SynthSpec(width=40, height=24, noise_seed=2))
    assert not np.array_equal(a.data, b.data)


@pytest.mark.parametrize("spec", [
    SynthSpec(width=10, true_disparity=5),
    SynthSpec(true_disparity=-1),
    SynthSpec(width=0),
])
def test_invalid_specs(spec):
    ok, message = validate_synth_spec(spec)
    assert not ok and message
    with pytest.raises(ValueError):
        generate(spec)
