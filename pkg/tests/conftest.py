import pytest

from app.synth import SynthSpec, generate


@pytest.fixture(scope="session")
def noise_pair():
    """128x96 uniform-noise pair shifted by 8 px."""
    return generate(SynthSpec(width=128, height=96, true_disparity=8, noise_seed=0))


@pytest.fixture(scope="session")
def small_pair():
    """64x48 pair used by the GA tests."""
    return generate(SynthSpec(width=64, height=48, true_disparity=4, noise_seed=1))
