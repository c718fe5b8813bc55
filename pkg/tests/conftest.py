import numpy as np
import pytest

from torusnls import ModelParams, SpectralField, get_modeset


def random_field(dim: int, cutoff: int, seed: int, s: float = 10.0) -> SpectralField:
    """Random field with the measure's amplitude decay (test helper)."""
    rng = np.random.default_rng(seed)
    ms = get_modeset(dim, cutoff)
    g = (rng.standard_normal(ms.n) + 1j * rng.standard_normal(ms.n)) / np.sqrt(2)
    return SpectralField(dim, cutoff, g / np.sqrt(1.0 + ms.ksq.astype(float) ** s))


@pytest.fixture
def params_1d():
    return ModelParams(d=1, N=3)


@pytest.fixture
def field_1d():
    return random_field(1, 3, seed=42)
