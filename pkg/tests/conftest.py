"""Shared fixtures: the canonical link config most tests evaluate at."""

import pytest

from fblink.channel import NoiseSpec, Realization

# Forward 10 dB, feedback 15 dB over unit noise everywhere.
SNR = 10.0
SNR_FB = 10.0 ** 1.5
TAU = 1e-3


@pytest.fixture
def unit_realization():
    """All four coefficients pinned to 1: gains 1, no rotation."""
    return Realization(1.0 + 0j, 1.0 + 0j, 1.0 + 0j, 1.0 + 0j)


@pytest.fixture
def unit_noise():
    return NoiseSpec(1.0, 1.0, 1.0)
