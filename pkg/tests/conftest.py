import math
import os

import mpmath as mp
import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=40, deadline=None)
settings.register_profile("thorough", max_examples=500, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def mittag_leffler_path(t, alpha, theta1, theta2):
    """X_t for X = K * (theta1 X + theta2), X_0 = 0, by its power series."""
    a = mp.mpf(alpha)
    return float(
        theta2 * mp.nsum(lambda k: mp.mpf(theta1) ** k * mp.mpf(t) ** (a * (k + 1)) / mp.gamma(a * (k + 1) + 1), [0, mp.inf])
    )


def gaussian_variance(t, alpha):
    """Var of the integral of K(t - s) dB_s over [0, t]."""
    return t ** (2 * alpha - 1) / ((2 * alpha - 1) * math.gamma(alpha) ** 2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
