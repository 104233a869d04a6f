import numpy as np
import pytest
from hypothesis import settings

from csiplan.channel import SystemConstants
from csiplan.rate import RateContext

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def random_context(seed, N_G, C=3, M=50, T_s=20, rho_low=0.6, tau=None,
                   equal_rho=True):
    """Synthetic context with dominant own-cell gains.

    With ``equal_rho`` every copilot group shares one autocorrelation per
    BS, which makes its rate non-increasing in the CSI delay.
    """
    rng = np.random.default_rng(seed)
    beta = rng.uniform(0.05, 1.0, (C, N_G, C)) * 1e-9
    for c in range(C):
        beta[c, :, c] *= 20
    if equal_rho:
        rho = np.repeat(rng.uniform(rho_low, 1.0, (C, N_G, 1)), C, axis=2)
    else:
        rho = rng.uniform(rho_low, 1.0, (C, N_G, C))
    return RateContext(SystemConstants(M=M, T_s=T_s), beta, rho, tau)


@pytest.fixture
def make_context():
    return random_context
