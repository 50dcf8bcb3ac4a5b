import numpy as np
import pytest

from hitgap.model import DiffusionSpec, Tolerances

# high-precision reference values (mpmath quadrature / closed forms)
S_OU1_AT_1 = 1.1949576619102276          # int_0^1 exp(t^2/2) dt
MASS_OU1 = 2.5066282746310005            # sqrt(2 pi)
MASS_OU2 = 1.772453850905516             # sqrt(pi)
MASS_DW = 3.9051371698573012             # int exp(-x^4/4 + x^2/2)
MU1_OU1_AT_05 = 0.52339009591409671      # E_{0.5} T_0, OU theta=1
MU1_OU1_AT_1 = 0.9019080126528065        # E_1 T_0
MU1_OU1_AT_2 = 1.4252045655377997        # E_2 T_0
MU2_OU1_AT_1 = 0.832260883283342         # E_1 T_0^2 / 2
B0_PLUS_OU1 = 0.47881289503772421        # sup_x tail(x) S(x)
B0_ARGMAX_OU1 = 0.89939237290688884
PI2_OVER_2 = 4.934802200544679
OU_Q25 = -0.67448975019608174            # 25% mass quantile of N(0,1)


@pytest.fixture(scope="session")
def ou1():
    return DiffusionSpec.from_sde(lambda x: -x, lambda x: np.sqrt(2.0), label="ou1")


@pytest.fixture(scope="session")
def ou2():
    return DiffusionSpec.from_sde(lambda x: -2.0 * x, lambda x: np.sqrt(2.0), label="ou2")


@pytest.fixture(scope="session")
def double_well():
    return DiffusionSpec.from_sde(lambda x: -x ** 3 + x, lambda x: np.sqrt(2.0),
                                  label="double-well")


@pytest.fixture(scope="session")
def bm_unit():
    """Brownian surrogate on [0, 1]: S = x, m = 2 dx, generator (1/2) d2/dx2."""
    return DiffusionSpec.from_sde(lambda x: 0.0, lambda x: 1.0, window=(0.0, 1.0),
                                  domain="interval", label="bm-unit")


@pytest.fixture(scope="session")
def heavy_tail():
    """Recurrent diffusion with S ~ x^3/3 and m' = 1/(1+x^2): B constants diverge."""
    tol = Tolerances(tail_epsilon=1e-4)
    return DiffusionSpec.from_sde(lambda x: -2.0 * x / (1.0 + x ** 2),
                                  lambda x: np.sqrt(2.0), tolerances=tol,
                                  label="heavy-tail")
