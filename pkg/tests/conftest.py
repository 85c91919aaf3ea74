import numpy as np
import pytest

from mdlmix import Dataset, MixtureParams


def make_random_params(rng, n_components, n_dim, scheme="sqnorm",
                       mean_scale=2.0, log_width_range=(-0.7, 0.7)):
    if scheme == "sqnorm":
        amp = rng.uniform(0.3, 2.0, n_components)
    else:
        amp = rng.uniform(0.2, 1.2, max(n_components - 1, 0))
    return MixtureParams(
        scheme=scheme,
        amp_raw=amp,
        means=rng.normal(0.0, mean_scale, (n_components, n_dim)),
        log_widths=rng.uniform(*log_width_range, (n_components, n_dim)),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def random_params():
    return make_random_params


def scenario_1d(seed, n):
    """Univariate projection of the default three-component 2D generator."""
    from mdlmix import default_generator_spec, generate
    return generate(default_generator_spec(n=n, seed=seed, univariate=True))


def scenario_2d(seed, n):
    from mdlmix import default_generator_spec, generate
    return generate(default_generator_spec(n=n, seed=seed))
