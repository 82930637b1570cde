import numpy as np
import pytest

from plediff.util import limit_blas_threads

limit_blas_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_params(cfg, rng, scale=0.3):
    """Well-conditioned random parameter point for derivative checks."""
    from plediff.denoiser import init_params

    p = init_params(cfg)
    p.flat[:] = scale * rng.standard_normal(p.flat.size)
    p.null_context[:] = rng.uniform(0.2, 0.8, cfg.ple_dim)
    return p
