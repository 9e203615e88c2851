import numpy as np
import pytest

from earthmatch.engine import EngineConfig
from earthmatch.features import MatcherConfig
from earthmatch.robustfit import RansacConfig
from earthmatch.synth import generate_texture


@pytest.fixture(scope="session")
def engine_cfg() -> EngineConfig:
    """Desk-scale engine config: canonical side matches the synth base side."""
    return EngineConfig(
        matcher="builtin",
        matcher_cfg=MatcherConfig(max_keypoints=1024, image_side=256),
        ransac_cfg=RansacConfig(rng_seed=123),
    )


@pytest.fixture(scope="session")
def texture() -> np.ndarray:
    return generate_texture(256, seed=5)


def random_homography(rng: np.random.Generator, side: float = 100.0) -> np.ndarray:
    """Well-conditioned random projective transform for solver tests."""
    theta = rng.uniform(-0.6, 0.6)
    scale = rng.uniform(0.7, 1.4)
    c, s = np.cos(theta), np.sin(theta)
    h = np.array(
        [
            [scale * c, -scale * s, rng.uniform(-0.3, 0.3) * side],
            [scale * s, scale * c, rng.uniform(-0.3, 0.3) * side],
            [rng.uniform(-1e-3, 1e-3), rng.uniform(-1e-3, 1e-3), 1.0],
        ]
    )
    return h
