import numpy as np
import pytest

from mrisr.image import Image
from mrisr.phantom import phantom


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def random_image(rng):
    return Image(rng.uniform(0, 255, (24, 20)))


@pytest.fixture
def integer_image(rng):
    return Image(rng.integers(0, 256, (24, 20)).astype(np.float64))


@pytest.fixture(scope="session")
def disks_phantom():
    return phantom(128, 128, "disks", seed=7)


@pytest.fixture(scope="session")
def small_recon_setup():
    """Dictionaries and configuration sized for fast pipeline tests."""
    import warnings

    from mrisr.classify import ClassifierConfig, measurement_matrix_for
    from mrisr.experiment import train_dictionaries
    from mrisr.reconstruct import ReconConfig
    from mrisr.selfsim import SearchConfig

    cfg = ReconConfig(
        scale=2,
        seed=21,
        search=SearchConfig(n_max=4, spiral_radius=10, far_step_init=4),
        classifier=ClassifierConfig(seed=21),
        ista_max_iter=120,
        ista_tol=1e-6,
    )
    train_images = [phantom(96, 96, "disks", seed=s).image for s in (31, 32)]
    train_images.append(phantom(96, 96, "checker-edge", seed=33).image)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        dicts = train_dictionaries(
            train_images, cfg, atoms=48, iterations=6, per_class_cap=900, stride=2
        )
    phi = measurement_matrix_for(cfg.classifier)
    return cfg, dicts, phi
