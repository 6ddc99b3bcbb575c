import numpy as np
import pytest

from swiftssl.data import SyntheticSpec, make_synthetic


def reference_spec(seed: int, **overrides) -> SyntheticSpec:
    """The 50-way, 64-dim, 16-shot synthetic task used by the acceptance suite.

    A shared high-variance nuisance subspace makes discriminative training
    genuinely better than prototype-style learning, which is what separates
    sharp-softmax from flat-softmax supervision at this scale.
    """
    params = dict(
        num_classes=50, dim=64, labeled_per_class=16, unlabeled_per_class=40,
        retrieved_per_class=20, test_per_class=20,
        noise=0.15, text_noise=0.2, strong_noise=0.24, strong_views=4,
        retrieved_label_noise=0.3, retrieved_shift=0.3,
        nuisance_dims=16, nuisance_scale=0.4, seed=seed,
    )
    params.update(overrides)
    return SyntheticSpec(**params)


def small_spec(seed: int = 0, **overrides) -> SyntheticSpec:
    params = dict(
        num_classes=10, dim=16, labeled_per_class=8, unlabeled_per_class=12,
        retrieved_per_class=6, test_per_class=10,
        noise=0.1, text_noise=0.1, strong_noise=0.2, strong_views=3, seed=seed,
    )
    params.update(overrides)
    return SyntheticSpec(**params)


@pytest.fixture
def small_bundle():
    return make_synthetic(small_spec())


@pytest.fixture
def rng():
    return np.random.default_rng(0)
