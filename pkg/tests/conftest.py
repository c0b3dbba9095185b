import numpy as np
import pytest

from schemas.core import Architecture, SoftmaxModel
from schemas.segbench import BenchConfig, SceneConfig, TrainConfig


def random_theta(model: SoftmaxModel, seed: int, scale: float = 1.0) -> np.ndarray:
    return np.random.default_rng(seed).normal(0.0, scale, model.param_count)


def finite_difference(fn, theta: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """
    Central-difference gradient of a scalar function
    """
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        up, down = theta.copy(), theta.copy()
        up[i] += step
        down[i] -= step
        grad[i] = (fn(up) - fn(down)) / (2 * step)
    return grad


@pytest.fixture(params=[Architecture.linear, Architecture.hidden], ids=["linear", "hidden"])
def model(request) -> SoftmaxModel:
    return SoftmaxModel(feature_dim=3, class_count=4, architecture=request.param, hidden_width=3)


@pytest.fixture
def linear_model() -> SoftmaxModel:
    return SoftmaxModel(feature_dim=2, class_count=4)


@pytest.fixture
def small_scene() -> SceneConfig:
    return SceneConfig(height=48, width=48, organ_size=(9.0, 12.0), neighbor_size=(5.0, 7.0), lesion_size=(1.5, 2.5),
                       mimic_count=(2, 3), mimic_size=(1.5, 2.5))


@pytest.fixture
def small_bench(small_scene) -> BenchConfig:
    return BenchConfig(scene=small_scene, train=TrainConfig(epochs=3, pixels_per_image=200, batch_size=128),
                       scene_count=6, test_fraction=1 / 3, seeds=2)
