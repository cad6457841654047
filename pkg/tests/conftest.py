import numpy as np
import pytest

from dynshot.graph import ParamRegistry

# Hand-picked weights shared by the small-MLP arithmetic tests.
HAND_W0 = [[1.0, 0.0, -1.0], [0.0, 1.0, 1.0], [1.0, 1.0, 0.0], [2.0, -1.0, 1.0]]
HAND_B0 = [0.5, -1.0, 0.25]
HAND_W1 = [[1.0, 2.0], [0.5, -1.0], [4.0, 1.0]]
HAND_B1 = [0.1, 0.2]


def set_params(registry: ParamRegistry, prefix: str) -> None:
    registry[f"{prefix}/layer0/W"].value[...] = HAND_W0
    registry[f"{prefix}/layer0/b"].value[...] = HAND_B0
    registry[f"{prefix}/layer1/W"].value[...] = HAND_W1
    registry[f"{prefix}/layer1/b"].value[...] = HAND_B1


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
