import numpy as np
import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def tiny_planner_config():
    """Small network for fast unit tests; geometry still exercises every path."""
    from selfd.planner import PlannerConfig

    return PlannerConfig(
        input_width=32,
        input_height=18,
        num_waypoints=3,
        encoder_channels=(4, 8),
        encoder_strides=(2, 2),
        fused_channels=4,
        decoder_channels=6,
        projection_hidden=8,
        quality_hidden=8,
        dropout=0.0,
    )


@pytest.fixture()
def tiny_model(tiny_planner_config):
    from selfd.planner import WaypointPlanner

    torch.manual_seed(0)
    return WaypointPlanner(tiny_planner_config)


@pytest.fixture(scope="session")
def small_world():
    from selfd.sim import build_world

    return build_world(7)


def random_observation(config, rng, command=None):
    from selfd.core import Command, Observation

    img = rng.random((config.input_height, config.input_width, 3)).astype(np.float32)
    cmd = command if command is not None else Command(int(rng.integers(1, 4)))
    return Observation(image=img, speed=float(rng.uniform(0, 10)), command=cmd)
