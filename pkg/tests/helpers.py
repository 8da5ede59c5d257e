"""Scenario builders shared by the tests."""
import numpy as np

from servicechoice import (
    Constant,
    Linear,
    Scenario,
    Service,
    build_grid,
    build_scenario,
    evaluate_density,
    load_preset,
)


def make_scenario(box, sites, queues, p=2.0, n=200, density="uniform"):
    grid = build_grid(box, n)
    services = [Service(s, q) for s, q in zip(sites, queues)]
    return Scenario(grid, evaluate_density(density, grid), services, p=p)


def beach(eps=0.1, n=20_000):
    return make_scenario([0.0, 1.0], [0.25, 0.75], [Linear(0, 1), Linear(0, 1 + eps)], p=2.0, n=n)


def preset(name, resolution=None):
    import dataclasses

    config = load_preset(name)
    if resolution is not None:
        config = dataclasses.replace(config, domain=dataclasses.replace(config.domain, resolution=(resolution,)))
    return build_scenario(config)
