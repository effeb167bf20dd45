from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from skelpot.calderon import CalderonSystem
from skelpot.coefficients import CoefficientField
from skelpot.geometry import build_box_mesh, extract_skeleton, half_split, inner_box

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile(
    "skelpot", deadline=None, max_examples=25, suppress_health_check=[HealthCheck.too_slow], derandomize=True
)
settings.load_profile("skelpot")

S_POLAR = 2 * np.exp(1j * np.pi / 6)


def crandn(rng: np.random.Generator, *shape: int) -> np.ndarray:
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def half16():
    mesh = build_box_mesh(1.0, 16, half_split())
    return mesh, extract_skeleton(mesh)


@pytest.fixture(scope="session")
def half32():
    mesh = build_box_mesh(1.0, 32, half_split())
    return mesh, extract_skeleton(mesh)


@pytest.fixture(scope="session")
def half16_system(half16):
    mesh, skel = half16
    return CalderonSystem(CoefficientField.constant(mesh), skel)


@pytest.fixture(scope="session")
def inner16():
    mesh = build_box_mesh(1.0, 16, inner_box(0.5, split=True))
    return mesh, extract_skeleton(mesh)
