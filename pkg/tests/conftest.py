"""Shared fixtures for the test suite."""

import numpy as np
import pytest

from panelfuse import FusionConfig, PanelDataset, SolverConfig


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def toy_panel():
    """Small hand-built panel: 1 target + 3 donors, S=2, T=4."""
    return PanelDataset(
        unit_ids=("t", "a", "b", "c"),
        Y=np.array([[5.0, 7.0], [2.0, 4.0], [6.0, 6.0], [3.0, 5.0]]),
        F=np.array([
            [4.0, 5.0, 6.0, 5.0],
            [1.0, 2.0, 3.0, 2.0],
            [5.0, 6.0, 7.0, 6.0],
            [2.0, 3.0, 4.0, 3.0],
        ]),
        X=np.array([[0.5], [0.1], [0.9], [0.3]]),
        Z=np.array([[0.4], [0.2], [0.8], [0.2]]),
    )


@pytest.fixture
def fast_fusion_config():
    """Coarse budget grid and relaxed tolerances for quick end-to-end runs."""
    return FusionConfig(
        budget_grid_step=0.5,
        solver=SolverConfig(objective_tol=1e-7, constraint_tol=1e-6),
    )
