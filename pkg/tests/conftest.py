"""Shared fixtures; the expensive desk-scale artifacts are session-scoped."""

from __future__ import annotations

import time

import numpy as np
import pytest

from rtrecon.experiments import canonical_experiments
from rtrecon.grid import build_angular, build_mesh
from rtrecon.medium import OpticalField
from rtrecon.operators import build_factorization
from rtrecon.spectral import compute_svd, grid_fingerprint
from rtrecon.experiments import solve_clean_data


@pytest.fixture(scope="session")
def small_mesh():
    return build_mesh(10, 10, ((0.0, 2.0), (0.0, 2.0)), n_detectors=20, n_sources=4)


@pytest.fixture(scope="session")
def small_angular():
    return build_angular(8, g=0.0)


@pytest.fixture(scope="session")
def small_field(small_mesh):
    n = small_mesh.n_cells
    sigma_a = np.full(n, 0.1)
    sigma_a[44] = sigma_a[45] = 0.2
    return OpticalField(sigma_a=sigma_a, sigma_s=np.full(n, 2.0))


def _desk_artifacts(spec):
    timings = {}
    t0 = time.time()
    clean = solve_clean_data(spec)
    timings["forward_data"] = time.time() - t0

    t0 = time.time()
    mesh, angular = spec.inversion_grids()
    known = spec.known_field_on(mesh)
    fact = build_factorization(mesh, angular, spec.mode, known)
    cache = compute_svd(fact.data_matrix, grid_hash=grid_fingerprint(mesh, angular, spec.mode, fact.known))
    timings["factorization_and_svd"] = time.time() - t0

    truth = spec.truth_on(mesh)
    return {"spec": spec, "clean": clean, "fact": fact, "cache": cache, "truth": truth, "timings": timings}


@pytest.fixture(scope="session")
def exp1_desk():
    """Experiment-I analog at desk scale (40x40/ns16 inversion, 80x80/ns32 forward)."""
    return _desk_artifacts(canonical_experiments()["disk_absorption"])


@pytest.fixture(scope="session")
def exp4_desk():
    """Experiment-IV analog at desk scale (scattering mode)."""
    return _desk_artifacts(canonical_experiments()["disk_scattering"])
