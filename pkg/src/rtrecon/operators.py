"""Discrete factorized system: data matrix, state operator, and sources.

The boundary-current data factorize as ``J = A u*`` with ``u*`` the
intermediate phase-space variable, which itself satisfies the state
equation ``u* = B(sigma_x) u* - F``.  ``A`` couples the boundary Green
matrix with the angular/spatial quadrature weights and never depends on
the unknown coefficient; ``B`` applies the scattering/attenuation
diagonal factors around the volume Green action and is linear in the
unknown.

Per-direction kernel mixes use the quadrature-weighted kernel (rows sum
to one); diagonal coefficient factors broadcast over the direction axis
of the ``(ns, n_cells)`` phase matrix view.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .grid import AngularGrid, Mesh
from .medium import OpticalField
from .transport import (
    GreenSet,
    as_matrix,
    assemble_green_set,
    inflow_source,
    phase_size,
)

MODE_ABSORPTION = "absorption"
MODE_SCATTERING = "scattering"
MODES = (MODE_ABSORPTION, MODE_SCATTERING)

# dense materialization guard: (ns * n_cells)^2 doubles beyond this is unreasonable
DENSE_LIMIT = 4096


def quadrature_scale(mesh: Mesh, angular: AngularGrid) -> np.ndarray:
    """Flat vector of eta_l * zeta_m in the phase layout."""
    return (angular.weights[:, None] * mesh.cell_volumes[None, :]).ravel()


def assemble_data_matrix(green_boundary: np.ndarray, mesh: Mesh, angular: AngularGrid) -> np.ndarray:
    """Scale the boundary Green matrix by the quadrature weights.

    ``A[d, l*n + m] = Gb[d, l*n + m] * eta_l * zeta_m``; row-major, reused
    across all sources.
    """
    n_phase = phase_size(mesh, angular)
    if green_boundary.ndim != 2 or green_boundary.shape[1] != n_phase:
        raise InvalidArgumentError(
            f"boundary Green matrix has shape {green_boundary.shape}, expected (*, {n_phase})"
        )
    return green_boundary * quadrature_scale(mesh, angular)[None, :]


@dataclass
class SystemFactorization:
    """Assembled factorized system for one reconstruction mode.

    ``known`` holds the coefficient that is *not* reconstructed: sigma_s
    in absorption mode, sigma_a in scattering mode.  ``sources[q]`` is
    the flat inflow vector F_q.
    """

    mode: str
    mesh: Mesh
    angular: AngularGrid
    green: GreenSet
    data_matrix: np.ndarray
    sources: np.ndarray
    known: np.ndarray

    @property
    def n_phase(self) -> int:
        return phase_size(self.mesh, self.angular)

    @property
    def n_sources(self) -> int:
        return self.sources.shape[0]

    def volume_solve(self, w: np.ndarray, transpose: bool = False) -> np.ndarray:
        return self.green.volume_apply(w, transpose=transpose)

    def state_pieces(self, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Volume-Green image of ``w`` and its kernel mix, as (ns, n) matrices.

        These are the only transport solves the state operator needs; for a
        fixed ``w`` they can be cached and every ``B(sigma_x) w`` afterwards
        is a pair of diagonal broadcasts.
        """
        y = as_matrix(self.volume_solve(w), self.angular.ns)
        ang = self.angular.weighted_kernel @ y
        return y, ang

    def state_from_pieces(self, sigma_x: np.ndarray, y: np.ndarray, ang: np.ndarray) -> np.ndarray:
        if self.mode == MODE_ABSORPTION:
            return self.known[None, :] * ang - (sigma_x + self.known)[None, :] * y
        return sigma_x[None, :] * (ang - y)

    def apply_state(self, sigma_x: np.ndarray, w: np.ndarray) -> np.ndarray:
        """Apply B(sigma_x) to a flat phase vector."""
        y, ang = self.state_pieces(w)
        return self.state_from_pieces(np.asarray(sigma_x), y, ang).ravel()

    def apply_state_t(self, sigma_x: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Apply B(sigma_x)^t to a flat phase vector."""
        sigma_x = np.asarray(sigma_x)
        zm = as_matrix(np.asarray(z), self.angular.ns)
        kt = self.angular.weighted_kernel.T
        if self.mode == MODE_ABSORPTION:
            inner = kt @ (self.known[None, :] * zm) - (sigma_x + self.known)[None, :] * zm
        else:
            inner = (kt @ (sigma_x[None, :] * zm)) - sigma_x[None, :] * zm
        return self.volume_solve(inner.ravel(), transpose=True)

    def state_derivative_apply(self, j: int, w: np.ndarray) -> np.ndarray:
        """Apply the derivative of B with respect to unknown cell ``j``.

        Absorption mode (unknown sigma_a): only the total-attenuation
        diagonal depends on the unknown, so the derivative is minus the
        cell-j restriction of the volume-Green image.  Scattering mode
        (unknown sigma_s): the full per-cell scattering factor
        (kernel mix minus identity) restricted to cell j.  Output is
        nonzero only on cell j's angular fiber.
        """
        if not 0 <= j < self.mesh.n_cells:
            raise InvalidArgumentError(f"cell index {j} out of range")
        y, ang = self.state_pieces(w)
        out = np.zeros_like(y)
        if self.mode == MODE_ABSORPTION:
            out[:, j] = -y[:, j]
        else:
            out[:, j] = ang[:, j] - y[:, j]
        return out.ravel()

    def state_derivative_pieces(self, y: np.ndarray, ang: np.ndarray) -> np.ndarray:
        """Matrix D with D[l, j] = ((dB/d sigma_j) w)[l, j] given pieces of w."""
        if self.mode == MODE_ABSORPTION:
            return -y
        return ang - y

    def state_residual_gradient(self, residual: np.ndarray, y: np.ndarray, ang: np.ndarray) -> np.ndarray:
        """Per-cell gradient contribution ``sum_l residual[l, j] * ((dB/d sigma_j) w)[l, j]``."""
        return np.sum(residual * self.state_derivative_pieces(y, ang), axis=0)

    def dense_state_matrix(self, sigma_x: np.ndarray) -> np.ndarray:
        """Materialize B(sigma_x) column by column; small grids only."""
        n = self.n_phase
        if n > DENSE_LIMIT:
            raise InvalidArgumentError(
                f"refusing to materialize a {n}x{n} dense state operator (limit {DENSE_LIMIT})"
            )
        out = np.empty((n, n))
        e = np.zeros(n)
        for i in range(n):
            e[i] = 1.0
            out[:, i] = self.apply_state(sigma_x, e)
            e[i] = 0.0
        return out


def assemble_inflow_source(mesh: Mesh, angular: AngularGrid, source_index: int) -> np.ndarray:
    """Flat inflow vector F_q of the state equation (see transport.inflow_source)."""
    return inflow_source(mesh, angular, source_index)


def build_factorization(
    mesh: Mesh,
    angular: AngularGrid,
    mode: str,
    known_field: OpticalField,
) -> SystemFactorization:
    """Assemble the Green set, data matrix, and all source vectors for a mode.

    Absorption mode uses the free-transport Green functions (the data
    matrix depends on no coefficient at all); scattering mode attenuates
    them by the known absorption coefficient.
    """
    if mode not in MODES:
        raise InvalidArgumentError(f"unknown mode {mode!r}")
    if mode == MODE_ABSORPTION:
        green = assemble_green_set("free", None, mesh, angular)
        known = np.array(known_field.sigma_s)
    else:
        green = assemble_green_set("attenuated", known_field, mesh, angular)
        known = np.array(known_field.sigma_a)
    data_matrix = assemble_data_matrix(green.boundary, mesh, angular)
    sources = np.stack([inflow_source(mesh, angular, q) for q in range(mesh.n_sources)])
    return SystemFactorization(
        mode=mode,
        mesh=mesh,
        angular=angular,
        green=green,
        data_matrix=data_matrix,
        sources=sources,
        known=known,
    )
