"""Forward transport solver and discrete adjoint Green machinery.

Phase-space fields live in flat float64 vectors of length ``ns * n_cells``
with the direction-major layout ``index = l * n_cells + m`` (direction l,
cell m); :func:`as_matrix` gives the zero-copy ``(ns, n_cells)`` view.

The boundary and volume Green operators are defined as exact adjoints and
inverses of the *discrete* streaming operator, which makes the duality
and fixed-point identities of the factorized system hold to solver
precision rather than to discretization order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, IterationLimitError
from .grid import AngularGrid, Mesh
from .medium import OpticalField
from .sweeps import sweep_direction

logger = logging.getLogger(__name__)

VARIANT_FREE = "free"
VARIANT_ATTENUATED = "attenuated"


def as_matrix(values: np.ndarray, ns: int) -> np.ndarray:
    """View a flat phase vector as an (ns, n_cells) matrix."""
    values = np.asarray(values)
    if values.size % ns != 0:
        raise InvalidArgumentError(f"phase vector of size {values.size} not divisible by ns={ns}")
    return values.reshape(ns, values.size // ns)


def phase_size(mesh: Mesh, angular: AngularGrid) -> int:
    return mesh.n_cells * angular.ns


def _edge_zeros(mesh: Mesh):
    return (
        np.zeros(mesh.ny),
        np.zeros(mesh.ny),
        np.zeros(mesh.nx),
        np.zeros(mesh.nx),
    )


def source_edge_values(mesh: Mesh, source_index: int) -> tuple[np.ndarray, ...]:
    """Per-edge boundary values (west, east, south, north) for one source.

    The source is isotropic: the same value feeds every incoming
    direction through a supported face.
    """
    if not 0 <= source_index < mesh.n_sources:
        raise InvalidArgumentError(f"source index {source_index} out of range")
    west, east, south, north = _edge_zeros(mesh)
    faces = mesh.boundary_faces
    intensity = float(mesh.source_intensities[source_index])
    for k in mesh.source_faces[source_index]:
        c = int(faces.cell[k])
        i, j = c % mesh.nx, c // mesh.nx
        nx_, ny_ = faces.normal[k]
        if nx_ < -0.5:
            west[j] = intensity
        elif nx_ > 0.5:
            east[j] = intensity
        elif ny_ < -0.5:
            south[i] = intensity
        else:
            north[i] = intensity
    return west, east, south, north


@dataclass
class StreamingOperator:
    """Direction-blocked upwind discretization of (v.grad + attenuation).

    ``attenuation`` of ``None`` selects free streaming.  With
    ``adjoint=True`` the operator acts as the transpose: sweeps run along
    the reversed directions, which imposes the boundary condition on the
    outflow set instead of the inflow set.
    """

    mesh: Mesh
    angular: AngularGrid
    attenuation: np.ndarray | None = None
    adjoint: bool = False

    def __post_init__(self):
        n = self.mesh.n_cells
        if self.attenuation is None:
            self._sigma = np.zeros(n)
        else:
            self._sigma = np.ascontiguousarray(self.attenuation, dtype=np.float64)
            if self._sigma.shape != (n,):
                raise InvalidArgumentError("attenuation must have one value per cell")

    def _directions(self) -> np.ndarray:
        d = self.angular.directions
        return -d if self.adjoint else d

    def solve(self, source: np.ndarray, inflow: tuple[np.ndarray, ...] | None = None) -> np.ndarray:
        """Solve one transport system per direction; returns a flat phase vector."""
        mesh = self.mesh
        src = as_matrix(np.ascontiguousarray(source, dtype=np.float64), self.angular.ns)
        out = np.empty_like(src)
        west, east, south, north = inflow if inflow is not None else _edge_zeros(mesh)
        for l, (vx, vy) in enumerate(self._directions()):
            sweep_direction(
                mesh.nx, mesh.ny, mesh.hx, mesh.hy, vx, vy,
                self._sigma, src[l], west, east, south, north, out[l],
            )
        return out.ravel()

    def apply(self, values: np.ndarray) -> np.ndarray:
        """Apply the operator itself (zero boundary ghost values)."""
        mesh = self.mesh
        u = as_matrix(values, self.angular.ns)
        out = np.empty_like(u)
        for l, (vx, vy) in enumerate(self._directions()):
            ug = u[l].reshape(mesh.ny, mesh.nx)
            ax, ay = abs(vx) / mesh.hx, abs(vy) / mesh.hy
            r = (ax + ay + self._sigma) * u[l]
            rg = r.reshape(mesh.ny, mesh.nx)
            if vx > 0:
                rg[:, 1:] -= ax * ug[:, :-1]
            elif vx < 0:
                rg[:, :-1] -= ax * ug[:, 1:]
            if vy > 0:
                rg[1:, :] -= ay * ug[:-1, :]
            elif vy < 0:
                rg[:-1, :] -= ay * ug[1:, :]
            out[l] = rg.ravel()
        return out.ravel()


def solve_forward(
    field: OpticalField,
    angular: AngularGrid,
    mesh: Mesh,
    source_index: int,
    tol: float = 1e-12,
    max_sweeps: int = 5000,
) -> np.ndarray:
    """Solve the forward transport problem for one boundary source.

    Source iteration: alternate transport sweeps of
    ``(v.grad + sigma_t) u = sigma_s * (weighted kernel) u`` with updates
    of the scattering gain, until the contraction-extrapolated iteration
    error drops below ``tol`` relative to the solution norm.

    Returns the flat phase vector of the discrete solution.

    Raises
    ------
    IterationLimitError
        If ``max_sweeps`` source iterations do not reach ``tol``.
    """
    if field.n_cells != mesh.n_cells:
        raise InvalidArgumentError("field and mesh disagree on cell count")
    ns, n = angular.ns, mesh.n_cells
    sigma_t = field.sigma_t
    sigma_s = field.sigma_s
    kw = angular.weighted_kernel
    streaming = StreamingOperator(mesh, angular, attenuation=sigma_t)
    inflow = source_edge_values(mesh, source_index)

    u = np.zeros(ns * n)
    delta = norm = 0.0
    delta_prev: float | None = None
    for iteration in range(1, max_sweeps + 1):
        gain = sigma_s[None, :] * (kw @ as_matrix(u, ns))
        u_new = streaming.solve(gain.ravel(), inflow)
        delta = float(np.linalg.norm(u_new - u))
        norm = float(np.linalg.norm(u_new))
        u = u_new
        if delta == 0.0:
            logger.debug("forward solve: source %d converged in %d sweeps", source_index, iteration)
            return u
        if delta_prev is not None:
            rho = delta / delta_prev
            # geometric-tail estimate of the remaining error
            if rho < 1.0 and delta * rho / (1.0 - rho) <= tol * norm:
                logger.debug(
                    "forward solve: source %d converged in %d sweeps (rho=%.4f)",
                    source_index, iteration, rho,
                )
                return u
        delta_prev = delta
    raise IterationLimitError(
        f"forward solve did not converge in {max_sweeps} sweeps "
        f"(last update {delta:.3e}, relative {delta / max(norm, 1e-300):.3e})",
        residual=delta,
        iterations=max_sweeps,
    )


def measure_current(u: np.ndarray, mesh: Mesh, angular: AngularGrid) -> np.ndarray:
    """Outgoing photon current at each detector.

    ``J_d = sum over outgoing directions of eta_l * (v_l . n_d) * u(cell_d, v_l)``
    where ``cell_d`` is the boundary cell owning the detector's face.
    """
    um = as_matrix(u, angular.ns)
    faces = mesh.boundary_faces
    out = np.empty(mesh.n_detectors)
    for d, k in enumerate(mesh.detector_faces):
        n_d = faces.normal[k]
        m_d = int(faces.cell[k])
        dots = angular.directions @ n_d
        outgoing = dots > 0.0
        out[d] = (angular.weights[outgoing] * dots[outgoing]) @ um[outgoing, m_d]
    return out


def inflow_source(mesh: Mesh, angular: AngularGrid, source_index: int) -> np.ndarray:
    """Discrete boundary-source vector of the intermediate-variable equation.

    Entry (l, m) collects ``(v_l . n) * f * |face| / volume`` over the
    cell's inflow faces that belong to the source support; entries are
    nonzero only in boundary cells of the support and carry the sign of
    ``v . n`` (negative on the inflow side).
    """
    faces = mesh.boundary_faces
    ns, n = angular.ns, mesh.n_cells
    out = np.zeros((ns, n))
    intensity = float(mesh.source_intensities[source_index])
    for k in mesh.source_faces[source_index]:
        c = int(faces.cell[k])
        dots = angular.directions @ faces.normal[k]
        incoming = dots < 0.0
        out[incoming, c] += dots[incoming] * intensity * faces.length[k] / mesh.cell_volumes[c]
    return out.ravel()


def intermediate_field(
    u: np.ndarray,
    field: OpticalField,
    angular: AngularGrid,
    mesh: Mesh,
    source_index: int,
    mode: str,
) -> np.ndarray:
    """Form the intermediate variable from a forward solution.

    Absorption mode: ``sigma_s * K u - sigma_a * u - F`` with K the full
    scattering operator (weighted kernel sum minus identity); scattering
    mode drops the ``sigma_a * u`` term.
    """
    um = as_matrix(u, angular.ns)
    scat = angular.weighted_kernel @ um - um
    if mode == "absorption":
        core = field.sigma_s[None, :] * scat - field.sigma_a[None, :] * um
    elif mode == "scattering":
        core = field.sigma_s[None, :] * scat
    else:
        raise InvalidArgumentError(f"unknown mode {mode!r}")
    return core.ravel() - inflow_source(mesh, angular, source_index)


@dataclass
class GreenSet:
    """Boundary Green matrix plus the volume Green action for one variant.

    ``boundary[d, l*n + m]`` holds the adjoint Green value seen from
    detector d at (cell m, direction l).  The volume action is the exact
    blockwise inverse of the discrete streaming operator (quadrature
    weights already absorbed), so ``volume_apply(streaming.apply(u)) == u``
    for zero-inflow fields.
    """

    variant: str
    boundary: np.ndarray
    mesh: Mesh
    angular: AngularGrid
    attenuation: np.ndarray | None = None

    def volume_apply(self, w: np.ndarray, transpose: bool = False) -> np.ndarray:
        op = StreamingOperator(self.mesh, self.angular, self.attenuation, adjoint=transpose)
        return op.solve(w)


def _check_variant(variant: str, field: OpticalField | None) -> np.ndarray | None:
    if variant == VARIANT_FREE:
        return None
    if variant == VARIANT_ATTENUATED:
        if field is None:
            raise InvalidArgumentError("attenuated variant needs the absorption coefficient")
        return field.sigma_a
    raise InvalidArgumentError(f"unknown Green variant {variant!r}")


def assemble_green_boundary(
    variant: str,
    field: OpticalField | None,
    mesh: Mesh,
    angular: AngularGrid,
) -> np.ndarray:
    """Assemble the boundary Green matrix, one adjoint solve per detector row.

    For detector d the row is the adjoint streaming solution (no
    scattering) of a unit isotropic boundary source concentrated on the
    detector's face: for every outgoing direction the volumetric source is
    ``(v . n_d) / volume`` at the detector's cell; incoming-direction
    blocks are zero.
    """
    attenuation = _check_variant(variant, field)
    op = StreamingOperator(mesh, angular, attenuation, adjoint=True)
    faces = mesh.boundary_faces
    ns, n = angular.ns, mesh.n_cells
    gb = np.zeros((mesh.n_detectors, ns * n))
    source = np.zeros((ns, n))
    for d, k in enumerate(mesh.detector_faces):
        n_d = faces.normal[k]
        m_d = int(faces.cell[k])
        dots = angular.directions @ n_d
        outgoing = np.flatnonzero(dots > 0.0)
        source[:] = 0.0
        source[outgoing, m_d] = dots[outgoing] / mesh.cell_volumes[m_d]
        gb[d] = op.solve(source.ravel())
    return gb


def apply_green_volume(
    variant: str,
    field: OpticalField | None,
    mesh: Mesh,
    angular: AngularGrid,
    w: np.ndarray,
    transpose: bool = False,
) -> np.ndarray:
    """Apply the volume Green operator (or its transpose) to a phase vector.

    One streaming solve per direction with volumetric right-hand side
    ``w``; the dense Green matrix is never materialized.
    """
    attenuation = _check_variant(variant, field)
    op = StreamingOperator(mesh, angular, attenuation, adjoint=transpose)
    return op.solve(w)


def assemble_green_set(
    variant: str,
    field: OpticalField | None,
    mesh: Mesh,
    angular: AngularGrid,
) -> GreenSet:
    """Assemble the boundary matrix and bundle it with the volume action."""
    attenuation = _check_variant(variant, field)
    boundary = assemble_green_boundary(variant, field, mesh, angular)
    return GreenSet(
        variant=variant,
        boundary=boundary,
        mesh=mesh,
        angular=angular,
        attenuation=None if attenuation is None else np.array(attenuation),
    )
