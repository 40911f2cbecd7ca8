"""Spatial finite-volume mesh and discrete-ordinates angular grid.

The spatial mesh is a uniform rectangular grid of cell-centered finite
volumes; cell ``(i, j)`` (x index ``i``, y index ``j``) has flat index
``m = j * nx + i``.  The boundary is parameterized by arc length starting
at the lower-left corner and proceeding counter-clockwise (bottom, right,
top, left); detectors and source supports both live on that
parameterization.

The angular grid is a midpoint rule on equispaced angles of the unit
circle together with a row-renormalized Henyey-Greenstein scattering
kernel.  All grid objects are immutable after construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64) if a.dtype.kind == "f" else np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class BoundaryFaces:
    """Per-face boundary data, ordered counter-clockwise from the lower-left corner.

    ``cell[k]`` is the flat index of the cell owning face ``k``; ``normal[k]``
    the outward unit normal; ``length[k]`` the face length; ``arc_start[k]``
    the arc-length coordinate of the face's starting point.  Face ``k``
    covers the half-open arc interval ``[arc_start[k], arc_start[k] + length[k])``.
    """

    cell: np.ndarray
    normal: np.ndarray
    length: np.ndarray
    arc_start: np.ndarray

    @property
    def n_faces(self) -> int:
        return self.cell.shape[0]

    @property
    def midpoint_arc(self) -> np.ndarray:
        return self.arc_start + 0.5 * self.length


@dataclass(frozen=True)
class Mesh:
    """Uniform 2-D finite-volume mesh with detectors and boundary sources."""

    nx: int
    ny: int
    domain: tuple[tuple[float, float], tuple[float, float]]
    cell_centers: np.ndarray
    cell_volumes: np.ndarray
    boundary_faces: BoundaryFaces
    detector_positions: np.ndarray
    detector_faces: np.ndarray
    source_faces: tuple[np.ndarray, ...]
    source_intensities: np.ndarray

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def n_detectors(self) -> int:
        return self.detector_positions.shape[0]

    @property
    def n_sources(self) -> int:
        return len(self.source_faces)

    @property
    def hx(self) -> float:
        (x0, x1), _ = self.domain
        return (x1 - x0) / self.nx

    @property
    def hy(self) -> float:
        _, (y0, y1) = self.domain
        return (y1 - y0) / self.ny

    @property
    def perimeter(self) -> float:
        (x0, x1), (y0, y1) = self.domain
        return 2.0 * ((x1 - x0) + (y1 - y0))

    def cell_index(self, i: int, j: int) -> int:
        return j * self.nx + i


@dataclass(frozen=True)
class AngularGrid:
    """Discrete-ordinates direction set with quadrature weights and kernel.

    ``kernel[l, lp]`` holds the scattering kernel value k(v_l, v_lp); the
    quadrature-weighted form used by the discrete scattering sum is
    ``weighted_kernel`` with rows summing to one.
    """

    directions: np.ndarray
    weights: np.ndarray
    kernel: np.ndarray
    g: float
    weighted_kernel: np.ndarray = field(init=False)

    def __post_init__(self):
        wk = _readonly(self.kernel * self.weights[None, :])
        object.__setattr__(self, "weighted_kernel", wk)

    @property
    def ns(self) -> int:
        return self.directions.shape[0]


def _boundary_faces(nx: int, ny: int, domain) -> BoundaryFaces:
    (x0, x1), (y0, y1) = domain
    hx = (x1 - x0) / nx
    hy = (y1 - y0) / ny
    lx, ly = x1 - x0, y1 - y0

    cells, normals, lengths, arcs = [], [], [], []
    # bottom edge, left to right
    for i in range(nx):
        cells.append(i)
        normals.append((0.0, -1.0))
        lengths.append(hx)
        arcs.append(i * hx)
    # right edge, bottom to top
    for j in range(ny):
        cells.append(j * nx + (nx - 1))
        normals.append((1.0, 0.0))
        lengths.append(hy)
        arcs.append(lx + j * hy)
    # top edge, right to left
    for i in range(nx - 1, -1, -1):
        cells.append((ny - 1) * nx + i)
        normals.append((0.0, 1.0))
        lengths.append(hx)
        arcs.append(lx + ly + (nx - 1 - i) * hx)
    # left edge, top to bottom
    for j in range(ny - 1, -1, -1):
        cells.append(j * nx)
        normals.append((-1.0, 0.0))
        lengths.append(hy)
        arcs.append(2 * lx + ly + (ny - 1 - j) * hy)

    return BoundaryFaces(
        cell=_readonly(np.asarray(cells, dtype=np.int64)),
        normal=_readonly(np.asarray(normals)),
        length=_readonly(np.asarray(lengths)),
        arc_start=_readonly(np.asarray(arcs)),
    )


def _arc_to_point(s: float, domain) -> tuple[float, float]:
    (x0, x1), (y0, y1) = domain
    lx, ly = x1 - x0, y1 - y0
    s = s % (2 * (lx + ly))
    if s < lx:
        return (x0 + s, y0)
    s -= lx
    if s < ly:
        return (x1, y0 + s)
    s -= ly
    if s < lx:
        return (x1 - s, y1)
    s -= lx
    return (x0, y1 - s)


def build_mesh(
    nx: int,
    ny: int,
    domain: tuple[tuple[float, float], tuple[float, float]] = ((0.0, 2.0), (0.0, 2.0)),
    n_detectors: int = 80,
    n_sources: int = 8,
) -> Mesh:
    """Build the uniform mesh with equispaced detectors and equal-arc sources.

    Detectors sit at ``n_detectors`` equispaced arc-length positions,
    starting at the lower-left corner and walking counter-clockwise; each
    detector owns the boundary face whose midpoint is nearest along the
    perimeter, with ties (a detector exactly on a shared face boundary)
    resolved to the face containing it under half-open arc intervals.
    Sources partition the boundary into ``n_sources`` contiguous
    equal-arc segments with constant unit intensity; a face belongs to
    the segment containing its midpoint.
    """
    if nx < 2 or ny < 2:
        raise InvalidArgumentError(f"need nx, ny >= 2, got {nx} x {ny}")
    if n_detectors < 1 or n_sources < 1:
        raise InvalidArgumentError("need at least one detector and one source")
    (x0, x1), (y0, y1) = domain
    if not (x1 > x0 and y1 > y0):
        raise InvalidArgumentError(f"degenerate domain {domain}")

    hx = (x1 - x0) / nx
    hy = (y1 - y0) / ny
    xs = x0 + (np.arange(nx) + 0.5) * hx
    ys = y0 + (np.arange(ny) + 0.5) * hy
    gx, gy = np.meshgrid(xs, ys)  # row j, column i
    centers = np.column_stack([gx.ravel(), gy.ravel()])
    volumes = np.full(nx * ny, hx * hy)

    faces = _boundary_faces(nx, ny, domain)
    perimeter = 2 * ((x1 - x0) + (y1 - y0))

    spacing = perimeter / n_detectors
    det_arcs = np.arange(n_detectors) * spacing
    det_pos = np.asarray([_arc_to_point(s, domain) for s in det_arcs])
    mids = faces.midpoint_arc
    det_faces = np.empty(n_detectors, dtype=np.int64)
    for d, s in enumerate(det_arcs):
        dist = np.abs(mids - s)
        dist = np.minimum(dist, perimeter - dist)
        candidates = np.flatnonzero(dist <= dist.min() + 1e-9 * perimeter)
        if candidates.size == 1:
            det_faces[d] = candidates[0]
        else:
            # equidistant midpoints: the detector sits on a shared face
            # boundary; half-open arc intervals put it in the later face
            offsets = (s - faces.arc_start[candidates]) % perimeter
            det_faces[d] = candidates[np.argmin(offsets)]

    seg = perimeter / n_sources
    src_of_face = np.minimum((faces.midpoint_arc / seg).astype(np.int64), n_sources - 1)
    source_faces = tuple(
        _readonly(np.flatnonzero(src_of_face == q)) for q in range(n_sources)
    )

    return Mesh(
        nx=nx,
        ny=ny,
        domain=((float(x0), float(x1)), (float(y0), float(y1))),
        cell_centers=_readonly(centers),
        cell_volumes=_readonly(volumes),
        boundary_faces=faces,
        detector_positions=_readonly(det_pos),
        detector_faces=_readonly(det_faces),
        source_faces=source_faces,
        source_intensities=_readonly(np.ones(n_sources)),
    )


def henyey_greenstein(cos_angle: np.ndarray | float, g: float) -> np.ndarray:
    """Unnormalized planar Henyey-Greenstein kernel value at cos(v, v')."""
    return (1.0 - g * g) / (1.0 + g * g - 2.0 * g * np.asarray(cos_angle))


def build_angular(ns: int, g: float = 0.0) -> AngularGrid:
    """Build the midpoint-rule direction set and row-normalized HG kernel.

    Directions are ``v_l = (cos t_l, sin t_l)`` with ``t_l = 2*pi*(l + 1/2)/ns``
    and uniform weights ``1/ns``; each kernel row is rescaled so that the
    weighted row sum is exactly one.
    """
    if ns < 4 or ns % 2 != 0:
        raise InvalidArgumentError(f"need even ns >= 4, got {ns}")
    if not -1.0 < g < 1.0:
        raise InvalidArgumentError(f"anisotropy factor must lie in (-1, 1), got {g}")

    theta = 2.0 * np.pi * (np.arange(ns) + 0.5) / ns
    directions = np.column_stack([np.cos(theta), np.sin(theta)])
    weights = np.full(ns, 1.0 / ns)
    # fix up the last weight so the stored sum is exactly one
    for _ in range(4):
        gap = 1.0 - weights.sum()
        if gap == 0.0:
            break
        weights[-1] += gap

    cosvv = np.clip(directions @ directions.T, -1.0, 1.0)
    raw = henyey_greenstein(cosvv, g)
    row_sums = raw @ weights
    kernel = raw / row_sums[:, None]

    return AngularGrid(
        directions=_readonly(directions),
        weights=_readonly(weights),
        kernel=_readonly(kernel),
        g=float(g),
    )
