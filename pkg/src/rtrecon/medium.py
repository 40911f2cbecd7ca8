"""Optical coefficient fields and phantom rasterization.

An :class:`OpticalField` holds the per-cell absorption and scattering
coefficients on a mesh.  Phantoms are described geometrically by a
:class:`PhantomSpec` (constant background plus a list of shaped
inclusions) and rasterized onto a mesh with a cell-center membership
test; later inclusions override earlier ones.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import shapely

from .errors import InvalidArgumentError
from .grid import Mesh

__all__ = [
    "OpticalField",
    "Disk",
    "Rectangle",
    "Polygon",
    "Inclusion",
    "PhantomSpec",
    "rasterize_phantom",
]


@dataclass(frozen=True)
class OpticalField:
    """Per-cell absorption and scattering coefficients (units 1/length)."""

    sigma_a: np.ndarray
    sigma_s: np.ndarray

    def __post_init__(self):
        sa = np.ascontiguousarray(self.sigma_a, dtype=np.float64)
        ss = np.ascontiguousarray(self.sigma_s, dtype=np.float64)
        if sa.ndim != 1 or ss.ndim != 1 or sa.shape != ss.shape:
            raise InvalidArgumentError("sigma_a and sigma_s must be 1-D and equally long")
        if not (np.all(sa > 0.0) and np.all(ss > 0.0)):
            raise InvalidArgumentError("optical coefficients must be strictly positive")
        sa.setflags(write=False)
        ss.setflags(write=False)
        object.__setattr__(self, "sigma_a", sa)
        object.__setattr__(self, "sigma_s", ss)

    @property
    def n_cells(self) -> int:
        return self.sigma_a.shape[0]

    @property
    def sigma_t(self) -> np.ndarray:
        """Total attenuation sigma_a + sigma_s."""
        return self.sigma_a + self.sigma_s

    def with_sigma_a(self, values: np.ndarray) -> "OpticalField":
        return replace(self, sigma_a=np.asarray(values, dtype=np.float64))

    def with_sigma_s(self, values: np.ndarray) -> "OpticalField":
        return replace(self, sigma_s=np.asarray(values, dtype=np.float64))

    def constant_like(self, sigma_a: float, sigma_s: float) -> "OpticalField":
        n = self.n_cells
        return OpticalField(np.full(n, sigma_a), np.full(n, sigma_s))


@dataclass(frozen=True)
class Disk:
    center: tuple[float, float]
    radius: float

    def contains(self, points: np.ndarray) -> np.ndarray:
        d2 = (points[:, 0] - self.center[0]) ** 2 + (points[:, 1] - self.center[1]) ** 2
        return d2 <= self.radius**2


@dataclass(frozen=True)
class Rectangle:
    """Axis-aligned rectangle [x0, x1] x [y0, y1]."""

    x0: float
    y0: float
    x1: float
    y1: float

    def contains(self, points: np.ndarray) -> np.ndarray:
        return (
            (points[:, 0] >= self.x0)
            & (points[:, 0] <= self.x1)
            & (points[:, 1] >= self.y0)
            & (points[:, 1] <= self.y1)
        )


@dataclass(frozen=True)
class Polygon:
    vertices: tuple[tuple[float, float], ...]

    def contains(self, points: np.ndarray) -> np.ndarray:
        poly = shapely.Polygon(self.vertices)
        # boundary counts as inside, matching Disk/Rectangle
        return shapely.intersects_xy(poly, points[:, 0], points[:, 1])


Shape = Disk | Rectangle | Polygon


@dataclass(frozen=True)
class Inclusion:
    """A shaped region overriding the background coefficients.

    ``value_a`` / ``value_s`` of ``None`` leave that coefficient at its
    current (background or earlier-inclusion) value.
    """

    shape: Shape
    value_a: float | None = None
    value_s: float | None = None


@dataclass(frozen=True)
class PhantomSpec:
    background_a: float
    background_s: float
    inclusions: tuple[Inclusion, ...] = ()

    def to_dict(self) -> dict:
        out = {
            "background_a": self.background_a,
            "background_s": self.background_s,
            "inclusions": [],
        }
        for inc in self.inclusions:
            s = inc.shape
            if isinstance(s, Disk):
                shape = {"shape": "disk", "center": list(s.center), "radius": s.radius}
            elif isinstance(s, Rectangle):
                shape = {"shape": "rect", "bounds": [s.x0, s.y0, s.x1, s.y1]}
            else:
                shape = {"shape": "polygon", "vertices": [list(v) for v in s.vertices]}
            shape["value_a"] = inc.value_a
            shape["value_s"] = inc.value_s
            out["inclusions"].append(shape)
        return out

    @staticmethod
    def from_dict(d: dict) -> "PhantomSpec":
        inclusions = []
        for raw in d.get("inclusions", []):
            kind = raw["shape"]
            if kind == "disk":
                shape = Disk(center=tuple(raw["center"]), radius=raw["radius"])
            elif kind == "rect":
                x0, y0, x1, y1 = raw["bounds"]
                shape = Rectangle(x0, y0, x1, y1)
            elif kind == "polygon":
                shape = Polygon(tuple(tuple(v) for v in raw["vertices"]))
            else:
                raise InvalidArgumentError(f"unknown inclusion shape {kind!r}")
            inclusions.append(
                Inclusion(shape=shape, value_a=raw.get("value_a"), value_s=raw.get("value_s"))
            )
        return PhantomSpec(
            background_a=float(d["background_a"]),
            background_s=float(d["background_s"]),
            inclusions=tuple(inclusions),
        )


def rasterize_phantom(spec: PhantomSpec, mesh: Mesh) -> OpticalField:
    """Rasterize a phantom onto a mesh by cell-center membership.

    A cell takes an inclusion's value when its center lies inside the
    inclusion's shape; inclusions are applied in order, so later ones
    override earlier ones.  An empty inclusion list yields the constant
    background field.
    """
    sigma_a = np.full(mesh.n_cells, float(spec.background_a))
    sigma_s = np.full(mesh.n_cells, float(spec.background_s))
    for inc in spec.inclusions:
        mask = inc.shape.contains(mesh.cell_centers)
        if inc.value_a is not None:
            sigma_a[mask] = inc.value_a
        if inc.value_s is not None:
            sigma_s[mask] = inc.value_s
    return OpticalField(sigma_a=sigma_a, sigma_s=sigma_s)
