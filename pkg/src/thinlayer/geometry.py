"""Layered domains, reference cell, truncated stripes and their structured grids.

All grids are tensor products of a periodic tangential axis and a
non-periodic vertical axis. Nodes are numbered ``i2 * n1 + i1`` with the
tangential index ``i1`` running fastest; the tangential node at ``x1 = period``
is identified with ``x1 = 0`` and is not stored.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np


class GeometryError(ValueError):
    pass


class Region(enum.IntEnum):
    BULK_MINUS = -1
    LAYER = 0
    BULK_PLUS = 1


def parse_epsilon(value) -> int:
    """Return ``1/eps`` as an integer, rejecting anything else.

    Accepts floats, ``Fraction`` and strings such as ``"1/8"``.
    """
    if isinstance(value, str):
        value = Fraction(value.strip())
    if isinstance(value, Fraction):
        if value <= 0 or value.numerator != 1:
            raise GeometryError(f"1/epsilon must be a positive integer, got epsilon={value}")
        return value.denominator
    value = float(value)
    if not value > 0:
        raise GeometryError(f"epsilon must be positive, got {value}")
    inv = 1.0 / value
    k = round(inv)
    if k < 1 or abs(inv - k) > 1e-9 * max(k, 1):
        raise GeometryError(f"1/epsilon must be a positive integer, got epsilon={value}")
    return int(k)


@dataclass(frozen=True)
class LayerGeometry:
    """Sigma x (-eps-H, H+eps) split into two bulk domains and a layer of half-thickness eps."""

    H: int
    sigma_len: int
    inv_eps: int
    n: int = 2

    def __post_init__(self):
        if self.n != 2:
            raise GeometryError("only n = 2 is implemented")
        if int(self.H) != self.H or self.H < 1:
            raise GeometryError(f"H must be a positive integer, got {self.H}")
        if int(self.sigma_len) != self.sigma_len or self.sigma_len < 1:
            raise GeometryError(f"sigma_len must be a positive integer, got {self.sigma_len}")
        if self.inv_eps < 2:
            raise GeometryError("epsilon must be at most 1/2")

    @classmethod
    def from_epsilon(cls, H: int, sigma_len: int, epsilon) -> "LayerGeometry":
        return cls(H=H, sigma_len=sigma_len, inv_eps=parse_epsilon(epsilon))

    @property
    def epsilon(self) -> float:
        return 1.0 / self.inv_eps

    @property
    def epsilon_fraction(self) -> Fraction:
        return Fraction(1, self.inv_eps)

    @property
    def layer_measure(self) -> float:
        return 2.0 * self.sigma_len / self.inv_eps

    @property
    def bulk_measure(self) -> float:
        return float(self.H * self.sigma_len)


@dataclass(frozen=True)
class CellGeometry:
    """Reference cell Z = Y x (-1, 1)."""

    resolution: int

    def __post_init__(self):
        if self.resolution < 2:
            raise GeometryError(f"cell resolution must be >= 2, got {self.resolution}")

    @property
    def measure(self) -> float:
        return 2.0


@dataclass(frozen=True)
class StripeGeometry:
    """Stripe Y x (0, L) (orientation +1) or Y x (-L, 0) (orientation -1)."""

    length: int
    resolution: int
    orientation: int = 1

    def __post_init__(self):
        if self.length < 2:
            raise GeometryError(f"stripe length must be >= 2 periods, got {self.length}")
        if self.resolution < 2:
            raise GeometryError(f"stripe resolution must be >= 2, got {self.resolution}")
        if self.orientation not in (1, -1):
            raise GeometryError("orientation must be +1 or -1")


@dataclass(frozen=True, eq=False)
class StructuredGrid:
    """Tensor grid with periodic tangential axis.

    ``x2`` holds the vertical node coordinates, ``regions`` one tag per
    vertical interval and ``markers`` maps names (``"S+"``, ``"S-"``,
    ``"Sigma"``, ``"bottom"``, ``"top"``) to vertical node indices.
    """

    n1: int
    period: float
    x2: np.ndarray
    regions: np.ndarray
    markers: dict = field(default_factory=dict)
    dim: int = 2

    def __post_init__(self):
        if self.n1 < 2:
            raise GeometryError("need at least two tangential nodes")
        x2 = np.asarray(self.x2, dtype=float)
        if x2.ndim != 1 or len(x2) < 2 or np.any(np.diff(x2) <= 0):
            raise GeometryError("vertical coordinates must be strictly increasing")
        if len(self.regions) != len(x2) - 1:
            raise GeometryError("need one region tag per vertical interval")
        x2.setflags(write=False)
        regions = np.asarray(self.regions, dtype=int)
        regions.setflags(write=False)
        object.__setattr__(self, "x2", x2)
        object.__setattr__(self, "regions", regions)

    @property
    def h1(self) -> float:
        return self.period / self.n1

    @property
    def x1(self) -> np.ndarray:
        return np.arange(self.n1) * self.h1

    @property
    def n2(self) -> int:
        """Number of vertical node rows."""
        return len(self.x2)

    @property
    def hy(self) -> np.ndarray:
        return np.diff(self.x2)

    @property
    def num_nodes(self) -> int:
        return self.n1 * self.n2

    @property
    def num_elements(self) -> int:
        return self.n1 * (self.n2 - 1)

    def node(self, i1, i2):
        return np.asarray(i2) * self.n1 + np.mod(i1, self.n1)

    def row(self, i2: int) -> np.ndarray:
        """Node indices of vertical row ``i2``."""
        return i2 * self.n1 + np.arange(self.n1)

    def right(self, nodes):
        nodes = np.asarray(nodes)
        return (nodes // self.n1) * self.n1 + (nodes % self.n1 + 1) % self.n1

    def left(self, nodes):
        nodes = np.asarray(nodes)
        return (nodes // self.n1) * self.n1 + (nodes % self.n1 - 1) % self.n1

    def coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        """Node coordinates ``(x1, x2)`` flattened in node order."""
        X1, X2 = np.meshgrid(self.x1, self.x2)
        return X1.ravel(), X2.ravel()

    def element_nodes(self) -> np.ndarray:
        """(num_elements, 4) local ordering (i1,i2), (i1+1,i2), (i1,i2+1), (i1+1,i2+1)."""
        i1 = np.tile(np.arange(self.n1), self.n2 - 1)
        i2 = np.repeat(np.arange(self.n2 - 1), self.n1)
        return np.stack(
            [self.node(i1, i2), self.node(i1 + 1, i2), self.node(i1, i2 + 1), self.node(i1 + 1, i2 + 1)],
            axis=1,
        )

    def element_rows(self) -> np.ndarray:
        return np.repeat(np.arange(self.n2 - 1), self.n1)

    def element_regions(self) -> np.ndarray:
        return self.regions[self.element_rows()]

    def element_areas(self) -> np.ndarray:
        return self.h1 * self.hy[self.element_rows()]

    def measure(self, region: Region | None = None) -> float:
        areas = self.element_areas()
        if region is None:
            return float(areas.sum())
        return float(areas[self.element_regions() == region].sum())

    def subgrid(self, j0: int, j1: int, shift: float = 0.0) -> "StructuredGrid":
        """Rows ``j0..j1`` (inclusive) with vertical coordinates moved by ``-shift``."""
        if not 0 <= j0 < j1 < self.n2:
            raise GeometryError(f"bad row range {j0}..{j1}")
        markers = {k: v - j0 for k, v in self.markers.items() if j0 <= v <= j1}
        return StructuredGrid(
            n1=self.n1,
            period=self.period,
            x2=self.x2[j0 : j1 + 1] - shift,
            regions=self.regions[j0:j1],
            markers=markers,
        )


def build_micro_grid(geom: LayerGeometry, per_period_resolution: int) -> StructuredGrid:
    """Conforming grid of Sigma x (-eps-H, H+eps) with uniform spacing eps/N.

    Uniform spacing makes the bulk shift by -+eps a pure relabeling of rows.
    """
    N = int(per_period_resolution)
    if N < 2:
        raise GeometryError(f"per-period resolution must be >= 2, got {per_period_resolution}")
    k = geom.inv_eps
    units = k * N  # grid lines per unit length
    n1 = geom.sigma_len * units
    below = geom.H * units + N  # intervals between the bottom and x2 = 0
    j = np.arange(2 * below + 1) - below
    x2 = j / units
    regions = np.where(j[:-1] < -N, Region.BULK_MINUS, np.where(j[:-1] >= N, Region.BULK_PLUS, Region.LAYER))
    markers = {"bottom": 0, "S-": below - N, "Sigma": below, "S+": below + N, "top": 2 * below}
    return StructuredGrid(n1=n1, period=float(geom.sigma_len), x2=x2, regions=regions, markers=markers)


def build_macro_grid(H: int, sigma_len: int, cells_per_unit: int) -> StructuredGrid:
    """Grid of Sigma x (-H, H) for the limit problem; row ``Sigma`` is the interface."""
    m = int(cells_per_unit)
    if m < 2:
        raise GeometryError("macro grid needs at least 2 cells per unit length")
    below = H * m
    j = np.arange(2 * below + 1) - below
    regions = np.where(j[:-1] < 0, Region.BULK_MINUS, Region.BULK_PLUS)
    markers = {"bottom": 0, "Sigma": below, "top": 2 * below}
    return StructuredGrid(n1=sigma_len * m, period=float(sigma_len), x2=j / m, regions=regions, markers=markers)


def build_cell_grid(cell: CellGeometry) -> StructuredGrid:
    R = cell.resolution
    j = np.arange(2 * R + 1) - R
    regions = np.full(2 * R, Region.LAYER)
    return StructuredGrid(n1=R, period=1.0, x2=j / R, regions=regions, markers={"S-": 0, "S+": 2 * R})


def build_stripe_grid(stripe: StripeGeometry) -> StructuredGrid:
    R, L = stripe.resolution, stripe.length
    n = L * R
    if stripe.orientation > 0:
        x2 = np.arange(n + 1) / R
        markers = {"trace": 0, "truncation": n}
        region = Region.BULK_PLUS
    else:
        x2 = (np.arange(n + 1) - n) / R
        markers = {"trace": n, "truncation": 0}
        region = Region.BULK_MINUS
    return StructuredGrid(n1=R, period=1.0, x2=x2, regions=np.full(n, region), markers=markers)
