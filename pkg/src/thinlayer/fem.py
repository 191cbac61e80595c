"""Bilinear (Q1) finite elements on :class:`StructuredGrid` with 2x2 Gauss quadrature.

Everything is expressed through sparse quadrature-point operators: ``B``
maps nodal values to values at the quadrature points, ``G1``/``G2`` map them
to the two gradient components. Mass and stiffness matrices are then
``B.T W B`` and ``sum_ab Ga.T W D_ab Gb`` with ``W`` the quadrature weights.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .geometry import StructuredGrid

_G = 0.5 / np.sqrt(3.0)
GAUSS_1D = np.array([0.5 - _G, 0.5 + _G])

# reference quadrature points (xi, eta) on [0,1]^2, eta-major to match node order
QUAD_XI = np.array([GAUSS_1D[0], GAUSS_1D[1], GAUSS_1D[0], GAUSS_1D[1]])
QUAD_ETA = np.array([GAUSS_1D[0], GAUSS_1D[0], GAUSS_1D[1], GAUSS_1D[1]])


def _shape(xi, eta):
    return np.stack([(1 - xi) * (1 - eta), xi * (1 - eta), (1 - xi) * eta, xi * eta], axis=-1)


def _shape_dxi(xi, eta):
    return np.stack([-(1 - eta), (1 - eta), -eta, eta], axis=-1)


def _shape_deta(xi, eta):
    return np.stack([-(1 - xi), -xi, (1 - xi), xi], axis=-1)


@dataclass(frozen=True, eq=False)
class Q1Space:
    grid: StructuredGrid

    @cached_property
    def element_nodes(self) -> np.ndarray:
        return self.grid.element_nodes()

    @property
    def num_quad(self) -> int:
        return 4 * self.grid.num_elements

    @cached_property
    def quad_points(self) -> tuple[np.ndarray, np.ndarray]:
        """Physical coordinates of all quadrature points, shape (num_elements*4,)."""
        g = self.grid
        rows = g.element_rows()
        i1 = np.tile(np.arange(g.n1), g.n2 - 1)
        x1 = (i1[:, None] + QUAD_XI[None, :]) * g.h1
        x2 = g.x2[rows][:, None] + QUAD_ETA[None, :] * g.hy[rows][:, None]
        return x1.ravel(), x2.ravel()

    @cached_property
    def quad_local(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(element column i1, element row i2, quadrature index) for each quadrature point."""
        g = self.grid
        i1 = np.repeat(np.tile(np.arange(g.n1), g.n2 - 1), 4)
        i2 = np.repeat(g.element_rows(), 4)
        q = np.tile(np.arange(4), g.num_elements)
        return i1, i2, q

    @cached_property
    def weights(self) -> np.ndarray:
        return np.repeat(self.grid.element_areas() / 4.0, 4)

    def _operator(self, local: np.ndarray) -> sp.csr_matrix:
        # local: (num_elements, 4 quad, 4 nodes)
        ne = self.grid.num_elements
        rows = np.repeat(np.arange(4 * ne), 4)
        cols = np.repeat(self.element_nodes, 4, axis=0).ravel()
        return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(4 * ne, self.grid.num_nodes))

    @cached_property
    def B(self) -> sp.csr_matrix:
        ne = self.grid.num_elements
        local = np.broadcast_to(_shape(QUAD_XI, QUAD_ETA), (ne, 4, 4))
        return self._operator(local)

    @cached_property
    def G1(self) -> sp.csr_matrix:
        ne = self.grid.num_elements
        local = np.broadcast_to(_shape_dxi(QUAD_XI, QUAD_ETA) / self.grid.h1, (ne, 4, 4))
        return self._operator(local)

    @cached_property
    def G2(self) -> sp.csr_matrix:
        hy = self.grid.hy[self.grid.element_rows()]
        local = _shape_deta(QUAD_XI, QUAD_ETA)[None, :, :] / hy[:, None, None]
        return self._operator(local)

    def element_weight_at_quad(self, element_weight) -> np.ndarray:
        w = np.broadcast_to(np.asarray(element_weight, dtype=float), (self.grid.num_elements,))
        return np.repeat(w, 4)

    def mass(self, element_weight=1.0) -> sp.csr_matrix:
        w = self.weights * self.element_weight_at_quad(element_weight)
        return (self.B.T @ sp.diags(w) @ self.B).tocsr()

    def stiffness(self, coeff, element_weight=1.0) -> sp.csr_matrix:
        """Stiffness for a coefficient given per quadrature point.

        ``coeff`` is a scalar, an array of shape (num_quad,) (isotropic) or
        (num_quad, 2, 2) (tensor), or a constant 2x2 matrix.
        """
        w = self.weights * self.element_weight_at_quad(element_weight)
        D = tensor_at_quad(coeff, self.num_quad)
        G = (self.G1, self.G2)
        K = None
        for a in range(2):
            for b in range(2):
                dab = D[:, a, b]
                if not np.any(dab):
                    continue
                term = G[a].T @ sp.diags(w * dab) @ G[b]
                K = term if K is None else K + term
        if K is None:
            K = sp.csr_matrix((self.grid.num_nodes, self.grid.num_nodes))
        K = K.tocsr()
        K.sum_duplicates()
        K.sort_indices()
        return K

    def load(self, values_at_quad, element_weight=1.0) -> np.ndarray:
        """``int f phi_i`` for ``f`` sampled at the quadrature points."""
        w = self.weights * self.element_weight_at_quad(element_weight)
        return self.B.T @ (w * values_at_quad)

    def nodal_weights(self, element_weight=1.0) -> np.ndarray:
        """``int phi_i``; used for weighted means."""
        return self.load(np.ones(self.num_quad), element_weight)

    def gradient(self, u) -> np.ndarray:
        """Gradient at quadrature points, shape (num_quad, 2)."""
        return np.stack([self.G1 @ u, self.G2 @ u], axis=1)


def tensor_at_quad(coeff, nq: int) -> np.ndarray:
    c = np.asarray(coeff, dtype=float)
    if c.ndim == 0:
        return np.broadcast_to(c * np.eye(2), (nq, 2, 2))
    if c.shape == (2, 2):
        return np.broadcast_to(c, (nq, 2, 2))
    if c.shape == (nq,):
        return c[:, None, None] * np.eye(2)[None]
    if c.shape == (nq, 2, 2):
        return c
    raise ValueError(f"cannot interpret coefficient of shape {c.shape}")


@dataclass(frozen=True, eq=False)
class PeriodicLine:
    """Periodic P1 space on n nodes with spacing h (the interface Sigma or a cell boundary)."""

    n: int
    h: float

    @cached_property
    def B(self) -> sp.csr_matrix:
        idx = np.arange(self.n)
        rows = np.repeat(np.arange(2 * self.n), 2)
        cols = np.stack([idx, (idx + 1) % self.n], axis=1)
        cols = np.repeat(cols, 2, axis=0).ravel()
        vals = np.tile(np.array([[1 - GAUSS_1D[0], GAUSS_1D[0]], [1 - GAUSS_1D[1], GAUSS_1D[1]]]), (self.n, 1)).ravel()
        return sp.csr_matrix((vals, (rows, cols)), shape=(2 * self.n, self.n))

    @cached_property
    def G(self) -> sp.csr_matrix:
        idx = np.arange(self.n)
        rows = np.repeat(np.arange(2 * self.n), 2)
        cols = np.repeat(np.stack([idx, (idx + 1) % self.n], axis=1), 2, axis=0).ravel()
        vals = np.tile(np.array([-1.0, 1.0]) / self.h, 2 * self.n)
        return sp.csr_matrix((vals, (rows, cols)), shape=(2 * self.n, self.n))

    @property
    def weights(self) -> np.ndarray:
        return np.full(2 * self.n, self.h / 2.0)

    def quad_points(self, offset: float = 0.0) -> np.ndarray:
        return ((np.arange(self.n)[:, None] + GAUSS_1D[None, :]) * self.h).ravel() + offset

    def mass(self) -> sp.csr_matrix:
        return (self.B.T @ sp.diags(self.weights) @ self.B).tocsr()

    def stiffness(self, coeff: float = 1.0) -> sp.csr_matrix:
        return (self.G.T @ sp.diags(self.weights * coeff) @ self.G).tocsr()

    def load(self, values_at_quad) -> np.ndarray:
        return self.B.T @ (self.weights * values_at_quad)


def embed(n_total: int, index: np.ndarray) -> sp.csr_matrix:
    """Sparse injection from ``len(index)`` local unknowns into ``n_total`` global ones."""
    m = len(index)
    return sp.csr_matrix((np.ones(m), (index, np.arange(m))), shape=(n_total, m))
