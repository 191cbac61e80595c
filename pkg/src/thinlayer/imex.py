"""Semi-implicit Euler: implicit diffusion, explicit reaction.

    (M + dt K) c_new = M c_old + dt R(t_old, c_old)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import SolverError, solve_cg

STEP_TOL = 1e-12  # relative residual; keeps the solution error of a step near 1e-10


@dataclass(eq=False)
class ImexEuler:
    M: object
    K: object
    reaction: object  # callable (t, c) -> load vector, or None
    tol: float = STEP_TOL
    iterations: list = field(default_factory=list)
    _cache: dict = field(default_factory=dict)

    def system(self, dt: float):
        if dt not in self._cache:
            self._cache.clear()
            self._cache[dt] = (self.M + dt * self.K).tocsr()
        return self._cache[dt]

    def rhs(self, t: float, c: np.ndarray, dt: float) -> np.ndarray:
        b = self.M @ c
        if self.reaction is not None:
            b = b + dt * self.reaction(t, c)
        return b

    def step(self, t: float, c: np.ndarray, dt: float) -> np.ndarray:
        if not dt > 0:
            raise ValueError(f"time step must be positive, got {dt}")
        A = self.system(dt)
        b = self.rhs(t, c, dt)
        x, report = solve_cg(A, b, tol=self.tol, x0=c, constant_correction=True)
        if not report.converged:
            raise SolverError(f"time step at t={t:.6g}: CG residual {report.residual:.3e}", report)
        if not np.all(np.isfinite(x)):
            raise SolverError(f"non-finite values after the step from t={t:.6g}", report)
        self.iterations.append(report.iterations)
        return x


def time_grid(T: float, dt: float) -> tuple[int, float]:
    """Number of uniform steps covering [0, T] with step at most ``dt``."""
    n = max(1, int(np.ceil(T / dt - 1e-9)))
    return n, T / n


def default_dt(epsilon_min: float) -> float:
    return min(1e-3, epsilon_min**2 / 4.0)


def time_levels(T: float, dt: float, first_step: float | None = None) -> np.ndarray:
    """Time levels 0 = t_0 < ... < t_n = T with uniform spacing from ``time_grid``.

    With ``first_step`` the first interval [0, dt] is replaced by a geometric
    sequence dt/2^m, dt/2^(m-1), ..., dt whose smallest step is at most
    ``first_step``. Non-prepared initial data relax on a time scale much
    shorter than dt; the graded start resolves that transient.
    """
    n, dt = time_grid(T, dt)
    t = np.arange(n + 1) * dt
    t[-1] = T
    if first_step is None or first_step >= dt:
        return t
    m = int(np.ceil(np.log2(dt / first_step)))
    head = dt * 2.0 ** -np.arange(m, 0, -1)
    return np.concatenate([[0.0], head, t[1:]])


def graded_first_step(epsilon_min: float) -> float:
    """Smallest step of the graded start: well below the cell relaxation time eps^2/(4 pi^2 D)."""
    return epsilon_min**2 / 1024.0
