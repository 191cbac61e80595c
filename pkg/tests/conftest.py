from pathlib import Path

import pytest

from thinlayer.scenario import load_scenario, parse_scenario

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"


def scenario_text(D_M="1", f="0", g="0", init_plus="1", init_minus="1", init_M="1", T=0.1, extra="",
                  D_plus="[[1.0, 0.0], [0.0, 1.0]]", D_minus="[[1.0, 0.0], [0.0, 1.0]]"):
    return f"""
[coefficients]
D_plus = {D_plus}
D_minus = {D_minus}
D_M = "{D_M}"

[reactions]
f_plus = "{f}"
f_minus = "{f}"
g_M = "{g}"

[initial]
init_plus = "{init_plus}"
init_minus = "{init_minus}"
init_M = "{init_M}"

[time]
T = {T}
{extra}
"""


def make_scenario(**kw):
    return parse_scenario(scenario_text(**kw))


@pytest.fixture(scope="session")
def accept_scenario():
    return load_scenario(SCENARIOS / "accept.toml")


def hand_assemble(grid, d1, d2, weight=None):
    """Dense Q1 mass and stiffness by explicit element loops.

    ``d1``, ``d2`` are per-element diagonal diffusion entries and ``weight``
    an optional per-element factor. Uses the closed-form tensor-product
    element matrices, so it shares no code with the quadrature assembly.
    """
    import numpy as np

    n = grid.num_nodes
    M = np.zeros((n, n))
    K = np.zeros((n, n))
    hx = grid.h1
    nodes = grid.element_nodes()
    rows = grid.element_rows()
    w = np.ones(len(nodes)) if weight is None else np.broadcast_to(weight, (len(nodes),))
    d1 = np.broadcast_to(d1, (len(nodes),))
    d2 = np.broadcast_to(d2, (len(nodes),))
    for e, loc in enumerate(nodes):
        hy = grid.x2[rows[e] + 1] - grid.x2[rows[e]]
        mx = hx / 6 * np.array([[2, 1], [1, 2]])
        my = hy / 6 * np.array([[2, 1], [1, 2]])
        kx = np.array([[1, -1], [-1, 1]]) / hx
        ky = np.array([[1, -1], [-1, 1]]) / hy
        Me = np.kron(my, mx)
        Ke = d1[e] * np.kron(my, kx) + d2[e] * np.kron(ky, mx)
        for a in range(4):
            for b in range(4):
                M[loc[a], loc[b]] += w[e] * Me[a, b]
                K[loc[a], loc[b]] += w[e] * Ke[a, b]
    return M, K


def hand_line(n, h):
    """Dense periodic P1 mass and stiffness on n nodes."""
    import numpy as np

    M = np.zeros((n, n))
    K = np.zeros((n, n))
    for i in range(n):
        loc = (i, (i + 1) % n)
        for a in range(2):
            for b in range(2):
                M[loc[a], loc[b]] += h / 6 * (2 if a == b else 1)
                K[loc[a], loc[b]] += (1 if a == b else -1) / h
    return M, K
