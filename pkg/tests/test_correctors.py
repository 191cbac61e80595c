import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_scenario
from thinlayer.cell_solver import solve_auxiliary
from thinlayer.correctors import (
    approximation_operator,
    build_capp1,
    build_capp2,
    cutoff_psi,
    interface_jumps,
    macro_sampling_matrix,
    periodic_sample,
)
from thinlayer.geometry import CellGeometry, StripeGeometry, build_cell_grid, build_stripe_grid
from thinlayer.macro_solver import MacroProblem
from thinlayer.micro_solver import MicroProblem, fixed_domains

EPS = "1/4"
N = 4


def setup(D_M="2 + sin(2*pi*y1)"):
    s = make_scenario(D_M=D_M)
    aux = solve_auxiliary(s.layer_tensor, s.D_plus, s.D_minus, N, 8)
    macro = MacroProblem(s, aux.D_star, 16)
    micro = MicroProblem(s, EPS, N)
    domains = fixed_domains(micro.grid, micro.geom)
    return s, aux, macro, micro, domains


@pytest.fixture(scope="module")
def laminate():
    return setup()


def smooth_macro(macro):
    X1, X2 = macro.grid.coordinates()
    return np.cos(2 * np.pi * X1) * (1 + X2) + 0.3 * np.sin(4 * np.pi * X1)


# ---------------------------------------------------------------- cutoff and sampling


def test_cutoff_values():
    H = 1.0
    assert cutoff_psi(0.0, H) == 1.0
    assert cutoff_psi(H, H) == 0.0 and cutoff_psi(-H, H) == 0.0
    assert cutoff_psi(H / 2, H) == pytest.approx(0.5, abs=1e-15)
    assert cutoff_psi(H / 4, H) == 1.0 and cutoff_psi(0.75 * H, H) == 0.0


@given(st.floats(-1.0, 1.0), st.floats(-1.0, 1.0))
def test_cutoff_monotone_even_bounded(a, b):
    pa, pb = cutoff_psi(a, 1.0), cutoff_psi(b, 1.0)
    assert 0.0 <= pa <= 1.0 and cutoff_psi(-a, 1.0) == pa
    if abs(a) <= abs(b):
        assert pa >= pb


def test_periodic_sample_examples():
    g = build_cell_grid(CellGeometry(4))
    Y1, Y2 = g.coordinates()
    eps = 0.25
    assert periodic_sample(g, np.full(g.num_nodes, 2.5), [0.37 / eps], [0.1 / eps])[0] == pytest.approx(2.5)
    assert periodic_sample(g, Y1, [eps * 0.25 / eps], [0.0])[0] == pytest.approx(0.25, abs=1e-15)
    assert periodic_sample(g, np.sin(2 * np.pi * Y1), [1.25 * eps / eps], [0.0])[0] == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ValueError):
        periodic_sample(g, Y1, [0.1], [1.5])


def test_periodic_sample_is_bilinear_between_nodes():
    g = build_cell_grid(CellGeometry(4))
    Y1, Y2 = g.coordinates()
    f = 1 + 2 * Y2  # linear in y2, constant in y1: reproduced exactly
    assert periodic_sample(g, f, [0.13], [0.31])[0] == pytest.approx(1.62)


def test_stripe_sampling_extends_constantly():
    g = build_stripe_grid(StripeGeometry(2, 4, +1))
    Y1, Y2 = g.coordinates()
    v = periodic_sample(g, Y2, [0.3, 0.3], [1.5, 7.0], clamp=True)
    np.testing.assert_allclose(v, [1.5, 2.0])


def test_macro_sampling_injects_at_nodes_and_is_cubic_exact():
    m = MacroProblem(make_scenario(), [[1.0]], 8)
    X1, X2 = m.grid.coordinates()
    P = macro_sampling_matrix(m.grid, X1, X2)
    np.testing.assert_allclose(P.toarray(), np.eye(m.grid.num_nodes), atol=1e-15)
    # trigonometric data: cubic interpolation error at h = 1/8 is small
    c = np.sin(2 * np.pi * X1)
    x = np.array([0.03, 0.51, 0.97])
    v = macro_sampling_matrix(m.grid, x, np.zeros(3)) @ c
    np.testing.assert_allclose(v, np.sin(2 * np.pi * x), atol=5e-3)


# ---------------------------------------------------------------- approximations


def test_constant_macro_gives_constant_approximations(laminate):
    s, aux, macro, micro, dom = laminate
    c0 = np.full(macro.grid.num_nodes, 1.7)
    for build in (build_capp1, build_capp2):
        f = build(c0, macro.grid, macro.D1, aux, dom, micro.epsilon, s.H)
        for part in (f.plus, f.minus, f.layer):
            np.testing.assert_allclose(part, 1.7, atol=1e-13)


def test_identity_layer_gives_sampled_macro():
    s, aux, macro, micro, dom = setup(D_M="1")
    c0 = smooth_macro(macro)
    ref = approximation_operator(macro.grid, macro.D1, aux, dom, micro.epsilon, s.H, 1)
    for build in (build_capp1, build_capp2):
        f = build(c0, macro.grid, macro.D1, aux, dom, micro.epsilon, s.H)
        X1, X2 = dom.plus.coordinates()
        np.testing.assert_allclose(f.plus, macro_sampling_matrix(macro.grid, X1, X2) @ c0, atol=1e-12)
        X1, _ = dom.layer.coordinates()
        np.testing.assert_allclose(f.layer, macro_sampling_matrix(macro.grid, X1, 0 * X1) @ c0, atol=1e-12)
        np.testing.assert_allclose(f.minus, ref.minus @ c0, atol=1e-12)


def test_order_one_bulk_is_macro_at_nodes(laminate):
    s, aux, macro, micro, dom = laminate
    c0 = smooth_macro(macro)
    f = build_capp1(c0, macro.grid, macro.D1, aux, dom, micro.epsilon, s.H)
    # the macro grid (1/16) is a subgrid of the micro grid (1/16): bulk equals c0 node for node
    np.testing.assert_allclose(f.plus, c0[macro.grid.markers["Sigma"] * macro.grid.n1 :], atol=1e-14)


def test_far_field_orders_agree(laminate):
    s, aux, macro, micro, dom = laminate
    c0 = smooth_macro(macro)
    f1 = build_capp1(c0, macro.grid, macro.D1, aux, dom, micro.epsilon, s.H)
    f2 = build_capp2(c0, macro.grid, macro.D1, aux, dom, micro.epsilon, s.H)
    for g, a, b in ((dom.plus, f1.plus, f2.plus), (dom.minus, f1.minus, f2.minus)):
        _, X2 = g.coordinates()
        far = np.abs(X2) >= 0.75 * s.H
        assert far.any()
        np.testing.assert_array_equal(a[far], b[far])
        assert np.max(np.abs(a[~far] - b[~far])) > 0


@settings(max_examples=10, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3))
def test_linearity(laminate, a, b):
    s, aux, macro, micro, dom = laminate
    X1, X2 = macro.grid.coordinates()
    u, v = smooth_macro(macro), np.sin(2 * np.pi * X1) * X2**2
    op = approximation_operator(macro.grid, macro.D1, aux, dom, micro.epsilon, s.H, 2)
    lhs, fu, fv = op.apply(a * u + b * v), op.apply(u), op.apply(v)
    for part in ("plus", "minus", "layer"):
        np.testing.assert_allclose(getattr(lhs, part), a * getattr(fu, part) + b * getattr(fv, part), atol=1e-12)


def test_first_order_jump_bound(laminate):
    s, aux, macro, micro, dom = laminate
    c0 = smooth_macro(macro)
    f = build_capp1(c0, macro.grid, macro.D1, aux, dom, micro.epsilon, s.H)
    jumps = interface_jumps(f, dom)
    w = aux.cells[0]
    bound = micro.epsilon * max(np.max(np.abs(w.trace(+1))), np.max(np.abs(w.trace(-1)))) * np.max(np.abs(macro.D1 @ c0))
    assert 0 < max(jumps.values()) <= bound * (1 + 1e-12)


def test_layer_spot_value_by_hand(laminate):
    """At a layer node on the macro grid the order-1 value is c0 + eps w1(x/eps) D1 c0."""
    s, aux, macro, micro, dom = laminate
    X1m, _ = macro.grid.coordinates()
    c0 = np.sin(2 * np.pi * X1m)
    f = build_capp1(c0, macro.grid, macro.D1, aux, dom, micro.epsilon, s.H)
    # layer node at tangential index 3 (x1 = 3/16) and vertical row 2 (x2 = -1/4 + 2/16 = -1/8)
    i1, row = 3, 2
    x1 = i1 / 16
    y1, y2 = (x1 / 0.25) % 1.0, (-0.125) / 0.25
    g = aux.cells.grid
    w_node = aux.cells[0].w[g.node(round(y1 * N), round((y2 + 1) * N))]
    s0 = macro.grid.markers["Sigma"] * macro.grid.n1
    h = macro.grid.h1
    d = (np.sin(2 * np.pi * (x1 + h)) - np.sin(2 * np.pi * (x1 - h))) / (2 * h)
    expected = np.sin(2 * np.pi * x1) + 0.25 * w_node * d
    assert f.layer[row * dom.layer.n1 + i1] == pytest.approx(expected, abs=1e-13)
    assert c0[s0 + i1] == pytest.approx(np.sin(2 * np.pi * x1))
