import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from afred.family import evaluate
from afred.fredholm import kernel_cokernel
from afred.models import (FAMILIES, MAX_STRIP_DIM, StripGrid, get_family, make_classical_parabola, make_cubic,
                          make_discrete_strip, make_squared_map, make_toy_shrink, register_family,
                          strip_aux_forward, strip_aux_inverse, strip_boundary_defect)

GRID = StripGrid(N_s=8, N_t=4, d=2)


@settings(max_examples=30, deadline=None)
@given(st.floats(-0.35, 0.35), st.floats(-0.35, 0.35))
def test_squared_map_is_complex_squaring(x, y):
    z = complex(x, y) ** 2
    np.testing.assert_allclose(evaluate(make_squared_map(), (), [x, y]), [z.real, z.imag], atol=1e-15)


def test_small_model_values():
    assert evaluate(make_classical_parabola(), (), [0.5, 0.0])[0] == pytest.approx(-0.25)
    assert evaluate(make_cubic(), (), [-0.5])[0] == pytest.approx(-0.125)
    with pytest.raises(ValueError):
        make_toy_shrink(tau_max=0.1)
    assert make_toy_shrink(broken=True).n_target == 3


def test_strip_zero_and_constant_fields():
    fam = make_discrete_strip(GRID)
    assert fam.n_domain == fam.n_target == 80 and fam.index == 0
    assert fam.linear and fam.grid is GRID
    const = np.tile(np.array([0.7, 0.0]), (GRID.N_t + 1) * GRID.N_s)
    t_const = np.tile(np.outer(np.sin(2 * np.pi * np.arange(GRID.N_s) / GRID.N_s), [1.0, 0.0]),
                      (GRID.N_t + 1, 1)).ravel()
    for e in (0.0, 0.3, 1.0):
        np.testing.assert_array_equal(evaluate(fam, [e], np.zeros(fam.n_domain)), 0.0)
        np.testing.assert_allclose(evaluate(fam, [e], const), 0.0, atol=1e-14)
    np.testing.assert_allclose(evaluate(fam, [0.0], t_const), 0.0, atol=1e-14)
    assert np.linalg.norm(evaluate(fam, [0.5], t_const)) > 0.1


def test_strip_kernel_and_declared_cokernel():
    kc = kernel_cokernel(make_discrete_strip(GRID))
    # kernel at eps = 0: t-constant fields in Lambda0, one coefficient per s node
    assert (kc.dim_K, kc.dim_C) == (GRID.N_s, GRID.N_s)
    assert kc.cokernel_source == "declared"


def test_strip_aux_forward_examples():
    v = np.zeros((GRID.N_s, GRID.d))
    v[:, 0] = np.arange(GRID.N_s)
    eta, lam = strip_aux_forward(GRID, np.broadcast_to(v, (GRID.N_t + 1, GRID.N_s, GRID.d)))
    np.testing.assert_array_equal(eta, 0.0)
    np.testing.assert_array_equal(lam[:, 0], np.arange(GRID.N_s))
    w = np.random.default_rng(0).normal(size=(GRID.N_s, GRID.d))
    t = np.linspace(0, 1, GRID.N_t + 1)
    eta, lam = strip_aux_forward(GRID, t[:, None, None] * w)
    np.testing.assert_allclose(eta, np.broadcast_to(w, eta.shape), atol=1e-14)
    np.testing.assert_array_equal(lam, 0.0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_strip_aux_round_trip(seed):
    rng = np.random.default_rng(seed)
    eta = rng.normal(size=(GRID.N_t, GRID.N_s, GRID.d))
    lam = rng.normal(size=(GRID.N_s, 1))
    xi = strip_aux_inverse(GRID, eta, lam)
    e2, l2 = strip_aux_forward(GRID, xi)
    np.testing.assert_allclose(e2, eta, atol=1e-12)
    np.testing.assert_allclose(l2, lam, atol=1e-12)
    np.testing.assert_allclose(strip_boundary_defect(GRID, xi), 0.0, atol=1e-12)


def test_strip_grid_validation():
    with pytest.raises(ValueError):
        StripGrid(N_s=3)
    with pytest.raises(ValueError):
        StripGrid(N_t=1)
    with pytest.raises(ValueError):
        StripGrid(d=3)
    with pytest.raises(ValueError):
        StripGrid(J=np.eye(2))
    with pytest.raises(ValueError):
        StripGrid(Lambda0=[[1.0], [1.0]])
    g = StripGrid(d=4)
    P = g.perp(g.Lambda0)
    np.testing.assert_allclose(P.T @ P, np.eye(2), atol=1e-14)
    np.testing.assert_allclose(g.Lambda0.T @ P, 0.0, atol=1e-14)


def test_strip_size_limit():
    g = StripGrid(N_s=512, N_t=4, d=2)
    assert g.n_domain > MAX_STRIP_DIM
    with pytest.raises(ValueError):
        make_discrete_strip(g)


def test_registry():
    with pytest.raises(KeyError):
        get_family("nope")
    assert get_family("toy-shrink", tau_max=0.02).params["tau_max"] == 0.02
    register_family("cube", lambda **kw: make_cubic())
    try:
        assert get_family("cube").name == "cubic"
    finally:
        del FAMILIES["cube"]
