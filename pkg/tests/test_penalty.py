import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from sil.graph import from_edge_list, group_weights, neighborhoods
from sil.penalty import (Inner, Outer, PenaltyConfig, PenaltyError, block_penalty, ls2_fixed_points,
                         penalty_value, penalty_value_stacked, prox_block, prox_group_frobenius,
                         prox_ls1, prox_ls2, prox_mcp, prox_mixture, prox_stacked, ridge_value,
                         solve_h, solve_h_batch, split_blocks, stack_blocks)

from oracles import block_objective, lh_fixed_point_residual, numeric_prox_value

# frozen values from mpmath root finding (see oracles.py for the method)
H_HALF_THREE = 0.8210916541997264  # xi = (0.5, 3), c = 0.1
H_FIVE = 0.6992647456322783  # xi = (5,), c = 0.1
LS1_EXAMPLE = 1.9662878298615180  # ||D|| = 2, lam t tau = 0.1, eta = 1

blocks_st = hnp.arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 5)),
                       elements=st.floats(-5, 5, allow_nan=False, width=64))


@st.composite
def block_pairs(draw):
    shape = draw(st.tuples(st.integers(1, 6), st.integers(1, 5)))
    el = st.floats(-5, 5, allow_nan=False, width=64)
    return draw(hnp.arrays(np.float64, shape, elements=el)), draw(hnp.arrays(np.float64, shape, elements=el))


def cfg(rho1="linear", rho2="frobenius", **kw):
    return PenaltyConfig(Outer(rho1), Inner(rho2), **kw)


# ------------------------------------------------------------ penalty values


def test_penalty_value_examples():
    one = group_weights(neighborhoods(from_edge_list(1, [])))
    assert penalty_value(cfg(lam=2.0, weights=one), [np.array([[3.0]])]) == pytest.approx(6.0)
    ls = cfg("logsum", lam=1.0, eta=1.0, weights=one)
    assert penalty_value(ls, [np.array([[math.e - 1.0]])]) == pytest.approx(1.0)
    for c in (cfg(lam=1.0, weights=one), ls, cfg("mcp", "l21", lam=1.0, eta=2.0, weights=one)):
        assert penalty_value(c, [np.zeros((1, 3))]) == 0.0


def test_inner_norm_values():
    D = np.array([[3.0, 0.0], [4.0, 1.0]])
    assert block_penalty(cfg(lam=1.0), D, 1.0) == pytest.approx(math.sqrt(26))
    assert block_penalty(cfg(rho2="l21", lam=1.0), D, 1.0) == pytest.approx(6.0)
    mix = cfg(rho2="mixture", lam=2.0, alpha=0.25)
    assert block_penalty(mix, D, 0.5) == pytest.approx(0.25 * math.sqrt(26) + 0.75 * 6.0)
    mcp = cfg("mcp", lam=1.0, eta=2.0)
    assert block_penalty(mcp, D, 1.0) == pytest.approx(1.0)  # flat beyond lam * eta: lam * eta / 2
    assert ridge_value(cfg(lambda_ridge=0.5), [D]) == pytest.approx(0.5 * 0.5 * 2 * 26)


def test_config_validation():
    with pytest.raises(PenaltyError):
        cfg("mcp", "mixture", lam=1.0, eta=1.0, alpha=0.5)
    with pytest.raises(PenaltyError):
        cfg("logsum", lam=1.0)
    with pytest.raises(PenaltyError):
        cfg(rho2="mixture", lam=1.0, alpha=1.5)
    with pytest.raises(PenaltyError):
        cfg(lam=-1.0)


# ------------------------------------------------------------ closed forms


def test_group_frobenius_examples():
    np.testing.assert_allclose(prox_group_frobenius(np.array([3.0, 4.0]), 2.0), [1.8, 2.4])
    D = np.array([[1.0, -2.0]])
    np.testing.assert_array_equal(prox_group_frobenius(D, 0.0), D)
    np.testing.assert_array_equal(prox_group_frobenius(np.array([0.6, 0.8]), 1.5), [0.0, 0.0])


def test_ls1_example():
    out = prox_ls1(np.array([[2.0], [0.0]]), lam=0.1, t=1.0, tau=1.0, eta=1.0)
    np.testing.assert_allclose(out[:, 0], [LS1_EXAMPLE, 0.0], rtol=0, atol=1e-12)
    np.testing.assert_array_equal(prox_ls1(np.zeros((2, 1)), 0.1, 1.0, 1.0, 1.0), 0.0)
    D = np.array([[0.3, -1.0]])
    np.testing.assert_array_equal(prox_ls1(D, 0.0, 1.0, 1.0, 1.0), D)


def test_ls1_step_bound_reported():
    with pytest.raises(PenaltyError, match="t < 1.0"):
        prox_ls1(np.ones((2, 1)), lam=1.0, t=1.0, tau=1.0, eta=1.0)


def test_solve_h_examples():
    assert solve_h([0.3, 0.9], 0.5) == 1.0
    h = solve_h([0.5, 3.0], 0.1)
    assert h == pytest.approx(H_HALF_THREE, abs=1e-12)
    assert lh_fixed_point_residual(h, [0.5, 3.0], 0.1) < 1e-12
    h5 = solve_h([5.0], 0.1)
    assert h5 == pytest.approx(H_FIVE, abs=1e-12)
    assert lh_fixed_point_residual(h5, [5.0], 0.1) < 1e-12
    with pytest.raises(PenaltyError):
        solve_h([1.0], 1.0)


def test_ls2_example():
    # lam t tau = 1, eta = 10 -> c = 0.1; column norms 0.5 and 3
    D = np.array([[0.5, 0.0], [0.0, 3.0]])
    out = prox_ls2(D, lam=1.0, t=1.0, tau=1.0, eta=10.0)
    np.testing.assert_array_equal(out[:, 0], 0.0)
    assert out[1, 1] == pytest.approx(3.0 - H_HALF_THREE, abs=1e-12)
    small = prox_ls2(np.array([[0.2, 0.5], [0.1, 0.4]]), lam=1.0, t=1.0, tau=1.0, eta=10.0)
    np.testing.assert_array_equal(small, 0.0)


def test_ls2_selects_global_root_when_fixed_point_is_not_unique():
    # every xi < 1, yet h = 1 is not the minimiser: the equation has three roots
    xi = np.array([0.949, 0.562, 0.932, 0.922, 0.442])
    c = 0.973
    roots = ls2_fixed_points(xi, c)
    assert roots.size == 3
    for h in roots:
        assert lh_fixed_point_residual(h, xi, c) < 1e-10
    assert solve_h(xi, c) == 1.0
    D = xi[None, :]
    args = dict(t=1.0, lam=1.0, tau=1.0, eta=1.0 / c)
    out = prox_ls2(D, **args)
    oracle, _ = numeric_prox_value("ls2", D, **args)
    got = block_objective("ls2", out, D, **args)
    assert got == pytest.approx(oracle, abs=1e-9)
    scan = D * np.maximum(0.0, 1.0 - 1.0 / xi)
    assert block_objective("ls2", scan, D, **args) > got + 0.1


def test_mcp_examples():
    D = np.array([[3.0, 4.0]])
    np.testing.assert_array_equal(prox_mcp(D, lam=1.0, t=0.5, tau=1.0, eta=2.0), D)
    np.testing.assert_array_equal(prox_mcp(D * 0.05, lam=1.0, t=0.5, tau=1.0, eta=2.0), 0.0)
    with pytest.raises(PenaltyError):
        prox_mcp(D, lam=1.0, t=2.0, tau=1.0, eta=2.0)
    # interior: ||D|| = 1 between lam t tau = 0.5 and lam eta = 2
    Di = np.array([[0.6, 0.8]])
    out = prox_mcp(Di, lam=1.0, t=0.5, tau=1.0, eta=2.0)
    oracle, _ = numeric_prox_value("mcp_frobenius", Di, 0.5, 1.0, 1.0, eta=2.0)
    assert block_objective("mcp_frobenius", out, Di, 0.5, 1.0, 1.0, eta=2.0) == pytest.approx(oracle, abs=1e-10)
    np.testing.assert_allclose(out, Di * (1 - 0.5) / (1 - 0.25))


def test_mixture_collapses():
    rng = np.random.default_rng(0)
    D = rng.normal(size=(4, 3))
    np.testing.assert_allclose(prox_mixture(D, 0.7, 1.0, 1.3, 1.0), prox_group_frobenius(D, 0.91))
    cols = np.linalg.norm(D, axis=0)
    expect = D * np.maximum(0, 1 - 0.91 / cols)
    np.testing.assert_allclose(prox_mixture(D, 0.7, 1.0, 1.3, 0.0), expect)
    with pytest.raises(PenaltyError):
        prox_mixture(D, 0.7, 1.0, 1.3, -0.1)
    D2 = rng.normal(size=(3, 2))
    out = prox_mixture(D2, 0.5, 1.0, 1.0, 0.5)
    oracle, _ = numeric_prox_value("mixture", D2, 1.0, 0.5, 1.0, alpha=0.5)
    assert block_objective("mixture", out, D2, 1.0, 0.5, 1.0, alpha=0.5) == pytest.approx(oracle, abs=1e-9)


# ------------------------------------------------------------ properties


def _random_case(kind, rng):
    a, M = int(rng.integers(1, 9)), int(rng.integers(1, 7))
    lam = float(rng.uniform(0.2, 2.0))
    tau = float(np.sqrt(a) * rng.uniform(0.5, 2.0))
    eta = float(rng.uniform(0.2, 4.0))
    if kind in ("ls1", "ls2"):
        t = float(rng.uniform(0.05, 0.98)) * eta / (lam * tau)
    elif kind.startswith("mcp"):
        t = float(rng.uniform(0.05, 0.98)) * eta / tau
    else:
        t = float(rng.uniform(0.1, 2.0))
    scale = lam * t * tau * float(rng.uniform(0.3, 3.0))
    D = rng.normal(size=(a, M)) * scale / math.sqrt(a)
    alpha = float(rng.uniform(0, 1))
    return D, dict(t=t, lam=lam, tau=tau, eta=eta, alpha=alpha)


def _prox(kind, D, p):
    t, lam, tau, eta, alpha = p["t"], p["lam"], p["tau"], p["eta"], p["alpha"]
    if kind == "frobenius":
        return prox_group_frobenius(D, lam * t * tau)
    if kind == "mixture":
        return prox_mixture(D, lam, t, tau, alpha)
    if kind == "ls1":
        return prox_ls1(D, lam, t, tau, eta)
    if kind == "ls2":
        return prox_ls2(D, lam, t, tau, eta)
    return prox_mcp(D, lam, t, tau, eta, Inner.FROBENIUS if kind == "mcp_frobenius" else Inner.L21)


@pytest.mark.parametrize("kind", ["frobenius", "mixture", "ls1", "ls2", "mcp_frobenius", "mcp_l21"])
def test_prox_beats_random_perturbations(kind):
    rng = np.random.default_rng(11)
    for _ in range(20):
        D, p = _random_case(kind, rng)
        W = _prox(kind, D, p)
        f0 = block_objective(kind, W, D, **p)
        for s in (1e-1, 1e-3):
            pert = W[None] + s * rng.normal(size=(50,) + W.shape)
            vals = [block_objective(kind, Q, D, **p) for Q in pert]
            assert min(vals) >= f0 - 1e-8


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 50, allow_nan=False), min_size=1, max_size=8), st.floats(1e-3, 0.999))
def test_solve_h_fixed_point_residual(xis, c):
    h = solve_h(xis, c)
    assert 0 < h <= 1
    assert lh_fixed_point_residual(h, xis, c) < 1e-10
    for r in ls2_fixed_points(xis, c):
        assert lh_fixed_point_residual(r, xis, c) < 1e-10
    assert solve_h_batch(np.array([xis]), np.array([c]))[0] == pytest.approx(h, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(block_pairs(), st.floats(0.01, 3), st.floats(0, 1))
def test_convex_prox_nonexpansive(pair, thr, alpha):
    D1, D2 = pair
    for f in (lambda D: prox_group_frobenius(D, thr), lambda D: prox_mixture(D, thr, 1.0, 1.0, alpha)):
        assert np.linalg.norm(f(D1) - f(D2)) <= np.linalg.norm(D1 - D2) + 1e-12


@settings(max_examples=150, deadline=None)
@given(blocks_st, st.floats(0.05, 0.95), st.sampled_from(["mixture", "ls2", "mcp_l21"]))
def test_support_monotone_in_column_norm(D, frac, kind):
    p = dict(t=1.0, lam=1.0, tau=1.0, eta=1.0 / frac if kind == "ls2" else 2.0, alpha=0.3)
    W = _prox(kind, D, p)
    cols = np.linalg.norm(D, axis=0)
    alive = np.linalg.norm(W, axis=0) > 0
    if alive.any() and (~alive).any():
        assert cols[alive].min() >= cols[~alive].max()


@settings(max_examples=100, deadline=None)
@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 6), st.just(1)),
                  elements=st.floats(-5, 5, allow_nan=False)), st.floats(0.05, 0.95))
def test_single_dataset_consistency(D, frac):
    lam, t, tau, eta = 1.0, 1.0, 1.0, 1.0 / frac
    np.testing.assert_allclose(prox_ls2(D, lam, t, tau, eta), prox_ls1(D, lam, t, tau, eta), atol=1e-12)
    np.testing.assert_allclose(prox_mcp(D, lam, 0.5, tau, 2.0, Inner.L21),
                               prox_mcp(D, lam, 0.5, tau, 2.0, Inner.FROBENIUS), atol=1e-12)
    np.testing.assert_allclose(prox_mixture(D, lam, t, tau, 0.0), prox_group_frobenius(D, lam * t * tau),
                               atol=1e-12)


@pytest.mark.parametrize("kind", ["frobenius", "mixture", "ls1", "ls2", "mcp_frobenius", "mcp_l21"])
def test_zero_block_maps_to_zero(kind):
    p = dict(t=0.5, lam=1.0, tau=1.0, eta=2.0, alpha=0.5)
    np.testing.assert_array_equal(_prox(kind, np.zeros((3, 2)), p), 0.0)


# ------------------------------------------------------------ stacked layout


@pytest.mark.parametrize("rho1,rho2", [("linear", "frobenius"), ("linear", "l21"), ("linear", "mixture"),
                                       ("logsum", "frobenius"), ("logsum", "l21"),
                                       ("mcp", "frobenius"), ("mcp", "l21")])
def test_stacked_matches_per_block(rho1, rho2):
    rng = np.random.default_rng(3)
    g = from_edge_list(9, [(1, 2), (2, 3), (3, 1), (4, 5), (5, 6), (7, 8)])
    nb = neighborhoods(g)
    w = group_weights(nb, d=rng.uniform(0.5, 2.0, 9))
    c = cfg(rho1, rho2, lam=0.7, eta=1.5 if rho1 != "linear" else None,
            alpha=0.4 if rho2 == "mixture" else None, weights=w)
    theta = rng.normal(size=(nb.total_size, 3))
    t = 0.9 * min(c.max_step(float(w.tau.max())), 1.0)
    stacked = prox_stacked(c, theta, t, nb)
    blocks = split_blocks(theta, nb)
    ref = stack_blocks([prox_block(c, b, t, tau) for b, tau in zip(blocks, w.tau)])
    np.testing.assert_allclose(stacked, ref, atol=1e-13)
    assert penalty_value_stacked(c, theta, nb) == pytest.approx(penalty_value(c, blocks), rel=1e-13)
    cap = c.max_step(float(w.tau.max()))
    if math.isfinite(cap):
        with pytest.raises(PenaltyError):
            prox_stacked(c, theta, cap, nb)
