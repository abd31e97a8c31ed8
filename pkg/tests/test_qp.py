import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from platoon_gpmpc.errors import NotPositiveDefinite
from platoon_gpmpc.qp import kkt_residual, solve_dual_active_set

from conftest import random_spd


def test_unconstrained_two_variable():
    hess = np.array([[4.0, 1.0], [1.0, 2.0]])
    lin = np.array([1.0, -1.0])
    res = solve_dual_active_set(hess, lin, np.zeros((0, 2)), np.zeros(0))
    # hand KKT: H x = -f
    np.testing.assert_allclose(res.x, np.linalg.solve(hess, -lin), atol=1e-8)
    np.testing.assert_allclose(res.x, [-3.0 / 7.0, 5.0 / 7.0], atol=1e-12)
    assert res.feasible and res.active == []


def test_upper_bound_becomes_active():
    # min (a - 8)^2 s.t. a <= 5
    res = solve_dual_active_set([[2.0]], [-16.0], [[-1.0]], [-5.0])
    assert res.x[0] == pytest.approx(5.0, abs=1e-12)
    assert res.active == [0] and res.multipliers[0] > 0
    assert res.multipliers[0] == pytest.approx(6.0)


def test_infeasible_constraints_detected():
    res = solve_dual_active_set(np.eye(1), [0.0], [[1.0], [-1.0]], [1.0, 0.0])
    assert not res.feasible


def test_indefinite_hessian_rejected():
    with pytest.raises(NotPositiveDefinite):
        solve_dual_active_set(np.diag([1.0, -1.0]), np.zeros(2), np.zeros((0, 2)), np.zeros(0))


def _random_feasible(rng, n, m):
    hess = random_spd(rng, n, cond=1e3)
    lin = rng.standard_normal(n) * 5
    g = rng.standard_normal((m, n))
    x_feas = rng.standard_normal(n)
    h = g @ x_feas - rng.uniform(0, 1, m)
    return hess, lin, g, h


@given(seed=st.integers(0, 2**31), n=st.integers(1, 12), m=st.integers(0, 40))
def test_random_feasible_problems_meet_kkt(seed, n, m):
    hess, lin, g, h = _random_feasible(np.random.default_rng(seed), n, m)
    res = solve_dual_active_set(hess, lin, g, h)
    assert res.feasible
    assert kkt_residual(hess, lin, g, h, res) <= 1e-6


def enumerate_active_sets(hess, lin, g, h):
    """Brute-force oracle: try every working set, keep the primal-dual feasible KKT point."""
    best = None
    for k in range(len(h) + 1):
        for rows in itertools.combinations(range(len(h)), k):
            rows = list(rows)
            n = hess.shape[0]
            kkt = np.block([[hess, -g[rows].T], [g[rows], np.zeros((k, k))]])
            try:
                sol = np.linalg.solve(kkt, np.concatenate([-lin, h[rows]]))
            except np.linalg.LinAlgError:
                continue
            x, lam = sol[:n], sol[n:]
            if np.all(g @ x - h >= -1e-9) and np.all(lam >= -1e-9):
                obj = 0.5 * x @ hess @ x + lin @ x
                if best is None or obj < best[1]:
                    best = (x, obj)
    return best


@pytest.mark.parametrize("seed", range(5))
def test_matches_enumerated_optimum(seed):
    rng = np.random.default_rng(seed)
    hess, lin, g, h = _random_feasible(rng, 4, 9)
    res = solve_dual_active_set(hess, lin, g, h)
    x_ref, obj_ref = enumerate_active_sets(hess, lin, g, h)
    assert res.objective == pytest.approx(obj_ref, rel=1e-9, abs=1e-9)
    np.testing.assert_allclose(res.x, x_ref, atol=1e-8)


@given(seed=st.integers(0, 2**31), scale=st.floats(1e-3, 1e3))
def test_argmin_invariant_to_cost_scaling(seed, scale):
    hess, lin, g, h = _random_feasible(np.random.default_rng(seed), 5, 10)
    a = solve_dual_active_set(hess, lin, g, h).x
    b = solve_dual_active_set(scale * hess, scale * lin, g, h).x
    np.testing.assert_allclose(a, b, atol=1e-6)
