import numpy as np
import pytest
from hypothesis import given, strategies as st

from relay_ldpc.errors import Infeasible, Unbounded
from relay_ldpc.lp import lp_solve

import oracles


def test_one_variable():
    res = lp_solve([1.0], A_ub=[[-1.0], [1.0]], b_ub=[-0.3, 1.0])
    assert res.x[0] == pytest.approx(0.3)
    assert res.objective == pytest.approx(0.3)


def test_infeasible_box():
    with pytest.raises(Infeasible):
        lp_solve([1.0], A_ub=[[-1.0], [1.0]], b_ub=[-2.0, 1.0])


def test_unbounded():
    with pytest.raises(Unbounded):
        lp_solve([-1.0, 0.0], A_ub=[[1.0, -1.0]], b_ub=[1.0])


def test_equality_and_duals():
    # min x0 + 2 x1 s.t. x0 + x1 = 1, x0 <= 0.4
    res = lp_solve([1.0, 2.0], A_ub=[[1.0, 0.0]], b_ub=[0.4], A_eq=[[1.0, 1.0]], b_eq=[1.0])
    assert res.x == pytest.approx([0.4, 0.6])
    assert res.objective == pytest.approx(1.6)
    assert res.residual < 1e-8


def _random_lp(data):
    n = data.draw(st.integers(1, 6))
    m = data.draw(st.integers(1, 6))
    flt = st.floats(-3, 3, allow_nan=False).map(lambda v: round(v, 3))
    c = np.array(data.draw(st.lists(flt, min_size=n, max_size=n)))
    A = np.array(data.draw(st.lists(st.lists(flt, min_size=n, max_size=n),
                                    min_size=m, max_size=m)))
    b = np.array(data.draw(st.lists(st.floats(-1, 3).map(lambda v: round(v, 3)),
                                    min_size=m, max_size=m)))
    use_eq = data.draw(st.booleans())
    # a simplex row keeps the region bounded
    if use_eq:
        return c, A, b, np.ones((1, n)), np.array([1.0])
    return c, np.vstack([A, np.ones((1, n))]), np.append(b, 2.0), None, None


@given(st.data())
def test_matches_vertex_enumeration(data):
    c, A, b, Ae, be = _random_lp(data)
    ref = oracles.lp_vertex_enumeration(c, A, b, Ae, be)
    if ref is None:
        with pytest.raises(Infeasible):
            lp_solve(c, A, b, Ae, be)
        return
    res = lp_solve(c, A, b, Ae, be)
    assert res.objective == pytest.approx(ref, abs=1e-9)
    assert np.all(res.x >= -1e-12)
    assert np.all(A @ res.x <= b + 1e-8)
