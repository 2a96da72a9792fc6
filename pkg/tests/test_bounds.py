import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from bklab.bounds import (
    C_r,
    TailParams,
    criticality,
    rc_params,
    solve_eps0,
    tail_bound_1,
    tail_bound_2,
    tail_cap,
    tau1_bound,
    tv_bound_T1,
    tv_bound_T2,
    variance_bound,
)
from bklab.model import ModelParams, OffspringLaw

EPS0 = 0.06999289931034186


def _bisect_eps0():
    f = lambda x: math.exp(x) * (1 - x) ** -3 - 4 / 3
    lo, hi = 0.0, 0.9
    for _ in range(200):
        mid = (lo + hi) / 2
        if f(mid) > 0:
            hi = mid
        else:
            lo = mid
    return (lo + hi) / 2


def test_eps0_root():
    eps0 = solve_eps0()
    assert abs(math.exp(eps0) * (1 - eps0) ** -3 - 4 / 3) <= 1e-12
    assert eps0 > 1 / 15
    assert abs(eps0 - _bisect_eps0()) <= 1e-12
    assert eps0 == pytest.approx(EPS0, abs=1e-12)


def test_eps0_bracket_has_one_sign_change():
    f = lambda x: math.exp(x) * (1 - x) ** -3 - 4 / 3
    xs = [i / 1000 for i in range(1, 1000)]
    signs = [f(x) > 0 for x in xs]
    assert sum(a != b for a, b in zip(signs, signs[1:])) == 1


def test_tv_examples():
    assert tv_bound_T1(0, 5, 100).value == 0.0
    b = tv_bound_T1(100, 1, 10**5)
    assert b.value == pytest.approx(0.0808, rel=1e-12) and b.valid
    # S_m sqrt(m) = 4 * 2 = 8 = N
    assert not tv_bound_T1(4, 0, 8).valid
    assert tv_bound_T2(4, 0, 8).valid


@given(st.integers(0, 500), st.integers(0, 50), st.integers(2, 10**7))
def test_tv_monotone(m, S0, N):
    b = tv_bound_T1(m, S0, N).value
    assert b >= 0
    assert tv_bound_T1(m + 1, S0, N).value >= b
    assert tv_bound_T1(m, S0 + 1, N).value >= b
    assert tv_bound_T1(m, S0, N + 1).value <= b


def test_variance_and_tau1_bounds():
    assert variance_bound(100, 1, 10**4) == pytest.approx(52 * 100 * 101**2 / 1e8)
    assert tau1_bound(10, 0, 100) == pytest.approx(10 * math.exp(-10))
    assert tau1_bound(0, 0, 100) == 0.0


def test_tail_examples():
    p0 = TailParams(1, 1, 1, 0.0)
    assert tail_bound_1(p0) == (1.0, True)
    assert tail_bound_2(p0) == pytest.approx(math.exp(2 / 135), rel=1e-15)
    assert tail_bound_2(p0) == pytest.approx(1.014925, abs=1e-6)
    value, ok = tail_bound_1(TailParams(1, 1, 1, 1.0))
    assert value == pytest.approx(math.exp(-3 / 40), rel=1e-15)
    assert value == pytest.approx(0.92774, abs=1e-5)
    assert not ok
    assert tail_cap(TailParams(1, 1, 1, 1.0)) == pytest.approx(4 / 3 * EPS0 * 5, rel=1e-12)
    assert tail_cap(TailParams(1, 1, 1, 1.0)) == pytest.approx(0.467, abs=1e-3)
    assert tail_bound_1(TailParams(0, 1, 100, 30))[0] == pytest.approx(0.185, abs=1e-3)


def test_tail_param_validation():
    for args in [(0, 0, 1, 1), (-1, 1, 1, 1), (1, 1, 0, 1), (1, 1, 1, -0.5)]:
        with pytest.raises(ValueError):
            TailParams(*args)


@given(st.floats(0, 5), st.floats(0.01, 5), st.integers(1, 1000), st.floats(0, 100))
def test_tail_shapes(a, b, n, y):
    p = TailParams(a, b, n, y)
    v, ok = tail_bound_1(p)
    if ok:
        assert v <= 1
    assert tail_bound_2(TailParams(a, b, n, y + 1)) <= tail_bound_2(p)


def test_rc_examples():
    assert C_r(1) == pytest.approx(math.sqrt(416 / 3), rel=1e-15)
    assert C_r(1) == pytest.approx(11.7757, abs=1e-4)
    rc = rc_params(100, 10**5, 1)
    assert rc.psi == pytest.approx(0.0101, rel=1e-12)
    assert rc.eps == pytest.approx(C_r(1) * 0.0101 * math.sqrt(math.log(1 / 0.0101)), rel=1e-12)
    # psi = 1 exactly: S_M sqrt(M) = 4 * 2 = 8 = N
    deg = rc_params(4, 8, 0)
    assert deg.psi == 1.0 and deg.eps == 0.0 and deg.eta >= 2 and deg.degenerate and not deg.valid
    with pytest.raises(ValueError):
        rc_params(10, 100, 1, r=0.5)


def test_rc_flags():
    rc = rc_params(364, 5 * 10**5, 1)
    assert rc.psi_ok and rc.eps_ok and rc.M_ok and rc.valid
    small_M = rc_params(10, 10**6, 1)
    assert not small_M.M_ok and not small_M.valid
    big = rc_params(100, 500, 1)
    assert not big.psi_ok and not big.valid


def test_rc_shrinks_with_psi():
    # only N moves, so psi falls while the M exp(-N/S_M) term is already negligible
    prev = None
    for N in [10**5, 10**6, 10**7, 10**8]:
        rc = rc_params(100, N, 1)
        if prev is not None:
            assert rc.eps < prev.eps and rc.eta < prev.eta
        prev = rc
    assert rc_params(100, 10**14, 1).eps < 1e-8


def test_criticality_examples():
    c = criticality(ModelParams(1.0, 1.0, 10, OffspringLaw.poisson(1.0)))
    assert c.parameter == 1.0 and c.regime == "critical"
    c = criticality(ModelParams(2.0, 1.0, 10, OffspringLaw.poisson(1.5)))
    assert c.parameter == pytest.approx(3.0) and c.regime == "supercritical" and c.growth_rate == pytest.approx(2.0)
    c = criticality(ModelParams(0.5, 1.0, 10, OffspringLaw.geometric(1.0)))
    assert c.regime == "subcritical"
    at_e = criticality(ModelParams(1.3, 0.7, 10, OffspringLaw.poisson(math.e)))
    assert at_e.parameter == pytest.approx(1.3 * math.e / 0.7, rel=1e-15)
    above = criticality(ModelParams(1.3, 0.7, 10, OffspringLaw.poisson(math.e * (1 + 1e-12))))
    assert above.parameter == pytest.approx(at_e.parameter, rel=1e-10)
    assert above.formula != at_e.formula
