import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from nqcs.errors import InvalidArguments
from nqcs.tradeoff import (MATI_FAILS_AT_ZERO, GainTerms, Linear, Power, Quadratic,
                           TradeoffParams, closed_form_mati, compute_mati_mad,
                           invert_by_bisection, iss_gain, phi_solve, riccati_closed,
                           riccati_zero_time, solve_batch, sweep)


def symmetric(gamma=3.0, lam=0.5, phi=2.0, L=0.0):
    return TradeoffParams(L0=L, L1=L, gamma0=gamma, gamma1=gamma, lam=lam, rho0=0.0,
                          rho1=0.0, phi00=phi, phi10=phi)


def test_tangent_values():
    p = symmetric(gamma=1.0, phi=1.0)
    curve = phi_solve(p, 0, math.pi / 4, 1e-4)
    assert abs(curve.phi[-1]) < 1e-8
    mid = phi_solve(p, 0, math.pi / 8, 1e-4)
    assert abs(mid.phi[-1] - math.tan(math.pi / 8)) < 1e-8
    assert abs(math.tan(math.pi / 8) - 0.41421356) < 1e-8


@pytest.mark.parametrize("L,g,r,p0", [(0.0, 1.0, 0.0, 1.0), (2.0, 1.0, 0.5, 3.0),
                                      (10.0, 0.1, 0.0, 1.0), (0.5, 0.5, 1.0, 0.2)])
def test_closed_form_regimes(L, g, r, p0):
    # all three closed-form branches against the numeric solution
    end = riccati_zero_time(L, g, r, p0)
    assert riccati_closed(L, g, r, p0, end) == pytest.approx(0.0, abs=1e-10)
    curve = phi_solve(TradeoffParams(L, L, g, g, 0.5, r, r, p0, p0), 0, end, end / 5000)
    assert curve.max_discrepancy < 1e-8


def test_closed_form_family():
    res = compute_mati_mad(symmetric())
    assert res.h_mati == pytest.approx(closed_form_mati(3.0, 0.5, 2.0), rel=1e-6)
    assert res.h_mad == res.h_mati
    assert res.diagnostics == []


def test_mati_zero_diagnostic():
    p = TradeoffParams(L0=1.0, L1=1.0, gamma0=1.0, gamma1=50.0, lam=0.9, rho0=0.1, rho1=0.1,
                       phi00=1.0, phi10=1.0)
    res = compute_mati_mad(p, n_grid=1000)
    assert res.h_mati == 0.0
    assert res.diagnostics[0].startswith(MATI_FAILS_AT_ZERO)


def test_mad_capped_at_mati():
    p = TradeoffParams(L0=0.0, L1=0.0, gamma0=1.0, gamma1=1.0, lam=0.5, rho0=0.0, rho1=0.0,
                       phi00=1.0, phi10=5.0)
    res = compute_mati_mad(p, n_grid=20_000)
    assert res.h_mad <= res.h_mati


@pytest.mark.parametrize("field,value,msg", [("gamma0", 0.0, "gamma0 must be positive"),
                                             ("lam", 1.0, "lam"), ("phi10", -1.0, "phi10"),
                                             ("L0", float("nan"), "L0")])
def test_validation(field, value, msg):
    kw = symmetric().to_dict()
    kw[field] = value
    with pytest.raises(InvalidArguments, match=msg):
        TradeoffParams(**kw)


def test_rho_warning_not_error():
    p = TradeoffParams(L0=0.0, L1=0.0, gamma0=1.0, gamma1=1.0, lam=0.9, rho0=5.0, rho1=0.0,
                       phi00=1.0, phi10=1.0)
    assert any("rho0" in w for w in p.rho_warnings())


def test_curve_csv(tmp_path):
    res = compute_mati_mad(symmetric(), n_grid=100)
    path = tmp_path / "c.csv"
    res.write_curve_csv(path, stride=10)
    lines = path.read_text().splitlines()
    assert lines[0] == "tau,phi0,phi1,lhs_mati,rhs_mati,lhs_mad,rhs_mad"
    assert len(lines) == 1 + 11


def test_batch_agrees():
    taus, phis, closed = solve_batch([(1.0, 2.0, 0.3, 1.5), (0.0, 1.0, 0.0, 1.0)], 4000)
    for p, c in zip(phis, closed):
        assert np.max(np.abs(p - c)) < 1e-8


admissible = st.tuples(st.floats(0.0, 20.0), st.floats(0.1, 30.0), st.floats(0.0, 3.0),
                       st.floats(0.05, 5.0))


@given(admissible)
def test_curves_decrease_while_nonnegative(t):
    taus, phis, _ = solve_batch([t], 2000)
    phi = phis[0]
    keep = phi >= 0
    assert np.all(np.diff(phi[keep]) < 0)


@given(st.floats(0.2, 10.0), st.floats(0.2, 10.0), st.floats(0.1, 0.9), st.floats(0.2, 4.0))
def test_mati_monotone_in_gamma(g1, g2, lam, phi):
    assume(abs(g1 - g2) > 1e-3)
    lo, hi = sorted((g1, g2))
    assert closed_form_mati(hi, lam, phi) <= closed_form_mati(lo, lam, phi)
    a = compute_mati_mad(symmetric(gamma=lo, lam=lam, phi=phi), n_grid=2000).h_mati
    b = compute_mati_mad(symmetric(gamma=hi, lam=lam, phi=phi), n_grid=2000).h_mati
    assert b <= a * (1 + 1e-9)


@given(st.floats(0.0, 5.0), st.floats(0.0, 5.0))
def test_mati_monotone_in_L(L1, L2):
    lo, hi = sorted((L1, L2))
    a = compute_mati_mad(symmetric(L=lo), n_grid=2000).h_mati
    b = compute_mati_mad(symmetric(L=hi), n_grid=2000).h_mati
    assert b <= a * (1 + 1e-9)


def unit_gains(eps_tilde=1.0, eps=1.0):
    return GainTerms(rho0=2.0, rho1=2.0, theta0=2.0, theta1=2.0, eps_tilde=eps_tilde,
                     alpha1=Quadratic(1.0), alpha3=Linear(1.0), sigma1=Linear(1.0), eps=eps)


def test_iss_gain_formula():
    # large phi/gamma so the admissible interval for eps_tilde includes 1
    p = TradeoffParams(0.0, 0.0, 1.0, 1.0, 0.5, 0.0, 0.0, 2.0, 2.0)
    g = unit_gains()
    for v in (0.1, 1.0, 7.0):
        assert iss_gain(p, g, v) == pytest.approx(math.sqrt(8 * v / (1 - math.exp(-1))),
                                                  rel=1e-12)
    assert iss_gain(p, g, 0.0) == 0.0


@given(st.floats(0.0, 100.0), st.floats(0.0, 100.0))
def test_iss_gain_monotone(v1, v2):
    assume(v1 != v2)
    p = TradeoffParams(0.0, 0.0, 1.0, 1.0, 0.5, 0.0, 0.0, 2.0, 2.0)
    g = GainTerms(2.0, 2.0, 2.0, 2.0, 1.0, Power(1.0, 3.0), Linear(1.0), Quadratic(1.0), 1.0)
    lo, hi = sorted((v1, v2))
    assert iss_gain(p, g, hi) > iss_gain(p, g, lo)


def test_eps_tilde_outside_interval():
    p = symmetric()
    with pytest.raises(InvalidArguments, match="eps_tilde"):
        iss_gain(p, unit_gains(eps_tilde=100.0), 1.0)


def test_bisection_inverse_matches_closed_inverse():
    f = Power(2.0, 1.7)
    assert invert_by_bisection(f, 9.0) == pytest.approx(float(f.inverse(9.0)), rel=1e-12)
    with pytest.raises(InvalidArguments):
        Linear(0.0)


def test_sweep_table():
    rows = sweep(symmetric(), [1.0, 2.0], [1.0, 2.0])
    assert len(rows) == 4
    paired = sweep(symmetric(), [1.0, 2.0], [1.0, 2.0], pairs=True, n_grid=2000)
    assert [(r.phi00, r.phi10) for r in paired] == [(1.0, 1.0), (2.0, 2.0)]
    assert paired[0].h_mati == pytest.approx(closed_form_mati(3.0, 0.5, 1.0), rel=1e-6)
    with pytest.raises(InvalidArguments):
        sweep(symmetric(), [], [1.0])
