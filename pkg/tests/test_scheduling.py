import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nqcs.errors import InvalidArguments, InvalidWeighting, UnsupportedCombination
from nqcs.quantization import QuantizerSpec
from nqcs.scheduling import (Combo, GrowthBounds, ProtocolKind, composite_W, grant,
                             homogeneous_rr_orbit, protocol_update, uges_constants, uges_W,
                             verify_uges, w_bar)

RR3 = ProtocolKind("RR", (1, 1, 1), n_df=3)
TOD3 = ProtocolKind("TOD", (1, 1, 1), n_df=3)


def zoom(kind, delta=0.8, omega=0.6):
    return QuantizerSpec.zoom(kind.node_dims, delta, 4.0, omega)


def test_rr_grant_convention():
    assert grant(RR3, 4, np.zeros(3)) == 2


@pytest.mark.parametrize("theta,node", [((1.0, -3.0, 2.0), 2), ((2.0, -2.0, 1.0), 1)])
def test_tod_grant(theta, node):
    assert grant(TOD3, 0, theta) == node


def test_protocol_update_examples():
    out, node = protocol_update(RR3, 0, [1.0, 2.0, 3.0], np.zeros(3))
    assert node == 1 and out.tolist() == [0.0, 2.0, 3.0]
    out, _ = protocol_update(RR3, 0, [1.0, 2.0, 3.0], [0.1])
    assert out.tolist() == [0.1, 2.0, 3.0]
    out, node = protocol_update(TOD3, 0, [1.0, -3.0, 2.0], [0.05])
    assert node == 2 and out.tolist() == [1.0, 0.05, 2.0]


def test_tracking_grant_uses_difference():
    kind = ProtocolKind("tod-tracking", (1, 2), n_df=1, n_ct=1, n_f=1)
    assert kind.paired
    # equal e_ct and e_f cancel on the paired node
    assert grant(kind, 0, [0.5, 1.0, 1.0]) == 1
    assert grant(kind, 0, [0.5, 1.0, -1.0]) == 2
    two = ProtocolKind("TODTracking", (1, 1, 1), n_df=2, n_f=1)
    assert grant(two, 0, [0.1, 0.2, 0.0], e_f=[-5.0]) == 3


def test_bad_partition():
    with pytest.raises(InvalidArguments):
        ProtocolKind("RR", (1, 1), n_df=3)
    with pytest.raises(InvalidArguments):
        ProtocolKind("nope", (1,), n_df=1)


def test_w_values():
    combo = Combo(TOD3, zoom(TOD3), varpi=0.005)
    val = uges_W(combo, [2.0, 0.0, 0.0], [1.0, 0.0, 0.0])
    assert val == pytest.approx(1.01)
    rr = Combo(RR3, QuantizerSpec.zoom((1, 1, 1), 0.1, 4.0, 0.6), varpi=1.0, )
    assert w_bar(rr, [1.0, 2.0, 3.0], [0.0, 0.0, 0.0], 0) == pytest.approx(6.0)
    box = Combo(ProtocolKind("RR", (1,), n_df=1), QuantizerSpec.box((1,), 2), varpi=0.1)
    assert w_bar(box, [0.0], [1.0], 0) == pytest.approx(math.sqrt(4 / 3))


def test_certificates():
    rr = uges_constants(Combo(RR3, zoom(RR3), varpi=0.005))
    assert rr.lam == pytest.approx(max(math.sqrt(2 / 3), 0.005 * math.sqrt(3) * 0.8 + 0.6))
    assert rr.lam == pytest.approx(0.81650, abs=5e-6)
    assert rr.lam2 == pytest.approx(math.sqrt(3)) and rr.M1 == pytest.approx(0.005 * math.sqrt(3))
    tod = uges_constants(Combo(TOD3, zoom(TOD3), varpi=0.005))
    assert tod.lam2 == 1.0 and tod.M1 == 0.005
    assert tod.lam1 == tod.lam


def test_growth_bounds_give_L():
    cert = uges_constants(Combo(RR3, zoom(RR3), varpi=0.005), growth=GrowthBounds(2.0, 1.0))
    assert cert.L0 == pytest.approx(cert.M1 * 2.0 / cert.alpha1W_slope)
    assert cert.L1 == pytest.approx(cert.lam2 * cert.L0 / cert.lam)


def test_uncertified_combos():
    with pytest.raises(UnsupportedCombination):
        Combo(RR3, QuantizerSpec.uniform((1, 1, 1), 0.1, 1.0), varpi=0.1)
    with pytest.raises(InvalidWeighting):
        uges_constants(Combo(RR3, zoom(RR3), varpi=10.0))


def test_domain_rejections_reported():
    combo = Combo(TOD3, zoom(TOD3), varpi=0.1)
    rep = verify_uges(combo, {"theta": np.ones((3, 3)), "mu": [[1, 1, 1], [0, 1, 1], [1, 1, 1]],
                              "c": [0, 1, 2]})
    assert rep.n_rejected_domain == 1 and rep.n_used == 2


def test_corrupted_lambda_fails():
    combo = Combo(TOD3, zoom(TOD3), varpi=0.25)
    cert = dataclasses.replace(uges_constants(combo), lam=0.5, lam1=0.5)
    rep = verify_uges(combo, 20_000, cert=cert)
    assert not rep.checks["contraction"]


def test_composite_W_phase():
    combo = Combo(TOD3, zoom(TOD3), varpi=0.1)
    cert = uges_constants(combo)
    e, mu = np.array([1.0, 0.0, 0.0]), np.ones(3)
    w0 = composite_W(combo, cert, e, mu, np.zeros(3), np.zeros(3), 0, 0)
    assert w0 == pytest.approx(w_bar(combo, e, mu, 0))


@given(arrays(float, 3, elements=st.floats(-100, 100)), st.integers(0, 50))
def test_rr_deadbeat(theta, c):
    orbit = homogeneous_rr_orbit(RR3, c, theta, 3)
    assert np.all(orbit[-1] == 0.0)


def test_rr_deadbeat_many_starts():
    rng = np.random.default_rng(1)
    kind = ProtocolKind("RR", (2, 1, 3), n_df=6)
    for _ in range(10_000 // 100):
        theta = rng.standard_normal(6) * 10
        c = int(rng.integers(0, 100))
        assert np.all(homogeneous_rr_orbit(kind, c, theta, kind.l)[-1] == 0.0)


@given(st.integers(0, 1000))
def test_rr_periodicity(c):
    nodes = {grant(RR3, c + i, np.zeros(3)) for i in range(3)}
    assert nodes == {1, 2, 3}


@given(arrays(float, 4, elements=st.floats(-1e3, 1e3)), st.floats(1e-3, 1e3))
def test_tod_scale_invariance(theta, s):
    kind = ProtocolKind("TOD", (1, 2, 1), n_df=4)
    assert grant(kind, 0, theta) == grant(kind, 0, s * theta)


@given(arrays(float, 3, elements=st.floats(-1e3, 1e3)),
       arrays(float, 3, elements=st.floats(-1e3, 1e3)), st.integers(0, 10))
def test_non_expansion(theta, eps, c):
    for kind in (RR3, TOD3):
        out, node = protocol_update(kind, c, theta, eps)
        for j in range(3):
            assert abs(out[j]) <= max(abs(theta[j]), abs(eps[j]))
        zero, _ = protocol_update(kind, c, theta, np.zeros(3))
        assert np.all(np.abs(zero) <= np.abs(theta))
