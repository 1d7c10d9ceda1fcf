import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nqcs.errors import InvalidArguments, SaturationError
from nqcs.quantization import (QuantizerSpec, QuantizerState, in_range, mu_update, quantize,
                               quantize_node, sector_grid, verify_sector)


def zoom1(delta=0.8, m=4.0, omega=0.6, deadzone=0.0, dims=(1,)):
    return QuantizerSpec.zoom(dims, delta, m, omega, deadzone=deadzone)


def test_deadzone_zeroes_small_inputs():
    spec = zoom1(deadzone=0.1)
    q, _ = quantize_node(spec, 0, 1.0, [0.05])
    assert q[0] == 0.0


def test_nearest_level_on_enumerated_grid():
    spec = zoom1()
    q, _ = quantize_node(spec, 0, 1.0, [0.5])
    # mid-tread levels of spacing 2*delta inside [-M, M]
    levels = np.arange(-3, 4) * 1.6
    levels = levels[np.abs(levels) <= 4.0 + 0.8]
    nearest = levels[np.argmin(np.abs(levels - 0.5))]
    assert q[0] == pytest.approx(nearest)
    assert abs(q[0] - 0.5) <= 0.8


def test_box_subbox_center():
    spec = QuantizerSpec.box((1,), 2)
    st_ = QuantizerState.initial(spec, 1.0)
    res = quantize(spec, st_, np.array([0.3]))
    assert res.q[0] == 0.5
    assert res.eps[0] == pytest.approx(0.2)
    assert abs(res.eps[0]) <= 0.5
    assert res.zhat[0][0] == 0.5


def test_box_boundary_goes_to_lower_subbox():
    spec = QuantizerSpec.box((1,), 4)
    # 0.5 is the face between [0, 0.5] and [0.5, 1]
    q, _ = quantize_node(spec, 0, 1.0, [0.5], np.zeros(1))
    # lower sub-box, centre nudged by a few ulps so |q - z| stays within mu/N
    assert q[0] == pytest.approx(0.25, abs=1e-12) and abs(q[0] - 0.5) <= 0.25
    # exact zero is inside the (zero-width) deadzone
    q, _ = quantize_node(spec, 0, 1.0, [0.0], np.zeros(1))
    assert q[0] == 0.0


@pytest.mark.parametrize("spec,mu,expect", [
    (zoom1(omega=0.6), 1.0, 0.6),
    (QuantizerSpec.box((1,), 2), 1.0, 0.5),
])
def test_mu_update(spec, mu, expect):
    st_ = QuantizerState.initial(spec, mu)
    assert mu_update(spec, st_).mu[0] == pytest.approx(expect)


def test_mu_update_twice():
    spec = zoom1()
    st_ = mu_update(spec, mu_update(spec, QuantizerState.initial(spec, 1.0)))
    assert st_.mu[0] == pytest.approx(0.36)


def test_saturation_raises_with_node():
    spec = zoom1(dims=(1, 1))
    with pytest.raises(SaturationError) as info:
        quantize(spec, QuantizerState.initial(spec, 1.0), np.array([0.0, 9.0]))
    assert info.value.node == 2
    res = quantize(spec, QuantizerState.initial(spec, 1.0), np.array([0.0, 9.0]), check=False)
    assert res.saturated == [1]


@pytest.mark.parametrize("kw", [dict(delta=0.0, m=1.0, omega=0.5),
                                dict(delta=2.0, m=1.0, omega=0.5),
                                dict(delta=0.5, m=1.0, omega=1.0),
                                dict(delta=0.5, m=1.0, omega=0.5, deadzone=0.9)])
def test_invalid_zoom_specs(kw):
    with pytest.raises(InvalidArguments):
        QuantizerSpec.zoom((1,), **kw)


def test_invalid_box_and_state():
    with pytest.raises(InvalidArguments):
        QuantizerSpec.box((2,), 1)
    with pytest.raises(InvalidArguments):
        QuantizerState(np.array([0.0]))


def test_spec_round_trip():
    spec = QuantizerSpec.zoom((1, 2), [0.5, 0.6], 4.0, 0.6, deadzone=0.01)
    again = QuantizerSpec.from_dict(spec.to_dict())
    assert again.to_dict() == spec.to_dict()


@pytest.mark.parametrize("spec", [
    QuantizerSpec.zoom((1, 2, 3), 0.8, 4.0, 0.6, deadzone=0.05),
    QuantizerSpec.zoom((2,), 0.05, 4.0, 0.6),
    QuantizerSpec.box((1, 2), [3, 5], deadzone=0.02),
])
def test_sector_suite(spec):
    st_ = QuantizerState.initial(spec, 0.7)
    grids = [sector_grid(spec, st_, j, count=10_000) for j in range(spec.l)]
    assert all(g.shape[0] >= 10_000 for g in grids)
    rep = verify_sector(spec, st_, grids)
    assert rep.passed, rep.to_dict()
    for node in rep.to_dict()["nodes"]:
        if spec.kind == "box":
            assert node["frac_saturation_detect"] == "not applicable"
        assert node["max_error_ratio"] <= 1.0


def test_sector_needs_samples():
    spec = zoom1()
    with pytest.raises(InvalidArguments):
        verify_sector(spec, QuantizerState.initial(spec), [])


finite = st.floats(-50.0, 50.0, allow_nan=False)


@given(arrays(float, 3, elements=finite), st.floats(0.01, 20.0))
def test_zoom_properties(z, mu):
    spec = QuantizerSpec.zoom((3,), 0.3, 4.0, 0.6, deadzone=0.05)
    q, _ = quantize_node(spec, 0, mu, z)
    if in_range(spec, 0, mu, z):
        # exact sector bound, no tolerance
        assert np.linalg.norm(q - z) <= 0.3 * mu
    qm, _ = quantize_node(spec, 0, mu, -z)
    assert np.array_equal(qm, -q)
    qq, _ = quantize_node(spec, 0, mu, q)
    assert np.array_equal(qq, q)


@given(arrays(float, 2, elements=st.floats(-1.0, 1.0)), arrays(float, 2, elements=finite),
       st.floats(1e-3, 10.0), st.integers(2, 9))
def test_box_sector_bound(u, center, mu, N):
    spec = QuantizerSpec.box((2,), N)
    z = center + u * mu
    q, c = quantize_node(spec, 0, mu, z, center)
    assert np.linalg.norm(q - z) <= math.sqrt(2) * mu / N
    assert np.max(np.abs(q - center)) <= mu
    assert np.array_equal(c, q)


@given(st.floats(1e-6, 1e3), st.integers(1, 30))
def test_zoom_in_strictly_decreases(mu, steps):
    for spec in (zoom1(), QuantizerSpec.box((1,), 3)):
        s = QuantizerState.initial(spec, mu)
        for _ in range(steps):
            nxt = mu_update(spec, s)
            assert np.all(nxt.mu < s.mu)
            s = nxt
