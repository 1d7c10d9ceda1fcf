import numpy as np
import pytest

from nqcs import kernels


def both(name):
    loop, vec = kernels.KERNELS[name]
    return loop, getattr(loop, "py_func", loop), vec


def test_riccati_variants_agree():
    L = np.array([0.0, 3.0, 17.7])
    g = np.array([1.0, 2.0, 7.2])
    r = np.array([0.0, 0.5, 1.0])
    y0 = np.array([1.0, 2.0, 1.7])
    step = np.array([1e-4, 2e-4, 1e-5])
    loop, py, vec = both("riccati_rk4")
    a, b = loop(L, g, r, y0, step, 500), vec(L, g, r, y0, step, 500)
    np.testing.assert_allclose(a, b, rtol=1e-14, atol=1e-15)


@pytest.mark.parametrize("mu_exp", [0.0, -8.0, -25.0, 5.0])
def test_zoom_variants_agree(mu_exp):
    rng = np.random.default_rng(3)
    z = rng.standard_normal((2000, 3)) * 10.0 ** mu_exp
    mu = 10.0 ** (mu_exp + rng.uniform(-12, 1, 2000))
    loop, py, vec = both("zoom_quantize")
    ref = vec(z, mu, 0.3, 4.0, 0.01)
    assert np.array_equal(loop(z, mu, 0.3, 4.0, 0.01), ref)
    assert np.array_equal(py(z, mu, 0.3, 4.0, 0.01), ref)


@pytest.mark.parametrize("N", [2, 3, 7])
def test_box_variants_agree(N):
    rng = np.random.default_rng(N)
    c = rng.standard_normal((2000, 2))
    mu = 10.0 ** rng.uniform(-20, 2, 2000)
    z = c + rng.uniform(-1, 1, (2000, 2)) * mu[:, None]
    # exact faces
    z[:10] = c[:10] + mu[:10, None] * (2.0 / N - 1.0)
    loop, py, vec = both("box_quantize")
    ref = vec(z, c, mu, N)
    assert np.array_equal(loop(z, c, mu, N), ref)
    assert np.all(np.abs(ref - z) <= mu[:, None] / N)


def test_grant_and_deadbeat_variants_agree():
    rng = np.random.default_rng(0)
    norms = np.abs(rng.standard_normal((500, 4))).round(1)
    for name, args in (("tod_grant", (norms,)),
                       ("rr_deadbeat", (norms ** 2, rng.integers(0, 20, 500)))):
        loop, py, vec = both(name)
        np.testing.assert_allclose(loop(*args), vec(*args), rtol=1e-15)


def test_tod_ties_take_min_index():
    out = kernels.tod_grant(np.array([[1.0, 3.0, 3.0], [0.0, 0.0, 0.0]]))
    assert out.tolist() == [1, 0]


def test_manipulator_segment_variants_agree():
    y0 = np.array([0.5, 0.0, -1.5, 0.2, 0.01, -0.02, 0.03])
    loop, py, vec = both("manipulator_segment")
    for tf in (True, False):
        ta, ya = loop(y0, 0.0, 0.0371, 1e-3, 4.905, 2.0, 2.0, 5.0, tf)
        tb, yb = vec(y0, 0.0, 0.0371, 1e-3, 4.905, 2.0, 2.0, 5.0, tf)
        np.testing.assert_array_equal(ta, tb)
        np.testing.assert_allclose(ya, yb, rtol=1e-13, atol=1e-15)
        assert ta[-1] == 0.0371


def test_env_switch_selects_numpy():
    import os
    import subprocess
    import sys
    env = dict(os.environ, NQCS_DISABLE_NUMBA="1")
    code = ("import nqcs, nqcs.kernels as k; "
            "print(nqcs.backend_name(), k.zoom_quantize is k.zoom_quantize_numpy)")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.split() == ["numpy", "True"]
