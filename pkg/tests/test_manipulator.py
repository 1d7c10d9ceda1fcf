import math

import numpy as np
import pytest

from nqcs.errors import InvalidArguments
from nqcs.manipulator import (PRINTED, PRINTED_MAX_RHO0, ManipulatorParams, controller,
                              contraction_factor, error_field, example_constants,
                              make_manipulator, max_rho0, printed_tradeoff_params,
                              regression_rows, reproduce_figures, search_assumption6,
                              tracking_certificate, verify_assumption6)

P = ManipulatorParams()


def test_controller_and_plant_examples():
    assert controller(P, [0.0, 0.0])[0] == 0.0
    sd = make_manipulator(P)
    assert sd.f_p(np.array([math.pi / 2, 0.3]), np.array([0.7]))[1] == pytest.approx(2.0 * 0.7,
                                                                                    abs=1e-15)
    assert sd.u_f(0.0)[0] == 2.0
    h = 1e-6
    assert sd.du_f(0.3)[0] == pytest.approx((sd.u_f(0.3 + h) - sd.u_f(0.3 - h))[0] / (2 * h),
                                            rel=1e-6)


def test_example_constants():
    c = example_constants(P, "TOD")
    assert c["formula"]["E2"] == pytest.approx(math.sqrt(3) * 5.905)
    assert c["formula"]["E2"] == pytest.approx(10.2278, abs=5e-5)
    assert c["formula"]["E2"] == pytest.approx(PRINTED["TOD"]["L0"], abs=5e-5)
    rr = example_constants(P, "RR")
    assert rr["formula"]["lam"] == pytest.approx(0.81650, abs=5e-6)
    assert (rr["printed"]["L0"], rr["printed"]["L1"], rr["printed"]["gamma0"],
            rr["printed"]["gamma1"]) == (17.7150, 37.5792, 7.2325, 22.3450)
    # the printed RR L0 follows sqrt(3) * E2, not the E1-based formula
    assert rr["printed"]["L0"] == pytest.approx(math.sqrt(3) * rr["formula"]["E2"], rel=1e-5)
    assert example_constants(P, "RR") == rr


def test_printed_gamma0_reading():
    E2 = example_constants(P, "RR")["formula"]["E2"]
    assert PRINTED["RR"]["gamma0"] == pytest.approx(math.sqrt(0.005 + E2 ** 2 / 2), rel=1e-4)


def test_contraction_factor_matches_certificate():
    from nqcs.manipulator import manipulator_protocol
    from nqcs.quantization import QuantizerSpec
    from nqcs.scheduling import Combo, uges_constants
    for tag in ("RR", "TOD"):
        proto = manipulator_protocol(tag)
        combo = Combo(proto, QuantizerSpec.zoom(proto.node_dims, 0.8, 4.0, 0.6), 0.005)
        assert uges_constants(combo).lam == pytest.approx(contraction_factor(P, tag))


def test_max_rho0_matches_printed():
    assert max_rho0() == pytest.approx(PRINTED_MAX_RHO0, abs=1e-3)


def test_regression_rows_report_diagnostic():
    rows = regression_rows(n_grid=2000)
    assert len(rows) == 6
    for r in rows:
        assert r["within_5pct"] or r["diagnostics"]


def test_identity_form():
    rep = verify_assumption6(P, 1.0, 0.0, 1.0)
    assert rep.positive_definite and rep.eigenvalues == (1.0, 1.0)
    # phi2 = 0 leaves no decay margin: rejected
    assert not rep.passed


@pytest.mark.parametrize("phi2", [0.0, -0.05, -0.3])
def test_nonpositive_cross_term_rejected(phi2):
    assert not verify_assumption6(P, 0.2, phi2, 0.2).passed


def test_not_positive_definite():
    with pytest.raises(InvalidArguments, match="eigenvalues"):
        verify_assumption6(P, 1.0, 3.0, 1.0)


def test_search_finds_feasible_triple():
    found = search_assumption6(P)
    assert found and found[0].passed and found[0].rho_estimate > 0


def test_error_field_zero_at_origin():
    rng = np.random.default_rng(0)
    ref = rng.uniform(-4, 4, 100)
    F = error_field(P, np.zeros((100, 2)), ref)
    assert np.all(F == 0.0)


def test_tracking_certificate_is_consistent():
    tc = tracking_certificate(n_grid=20_000)
    assert tc.rho > 0
    assert np.all(np.linalg.eigvalsh(tc.P) > 0)
    assert tc.h_mati > 0 and tc.h_mad == pytest.approx(tc.h_mati, rel=1e-3)
    g = tc.gains
    assert 0 < g.eps_tilde <= min(tc.rho, tc.theta)


def test_printed_params_shape():
    p = printed_tradeoff_params("TOD", math.sqrt(3), math.sqrt(3) + 1)
    assert p.gamma0 == 7.2325 and p.rho0 == 1.0


def test_reproduce_figures(tmp_path):
    files = reproduce_figures(tmp_path, T=0.5, n_grid=2000, curve_stride=10)
    names = sorted(p.rsplit("/", 1)[-1] for p in map(str, files))
    assert names == ["fig2.csv", "fig3.csv", "fig4.csv", "fig5.csv", "fig6.csv", "summary.json"]
    head = (tmp_path / "fig4.csv").read_text().splitlines()[0]
    assert head == "t,j,eta1,eta2,eta_norm"
