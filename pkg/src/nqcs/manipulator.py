"""Single-link manipulator benchmark: plant, emulated tracking controller,
example constants, quadratic-form search and figure data."""
from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidArguments
from .model import NetworkConfig, SystemDefinition, assemble, simulate
from .quantization import QuantizerSpec
from .scheduling import Combo, ProtocolKind, normalize_tag, uges_constants
from .tradeoff import GainTerms, Linear, Quadratic, TradeoffParams, compute_mati_mad

SQRT3 = math.sqrt(3.0)

# constants as printed with the example (L0, L1, gamma0, gamma1)
PRINTED = {
    "RR": {"L0": 17.7150, "L1": 37.5792, "gamma0": 7.2325, "gamma1": 22.3450},
    "TOD": {"L0": 10.2278, "L1": 21.6964, "gamma0": 7.2325, "gamma1": 22.3450},
    "TODTracking": {"L0": 10.2278, "L1": 21.6964, "gamma0": 7.2325, "gamma1": 22.3450},
}

# (protocol, phi00, phi10) -> printed (h_mati, h_mad)
TARGETS = [
    ("RR", SQRT3, SQRT3, 0.0242, 0.00390),
    ("TOD", SQRT3, SQRT3 + 1, 0.0256, 0.00385),
    ("RR", math.sqrt(2), math.sqrt(2), 0.0255, 0.00425),
    ("TOD", math.sqrt(2), math.sqrt(2) + 1, 0.0242, 0.0069),
    ("RR", 2.0, 2.0, 0.02375, 0.00365),
    ("TOD", 2.0, 3.0, 0.02615, 0.0024),
]
PRINTED_MAX_RHO0 = 2.090

REFERENCE_START = (-math.pi / 2, 0.0)
ETA_START = (0.5, 0.0)


@dataclass(frozen=True)
class ManipulatorParams:
    m: float = 4.905
    a: float = 2.0
    varpi: float = 0.005
    pi_weight: float = 0.005
    rho0: float = 1.0
    uf_amp: float = 2.0
    uf_freq: float = 5.0
    max_delta: float = 0.8  # quantizer constants used for the contraction factor
    max_omega: float = 0.6

    def __post_init__(self):
        if not (self.m > 0 and self.a > 0):
            raise InvalidArguments("m and a must be positive")
        if not (self.varpi > 0 and self.pi_weight > 0):
            raise InvalidArguments("varpi and pi must be positive")
        if self.rho0 < 0:
            raise InvalidArguments("rho0 must be nonnegative")


def controller(p: ManipulatorParams, yhat):
    """Static feedback on the received tracking error."""
    y = np.asarray(yhat, dtype=float)
    return np.array([-(p.m * math.sin(0.5 * y[0]) + y[0] + y[1]) / p.a])


def make_manipulator(p: ManipulatorParams = ManipulatorParams()) -> SystemDefinition:
    m, a = p.m, p.a

    def f_p(x, u):
        return np.array([x[1], -m * math.cos(x[0]) + a * float(np.asarray(u).ravel()[0])])

    def g_p(x):
        return np.asarray(x, dtype=float).copy()

    def f_c(xc, yhat):
        return np.zeros(0)

    def g_c(xc, yhat):
        return controller(p, yhat)

    def u_f(t):
        return np.array([p.uf_amp * math.cos(p.uf_freq * t)])

    def du_f(t):
        return np.array([-p.uf_amp * p.uf_freq * math.sin(p.uf_freq * t)])

    return SystemDefinition(f_p=f_p, g_p=g_p, f_c=f_c, g_c=g_c, u_f=u_f, du_f=du_f,
                            n_p=2, n_c=0, n_u=1, n_y=2, jac_g_p=lambda x: np.eye(2),
                            name="manipulator",
                            kernel_params={"m": m, "a": a, "uf_amp": p.uf_amp,
                                           "uf_freq": p.uf_freq})


def manipulator_protocol(tag) -> ProtocolKind:
    """Three nodes: the two tracking-error outputs and the feedforward.

    Under TOD-tracking the feedforward reaches the reference system and the
    plant directly, so its node carries nothing.
    """
    tag = normalize_tag(tag)
    if tag == "TODTracking":
        return ProtocolKind(tag, (1, 1, 0), n_df=2, n_f=0)
    return ProtocolKind(tag, (1, 1, 1), n_df=2, n_f=1)


def simulation_quantizer(protocol: ProtocolKind, delta=0.05, m=4.0, omega=0.6):
    return QuantizerSpec.zoom(protocol.node_dims, delta, m, omega)


def build_model(tag, h, tau_d, p=ManipulatorParams(), quant="default", mu_policy="adaptive",
                eps=None, h_mati=None, h_mad=None, interval_policy="constant",
                delay_policy="constant", seed=0, use_kernel=True):
    """Model of the manipulator loop for one protocol at given timing."""
    proto = manipulator_protocol(tag)
    if isinstance(quant, str) and quant == "default":
        quant = simulation_quantizer(proto)
    h_mati = h if h_mati is None else h_mati
    h_mad = tau_d if h_mad is None else h_mad
    eps = h if eps is None else eps
    net = NetworkConfig(eps=eps, h_mati=h_mati, h_mad=h_mad,
                        interval_policy=interval_policy, delay_policy=delay_policy,
                        h=h if interval_policy == "constant" else None,
                        tau_d=tau_d if delay_policy == "constant" else None, seed=seed)
    return assemble(make_manipulator(p), quant, proto, net, mu_policy=mu_policy,
                    use_kernel=use_kernel)


def initial_state(model, eta0=ETA_START, xrf0=REFERENCE_START, mu0=1.0):
    return model.initial_state(eta0, xrf0, mu0=mu0)


# --------------------------------------------------------------------------
# example constants


def contraction_factor(p: ManipulatorParams, tag, l=3):
    tag = normalize_tag(tag)
    base = math.sqrt((l - 1) / l)
    gain = p.varpi * (math.sqrt(l) if tag == "RR" else 1.0) * p.max_delta + p.max_omega
    return max(base, gain)


def example_constants(p: ManipulatorParams, tag, l=3):
    """Constants from the printed formulas next to the printed numbers.

    Both readings are returned together with their ratio (printed/formula).
    """
    tag = normalize_tag(tag)
    E1 = p.m + SQRT3 * max(1.0, p.a)
    E2 = SQRT3 * max(1.0 + p.m, p.a)
    lam = contraction_factor(p, tag, l)
    lam1 = lam
    lam2 = math.sqrt(l) if tag == "RR" else 1.0
    M1 = math.sqrt(l) if tag == "RR" else 1.0
    alpha1 = min(1.0, p.varpi)
    rho1 = p.rho0 * lam2 / lam1
    formula = {
        "E1": E1, "E2": E2, "lam": lam, "lam1": lam1, "lam2": lam2, "M1": M1, "rho1": rho1,
        "L0": p.varpi * M1 * E1 / alpha1,
        "L1": p.varpi * M1 * E1 * lam2 / (lam1 * alpha1),
        "gamma0": math.sqrt(p.pi_weight + p.rho0 * E2 ** 2),
        "gamma1": math.sqrt(p.pi_weight + rho1 * lam2 ** 2 * E2 ** 2 / lam1 ** 2),
    }
    printed = dict(PRINTED[tag])
    ratio = {k: printed[k] / formula[k] for k in printed}
    return {"protocol": tag, "formula": formula, "printed": printed, "ratio": ratio}


def printed_tradeoff_params(tag, phi00, phi10, p=ManipulatorParams()):
    c = example_constants(p, tag)
    pr = c["printed"]
    f = c["formula"]
    return TradeoffParams(L0=pr["L0"], L1=pr["L1"], gamma0=pr["gamma0"], gamma1=pr["gamma1"],
                          lam=f["lam"], rho0=p.rho0, rho1=f["rho1"], phi00=phi00, phi10=phi10)


def regression_rows(n_grid=100_000, p=ManipulatorParams()):
    """Solver output for the printed constants against every printed target."""
    rows = []
    for tag, a0, a1, tm, td in TARGETS:
        res = compute_mati_mad(printed_tradeoff_params(tag, a0, a1, p), n_grid=n_grid)
        hm, hd = res.h_mati, res.h_mad
        match = (abs(hm - tm) <= 0.05 * tm) and (abs(hd - td) <= 0.05 * td)
        rows.append({"protocol": tag, "phi00": a0, "phi10": a1, "target_h_mati": tm,
                     "target_h_mad": td, "h_mati": hm, "h_mad": hd,
                     "mad_condition_crossing": res.mad_condition_crossing,
                     "within_5pct": bool(match), "diagnostics": list(res.diagnostics)})
    return rows


def max_rho0(tag="RR", phi00=SQRT3, phi10=SQRT3, p=ManipulatorParams(), hi=10.0, tol=1e-6):
    """Largest rho0 for which the delay condition still holds at tau = 0.

    gamma0/gamma1 are held at their printed values while rho0 varies.
    """
    pr = PRINTED[normalize_tag(tag)]

    def ok(r):
        return pr["gamma1"] * phi10 >= (1.0 + r) * pr["gamma0"] * phi00

    lo = 0.0
    if not ok(lo):
        return 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if ok(mid) else (lo, mid)
    return lo


# --------------------------------------------------------------------------
# quadratic form checks


@dataclass
class QuadraticFormReport:
    coeffs: tuple
    eigenvalues: tuple
    positive_definite: bool
    rho_estimate: float  # largest rho with rho|eta|^2 <= lhs - rhs over the grid
    worst_margin: float
    young_bound_ok: bool
    young_worst: float

    @property
    def passed(self):
        return self.positive_definite and self.rho_estimate > 0 and self.young_bound_ok

    def to_dict(self):
        d = asdict(self)
        d["passed"] = self.passed
        return d


def _form_matrix(phi1, phi2, phi3):
    return np.array([[phi1, phi2 / 2.0], [phi2 / 2.0, phi3]])


def verify_assumption6(p: ManipulatorParams, phi1, phi2, phi3, tag="RR", grid=101,
                       radius=1.0, samples=20_000, seed=0) -> QuadraticFormReport:
    """Check the quadratic form V = phi1 e1^2 + phi2 e1 e2 + phi3 e2^2.

    Tests positive definiteness, then the decay inequality on an eta grid:
      -rho|eta|^2 - H^2 >= -phi2 e1^2 + (2phi1 - 2phi3 - phi2) e1 e2
                           - (2phi3 - phi2) e2^2 + (1/rho0 + 1/rho1)(phi2 e1 + 2 phi3 e2)^2
    and, by sampling eta, e and an effective slope m_hat in [-m, m], the
    bound on <grad V, F_eta> the inequality is derived from.
    """
    P = _form_matrix(phi1, phi2, phi3)
    eig = np.linalg.eigvalsh(P)
    if eig.min() <= 0:
        raise InvalidArguments(
            f"quadratic form is not positive definite: eigenvalues {eig[0]:.6g}, {eig[1]:.6g}")
    c = example_constants(p, tag)["formula"]
    rho0, rho1, E2, M1 = p.rho0, c["rho1"], c["E2"], c["M1"]
    k = 1.0 / rho0 + 1.0 / rho1 if rho0 > 0 else math.inf

    g = np.linspace(-radius, radius, grid)
    e1, e2 = np.meshgrid(g, g)
    e1, e2 = e1.ravel(), e2.ravel()
    keep = (e1 != 0) | (e2 != 0)
    e1, e2 = e1[keep], e2[keep]
    rhs = (-phi2 * e1 ** 2 + (2 * phi1 - 2 * phi3 - phi2) * e1 * e2
           - (2 * phi3 - phi2) * e2 ** 2 + k * (phi2 * e1 + 2 * phi3 * e2) ** 2)
    H = p.varpi * M1 * (np.abs(e1) + np.abs(e1 + e2))
    slack = -rhs - H ** 2
    n2 = e1 ** 2 + e2 ** 2
    rho_est = float(np.min(slack / n2))

    rng = np.random.default_rng(seed)
    eta = rng.uniform(-radius, radius, (samples, 2))
    err = rng.uniform(-radius, radius, (samples, 3))
    mh = rng.uniform(-p.m, p.m, samples)
    grad = np.stack([2 * phi1 * eta[:, 0] + phi2 * eta[:, 1],
                     phi2 * eta[:, 0] + 2 * phi3 * eta[:, 1]], axis=1)
    f2 = (-mh * err[:, 0] - (eta[:, 0] + err[:, 0]) - (eta[:, 1] + err[:, 1])
          + p.a * err[:, 2])
    lhs = grad[:, 0] * eta[:, 1] + grad[:, 1] * f2
    a1, a2 = eta[:, 0], eta[:, 1]
    bound = (-phi2 * a1 ** 2 + (2 * phi1 - 2 * phi3 - phi2) * a1 * a2
             - (2 * phi3 - phi2) * a2 ** 2 + k * (phi2 * a1 + 2 * phi3 * a2) ** 2
             + rho0 * E2 ** 2 * (err[:, 0] ** 2 + err[:, 1] ** 2)
             + rho1 * p.a ** 2 * err[:, 2] ** 2)
    young = bound - lhs
    return QuadraticFormReport((phi1, phi2, phi3), (float(eig[0]), float(eig[1])), True,
                               rho_est, float(slack.min()), bool(young.min() >= -1e-12),
                               float(young.min()))


def search_assumption6(p: ManipulatorParams, tag="RR", box=(0.01, 1.0), steps=12):
    """Grid search over positive (phi2, phi3), with phi1 chosen to cancel the
    cross term; returns reports of feasible triples, best first."""
    c = example_constants(p, tag)["formula"]
    k = 1.0 / p.rho0 + 1.0 / c["rho1"]
    vals = np.geomspace(box[0], box[1], steps)
    found = []
    for phi2 in vals:
        for phi3 in vals:
            phi1 = (2 * phi3 + phi2 - 4 * k * phi2 * phi3) / 2.0
            if phi1 <= 0 or phi1 * phi3 - phi2 ** 2 / 4 <= 0:
                continue
            rep = verify_assumption6(p, float(phi1), float(phi2), float(phi3), tag,
                                     grid=41, samples=2000)
            if rep.passed:
                found.append(rep)
    found.sort(key=lambda r: -r.rho_estimate)
    return found


# --------------------------------------------------------------------------
# a self-consistent certificate for the TOD-tracking loop with e_f = 0


def _lyapunov_2x2(A, Q):
    """Solve A^T P + P A = -Q."""
    n = A.shape[0]
    I = np.eye(n)
    K = np.kron(I, A.T) + np.kron(A.T, I)
    P = np.linalg.solve(K, -Q.reshape(-1)).reshape(n, n)
    return 0.5 * (P + P.T)


def error_field(p: ManipulatorParams, eta, ref1):
    """Tracking-error vector field with exact received outputs (batch)."""
    eta = np.atleast_2d(eta)
    e1, e2 = eta[:, 0], eta[:, 1]
    d2 = (-p.m * (np.cos(e1 + ref1) - np.cos(ref1)) - p.m * np.sin(0.5 * e1) - e1 - e2)
    return np.stack([e2, d2], axis=1)


@dataclass
class TrackingCertificate:
    combo: Combo
    cert: object
    P: np.ndarray
    params: TradeoffParams
    gains: GainTerms
    rho: float
    theta: float
    kappa: float
    K: float
    h_mati: float
    h_mad: float
    region: dict = field(default_factory=dict)

    def V(self, x):
        eta = np.asarray(x, dtype=float)[:2]
        return float(eta @ self.P @ eta)

    def to_dict(self):
        return {"combo": self.combo.name, "P": self.P.tolist(), "params": self.params.to_dict(),
                "rho": self.rho, "theta": self.theta, "kappa": self.kappa, "K": self.K,
                "eps_tilde": self.gains.eps_tilde, "lam": self.cert.lam, "h_mati": self.h_mati,
                "h_mad": self.h_mad, "region": self.region}


def tracking_certificate(p: ManipulatorParams = ManipulatorParams(), varpi=0.25, delta=0.8,
                         omega=0.6, m_range=1e100, theta=0.05, rho_weight=0.05, phi0=1.1,
                         radius=1.5, ref_band=0.45, samples=40_000, seed=0, n_grid=100_000):
    """Constants for the TOD-tracking loop that follow from its own derivation.

    The error-field bound uses K = |(m/2 + 1, 1)| for the effect of stale
    outputs; V = eta' P eta with P from the nominal linearization; the decay
    rate rho is estimated on |eta| <= radius with the reference angle within
    ref_band of the hanging position.
    """
    proto = manipulator_protocol("TODTracking")
    quant = QuantizerSpec.zoom(proto.node_dims, delta, m_range, omega)
    combo = Combo(proto, quant, varpi)
    cert = uges_constants(combo)
    lam1 = cert.lam1

    K = math.hypot(p.m / 2 + 1.0, 1.0)
    A0 = np.array([[0.0, 1.0], [-(p.m + p.m / 2 + 1.0), -1.0]])
    P1 = _lyapunov_2x2(A0, np.diag([10.0, 1.0]))
    n1 = float(np.linalg.norm(P1, 2))

    rng = np.random.default_rng(seed)
    r = radius * np.sqrt(rng.random(samples))
    ang = rng.uniform(0, 2 * np.pi, samples)
    eta = np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1)
    ref1 = -math.pi / 2 + rng.uniform(-ref_band, ref_band, samples)
    F = error_field(p, eta, ref1)
    P1eta = eta @ P1
    # with P = s*P1 and kappa = 4 s |P1|^2 the Young term costs s|P1 eta|^2/(4|P1|^2)
    a = -2 * np.sum(P1eta * F, axis=1) - np.sum(P1eta ** 2, axis=1) / (4 * n1 ** 2)
    H2 = (varpi * np.linalg.norm(F, axis=1)) ** 2
    if np.any(a <= 0):
        raise InvalidArguments("nominal quadratic form does not decay on the sampled region")
    scale = 2.0 * float(np.max(H2 / a))
    P = scale * P1
    kappa = 4.0 * scale * n1 ** 2
    V = np.sum((eta @ P) * eta, axis=1)
    rho = float(np.min((scale * a - H2) / V))

    g0 = math.sqrt(theta + kappa * K ** 2 / varpi ** 2)
    g1 = math.sqrt(theta + kappa * K ** 2 / (lam1 * varpi) ** 2)
    params = TradeoffParams(L0=K, L1=K / lam1, gamma0=g0, gamma1=g1, lam=cert.lam,
                            rho0=rho_weight, rho1=rho_weight, phi00=phi0, phi10=phi0)
    eps_t = 0.9 * min(rho, theta, theta / (g0 * phi0), theta / (g1 * phi0))
    timing = compute_mati_mad(params, n_grid=n_grid)
    # no feedforward channel here, so the offset functions only ever see 0
    gains = GainTerms(rho0=rho, rho1=rho, theta0=theta, theta1=theta, eps_tilde=eps_t,
                      alpha1=Linear(min(1.0, float(np.linalg.eigvalsh(P)[0]))),
                      alpha3=Linear(1.0), sigma1=Quadratic(1.0),
                      eps=timing.h_mati if timing.h_mati > 0 else 1.0)
    return TrackingCertificate(combo, cert, P, params, gains, rho, theta, kappa, K,
                               timing.h_mati, timing.h_mad,
                               {"radius": radius, "ref_band": ref_band})


# --------------------------------------------------------------------------
# figure data


FIG_RUNS = {"fig4": ("RR", 0.0242, 0.00390), "fig5": ("TOD", 0.0256, 0.00385),
            "fig6": ("TODTracking", 0.0256, 0.00385)}


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(v if isinstance(v, str) else f"{v:.17g}" for v in r) + "\n")


def run_figure_simulation(tag, h, tau_d, T=10.0, step=1e-3, p=ManipulatorParams()):
    model = build_model(tag, h, tau_d, p)
    return simulate(model, initial_state(model), T, step=step)


def reproduce_figures(outdir, T=10.0, n_grid=100_000, step=1e-3, p=ManipulatorParams(),
                      curve_stride=50):
    """Write fig2.csv ... fig6.csv and summary.json into outdir."""
    os.makedirs(outdir, exist_ok=True)
    files = []
    curves = {"fig2": ("RR", SQRT3, SQRT3), "fig3": ("TOD", SQRT3, SQRT3 + 1)}
    curve_results = {}
    for name, (tag, a0, a1) in curves.items():
        res = compute_mati_mad(printed_tradeoff_params(tag, a0, a1, p), n_grid=n_grid)
        path = os.path.join(outdir, f"{name}.csv")
        res.write_curve_csv(path, stride=curve_stride)
        curve_results[name] = res.to_dict()
        files.append(path)

    sims = {}
    for name, (tag, h, td) in FIG_RUNS.items():
        tr = run_figure_simulation(tag, h, td, T=T, step=step, p=p)
        arc = tr.arc
        eta = tr.block("eta")
        rows = [(arc.t[k], str(int(arc.j[k])), eta[k, 0], eta[k, 1],
                 float(np.hypot(eta[k, 0], eta[k, 1]))) for k in range(len(arc))]
        path = os.path.join(outdir, f"{name}.csv")
        _write_rows(path, ["t", "j", "eta1", "eta2", "eta_norm"], rows)
        sims[name] = {"protocol": tag, "h": h, "tau_d": td, **tr.metrics}
        files.append(path)

    summary = {
        "regression": regression_rows(n_grid, p),
        "max_rho0": {"computed": max_rho0("RR", p=p), "printed": PRINTED_MAX_RHO0},
        "constants": {t: example_constants(p, t) for t in ("RR", "TOD", "TODTracking")},
        "curves": curve_results,
        "simulations": sims,
    }
    path = os.path.join(outdir, "summary.json")
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, default=_json_default)
        fh.write("\n")
    files.append(path)
    return files


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o)}")
