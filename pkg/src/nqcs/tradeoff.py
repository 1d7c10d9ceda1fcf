"""Transmission-interval / delay tradeoff from the scalar Riccati comparison ODEs.

Each phase b in {0, 1} has a curve phi_b solving

    phi_b' = -2 L_b phi_b - gamma_b ((1 + rho_b) phi_b**2 + 1),   phi_b(0) = phi_b0.

The MATI is the largest tau with gamma0 phi0(tau) >= (1 + rho1) lam**2 gamma1 phi1(0)
(and phi0 still positive); the MAD is the largest tau up to the MATI with
gamma1 phi1(tau) >= (1 + rho0) gamma0 phi0(tau).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .errors import InvalidArguments, NumericalFailure

DEFAULT_GRID = 100_000
BISECT_RTOL = 1e-9  # internal; results are promised to 1e-6 relative

MATI_FAILS_AT_ZERO = "mati-condition-fails-at-zero"
MAD_FAILS_AT_ZERO = "mad-condition-fails-at-zero"
RHO_OUT_OF_RANGE = "rho-outside-admissible-interval"


@dataclass(frozen=True)
class TradeoffParams:
    L0: float
    L1: float
    gamma0: float
    gamma1: float
    lam: float
    rho0: float
    rho1: float
    phi00: float
    phi10: float

    def __post_init__(self):
        for name in ("L0", "L1", "gamma0", "gamma1", "lam", "rho0", "rho1", "phi00", "phi10"):
            v = getattr(self, name)
            if not isinstance(v, (int, float, np.floating, np.integer)) or not math.isfinite(v):
                raise InvalidArguments(f"{name} must be a finite number")
        if self.gamma0 <= 0:
            raise InvalidArguments("gamma0 must be positive")
        if self.gamma1 <= 0:
            raise InvalidArguments("gamma1 must be positive")
        if self.phi00 <= 0:
            raise InvalidArguments("phi00 must be positive")
        if self.phi10 <= 0:
            raise InvalidArguments("phi10 must be positive")
        if self.L0 < 0 or self.L1 < 0:
            raise InvalidArguments("L0 and L1 must be nonnegative")
        if self.rho0 < 0 or self.rho1 < 0:
            raise InvalidArguments("rho0 and rho1 must be nonnegative")
        if not 0 <= self.lam < 1:
            raise InvalidArguments("lam must lie in [0, 1)")

    def phase(self, b):
        if b == 0:
            return self.L0, self.gamma0, self.rho0, self.phi00
        if b == 1:
            return self.L1, self.gamma1, self.rho1, self.phi10
        raise InvalidArguments("phase must be 0 or 1")

    def to_dict(self):
        return {k: float(getattr(self, k)) for k in
                ("L0", "L1", "gamma0", "gamma1", "lam", "rho0", "rho1", "phi00", "phi10")}

    def rho_warnings(self):
        """Warnings for rho_b outside (0, lam^-2 phi_b0^-2 - 1)."""
        out = []
        for b in (0, 1):
            _, _, rho, phi0 = self.phase(b)
            upper = (1.0 / (self.lam ** 2 * phi0 ** 2) - 1.0) if self.lam > 0 else math.inf
            if not 0 < rho < upper:
                out.append(f"{RHO_OUT_OF_RANGE}: rho{b} = {rho:.6g} not in (0, {upper:.6g})")
        return out


# --------------------------------------------------------------------------
# closed form


def _riccati_consts(L, gamma, rho):
    a = gamma * (1.0 + rho)
    k = L / a
    w2 = gamma / a - k * k
    return a, k, w2


def riccati_closed(L, gamma, rho, phi0, tau):
    """Closed-form solution of the constant-coefficient scalar Riccati ODE."""
    tau = np.asarray(tau, dtype=float)
    a, k, w2 = _riccati_consts(L, gamma, rho)
    psi0 = phi0 + k
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        if w2 > 0:
            w = math.sqrt(w2)
            psi = w * np.tan(math.atan(psi0 / w) - a * w * tau)
        elif w2 == 0:
            psi = psi0 / (1.0 + a * psi0 * tau)
        else:
            nu = math.sqrt(-w2)
            R = (psi0 - nu) / (psi0 + nu)
            E = np.exp(-2.0 * a * nu * tau)
            psi = nu * (1.0 + R * E) / (1.0 - R * E)
    return psi - k


def riccati_zero_time(L, gamma, rho, phi0):
    """First tau > 0 where the closed-form solution reaches 0 (phi0 > 0)."""
    a, k, w2 = _riccati_consts(L, gamma, rho)
    psi0 = phi0 + k
    if w2 > 0:
        w = math.sqrt(w2)
        return (math.atan(psi0 / w) - math.atan(k / w)) / (a * w)
    if w2 == 0:
        return (psi0 / k - 1.0) / (a * psi0)
    nu = math.sqrt(-w2)
    R = (psi0 - nu) / (psi0 + nu)
    E = (k - nu) / ((k + nu) * R)
    return -math.log(E) / (2.0 * a * nu)


# --------------------------------------------------------------------------
# numeric curves


@dataclass
class PhiCurve:
    tau: np.ndarray
    phi: np.ndarray
    closed: np.ndarray
    max_discrepancy: float
    truncated: bool = False
    phase: int = 0

    @property
    def agrees(self):
        return self.max_discrepancy <= 1e-8


def _rk4_curves(params_list, tau_max, n_steps):
    L = np.array([p[0] for p in params_list], dtype=float)
    g = np.array([p[1] for p in params_list], dtype=float)
    r = np.array([p[2] for p in params_list], dtype=float)
    y0 = np.array([p[3] for p in params_list], dtype=float)
    steps = np.broadcast_to(np.asarray(tau_max, dtype=float), L.shape) / n_steps
    return kernels.riccati_rk4(L, g, r, y0, np.ascontiguousarray(steps), int(n_steps))


def _truncate(tau, phi):
    bad = ~np.isfinite(phi)
    if bad.any():
        k = int(np.argmax(bad))
        return tau[:k], phi[:k], True
    return tau, phi, False


def phi_solve(params: TradeoffParams, b: int, tau_max: float, step: float) -> PhiCurve:
    """RK4 solution of one phase's curve, cross-checked against the closed form."""
    if not step > 0 or not tau_max > 0:
        raise InvalidArguments("step and tau_max must be positive")
    L, g, r, p0 = params.phase(b)
    n = max(1, int(math.ceil(tau_max / step - 1e-9)))
    phi = _rk4_curves([(L, g, r, p0)], tau_max, n)[0]
    tau = np.linspace(0.0, tau_max, n + 1)
    tau, phi, trunc = _truncate(tau, phi)
    closed = riccati_closed(L, g, r, p0, tau)
    diff = np.abs(phi - closed)
    md = float(np.max(diff[np.isfinite(diff)])) if diff.size else 0.0
    return PhiCurve(tau, phi, closed, md, trunc, b)


def solve_batch(tuples, n_steps=10_000):
    """Integrate many (L, gamma, rho, phi0) tuples to their zero time.

    Returns (tau grids, numeric curves, closed-form curves) as lists.
    """
    ends = np.array([riccati_zero_time(*t) for t in tuples])
    phi = _rk4_curves(list(tuples), ends, n_steps)
    taus, closed = [], []
    for i, t in enumerate(tuples):
        tau = np.linspace(0.0, ends[i], n_steps + 1)
        taus.append(tau)
        closed.append(riccati_closed(*t, tau))
    return taus, list(phi), closed


# --------------------------------------------------------------------------
# MATI / MAD


@dataclass
class MatiMadResult:
    h_mati: float
    h_mad: float
    diagnostics: list
    warnings: list
    tau: np.ndarray
    phi0: np.ndarray
    phi1: np.ndarray
    params: TradeoffParams
    mad_condition_crossing: float | None = None
    phi0_zero: float | None = None
    extras: dict = field(default_factory=dict)

    def curve_columns(self):
        p = self.params
        rhs_a = (1 + p.rho1) * p.lam ** 2 * p.gamma1 * p.phi10
        return {
            "tau": self.tau,
            "phi0": self.phi0,
            "phi1": self.phi1,
            "lhs_mati": p.gamma0 * self.phi0,
            "rhs_mati": np.full_like(self.tau, rhs_a),
            "lhs_mad": p.gamma1 * self.phi1,
            "rhs_mad": (1 + p.rho0) * p.gamma0 * self.phi0,
        }

    def to_dict(self):
        return {"h_mati": self.h_mati, "h_mad": self.h_mad,
                "diagnostics": list(self.diagnostics), "warnings": list(self.warnings),
                "mad_condition_crossing": self.mad_condition_crossing,
                "phi0_zero": self.phi0_zero, "params": self.params.to_dict(), **self.extras}

    def write_curve_csv(self, path, stride=1):
        cols = self.curve_columns()
        names = list(cols)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(names)
            for i in range(0, self.tau.size, stride):
                w.writerow([f"{float(cols[n][i]):.17g}" for n in names])


def _rk4_single(L, g, r, y, h):
    f = lambda p: -2.0 * L * p - g * ((1.0 + r) * p * p + 1.0)  # noqa: E731
    k1 = f(y)
    k2 = f(y + 0.5 * h * k1)
    k3 = f(y + 0.5 * h * k2)
    k4 = f(y + h * k3)
    return y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _first_failure(margin):
    """Index of the first grid point where margin < 0 (or is not finite)."""
    bad = ~(margin >= 0)
    if not bad.any():
        return None
    return int(np.argmax(bad))


def _bisect(cond, lo, hi, rtol=BISECT_RTOL):
    """Largest tau in [lo, hi] with cond true, given cond(lo) and not cond(hi)."""
    while hi - lo > rtol * max(lo, 1e-300) and hi - lo > 1e-300:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if cond(mid):
            lo = mid
        else:
            hi = mid
    return lo


def compute_mati_mad(params: TradeoffParams, n_grid: int = DEFAULT_GRID) -> MatiMadResult:
    p = params
    diagnostics, warnings = [], p.rho_warnings()
    tau_end = riccati_zero_time(p.L0, p.gamma0, p.rho0, p.phi00)
    n = int(n_grid)
    h = tau_end / n
    curves = _rk4_curves([p.phase(0), p.phase(1)], tau_end, n)
    tau = np.arange(n + 1) * h
    phi0, phi1 = curves[0], curves[1]
    if not np.all(np.isfinite(phi0)):
        k = int(np.argmax(~np.isfinite(phi0)))
        raise NumericalFailure("phi0 curve is not finite before its zero",
                               partial=(tau[:k], phi0[:k]))

    rhs_a = (1 + p.rho1) * p.lam ** 2 * p.gamma1 * p.phi10
    margin_a = p.gamma0 * phi0 - rhs_a
    # the grid end is phi0's zero; treat phi0 <= 0 as failing too
    margin_a = np.where(phi0 > 0, margin_a, -1.0)
    with np.errstate(invalid="ignore", over="ignore"):
        margin_b = p.gamma1 * phi1 - (1 + p.rho0) * p.gamma0 * phi0

    def phi_at(b, t):
        k = min(int(t / h), n)
        if k * h > t:
            k -= 1
        L, g, r, _ = p.phase(b)
        base = curves[b][k]
        return base if t == k * h else _rk4_single(L, g, r, base, t - k * h)

    def cond_a(t):
        f0 = phi_at(0, t)
        return f0 > 0 and p.gamma0 * f0 - rhs_a >= 0

    def cond_b(t):
        return p.gamma1 * phi_at(1, t) - (1 + p.rho0) * p.gamma0 * phi_at(0, t) >= 0

    ka = _first_failure(margin_a)
    if ka == 0:
        h_mati = 0.0
        diagnostics.append(
            f"{MATI_FAILS_AT_ZERO}: gamma0*phi00 = {p.gamma0 * p.phi00:.6g} < "
            f"(1+rho1)*lam^2*gamma1*phi10 = {rhs_a:.6g}")
    elif ka is None:
        h_mati = tau_end
    else:
        h_mati = float(min(_bisect(cond_a, tau[ka - 1], tau[ka]), tau_end))

    kb_all = _first_failure(margin_b)
    if kb_all is None:
        crossing = None
    elif kb_all == 0:
        crossing = 0.0
    else:
        if not (np.isfinite(margin_b[kb_all])):
            raise NumericalFailure("phi1 curve is not finite before the delay condition crosses",
                                   partial=(tau[:kb_all], phi1[:kb_all]))
        crossing = float(_bisect(cond_b, tau[kb_all - 1], tau[kb_all]))

    if kb_all == 0:
        h_mad = 0.0
        diagnostics.append(
            f"{MAD_FAILS_AT_ZERO}: gamma1*phi10 = {p.gamma1 * p.phi10:.6g} < "
            f"(1+rho0)*gamma0*phi00 = {(1 + p.rho0) * p.gamma0 * p.phi00:.6g}")
    elif crossing is None:
        h_mad = h_mati
    else:
        h_mad = float(min(crossing, h_mati))

    return MatiMadResult(h_mati, h_mad, diagnostics, warnings, tau, phi0, phi1, p,
                         mad_condition_crossing=crossing, phi0_zero=tau_end)


def closed_form_mati(gamma, lam, phi_bar):
    """MATI for L = 0, rho = 0 and identical phases."""
    return (math.atan(phi_bar) - math.atan(lam ** 2 * phi_bar)) / gamma


# --------------------------------------------------------------------------
# ISS gain


class ComparisonFunction:
    """Class-K-infinity function with an inverse."""

    def __call__(self, s):
        raise NotImplementedError

    def inverse(self, y):
        return invert_by_bisection(self, y)


class Linear(ComparisonFunction):
    def __init__(self, slope):
        if slope <= 0:
            raise InvalidArguments("slope must be positive")
        self.slope = float(slope)

    def __call__(self, s):
        return self.slope * np.asarray(s, dtype=float)

    def inverse(self, y):
        return np.asarray(y, dtype=float) / self.slope


class Quadratic(ComparisonFunction):
    def __init__(self, coef=1.0):
        if coef <= 0:
            raise InvalidArguments("coefficient must be positive")
        self.coef = float(coef)

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        return self.coef * s * s

    def inverse(self, y):
        return np.sqrt(np.asarray(y, dtype=float) / self.coef)


class Power(ComparisonFunction):
    def __init__(self, coef, exponent):
        if coef <= 0 or exponent <= 0:
            raise InvalidArguments("coefficient and exponent must be positive")
        self.coef, self.exponent = float(coef), float(exponent)

    def __call__(self, s):
        return self.coef * np.asarray(s, dtype=float) ** self.exponent

    def inverse(self, y):
        return (np.asarray(y, dtype=float) / self.coef) ** (1.0 / self.exponent)


def invert_by_bisection(fn, y, rtol=1e-13):
    """Inverse of a strictly increasing fn with fn(0) = 0 and fn unbounded."""
    y = float(y)
    if y <= 0:
        return 0.0
    hi = 1.0
    while float(fn(hi)) < y:
        hi *= 2.0
        if hi > 1e300:
            raise NumericalFailure("could not bracket the inverse")
    lo = 0.0
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if float(fn(mid)) < y:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _inverse(fn, y):
    if isinstance(fn, ComparisonFunction):
        return float(fn.inverse(y))
    return invert_by_bisection(fn, y)


@dataclass
class GainTerms:
    rho0: float
    rho1: float
    theta0: float
    theta1: float
    eps_tilde: float
    alpha1: object
    alpha3: object
    sigma1: object
    eps: float

    @property
    def eps_bar(self):
        return min(self.rho0, self.rho1, self.theta0, self.theta1)

    def eps_tilde_upper(self, params: TradeoffParams):
        """Upper end of the admissible interval for the composite decay rate."""
        return self.eps_bar * min(1.0, params.phi00 / params.gamma0, params.phi10 / params.gamma1)

    def check(self, params: TradeoffParams):
        if not self.eps > 0:
            raise InvalidArguments("minimum inter-transmission interval must be positive")
        up = self.eps_tilde_upper(params)
        if not 0 < self.eps_tilde < up:
            raise InvalidArguments(f"eps_tilde = {self.eps_tilde} outside (0, {up:.6g})")


def iss_gain(params: TradeoffParams, gains: GainTerms, v: float) -> float:
    """Explicit ISS gain from the feedforward error magnitude v."""
    gains.check(params)
    if v < 0:
        raise InvalidArguments("v must be nonnegative")
    if v == 0:
        return 0.0
    et = gains.eps_tilde
    inner = 4.0 * (float(gains.sigma1(v)) / et + float(gains.alpha3(v)))
    inner /= 1.0 - math.exp(-gains.eps * et)
    return _inverse(gains.alpha1, inner)


# --------------------------------------------------------------------------
# sweeps


@dataclass
class SweepRow:
    phi00: float
    phi10: float
    h_mati: float | None
    h_mad: float | None
    diagnostics: list
    error: str | None = None

    def to_dict(self):
        return dict(self.__dict__)


def sweep(template: TradeoffParams, phi00_list, phi10_list, pairs=False, n_grid=DEFAULT_GRID):
    """Tradeoff table over initial values; the cartesian product unless ``pairs``."""
    phi00_list, phi10_list = list(phi00_list), list(phi10_list)
    if not phi00_list or not phi10_list:
        raise InvalidArguments("initial-value lists must be non-empty")
    if pairs:
        if len(phi00_list) != len(phi10_list):
            raise InvalidArguments("paired lists must have equal length")
        combos = list(zip(phi00_list, phi10_list))
    else:
        combos = [(a, b) for a in phi00_list for b in phi10_list]
    rows = []
    for a, b in combos:
        try:
            res = compute_mati_mad(replace(template, phi00=float(a), phi10=float(b)), n_grid)
            rows.append(SweepRow(float(a), float(b), res.h_mati, res.h_mad, res.diagnostics))
        except (InvalidArguments, NumericalFailure) as exc:
            rows.append(SweepRow(float(a), float(b), None, None, [], error=str(exc)))
    return rows
