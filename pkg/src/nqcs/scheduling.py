"""Scheduling protocols, their UGES Lyapunov functions and certified constants.

Node numbers in the public API are 1-based (node 1 .. l); the ``*_index``
helpers and the batch kernels work with 0-based indices.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .errors import InvalidArguments, InvalidWeighting, UnsupportedCombination
from .quantization import QuantizerSpec, mu_update_vector

TAGS = ("RR", "TOD", "TODTracking")
_TAG_ALIASES = {
    "rr": "RR", "round-robin": "RR",
    "tod": "TOD",
    "todtracking": "TODTracking", "tod-tracking": "TODTracking", "tod_tracking": "TODTracking",
}


def normalize_tag(tag: str) -> str:
    if tag in TAGS:
        return tag
    try:
        return _TAG_ALIASES[str(tag).strip().lower()]
    except KeyError:
        raise InvalidArguments(f"unknown protocol {tag!r}") from None


@dataclass(frozen=True)
class ProtocolKind:
    """Protocol tag plus the node partition of theta = (e_df, e_ct, e_f).

    ``node_dims`` splits theta into contiguous blocks; a node may have
    dimension 0 (it never carries data).
    """

    tag: str
    node_dims: tuple
    n_df: int
    n_ct: int = 0
    n_f: int = 0

    def __post_init__(self):
        object.__setattr__(self, "tag", normalize_tag(self.tag))
        dims = tuple(int(d) for d in self.node_dims)
        object.__setattr__(self, "node_dims", dims)
        if len(dims) < 1 or any(d < 0 for d in dims):
            raise InvalidArguments("need at least one node with nonnegative dimension")
        if sum(dims) != self.n_df + self.n_ct + self.n_f:
            raise InvalidArguments(
                f"node dims sum to {sum(dims)} but n_df + n_ct + n_f = "
                f"{self.n_df + self.n_ct + self.n_f}")
        if self.tag == "TODTracking" and self.n_ct and self.n_f:
            if self.n_ct != self.n_f:
                raise InvalidArguments("TOD-tracking needs n_ct == n_f when both are sent")
            node_of = np.repeat(np.arange(self.l), dims)
            ct = node_of[self.n_df:self.n_df + self.n_ct]
            f = node_of[self.n_df + self.n_ct:]
            if np.any(ct != f):
                raise InvalidArguments(
                    "TOD-tracking needs each u_ct component in the same node as its u_f partner")

    @property
    def l(self) -> int:
        return len(self.node_dims)

    @property
    def n_theta(self) -> int:
        return int(sum(self.node_dims))

    @property
    def offsets(self):
        return np.concatenate([[0], np.cumsum(self.node_dims)]).astype(int)

    @property
    def paired(self) -> bool:
        """TOD-tracking with both u_ct and u_f on the network."""
        return self.tag == "TODTracking" and self.n_ct > 0 and self.n_f > 0

    def node_of_entry(self):
        return np.repeat(np.arange(self.l), self.node_dims)

    def to_dict(self):
        return {"tag": self.tag, "node_dims": list(self.node_dims), "n_df": self.n_df,
                "n_ct": self.n_ct, "n_f": self.n_f}


def _as_batch(theta, n):
    arr = np.asarray(theta, dtype=float)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.shape[1] != n:
        raise InvalidArguments(f"error vector has {arr.shape[1]} entries, expected {n}")
    return arr, single


def tracking_map(kind: ProtocolKind, theta):
    """Map theta to the vector TOD-tracking ranks: (e_df, e_ct - e_f).

    The result keeps theta's length; when u_ct and u_f are both sent the e_f
    slots become 0 (their content is folded into the ct slots), otherwise
    they hold -e_f.
    """
    th, single = _as_batch(theta, kind.n_theta)
    z = th.copy()
    a, b = kind.n_df, kind.n_df + kind.n_ct
    if kind.n_f:
        if kind.n_ct:
            z[:, a:b] = th[:, a:b] - th[:, b:]
            z[:, b:] = 0.0
        else:
            z[:, b:] = -th[:, b:]
    return z[0] if single else z


def block_sq(kind: ProtocolKind, theta):
    """Squared block norms, shape (S, l)."""
    th, _ = _as_batch(theta, kind.n_theta)
    o = kind.offsets
    out = np.zeros((th.shape[0], kind.l))
    for j in range(kind.l):
        if o[j + 1] > o[j]:
            out[:, j] = np.sum(th[:, o[j]:o[j + 1]] ** 2, axis=1)
    return out


def _ranked(kind: ProtocolKind, theta):
    return tracking_map(kind, theta) if kind.tag == "TODTracking" else theta


def grant_index(kind: ProtocolKind, c, theta):
    """0-based granted node for a batch (or a single sample)."""
    th, single = _as_batch(theta, kind.n_theta)
    if kind.tag == "RR":
        cc = np.broadcast_to(np.asarray(c, dtype=np.int64), (th.shape[0],))
        out = cc % kind.l
    else:
        norms = np.sqrt(block_sq(kind, _ranked(kind, th)))
        out = kernels.tod_grant(np.ascontiguousarray(norms))
    return int(out[0]) if single else out


def grant(kind: ProtocolKind, c: int, theta, e_f=None) -> int:
    """Node (1-based) that gets network access at transmission counter c.

    ``e_f`` optionally overrides the feedforward slots of theta.
    """
    theta = np.array(theta, dtype=float)
    if theta.shape != (kind.n_theta,):
        raise InvalidArguments(f"theta has shape {theta.shape}, expected ({kind.n_theta},)")
    if e_f is not None and kind.n_f:
        e_f = np.asarray(e_f, dtype=float)
        if e_f.shape != (kind.n_f,):
            raise InvalidArguments("e_f dimension mismatch")
        theta[kind.n_df + kind.n_ct:] = e_f
    return grant_index(kind, c, theta) + 1


def protocol_update(kind: ProtocolKind, c: int, theta, eps_q, node=None):
    """Replace the granted node's block of theta by its quantization error.

    ``eps_q`` is either a full-length vector (its granted block is used) or
    just the block.  Returns (theta_plus, node) with node 1-based.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (kind.n_theta,):
        raise InvalidArguments(f"theta has shape {theta.shape}, expected ({kind.n_theta},)")
    j = grant_index(kind, c, theta) if node is None else int(node) - 1
    o = kind.offsets
    eps_q = np.asarray(eps_q, dtype=float)
    if eps_q.shape == (kind.n_theta,):
        blk = eps_q[o[j]:o[j + 1]]
    elif eps_q.shape == (kind.node_dims[j],):
        blk = eps_q
    else:
        raise InvalidArguments("eps_q must be full length or the granted block")
    out = theta.copy()
    out[o[j]:o[j + 1]] = blk
    return out, j + 1


def homogeneous_rr_orbit(kind: ProtocolKind, c: int, theta, steps: int):
    """States of the round-robin recursion with zero quantization error."""
    cur = np.asarray(theta, dtype=float).copy()
    o = kind.offsets
    orbit = [cur.copy()]
    for i in range(c, c + steps):
        j = i % kind.l
        cur[o[j]:o[j + 1]] = 0.0
        orbit.append(cur.copy())
    return orbit


# --------------------------------------------------------------------------
# combos and Lyapunov functions


@dataclass(frozen=True)
class Combo:
    protocol: ProtocolKind
    quantizer: QuantizerSpec
    varpi: float
    alpha: float = 0.9  # free parameter of the TOD/box decay bound

    def __post_init__(self):
        if tuple(self.protocol.node_dims) != tuple(self.quantizer.dims):
            raise InvalidArguments("protocol and quantizer must use the same node partition")
        if self.quantizer.kind not in ("zoom", "box"):
            raise UnsupportedCombination(
                f"no certificate for {self.protocol.tag} with a {self.quantizer.kind} quantizer")
        if not self.varpi > 0:
            raise InvalidWeighting("varpi must be positive")
        if not 0 < self.alpha < 1:
            raise InvalidArguments("alpha must lie in (0, 1)")

    @property
    def name(self):
        return f"{self.protocol.tag.lower()}+{self.quantizer.kind}"


def _rr_w1(kind, theta, c):
    bs = block_sq(kind, theta)
    cc = np.broadcast_to(np.asarray(c, dtype=np.int64), (bs.shape[0],)).copy()
    return kernels.rr_deadbeat(np.ascontiguousarray(bs), cc)


def _box_mu_sum(spec: QuantizerSpec, mu):
    n = spec.n_levels
    return np.sqrt(np.sum(mu ** 2 * n ** 2 / (n ** 2 - 1.0), axis=1))


def w_bar(combo: Combo, theta, mu, c):
    """Protocol Lyapunov function W-bar(theta, mu, c); batched over rows."""
    kind = combo.protocol
    th, single = _as_batch(theta, kind.n_theta)
    mu = np.atleast_2d(np.asarray(mu, dtype=float))
    if mu.shape[1] != kind.l:
        raise InvalidArguments("mu needs one entry per node")
    box = combo.quantizer.kind == "box"
    if kind.tag == "RR":
        e_part = _rr_w1(kind, th, c)
        m_part = _box_mu_sum(combo.quantizer, mu) if box else np.linalg.norm(mu, axis=1)
    else:
        e_part = np.linalg.norm(_ranked(kind, th), axis=1)
        m_part = np.linalg.norm(mu, axis=1)
    out = combo.varpi * e_part + m_part
    return float(out[0]) if single else out


def uges_W(combo: Combo, e, mu, m1=None, m2=None, c=0, b=0):
    """The protocol Lyapunov function as stated for the certified combos.

    It depends on (e, mu, c) only; the stored payloads m1, m2 and the phase b
    do not enter.  See :func:`composite_W` for the phase-aware version.
    """
    return w_bar(combo, e, mu, c)


def composite_W(combo: Combo, cert, e, mu, m1, m2, c, b):
    """Phase-aware W built from W-bar (max of current and pending values)."""
    kind = combo.protocol
    e = np.asarray(e, dtype=float)
    mu = np.asarray(mu, dtype=float)
    cur = e.copy()
    pend = e + np.asarray(m1, dtype=float)
    if kind.tag != "TODTracking" and kind.n_f:
        cur[kind.n_df + kind.n_ct:] = 0.0
        pend[kind.n_df + kind.n_ct:] = 0.0
    w_now = w_bar(combo, cur, mu, c)
    w_pend = w_bar(combo, pend, mu + np.asarray(m2, dtype=float), c)
    if int(b) == 0:
        return max(w_now, w_pend)
    return max(cert.lam1 / cert.lam2 * w_now, w_pend)


# --------------------------------------------------------------------------
# certified constants


@dataclass(frozen=True)
class GrowthBounds:
    M_e: float = 0.0
    M_f: float = 0.0
    m_bar: object = None

    def __post_init__(self):
        if self.M_e < 0 or self.M_f < 0:
            raise InvalidArguments("growth constants must be nonnegative")


@dataclass
class UgesCertificate:
    combo: str
    lam: float
    lam1: float
    lam2: float
    M1: float
    varpi: float
    alpha1W_slope: float
    alpha2W_slope: float
    alpha3W_slope: float = 0.0
    alpha4W_slope: float = 0.0
    varpi_max: float = math.inf
    L0: float | None = None
    L1: float | None = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.lam < 1:
            raise InvalidWeighting(f"contraction factor {self.lam:.6g} is not below 1")

    def to_dict(self):
        d = asdict(self)
        d["varpi_max"] = None if math.isinf(self.varpi_max) else self.varpi_max
        return d


def uges_constants(combo: Combo, growth: GrowthBounds | None = None,
                   check_interval=True) -> UgesCertificate:
    kind, q = combo.protocol, combo.quantizer
    l = kind.l
    w = combo.varpi
    base = math.sqrt((l - 1) / l)
    extras = {}
    if q.kind == "zoom":
        max_delta = float(np.max(q.delta))
        max_omega = float(np.max(q.omega))
        # a paired TOD-tracking block mixes two quantization errors
        kappa = math.sqrt(2.0) if kind.paired else 1.0
        extras.update(max_delta=max_delta, max_omega=max_omega, kappa=kappa)
        if kind.tag == "RR":
            lam = max(base, w * math.sqrt(l) * max_delta + max_omega)
            w_max = (1 - max_omega) / (math.sqrt(l) * max_delta)
            a2, lam2, M1 = 1 + w * math.sqrt(l), math.sqrt(l), w * math.sqrt(l)
        else:
            lam = max(base, w * kappa * max_delta + max_omega)
            w_max = (1 - max_omega) / (kappa * max_delta)
            a2, lam2, M1 = 1 + w, 1.0, w
    else:
        n_bar = float(np.min(q.n_levels))
        d = float(np.max(np.sqrt(np.asarray(q.dims, dtype=float)) / q.n_levels))
        rho_bar = math.sqrt((n_bar ** 2 * l - n_bar ** 2 + 1) / (n_bar ** 2 * l))
        extras.update(n_bar=n_bar, d=d, rho_bar=rho_bar)
        if kind.tag == "RR":
            lam = max(base, w * d * math.sqrt(l) + rho_bar)
            w_max = (1 - rho_bar) / (d * math.sqrt(l))
            a2 = w * math.sqrt(l) + math.sqrt(n_bar ** 2 * l / (n_bar ** 2 - 1))
            lam2, M1 = math.sqrt(l), w * math.sqrt(l)
        else:
            a = combo.alpha
            kappa = math.sqrt(2.0) if kind.paired else 1.0
            rho_t = max(base, math.sqrt((n_bar ** 2 * l - a ** 2 * n_bar ** 2 + a) / (n_bar ** 2 * l)))
            extras.update(rho_tilde=rho_t, alpha=a, kappa=kappa)
            lam = max(base, w * kappa * d + rho_t)
            w_max = (1 - rho_bar) / (kappa * d)
            a2, lam2, M1 = 1 + w * math.sqrt(l), 1.0, w
    if check_interval and not (0 < w < w_max):
        raise InvalidWeighting(f"varpi = {w} outside (0, {w_max:.6g}) for {combo.name}")
    if check_interval and not lam < 1:
        raise InvalidWeighting(f"varpi = {w} gives contraction factor {lam:.6g} >= 1")
    cert = UgesCertificate(combo=combo.name, lam=lam, lam1=lam, lam2=lam2, M1=M1, varpi=w,
                           alpha1W_slope=min(1.0, w), alpha2W_slope=a2,
                           varpi_max=w_max, extras=extras)
    if growth is not None:
        a1 = cert.alpha1W_slope
        cert.L0 = M1 * growth.M_e / a1
        cert.L1 = lam2 * M1 * growth.M_e / (lam * a1)
        cert.alpha3W_slope = (1 + lam) * M1
        cert.extras["sigmaW_slope"] = (growth.M_e * M1 / a1 + growth.M_f) * M1
    return cert


# --------------------------------------------------------------------------
# sample-based verification


@dataclass
class UgesReport:
    combo: str
    n_samples: int
    n_used: int
    n_rejected_saturated: int
    n_rejected_domain: int
    lam: float
    lam2: float
    alpha1: float
    alpha2: float
    max_contraction: float
    max_counter_bump: float
    min_lower_ratio: float
    max_upper_ratio: float
    slack: float = 1e-12

    @property
    def checks(self):
        s = self.slack
        return {
            "contraction": self.max_contraction <= self.lam + s,
            "counter_bump": self.max_counter_bump <= self.lam2 + s,
            "lower_bound": self.min_lower_ratio >= self.alpha1 - s,
            "upper_bound": self.max_upper_ratio <= self.alpha2 + s,
        }

    @property
    def passed(self):
        return self.n_used > 0 and all(self.checks.values())

    def to_dict(self):
        d = dict(self.__dict__)
        d["checks"] = self.checks
        d["passed"] = self.passed
        return d


def _random_samples(combo: Combo, n, rng):
    kind = combo.protocol
    scale = 10.0 ** rng.uniform(-4, 2, size=(n, 1))
    theta = rng.standard_normal((n, kind.n_theta)) * scale
    # occasionally make blocks tie or vanish to exercise the grant rules
    zap = rng.random((n, kind.n_theta)) < 0.05
    theta[zap] = 0.0
    mu = 10.0 ** rng.uniform(-4, 2, size=(n, kind.l))
    c = rng.integers(0, 10 * kind.l, size=n)
    return theta, mu, c


def _quantization_errors(combo: Combo, g, mu, rng):
    """Errors from quantizing a random signal at each sample's granted node.

    Returns (eps blocks as a full-length array, saturated mask).
    """
    kind, q = combo.protocol, combo.quantizer
    S = g.shape[0]
    eps = np.zeros((S, kind.n_theta))
    sat = np.zeros(S, dtype=bool)
    o = kind.offsets
    for j in range(kind.l):
        rows = np.nonzero(g == j)[0]
        n = kind.node_dims[j]
        if rows.size == 0 or n == 0:
            continue
        m = mu[rows, j]
        if q.kind == "box":
            center = rng.standard_normal((rows.size, n)) * m[:, None]
            z = center + rng.uniform(-1.1, 1.1, size=(rows.size, n)) * m[:, None]
            bad = np.max(np.abs(z - center), axis=1) > m
            qq = kernels.box_quantize(z, center, m, int(q.n_levels[j]))
            dead = np.linalg.norm(z, axis=1) <= q.deadzone[j]
            qq[dead] = 0.0
        else:
            direction = rng.standard_normal((rows.size, n))
            direction /= np.maximum(np.linalg.norm(direction, axis=1, keepdims=True), 1e-300)
            radius = rng.uniform(0, 1.1, size=(rows.size, 1)) * q.m_range[j] * m[:, None]
            z = direction * radius
            bad = np.linalg.norm(z, axis=1) > q.m_range[j] * m
            qq = kernels.zoom_quantize(z, m, float(q.delta[j]), float(q.m_range[j]),
                                       float(q.deadzone[j]))
        eps[rows, o[j]:o[j + 1]] = qq - z
        sat[rows] = bad
    return eps, sat


def verify_uges(combo: Combo, samples=100_000, seed=0, cert: UgesCertificate | None = None,
                slack=1e-12) -> UgesReport:
    """Check contraction, counter bump and sandwich bounds on random samples.

    ``samples`` is a count or a dict with arrays ``theta`` (S, n), ``mu`` (S, l)
    and ``c`` (S,).  Samples with nonpositive mu are rejected (domain) and so
    are samples whose quantizer input saturates.
    """
    kind = combo.protocol
    if cert is None:
        cert = uges_constants(combo)
    rng = np.random.default_rng(seed)
    if isinstance(samples, dict):
        theta = np.atleast_2d(np.asarray(samples["theta"], dtype=float))
        mu = np.atleast_2d(np.asarray(samples["mu"], dtype=float))
        c = np.atleast_1d(np.asarray(samples["c"], dtype=np.int64))
    else:
        theta, mu, c = _random_samples(combo, int(samples), rng)
    n_total = theta.shape[0]
    domain_ok = np.all(mu > 0, axis=1)
    n_domain = int((~domain_ok).sum())
    theta, mu, c = theta[domain_ok], mu[domain_ok], c[domain_ok]

    g = grant_index(kind, c, theta) if theta.shape[0] else np.zeros(0, dtype=np.int64)
    g = np.atleast_1d(g)
    eps, sat = _quantization_errors(combo, g, mu, rng)
    keep = ~sat
    theta, mu, c, g, eps = theta[keep], mu[keep], c[keep], g[keep], eps[keep]
    n_used = theta.shape[0]

    if n_used == 0:
        nan = float("nan")
        return UgesReport(combo.name, n_total, 0, int(sat.sum()), n_domain, cert.lam, cert.lam2,
                          cert.alpha1W_slope, cert.alpha2W_slope, nan, nan, nan, nan, slack)

    o = kind.offsets
    h_theta = theta.copy()
    for j in range(kind.l):
        rows = g == j
        h_theta[rows, o[j]:o[j + 1]] = eps[rows, o[j]:o[j + 1]]
    h_mu = mu_update_vector(combo.quantizer, mu)

    before = w_bar(combo, theta, mu, c)
    after = w_bar(combo, h_theta, h_mu, c + 1)
    bumped = w_bar(combo, theta, mu, c + 1)
    ref = _ranked(kind, theta) if kind.tag == "TODTracking" else theta
    size = np.sqrt(np.sum(ref ** 2, axis=1) + np.sum(mu ** 2, axis=1))
    return UgesReport(
        combo=combo.name, n_samples=n_total, n_used=n_used,
        n_rejected_saturated=int(sat.sum()), n_rejected_domain=n_domain,
        lam=cert.lam, lam2=cert.lam2, alpha1=cert.alpha1W_slope, alpha2=cert.alpha2W_slope,
        max_contraction=float(np.max(after / before)),
        max_counter_bump=float(np.max(bumped / before)),
        min_lower_ratio=float(np.min(before / size)),
        max_upper_ratio=float(np.max(before / size)),
        slack=slack)
