"""Closed-loop NQCS model: flow map, transmission/update jumps, schedules,
simulation and trajectory-level Lyapunov certification."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import kernels
from .errors import (CertificationDomainError, ConfigurationError, InvalidArguments,
                     SaturationError, WrongPhase)
from .hybrid import HybridArc, HybridSystemDef, integrate_flow, run_hybrid
from .quantization import QuantizerSpec, in_range, mu_update_vector, quantize_node
from .scheduling import Combo, ProtocolKind, composite_W, grant_index, uges_constants
from .tradeoff import TradeoffParams, riccati_closed, riccati_zero_time

SET_TOL = 1e-12
FD_REL_STEP = 1e-6


# --------------------------------------------------------------------------
# system description


def fd_jacobian(fn, x, rel_step=FD_REL_STEP):
    """Central finite-difference Jacobian of fn at x."""
    x = np.asarray(x, dtype=float)
    f0 = np.atleast_1d(fn(x))
    jac = np.empty((f0.size, x.size))
    for i in range(x.size):
        h = rel_step * max(1.0, abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        jac[:, i] = (np.atleast_1d(fn(xp)) - np.atleast_1d(fn(xm))) / (2.0 * h)
    return jac


@dataclass
class SystemDefinition:
    """Plant, emulated controller and feedforward signal.

    f_p(x_p, u) and g_p(x_p) describe the plant; the reference system reuses
    f_p driven by the (received) feedforward.  The controller has state x_c
    with f_c(x_c, y_hat) and output g_c(x_c, y_hat), where y_hat is the
    received tracking output.  A static controller has n_c = 0.
    """

    f_p: Callable
    g_p: Callable
    f_c: Callable
    g_c: Callable
    u_f: Callable
    du_f: Callable
    n_p: int
    n_c: int
    n_u: int
    n_y: int
    jac_g_p: Optional[Callable] = None
    jac_g_c: Optional[Callable] = None  # d g_c / d x_c
    finite_difference: bool = True
    name: str = "custom"
    kernel_params: Optional[dict] = None  # enables the compiled manipulator flow

    def __post_init__(self):
        for k in ("n_p", "n_c", "n_u", "n_y"):
            if int(getattr(self, k)) < 0:
                raise InvalidArguments(f"{k} must be nonnegative")

    def g_p_jacobian(self, x):
        if self.jac_g_p is not None:
            return np.atleast_2d(self.jac_g_p(x))
        if not self.finite_difference:
            raise ConfigurationError("no Jacobian for g_p and finite differences are disabled")
        return fd_jacobian(self.g_p, x)

    def g_c_jacobian(self, xc, yhat):
        if self.n_c == 0:
            return np.zeros((self.n_u, 0))
        if self.jac_g_c is not None:
            return np.atleast_2d(self.jac_g_c(xc, yhat))
        if not self.finite_difference:
            raise ConfigurationError("no Jacobian for g_c and finite differences are disabled")
        return fd_jacobian(lambda v: self.g_c(v, yhat), xc)


# --------------------------------------------------------------------------
# network timing


INTERVAL_POLICIES = ("constant", "uniform")
DELAY_POLICIES = ("constant", "uniform")


@dataclass(frozen=True)
class NetworkConfig:
    """Transmission timing.

    ``h`` and ``tau_d`` are the constant-policy values; they default to the
    effective interval bound and to h_mad.
    """

    eps: float
    h_mati: float
    h_mad: float
    dropouts: int = 0
    interval_policy: str = "constant"
    delay_policy: str = "constant"
    h: Optional[float] = None
    tau_d: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if not self.eps > 0:
            raise InvalidArguments("eps must be positive")
        if not self.h_mati >= self.h_mad >= 0:
            raise InvalidArguments("need h_mati >= h_mad >= 0")
        if int(self.dropouts) < 0:
            raise InvalidArguments("dropouts must be >= 0")
        if self.interval_policy not in INTERVAL_POLICIES:
            raise InvalidArguments(f"unknown interval policy {self.interval_policy!r}")
        if self.delay_policy not in DELAY_POLICIES:
            raise InvalidArguments(f"unknown delay policy {self.delay_policy!r}")
        hb = self.h_bar
        if self.eps > hb * (1 + 1e-12):
            raise InvalidArguments(
                f"eps = {self.eps:.6g} exceeds the interval bound {hb:.6g}")
        if self.h is not None and not (self.eps * (1 - 1e-12) <= self.h <= hb * (1 + 1e-12)):
            raise InvalidArguments(f"constant interval {self.h} outside [eps, {hb:.6g}]")
        if self.tau_d is not None:
            if self.tau_d < 0:
                raise InvalidArguments("tau_d must be nonnegative")
            shortest = self.eps if self.interval_policy == "uniform" else self.interval
            if self.tau_d > min(self.h_mad, shortest) * (1 + 1e-12):
                raise InvalidArguments("constant delay exceeds min(h_mad, interval)")

    @property
    def h_bar(self):
        """Interval bound with dropouts folded in."""
        return self.h_mati / (int(self.dropouts) + 1)

    @property
    def interval(self):
        return self.h_bar if self.h is None else float(self.h)

    @property
    def delay(self):
        if self.tau_d is not None:
            return float(self.tau_d)
        return min(self.h_mad, self.interval)

    def to_dict(self):
        return {k: getattr(self, k) for k in ("eps", "h_mati", "h_mad", "dropouts",
                                              "interval_policy", "delay_policy", "h",
                                              "tau_d", "seed")}


class Schedule:
    """Lazily sampled interval/delay stream; identical for identical configs.

    Transmission k (0-based) happens ``interval(k)`` after transmission k-1
    (after t0 for k = 0) and arrives ``delay(k)`` later.  The delay is capped
    by the interval that follows, so every packet lands before the next one
    is sent.
    """

    CHUNK = 4096

    def __init__(self, net: NetworkConfig):
        self.net = net
        self._rng = np.random.default_rng(net.seed)
        self._h = np.empty(0)
        self._u = np.empty(0)
        self._d = np.empty(0)

    def _grow(self, k):
        """Make intervals 0..k+1 and delays 0..k available."""
        net = self.net
        while self._h.size <= k + 1:
            n = self.CHUNK
            u_h = self._rng.random(n)
            u_d = self._rng.random(n)
            if net.interval_policy == "constant":
                h = np.full(n, net.interval)
            else:
                h = np.clip(net.eps + (net.h_bar - net.eps) * u_h, net.eps, net.h_bar)
            self._h = np.concatenate([self._h, h])
            self._u = np.concatenate([self._u, u_d])
        done = self._d.size
        if done < self._h.size - 1:
            nxt = self._h[done + 1:]
            if net.delay_policy == "constant":
                d = np.minimum(net.delay, nxt)
            else:
                d = self._u[done:self._h.size - 1] * np.minimum(net.h_mad, nxt)
            self._d = np.concatenate([self._d, d])

    def interval(self, k):
        self._grow(k)
        return float(self._h[k])

    def delay(self, k):
        self._grow(k)
        return float(self._d[k])

    def arrays(self, count):
        self._grow(count - 1)
        return self._h[:count].copy(), self._d[:count].copy()


@dataclass
class ScheduleSample:
    times: np.ndarray  # transmission instants
    intervals: np.ndarray
    delays: np.ndarray

    @property
    def arrivals(self):
        return self.times + self.delays


def sample_schedule(net: NetworkConfig, count: int, t0=0.0) -> ScheduleSample:
    if count < 1:
        raise InvalidArguments("count must be >= 1")
    h, d = Schedule(net).arrays(count)
    return ScheduleSample(t0 + np.cumsum(h), h, d)


# --------------------------------------------------------------------------
# state layout


@dataclass
class NqcsState:
    eta: np.ndarray
    xc: np.ndarray
    xrf: np.ndarray
    e: np.ndarray
    mu: np.ndarray
    m1: np.ndarray
    m2: np.ndarray
    zhat: np.ndarray
    tau: float = 0.0
    c: int = 0
    b: int = 0


class StateLayout:
    FIELDS = ("eta", "xc", "xrf", "e", "mu", "m1", "m2", "zhat", "tau", "c", "b")

    def __init__(self, n_p, n_c, n_e, l, n_zhat):
        sizes = dict(eta=n_p, xc=n_c, xrf=n_p, e=n_e, mu=l, m1=n_e, m2=l, zhat=n_zhat,
                     tau=1, c=1, b=1)
        self.slices = {}
        o = 0
        for k in self.FIELDS:
            self.slices[k] = slice(o, o + sizes[k])
            o += sizes[k]
        self.size = o
        self.tau = self.slices["tau"].start
        self.c = self.slices["c"].start
        self.b = self.slices["b"].start

    def __getitem__(self, k):
        return self.slices[k]


# --------------------------------------------------------------------------
# the model


MU_POLICIES = ("always", "adaptive")


class NqcsModel:
    """Closed loop of plant, reference, emulated controller and network.

    ``mu_policy``:
      "always"   every node's parameter takes the zoom-in step at each arrival;
      "adaptive" per-node zoom in/out from the range usage of the transmitted
                 signal, plus an immediate zoom-out of a granted node that would
                 otherwise saturate.
    ``quant=None`` models an ideal channel (zero quantization error).
    """

    def __init__(self, system: SystemDefinition, quant: QuantizerSpec | None,
                 protocol: ProtocolKind, net: NetworkConfig, mu_policy="always",
                 zoom_margin=0.5, use_kernel=True):
        if protocol.n_df != system.n_y:
            raise InvalidArguments(f"protocol carries {protocol.n_df} output entries, "
                                   f"system has {system.n_y}")
        if protocol.n_ct not in (0, system.n_u) or protocol.n_f not in (0, system.n_u):
            raise InvalidArguments("n_ct and n_f must each be 0 or n_u")
        if quant is not None and tuple(quant.dims) != tuple(protocol.node_dims):
            raise InvalidArguments(f"quantizer dims {quant.dims} differ from protocol "
                                   f"nodes {protocol.node_dims}")
        if mu_policy not in MU_POLICIES:
            raise InvalidArguments(f"unknown mu policy {mu_policy!r}")
        if not 0 < zoom_margin < 1:
            raise InvalidArguments("zoom_margin must lie in (0, 1)")
        if protocol.n_ct and system.n_c and system.jac_g_c is None and not system.finite_difference:
            raise ConfigurationError("no Jacobian for g_c and finite differences are disabled")
        if system.jac_g_p is None and not system.finite_difference:
            raise ConfigurationError("no Jacobian for g_p and finite differences are disabled")
        self.system = system
        self.quant = quant
        self.protocol = protocol
        self.net = net
        self.mu_policy = mu_policy
        self.zoom_margin = float(zoom_margin)
        self.schedule = Schedule(net)
        n_zhat = quant.total_dim if (quant is not None and quant.kind == "box") else 0
        self.layout = StateLayout(system.n_p, system.n_c, protocol.n_theta, protocol.l, n_zhat)
        self.events = []
        self._kernel = None
        if (use_kernel and system.kernel_params is not None and system.n_c == 0
                and protocol.n_ct == 0):
            self._kernel = dict(system.kernel_params)

    # -- packing -----------------------------------------------------------

    @property
    def l(self):
        return self.protocol.l

    def pack(self, st: NqcsState):
        L = self.layout
        xi = np.zeros(L.size)
        for k in ("eta", "xc", "xrf", "e", "mu", "m1", "m2", "zhat"):
            v = np.atleast_1d(np.asarray(getattr(st, k), dtype=float))
            if v.size != L[k].stop - L[k].start:
                raise InvalidArguments(f"{k} has {v.size} entries, expected "
                                       f"{L[k].stop - L[k].start}")
            xi[L[k]] = v
        xi[L.tau] = st.tau
        xi[L.c] = st.c
        xi[L.b] = st.b
        return xi

    def unpack(self, xi) -> NqcsState:
        L = self.layout
        xi = np.asarray(xi, dtype=float)
        parts = {k: xi[L[k]].copy() for k in ("eta", "xc", "xrf", "e", "mu", "m1", "m2", "zhat")}
        return NqcsState(**parts, tau=float(xi[L.tau]), c=int(round(xi[L.c])),
                         b=int(round(xi[L.b])))

    def initial_state(self, eta0, xrf0, xc0=None, mu0=1.0, e0=None, zhat0=None):
        """Start at a transmission instant: b = 0, tau = 0, empty payloads."""
        sd, L = self.system, self.layout
        n_e = self.protocol.n_theta
        mu = np.broadcast_to(np.asarray(mu0, dtype=float), (self.l,)).copy()
        if np.any(~(mu > 0)):
            raise InvalidArguments("mu0 must be positive")
        zh = np.zeros(L["zhat"].stop - L["zhat"].start)
        if zhat0 is not None:
            zh[:] = zhat0
        st = NqcsState(eta=np.asarray(eta0, dtype=float),
                       xc=np.zeros(sd.n_c) if xc0 is None else np.asarray(xc0, dtype=float),
                       xrf=np.asarray(xrf0, dtype=float),
                       e=np.zeros(n_e) if e0 is None else np.asarray(e0, dtype=float),
                       mu=mu, m1=np.zeros(n_e), m2=np.zeros(self.l), zhat=zh)
        return self.pack(st)

    # -- signals -----------------------------------------------------------

    def _split_e(self, e):
        p = self.protocol
        a, b = p.n_df, p.n_df + p.n_ct
        return e[:a], e[a:b], e[b:]

    def received(self, t, xi):
        """Received signals (y_hat, u_ct_hat, u_f_hat) and true ones (y_df, u_ct, u_f)."""
        sd, L = self.system, self.layout
        eta, xc, xrf = xi[L["eta"]], xi[L["xc"]], xi[L["xrf"]]
        e_df, e_ct, e_f = self._split_e(xi[L["e"]])
        y_df = np.atleast_1d(sd.g_p(eta + xrf)) - np.atleast_1d(sd.g_p(xrf))
        y_hat = y_df + e_df
        u_ct = np.atleast_1d(sd.g_c(xc, y_hat))
        u_f = np.atleast_1d(sd.u_f(t))
        u_ct_hat = u_ct + e_ct if self.protocol.n_ct else u_ct
        u_f_hat = u_f + e_f if self.protocol.n_f else u_f
        return (y_hat, u_ct_hat, u_f_hat), (y_df, u_ct, u_f)

    def node_signals(self, t, xi):
        """True values of the transmitted signals, laid out like e."""
        _, (y_df, u_ct, u_f) = self.received(t, xi)
        parts = [y_df]
        if self.protocol.n_ct:
            parts.append(u_ct)
        if self.protocol.n_f:
            parts.append(u_f)
        return np.concatenate(parts)

    # -- flow ----------------------------------------------------------------

    def flow(self, t, xi):
        sd, L, p = self.system, self.layout, self.protocol
        eta, xc, xrf = xi[L["eta"]], xi[L["xc"]], xi[L["xrf"]]
        (y_hat, u_ct_hat, u_f_hat), _ = self.received(t, xi)
        xp = eta + xrf
        F_rf = np.atleast_1d(sd.f_p(xrf, u_f_hat))
        F_eta = np.atleast_1d(sd.f_p(xp, u_ct_hat + u_f_hat)) - F_rf
        F_c = np.atleast_1d(sd.f_c(xc, y_hat)) if sd.n_c else np.zeros(0)
        out = np.zeros_like(xi)
        out[L["eta"]] = F_eta
        out[L["xc"]] = F_c
        out[L["xrf"]] = F_rf
        de = np.zeros(p.n_theta)
        de[:p.n_df] = -(sd.g_p_jacobian(xp) @ (F_eta + F_rf) - sd.g_p_jacobian(xrf) @ F_rf)
        if p.n_ct:
            de[p.n_df:p.n_df + p.n_ct] = -(sd.g_c_jacobian(xc, y_hat) @ F_c)
        if p.n_f:
            de[p.n_df + p.n_ct:] = -np.atleast_1d(sd.du_f(t))
        out[L["e"]] = de
        out[L.tau] = 1.0
        return out

    def _wait(self, xi):
        c = int(round(xi[self.layout.c]))
        if int(round(xi[self.layout.b])) == 0:
            return self.schedule.interval(c)
        return self.schedule.delay(c - 1)

    def flow_set(self, t, xi):
        return xi[self.layout.tau] <= self._wait(xi) + SET_TOL

    def jump_set(self, t, xi):
        return xi[self.layout.tau] >= self._wait(xi) - SET_TOL

    def event_time(self, t, xi):
        return self._wait(xi) - xi[self.layout.tau]

    def segment(self, x0, t0, t1, step):
        """Flow over [t0, t1]; the compiled kernel is used for the manipulator."""
        if self._kernel is None:
            return integrate_flow(x0, self.flow, t0, t1, step)
        L, p = self.layout, self.protocol
        kp = self._kernel
        y0 = np.zeros(7)
        y0[0:2] = x0[L["eta"]]
        y0[2:4] = x0[L["xrf"]]
        e = x0[L["e"]]
        y0[4:6] = e[:2]
        transmit_f = p.n_f > 0
        if transmit_f:
            y0[6] = e[2]
        ts, ys = kernels.manipulator_segment(y0, float(t0), float(t1), float(step), kp["m"],
                                             kp["a"], kp["uf_amp"], kp["uf_freq"], transmit_f)
        xs = np.repeat(np.asarray(x0, dtype=float)[None, :], ts.size, axis=0)
        xs[:, L["eta"]] = ys[:, 0:2]
        xs[:, L["xrf"]] = ys[:, 2:4]
        es = L["e"].start
        xs[:, es:es + 2] = ys[:, 4:6]
        if transmit_f:
            xs[:, es + 2] = ys[:, 6]
        xs[:, L.tau] = x0[L.tau] + (ts - t0)
        return ts, xs

    # -- jumps ---------------------------------------------------------------

    def _mu_next(self, mu, z, zhat, granted, mu_granted):
        """Quantization parameters to apply at the next arrival."""
        q = self.quant
        if q is None:
            return mu.copy()
        if self.mu_policy == "always":
            base = mu.copy()
            base[granted] = mu_granted
            return mu_update_vector(q, base)
        out = mu.copy()
        out[granted] = mu_granted
        if q.kind == "uniform":
            return out
        o = q.offsets
        k = self.zoom_margin
        for j in range(q.l):
            if q.dims[j] == 0:
                continue
            zj = z[o[j]:o[j + 1]]
            if q.kind == "zoom":
                usage = np.linalg.norm(zj) / (q.m_range[j] * out[j])
                shrink = q.omega[j]
            else:
                usage = np.max(np.abs(zj - zhat[o[j]:o[j + 1]])) / out[j]
                shrink = 1.0 / q.n_levels[j]
            if usage <= k * shrink:
                out[j] *= shrink
            elif usage > k:
                out[j] /= shrink
        return out

    def transmission_jump(self, xi, t=0.0):
        L, p, q = self.layout, self.protocol, self.quant
        xi = np.asarray(xi, dtype=float)
        if int(round(xi[L.b])) != 0:
            raise WrongPhase("transmission jump needs b = 0")
        out = xi.copy()
        e = xi[L["e"]]
        mu = xi[L["mu"]]
        c = int(round(xi[L.c]))
        j = grant_index(p, c, e)
        o = p.offsets
        z = self.node_signals(t, xi)
        zj = z[o[j]:o[j + 1]]
        zhat = xi[L["zhat"]].copy()
        mu_j = mu[j]
        if q is None or zj.size == 0:
            eps_j = np.zeros_like(zj)
        else:
            zh_j = zhat[o[j]:o[j + 1]] if q.kind == "box" else None
            if not in_range(q, j, mu_j, zj, zh_j):
                if self.mu_policy != "adaptive" or q.kind == "uniform":
                    raise SaturationError(
                        f"node {j + 1} saturated at t = {t:.6g}: |z| = {np.linalg.norm(zj):.6g}",
                        node=j + 1, time=t, value=zj.copy())
                grow = 1.0 / q.omega[j] if q.kind == "zoom" else float(q.n_levels[j])
                for _ in range(2000):
                    mu_j *= grow
                    if in_range(q, j, mu_j, zj, zh_j):
                        break
                else:
                    raise SaturationError(f"node {j + 1} could not be captured at t = {t:.6g}",
                                          node=j + 1, time=t, value=zj.copy())
            qj, center = quantize_node(q, j, mu_j, zj, zh_j)
            eps_j = qj - zj
            if q.kind == "box":
                zhat[o[j]:o[j + 1]] = center
        h_e = e.copy()
        h_e[o[j]:o[j + 1]] = eps_j
        h_mu = self._mu_next(mu, z, zhat, j, mu_j)
        out[L["m1"]] = h_e - e
        out[L["m2"]] = h_mu - mu
        out[L["zhat"]] = zhat
        out[L.tau] = 0.0
        out[L.c] = c + 1
        out[L.b] = 1.0
        self.events.append(("transmission", float(t), j + 1, float(np.linalg.norm(eps_j))))
        return out

    def update_jump(self, xi, t=0.0):
        L = self.layout
        xi = np.asarray(xi, dtype=float)
        if int(round(xi[L.b])) != 1:
            raise WrongPhase("update jump needs b = 1")
        out = xi.copy()
        e_new = xi[L["e"]] + xi[L["m1"]]
        mu_new = xi[L["mu"]] + xi[L["m2"]]
        out[L["e"]] = e_new
        out[L["mu"]] = mu_new
        out[L["m1"]] = -e_new
        out[L["m2"]] = -mu_new
        out[L.b] = 0.0
        node = self.events[-1][2] if self.events and self.events[-1][0] == "transmission" else 0
        self.events.append(("update", float(t), node, 0.0))
        return out

    def jump(self, t, xi):
        if int(round(xi[self.layout.b])) == 0:
            return self.transmission_jump(xi, t)
        return self.update_jump(xi, t)

    def state_names(self):
        L, p, sd = self.layout, self.protocol, self.system
        names = [f"eta{i + 1}" for i in range(sd.n_p)]
        names += [f"xc{i + 1}" for i in range(sd.n_c)]
        names += [f"xrf{i + 1}" for i in range(sd.n_p)]
        tags = ([f"e_df{i + 1}" for i in range(p.n_df)] + [f"e_ct{i + 1}" for i in range(p.n_ct)]
                + [f"e_f{i + 1}" for i in range(p.n_f)])
        names += tags
        names += [f"mu{j + 1}" for j in range(p.l)]
        names += ["m1_" + s for s in tags]
        names += [f"m2_{j + 1}" for j in range(p.l)]
        names += [f"zhat{i + 1}" for i in range(L["zhat"].stop - L["zhat"].start)]
        names += ["tau", "c", "b"]
        return names

    def hybrid(self) -> HybridSystemDef:
        return HybridSystemDef(flow_map=self.flow, jump_map=self.jump, flow_set=self.flow_set,
                               jump_set=self.jump_set, state_names=self.state_names(),
                               event_time=self.event_time, segment_integrator=self.segment)


def assemble(system: SystemDefinition, quant: QuantizerSpec | None, protocol: ProtocolKind,
             net: NetworkConfig, **kw) -> NqcsModel:
    return NqcsModel(system, quant, protocol, net, **kw)


def transmission_jump(model: NqcsModel, xi, t=0.0):
    return model.transmission_jump(xi, t)


def update_jump(model: NqcsModel, xi, t=0.0):
    return model.update_jump(xi, t)


# --------------------------------------------------------------------------
# simulation


@dataclass
class SimulationTrace:
    arc: HybridArc
    events: list
    metrics: dict
    model: NqcsModel = field(repr=False)

    def column(self, name):
        return self.arc.column(name)

    def block(self, key):
        return self.arc.x[:, self.model.layout[key]]

    def events_as_dicts(self):
        return [{"kind": k, "t": t, "node": n, "eps_norm": en} for k, t, n, en in self.events]


def _metrics(arc: HybridArc, layout: StateLayout, T):
    eta = arc.x[:, layout["eta"]]
    nrm = np.linalg.norm(eta, axis=1)
    t = arc.t
    first = t <= 0.2 * T
    last = t >= 0.8 * T
    b = arc.x[:, layout.b]
    marks = arc.jump_marks
    trans = int(np.sum(b[marks] == 1))
    return {
        "sup_eta_first20": float(nrm[first].max()) if first.any() else float("nan"),
        "sup_eta_last20": float(nrm[last].max()) if last.any() else float("nan"),
        "eta_final": float(nrm[-1]),
        "max_state_norm": float(np.max(np.abs(arc.x[:, :layout["mu"].start]))),
        "transmissions": trans,
        "updates": int(marks.size - trans),
        "t_final": float(t[-1]),
        "records": int(len(arc)),
    }


def simulate(model: NqcsModel, xi0, T, J=None, step=1e-3) -> SimulationTrace:
    """Run the closed loop from xi0 until time T (or J jumps)."""
    if J is None:
        J = int(2 * math.ceil(T / model.net.eps)) + 10
    model.events = []
    model.schedule = Schedule(model.net)
    arc = run_hybrid(model.hybrid(), xi0, T, J, step)
    return SimulationTrace(arc, list(model.events), _metrics(arc, model.layout, T), model)


# --------------------------------------------------------------------------
# trace invariants


@dataclass
class InvariantResult:
    name: str
    ok: bool
    detail: str = ""

    def to_dict(self):
        return {"name": self.name, "ok": self.ok, "detail": self.detail}


def check_trace(trace: SimulationTrace, zoh_tol=1e-8, time_tol=1e-9):
    """Structural checks on a simulated trace; returns a list of InvariantResult."""
    m, arc = trace.model, trace.arc
    L, net = m.layout, m.net
    x = arc.x
    tau, c, b = x[:, L.tau], np.rint(x[:, L.c]).astype(int), np.rint(x[:, L.b]).astype(int)
    marks = arc.jump_marks
    out = []

    # alternating events; each arrival no later than the next transmission
    kinds = ["T" if b[k] == 1 else "U" for k in marks]
    alt = all(kinds[i] != kinds[i + 1] for i in range(len(kinds) - 1)) and (
        not kinds or kinds[0] == "T")
    t_tr = arc.t[[k for k in marks if b[k] == 1]]
    t_up = arc.t[[k for k in marks if b[k] == 0]]
    order_ok = alt
    worst = 0.0
    for i, tu in enumerate(t_up):
        if i + 1 < t_tr.size and tu > t_tr[i + 1] + time_tol:
            order_ok = False
        worst = max(worst, tu - t_tr[i])
    out.append(InvariantResult("small-delay-ordering", order_ok and worst <= net.h_mad + time_tol,
                               f"max observed delay {worst:.6g}"))

    # phase discipline
    bad = []
    for k in range(1, len(arc)):
        dj = arc.j[k] - arc.j[k - 1]
        if dj == 0:
            if b[k] != b[k - 1] or c[k] != c[k - 1]:
                bad.append(f"b or c changed during flow at record {k}")
        else:
            if b[k - 1] == 0:
                if not (b[k] == 1 and c[k] == c[k - 1] + 1 and tau[k] == 0.0):
                    bad.append(f"bad transmission jump at record {k}")
            else:
                if not (b[k] == 0 and c[k] == c[k - 1] and tau[k] == tau[k - 1]):
                    bad.append(f"bad update jump at record {k}")
    out.append(InvariantResult("phase-discipline", not bad, "; ".join(bad[:3])))

    # tau windows of the flow and jump sets
    bad = []
    flow0 = tau[b == 0].max(initial=0.0)
    flow1 = tau[b == 1].max(initial=0.0)
    if flow0 > net.h_bar + time_tol:
        bad.append(f"b=0 timer reached {flow0:.6g} > {net.h_bar:.6g}")
    if flow1 > net.h_mad + time_tol:
        bad.append(f"b=1 timer reached {flow1:.6g} > {net.h_mad:.6g}")
    for k in marks:
        pre = tau[k - 1]
        if b[k - 1] == 0 and not (net.eps - time_tol <= pre <= net.h_bar + time_tol):
            bad.append(f"transmission at tau = {pre:.6g}")
        if b[k - 1] == 1 and pre > net.h_mad + time_tol:
            bad.append(f"update at tau = {pre:.6g}")
    out.append(InvariantResult("tau-windows", not bad, "; ".join(bad[:3])))

    mu = x[:, L["mu"]]
    out.append(InvariantResult("mu-positive", bool(np.all(mu > 0)),
                               f"min mu {mu.min():.3g}" if mu.size else ""))

    # received signals constant between arrivals
    worst = 0.0
    upd = [0] + [k for k in marks if b[k] == 0] + [len(arc)]
    for a, z in zip(upd[:-1], upd[1:]):
        rows = range(a, z)
        if z - a < 2:
            continue
        ref = None
        for k in rows:
            (yh, uct, uf), _ = m.received(arc.t[k], x[k])
            # only signals that travel over the network are held
            v = np.concatenate([yh] + ([uct] if m.protocol.n_ct else [])
                               + ([uf] if m.protocol.n_f else []))
            if ref is None:
                ref = v
            else:
                worst = max(worst, float(np.max(np.abs(v - ref), initial=0.0)))
    out.append(InvariantResult("zoh-constancy", worst <= zoh_tol, f"max drift {worst:.3g}"))
    return out


# --------------------------------------------------------------------------
# certification


@dataclass
class CheckSummary:
    name: str
    count: int
    failures: int
    worst_margin: float

    @property
    def ok(self):
        return self.failures == 0

    def to_dict(self):
        return {"name": self.name, "count": self.count, "failures": self.failures,
                "worst_margin": self.worst_margin, "ok": self.ok}


@dataclass
class CertificationReport:
    flow: CheckSummary
    jumps: CheckSummary
    envelope: CheckSummary
    eps_tilde: float
    U: np.ndarray = field(repr=False)
    ef_sup: float = 0.0

    @property
    def ok(self):
        return self.flow.ok and self.jumps.ok and self.envelope.ok

    def to_dict(self):
        return {"flow": self.flow.to_dict(), "jumps": self.jumps.to_dict(),
                "envelope": self.envelope.to_dict(), "eps_tilde": self.eps_tilde,
                "ef_sup": self.ef_sup, "U_initial": float(self.U[0]),
                "U_final": float(self.U[-1]), "ok": self.ok}


def lyapunov_U(trace: SimulationTrace, V, combo: Combo, params: TradeoffParams, cert=None):
    """U = V(x) + gamma_b * phi_b(tau) * W^2 at every record of the trace."""
    m, arc = trace.model, trace.arc
    L = m.layout
    cert = cert if cert is not None else uges_constants(combo, check_interval=False)
    x = arc.x
    nx = L["xrf"].stop
    zero_time = [riccati_zero_time(*params.phase(0)), riccati_zero_time(*params.phase(1))]
    out = np.empty(len(arc))
    for k in range(len(arc)):
        tau = x[k, L.tau]
        b = int(round(x[k, L.b]))
        if tau > zero_time[b] + 1e-12:
            raise CertificationDomainError(
                f"timer {tau:.6g} beyond the phase-{b} curve domain {zero_time[b]:.6g} "
                f"at t = {arc.t[k]:.6g}")
        Lb, g, r, p0 = params.phase(b)
        phi = riccati_closed(Lb, g, r, p0, tau)
        W = composite_W(combo, cert, x[k, L["e"]], x[k, L["mu"]], x[k, L["m1"]],
                        x[k, L["m2"]], int(round(x[k, L.c])), b)
        out[k] = float(V(x[k, :nx])) + g * max(float(phi), 0.0) * W * W
    return out


def certify(trace: SimulationTrace, V, combo: Combo, params: TradeoffParams, gains,
            cert=None, rtol=1e-9) -> CertificationReport:
    """Check flow decay, jump non-increase and the exponential envelope along a trace.

    Margins are rhs - lhs; a check fails when the margin is below
    -rtol * max(U).
    """
    m, arc = trace.model, trace.arc
    L = m.layout
    U = lyapunov_U(trace, V, combo, params, cert)
    p = m.protocol
    ef = arc.x[:, L["e"]][:, p.n_df + p.n_ct:]
    ef_norm = np.linalg.norm(ef, axis=1) if ef.shape[1] else np.zeros(len(arc))
    et = float(gains.eps_tilde)
    tol = rtol * max(1.0, float(np.max(U)))

    def off_flow(v):
        return float(gains.sigma1(v)) if v > 0 else 0.0

    def off_jump(v):
        return float(gains.alpha3(v)) if v > 0 else 0.0

    flow_m, jump_m = [], []
    t, j = arc.t, arc.j
    for k in range(1, len(arc)):
        if j[k] == j[k - 1]:
            dt = t[k] - t[k - 1]
            v = max(ef_norm[k], ef_norm[k - 1])
            rhs = math.exp(-et * dt) * U[k - 1] + (1 - math.exp(-et * dt)) / et * off_flow(v)
            flow_m.append(rhs - U[k])
        else:
            jump_m.append(U[k - 1] + off_jump(ef_norm[k - 1]) - U[k])
    ef_sup = np.maximum.accumulate(ef_norm)
    env_m = []
    for k in range(len(arc)):
        v = ef_sup[k]
        extra = 0.0
        if v > 0:
            extra = (off_flow(v) / et + off_jump(v)) / (1 - math.exp(-gains.eps * et))
        env_m.append(math.exp(-et * (t[k] - t[0])) * U[0] + extra - U[k])

    def summary(name, ms):
        arr = np.asarray(ms, dtype=float)
        if arr.size == 0:
            return CheckSummary(name, 0, 0, float("inf"))
        return CheckSummary(name, int(arr.size), int(np.sum(arr < -tol)), float(arr.min()))

    return CertificationReport(summary("flow-decay", flow_m), summary("jump-nonincrease", jump_m),
                               summary("envelope", env_m), et, U, float(ef_norm.max()))
