"""Hybrid time domains, hybrid arcs and a fixed-step flow/jump simulator."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import IntegrationDiverged, InvalidArguments, InvalidInitialState, ZenoDetected

JUMP_FIRST = "jump-first"
FLOW_FIRST = "flow-first"


@dataclass(frozen=True)
class HybridTime:
    t: float
    j: int

    def __post_init__(self):
        if self.t < 0 or self.j < 0 or int(self.j) != self.j:
            raise InvalidArguments("hybrid time needs t >= 0 and integer j >= 0")

    def __le__(self, other):
        return self.t + self.j <= other.t + other.j

    def __lt__(self, other):
        return self.t + self.j < other.t + other.j


@dataclass
class HybridSystemDef:
    """Flow map, jump map and the two set tests, all taking (t, x).

    Optional hooks:
      event_time(t, x) -> time until the next jump condition along the flow
        (``inf`` if none); replaces bisection when the event time is known.
      segment_integrator(x0, t0, t1, step) -> (times, states) replaces the
        built-in RK4 on flow segments.
    """

    flow_map: Callable
    jump_map: Callable
    flow_set: Callable
    jump_set: Callable
    state_names: Optional[list] = None
    event_time: Optional[Callable] = None
    segment_integrator: Optional[Callable] = None


class HybridArc:
    """Records (t, j, x) in hybrid-time order."""

    def __init__(self, t, j, x, names=None):
        self.t = np.asarray(t, dtype=float)
        self.j = np.asarray(j, dtype=np.int64)
        self.x = np.asarray(x, dtype=float)
        if self.x.ndim == 1:
            self.x = self.x[:, None]
        n = self.x.shape[1]
        self.names = list(names) if names is not None else [f"x{i}" for i in range(n)]
        if len(self.names) != n:
            raise InvalidArguments("one name per state component required")

    def __len__(self):
        return self.t.size

    @property
    def jump_marks(self):
        """Record indices that are the post-jump state of a jump."""
        return np.nonzero(np.diff(self.j) > 0)[0] + 1

    @property
    def n_jumps(self):
        return int(self.j[-1] - self.j[0]) if len(self) else 0

    @property
    def final(self):
        return HybridTime(float(self.t[-1]), int(self.j[-1]))

    def column(self, name):
        return self.x[:, self.names.index(name)]

    def flow_segments(self):
        """(start, stop) index ranges with constant j; stop is exclusive."""
        marks = [0, *self.jump_marks.tolist(), len(self)]
        return [(a, b) for a, b in zip(marks[:-1], marks[1:])]

    def validate(self):
        """List of violated domain invariants (empty when well formed)."""
        problems = []
        dt = np.diff(self.t)
        dj = np.diff(self.j)
        for k in np.nonzero(dt < 0)[0]:
            problems.append(f"t decreases at record {k + 1}")
        for k in np.nonzero(dj < 0)[0]:
            problems.append(f"j decreases at record {k + 1}")
        for k in np.nonzero(dj > 1)[0]:
            problems.append(f"j skips at record {k + 1}")
        for k in np.nonzero((dj == 1) & (dt != 0))[0]:
            problems.append(f"t changes across the jump at record {k + 1}")
        for k in np.nonzero((dj == 0) & (dt <= 0))[0]:
            problems.append(f"t not strictly increasing during flow at record {k + 1}")
        return problems

    def to_csv(self, target=None):
        """Write t, j and the named components; returns the text when target is None."""
        buf = io.StringIO() if target is None else None
        fh = buf if buf is not None else open(target, "w", newline="")
        try:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "j", *self.names])
            for k in range(len(self)):
                w.writerow([f"{self.t[k]:.17g}", str(int(self.j[k])),
                            *(f"{v:.17g}" for v in self.x[k])])
        finally:
            if buf is None:
                fh.close()
        return buf.getvalue() if buf is not None else None


def rk4_step(flow, t, x, h):
    k1 = flow(t, x)
    k2 = flow(t + 0.5 * h, x + 0.5 * h * k1)
    k3 = flow(t + 0.5 * h, x + 0.5 * h * k2)
    k4 = flow(t + h, x + h * k3)
    return x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _check_finite(t_prev, x_prev, x_new):
    if not np.all(np.isfinite(x_new)):
        raise IntegrationDiverged(
            f"non-finite state after t = {t_prev:.17g}", last_t=t_prev,
            last_state=np.array(x_prev, dtype=float))


def integrate_flow(x0, flow, t0, t1, step):
    """Classical RK4 from t0 to t1 with the final step shortened to land on t1.

    Returns (times, states) including the initial point.
    """
    if not t1 >= t0:
        raise InvalidArguments("need t1 >= t0")
    if not step > 0:
        raise InvalidArguments("step must be positive")
    x = np.array(x0, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    f = flow if not scalar else (lambda t, y: np.atleast_1d(flow(t, y[0])))
    times, states = [t0], [x.copy()]
    t = t0
    k = 0
    while t < t1:
        t_next = t0 + (k + 1) * step
        if t_next >= t1 or t1 - t_next <= 1e-12 * max(1.0, abs(t1)):
            t_next = t1
        h = t_next - t
        x_new = rk4_step(f, t, x, h)
        _check_finite(t, x, x_new)
        t, x = t_next, x_new
        k += 1
        times.append(t)
        states.append(x.copy())
    return np.array(times), np.array(states)


def _bisect_event(flow, stop, t, x, h, tol):
    """Smallest sub-step in (0, h] after which ``stop`` holds, to within tol."""
    lo, hi = 0.0, h
    x_hi = rk4_step(flow, t, x, h)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        x_mid = rk4_step(flow, t, x, mid)
        if stop(t + mid, x_mid):
            hi, x_hi = mid, x_mid
        else:
            lo = mid
    return hi, x_hi


def run_hybrid(system: HybridSystemDef, x0, T, J, step, priority=JUMP_FIRST, t0=0.0,
               zeno_limit=1000) -> HybridArc:
    """Simulate one solution from x0 until t >= T, j >= J, or the state leaves C and D.

    ``zeno_limit`` caps the number of consecutive jumps without flow.
    """
    if priority not in (JUMP_FIRST, FLOW_FIRST):
        raise InvalidArguments(f"unknown priority {priority!r}")
    if not step > 0:
        raise InvalidArguments("step must be positive")
    x = np.array(x0, dtype=float)
    t, j = float(t0), 0
    if not (system.flow_set(t, x) or system.jump_set(t, x)):
        raise InvalidInitialState("initial state lies in neither the flow set nor the jump set")

    ts, js, xs = [t], [j], [x.copy()]
    streak = 0
    tol = step * 1e-6
    f = system.flow_map
    if priority == JUMP_FIRST:
        def stop(tt, xx):
            return system.jump_set(tt, xx) or not system.flow_set(tt, xx)
    else:
        def stop(tt, xx):
            return not system.flow_set(tt, xx)

    while t < T and j < J:
        in_c = system.flow_set(t, x)
        in_d = system.jump_set(t, x)
        if in_d and (priority == JUMP_FIRST or not in_c):
            x = np.array(system.jump_map(t, x), dtype=float)
            j += 1
            streak += 1
            ts.append(t)
            js.append(j)
            xs.append(x.copy())
            if streak > zeno_limit:
                raise ZenoDetected(f"{streak} consecutive jumps without flow at t = {t:.17g}")
            continue
        if not in_c:
            break

        if system.event_time is not None:
            dt = float(system.event_time(t, x))
            t_end = min(T, t + max(dt, 0.0))
            if t_end <= t:
                break  # event due now but the jump set disagrees: nothing to do
            if system.segment_integrator is not None:
                seg_t, seg_x = system.segment_integrator(x, t, t_end, step)
            else:
                seg_t, seg_x = integrate_flow(x, f, t, t_end, step)
            for k in range(1, len(seg_t)):
                ts.append(float(seg_t[k]))
                js.append(j)
                xs.append(np.array(seg_x[k], dtype=float))
            t, x = float(seg_t[-1]), np.array(seg_x[-1], dtype=float)
            streak = 0
            continue

        # stepwise flow with bisection on the stop condition
        moved = False
        k = 0
        t_start = t
        while t < T:
            t_next = min(T, t_start + (k + 1) * step)
            h = t_next - t
            x_new = rk4_step(f, t, x, h)
            _check_finite(t, x, x_new)
            if stop(t_next, x_new):
                hh, x_new = _bisect_event(f, stop, t, x, h, tol)
                t_next = t + hh
                _check_finite(t, x, x_new)
                ts.append(t_next)
                js.append(j)
                xs.append(x_new.copy())
                t, x = t_next, x_new
                moved = True
                break
            ts.append(t_next)
            js.append(j)
            xs.append(x_new.copy())
            t, x = t_next, x_new
            moved = True
            k += 1
        if moved:
            streak = 0
        else:
            break

    return HybridArc(np.array(ts), np.array(js), np.array(xs), system.state_names)
