"""Per-node dynamic quantizers (uniform, zoom, box) and their parameter updates."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import InvalidArguments, SaturationError

KINDS = ("uniform", "zoom", "box")


def _per_node(value, l, name):
    if value is None:
        return None
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.size == 1:
        arr = np.full(l, float(arr[0]))
    if arr.shape != (l,):
        raise InvalidArguments(f"{name} needs one value per node ({l}), got {arr.size}")
    return arr


@dataclass(frozen=True)
class QuantizerSpec:
    """Quantizer family plus per-node parameters.

    ``delta``/``m_range`` are in units of mu (zoom, uniform).  The zoom deadzone
    is also normalized by mu; the box deadzone is absolute.
    """

    kind: str
    dims: tuple
    delta: np.ndarray | None = None
    m_range: np.ndarray | None = None
    omega: np.ndarray | None = None
    n_levels: np.ndarray | None = None
    deadzone: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArguments(f"unknown quantizer kind {self.kind!r}")
        dims = tuple(int(d) for d in self.dims)
        if not dims or any(d < 0 for d in dims):
            raise InvalidArguments("dims must be a non-empty list of nonnegative ints")
        object.__setattr__(self, "dims", dims)
        l = len(dims)
        for name in ("delta", "m_range", "omega", "n_levels", "deadzone"):
            object.__setattr__(self, name, _per_node(getattr(self, name), l, name))
        if self.deadzone is None:
            object.__setattr__(self, "deadzone", np.zeros(l))
        if np.any(self.deadzone < 0):
            raise InvalidArguments("deadzone must be >= 0")
        if self.kind in ("uniform", "zoom"):
            if self.delta is None or self.m_range is None:
                raise InvalidArguments(f"{self.kind} quantizer needs delta and m")
            if np.any(self.delta <= 0) or np.any(self.m_range <= self.delta):
                raise InvalidArguments("need M > delta > 0 on every node")
            if np.any(self.deadzone > self.delta):
                raise InvalidArguments("deadzone must not exceed delta")
            spacing = self.spacing()
            if np.any(self.deadzone >= spacing):
                raise InvalidArguments("deadzone must be smaller than the level spacing")
        if self.kind == "zoom":
            if self.omega is None or np.any(self.omega <= 0) or np.any(self.omega >= 1):
                raise InvalidArguments("zoom quantizer needs omega in (0, 1)")
        if self.kind == "box":
            if self.n_levels is None:
                raise InvalidArguments("box quantizer needs n_levels")
            if np.any(self.n_levels < 2) or np.any(self.n_levels != np.round(self.n_levels)):
                raise InvalidArguments("n_levels must be integers >= 2")

    # constructors -------------------------------------------------------
    @classmethod
    def zoom(cls, dims, delta, m, omega, deadzone=0.0):
        return cls("zoom", tuple(dims), delta=delta, m_range=m, omega=omega, deadzone=deadzone)

    @classmethod
    def uniform(cls, dims, delta, m, deadzone=0.0):
        return cls("uniform", tuple(dims), delta=delta, m_range=m, deadzone=deadzone)

    @classmethod
    def box(cls, dims, n_levels, deadzone=0.0):
        return cls("box", tuple(dims), n_levels=n_levels, deadzone=deadzone)

    # derived quantities -------------------------------------------------
    @property
    def l(self) -> int:
        return len(self.dims)

    @property
    def offsets(self):
        return np.concatenate([[0], np.cumsum(self.dims)]).astype(int)

    @property
    def total_dim(self) -> int:
        return int(sum(self.dims))

    def spacing(self):
        """Per-axis level spacing on z/mu (zoom/uniform)."""
        dims = np.maximum(np.asarray(self.dims, dtype=float), 1.0)
        return 2.0 * self.delta / np.sqrt(dims)

    def margin(self):
        """Saturation-detection margin d_j."""
        if self.kind == "box":
            return np.zeros(self.l)
        return self.delta / self.m_range

    def error_bound(self, mu):
        mu = np.asarray(mu, dtype=float)
        if self.kind == "box":
            return np.sqrt(np.asarray(self.dims, dtype=float)) * mu / self.n_levels
        return self.delta * mu

    def block(self, vec, j):
        o = self.offsets
        return vec[o[j]:o[j + 1]]

    def to_dict(self):
        out = {"kind": self.kind, "dims": list(self.dims),
               "deadzone": self.deadzone.tolist()}
        if self.delta is not None:
            out["delta"] = self.delta.tolist()
        if self.m_range is not None:
            out["m"] = self.m_range.tolist()
        if self.omega is not None:
            out["omega"] = self.omega.tolist()
        if self.n_levels is not None:
            out["n_levels"] = [int(v) for v in self.n_levels]
        return out

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], tuple(d["dims"]), delta=d.get("delta"), m_range=d.get("m"),
                   omega=d.get("omega"), n_levels=d.get("n_levels"),
                   deadzone=d.get("deadzone", 0.0))


@dataclass
class QuantizerState:
    mu: np.ndarray
    zhat: list = field(default=None)

    def __post_init__(self):
        self.mu = np.array(self.mu, dtype=float)
        if np.any(~(self.mu > 0)):
            raise InvalidArguments("mu must be positive on every node")

    @classmethod
    def initial(cls, spec: QuantizerSpec, mu=1.0, zhat=None):
        mu = _per_node(mu, spec.l, "mu")
        if spec.kind == "box":
            if zhat is None:
                zhat = [np.zeros(d) for d in spec.dims]
            else:
                zhat = [np.array(zh, dtype=float) for zh in zhat]
        return cls(mu, zhat)

    def copy(self):
        zh = None if self.zhat is None else [z.copy() for z in self.zhat]
        return QuantizerState(self.mu.copy(), zh)


def in_range(spec: QuantizerSpec, j, mu_j, z_j, zhat_j=None) -> bool:
    """True when z_j lies in the node's range set."""
    z_j = np.asarray(z_j, dtype=float)
    if z_j.size == 0:
        return True
    if spec.kind == "box":
        c = np.zeros_like(z_j) if zhat_j is None else zhat_j
        return bool(np.max(np.abs(z_j - c)) <= mu_j)
    return bool(np.linalg.norm(z_j) <= spec.m_range[j] * mu_j)


def quantize_node(spec: QuantizerSpec, j, mu_j, z_j, zhat_j=None):
    """Quantize one node's block.  Returns (q_j, new_center or None)."""
    z_j = np.asarray(z_j, dtype=float)
    if z_j.size == 0:
        return z_j.copy(), (None if zhat_j is None else np.asarray(zhat_j).copy())
    row = z_j[None, :]
    if spec.kind == "box":
        if float(np.linalg.norm(z_j)) <= spec.deadzone[j]:
            return np.zeros_like(z_j), np.zeros_like(z_j)
        c = np.zeros_like(z_j) if zhat_j is None else np.asarray(zhat_j, dtype=float)
        q = kernels.box_quantize(row, c[None, :], np.array([mu_j]), int(spec.n_levels[j]))[0]
        return q, q.copy()
    q = kernels.zoom_quantize(row, np.array([mu_j]), float(spec.delta[j]),
                              float(spec.m_range[j]), float(spec.deadzone[j]))[0]
    return q, None


@dataclass
class QuantizeResult:
    q: np.ndarray
    eps: np.ndarray
    zhat: list | None
    saturated: list


def quantize(spec: QuantizerSpec, state: QuantizerState, z, check=True) -> QuantizeResult:
    """Quantize a full partitioned vector node by node.

    With ``check`` set, a block outside its range set raises SaturationError.
    """
    z = np.asarray(z, dtype=float)
    if z.shape != (spec.total_dim,):
        raise InvalidArguments(f"z has shape {z.shape}, expected ({spec.total_dim},)")
    q = np.empty_like(z)
    o = spec.offsets
    saturated = []
    new_zhat = None if state.zhat is None else []
    for j in range(spec.l):
        zj = z[o[j]:o[j + 1]]
        zh = None if state.zhat is None else state.zhat[j]
        if not in_range(spec, j, state.mu[j], zj, zh):
            saturated.append(j)
            if check:
                raise SaturationError(
                    f"node {j + 1} saturated: |z| = {np.linalg.norm(zj):.6g}", node=j + 1,
                    value=zj.copy())
        qj, ch = quantize_node(spec, j, state.mu[j], zj, zh)
        q[o[j]:o[j + 1]] = qj
        if new_zhat is not None:
            new_zhat.append(ch)
    return QuantizeResult(q, q - z, new_zhat, saturated)


def mu_update(spec: QuantizerSpec, state: QuantizerState) -> QuantizerState:
    """Zoom-in step applied at an arrival: zoom mu*omega, box mu/N, uniform unchanged."""
    out = state.copy()
    if spec.kind == "zoom":
        out.mu = state.mu * spec.omega
    elif spec.kind == "box":
        out.mu = state.mu / spec.n_levels
    return out


def mu_update_vector(spec: QuantizerSpec, mu):
    if spec.kind == "zoom":
        return np.asarray(mu, dtype=float) * spec.omega
    if spec.kind == "box":
        return np.asarray(mu, dtype=float) / spec.n_levels
    return np.array(mu, dtype=float)


# --------------------------------------------------------------------------
# sector-contract verification


def sector_grid(spec: QuantizerSpec, state: QuantizerState, j, count=10_000, span=2.0):
    """Regular grid over [-span*R, span*R]^n around the node's range set.

    R is M*mu (zoom/uniform) or mu around the center (box).  Points at the
    origin and inside the deadzone are always included.
    """
    n = spec.dims[j]
    if n == 0:
        return np.zeros((0, 0))
    mu = state.mu[j]
    if spec.kind == "box":
        radius = mu
        c = np.zeros(n) if state.zhat is None else np.asarray(state.zhat[j], dtype=float)
    else:
        radius = spec.m_range[j] * mu
        c = np.zeros(n)
    per_axis = max(2, int(math.ceil(count ** (1.0 / n))))
    if per_axis % 2 == 0:
        per_axis += 1  # odd count keeps the origin on the grid
    axes = [np.linspace(-span * radius, span * radius, per_axis) + c[i] for i in range(n)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    dz = spec.deadzone[j] * (mu if spec.kind != "box" else 1.0)
    if dz > 0:
        inner = np.linspace(-dz, dz, 21)
        extra = np.zeros((inner.size, n))
        extra[:, 0] = inner
        grid = np.vstack([grid, extra])
    return grid


@dataclass
class NodeSectorReport:
    node: int
    n_samples: int
    n_in_range: int
    n_saturated: int
    n_deadzone: int
    frac_error_bound: float | None
    frac_saturation_detect: float | str | None
    frac_deadzone_zero: float | None
    max_error_ratio: float

    def passed(self):
        fr = [self.frac_error_bound, self.frac_saturation_detect, self.frac_deadzone_zero]
        return all(f is None or f == "not applicable" or f == 1.0 for f in fr)

    def to_dict(self):
        return dict(self.__dict__, passed=self.passed())


@dataclass
class SectorReport:
    kind: str
    nodes: list

    @property
    def passed(self):
        return all(n.passed() for n in self.nodes)

    def to_dict(self):
        return {"kind": self.kind, "passed": self.passed,
                "nodes": [n.to_dict() for n in self.nodes]}


def verify_sector(spec: QuantizerSpec, state: QuantizerState, samples) -> SectorReport:
    """Check the error bound, saturation detection and deadzone clauses on samples.

    ``samples`` is a list with one (S_j, n_j) array per node.
    """
    if samples is None or len(samples) != spec.l:
        raise InvalidArguments("need one sample array per node")
    if all(np.asarray(s).size == 0 for s in samples):
        raise InvalidArguments("empty sample grid")
    nodes = []
    margin = spec.margin()
    for j in range(spec.l):
        pts = np.asarray(samples[j], dtype=float)
        n = spec.dims[j]
        if n == 0 or pts.size == 0:
            continue
        pts = pts.reshape(-1, n)
        mu = state.mu[j]
        zh = None if state.zhat is None else state.zhat[j]
        bound = spec.error_bound(mu)[j]
        if spec.kind == "box":
            cen = np.zeros(n) if zh is None else np.asarray(zh)
            inr = np.max(np.abs(pts - cen), axis=1) <= mu
            dead = np.linalg.norm(pts, axis=1) <= spec.deadzone[j]
            S = pts.shape[0]
            q = kernels.box_quantize(pts, np.tile(cen, (S, 1)), np.full(S, mu),
                                     int(spec.n_levels[j]))
            q[dead] = 0.0
        else:
            inr = np.linalg.norm(pts, axis=1) <= spec.m_range[j] * mu
            dead = np.linalg.norm(pts / mu, axis=1) <= spec.deadzone[j]
            S = pts.shape[0]
            q = kernels.zoom_quantize(pts, np.full(S, mu), float(spec.delta[j]),
                                      float(spec.m_range[j]), float(spec.deadzone[j]))
        err = np.linalg.norm(q - pts, axis=1)
        ok6 = err[inr] <= bound
        ratio = float(np.max(err[inr] / bound)) if inr.any() else 0.0
        if spec.kind == "box":
            frac7 = "not applicable"
        elif (~inr).any():
            shrunk = (1.0 - margin[j]) * spec.m_range[j] * mu
            frac7 = float(np.mean(np.linalg.norm(q[~inr], axis=1) > shrunk))
        else:
            frac7 = None
        frac8 = float(np.mean(np.all(q[dead] == 0.0, axis=1))) if dead.any() else None
        nodes.append(NodeSectorReport(
            node=j + 1, n_samples=int(S), n_in_range=int(inr.sum()),
            n_saturated=int((~inr).sum()), n_deadzone=int(dead.sum()),
            frac_error_bound=float(ok6.mean()) if ok6.size else None,
            frac_saturation_detect=frac7, frac_deadzone_zero=frac8,
            max_error_ratio=ratio))
    return SectorReport(spec.kind, nodes)
