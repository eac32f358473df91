# services/flows.py
"""
Concrete R^k flows with closed-form orbits.

Every method accepts one state (shape (state_dim,)) or a batch
(shape (n, state_dim)); group times follow the same convention with k
in place of state_dim. Single inputs give single outputs.
"""
import itertools
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
from scipy.special import expit, logit

from services.errors import PreconditionError, SectionError
from services.runlog import debug

# Integer offsets searched when minimising over torus lifts.
TORUS_LIFT_RADIUS = 3
COLLISION_TOL = 1e-9
MIN_SECTION_SCALE = 8.0
MIN_LATTICE_SPACING = 4.0


def _batch(arr, dim: int) -> Tuple[np.ndarray, bool]:
    a = np.asarray(arr, dtype=float)
    if a.ndim == 0:
        return a.reshape(1, 1), True
    if a.ndim == 1:
        if dim == 1 and a.size != 1:
            return a.reshape(-1, 1), False
        return a.reshape(1, -1), True
    return a, False


def _unbatch(arr: np.ndarray, single: bool):
    return arr[0] if single else arr


# ---------- Flows ----------
@dataclass(frozen=True)
class Flow:
    name: str
    k: int
    state_dim: int
    group_scale: float = 1.0

    def act(self, t, x):
        raise NotImplementedError

    def dist(self, x, y):
        raise NotImplementedError

    def h1(self, x):
        raise NotImplementedError

    def h2(self, x):
        """Second observable in [0,1], the target the perturbation pipeline blends from."""
        raise NotImplementedError

    @property
    def h2_rate(self) -> float:
        """Lipschitz constant of t -> h2(act(t, x))."""
        raise NotImplementedError

    def rho(self, x, y):
        raise NotImplementedError

    def is_fixed(self, x):
        raise NotImplementedError

    @property
    def fixed_points(self) -> np.ndarray:
        return np.empty((0, self.state_dim))

    def periods(self, radius: float) -> np.ndarray:
        """Nonzero group times t with act(t, x) == x for every x, inside [-radius, radius]^k."""
        return np.empty((0, self.k))

    def markers(self, p, x, lo, hi) -> np.ndarray:
        raise NotImplementedError

    def sample_states(self, n: int, seed: int) -> np.ndarray:
        raise NotImplementedError

    def cover_anchors(self, radius: float) -> np.ndarray:
        """States such that every state lies within dist radius of one of them."""
        raise NotImplementedError

    def from_coordinates(self, values) -> np.ndarray:
        """State for user-facing coordinates (config files, presets)."""
        return np.asarray(values, dtype=float).reshape(self.state_dim)

    def to_coordinates(self, states) -> np.ndarray:
        return np.asarray(states, dtype=float)


@dataclass(frozen=True)
class TorusFlow(Flow):
    _lifts: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.k < 1:
            raise PreconditionError("torus dimension must be positive")
        if not self.group_scale > 0:
            raise PreconditionError("group_scale must be positive")
        r = range(-TORUS_LIFT_RADIUS, TORUS_LIFT_RADIUS + 1)
        object.__setattr__(self, "_lifts", np.array(list(itertools.product(r, repeat=self.k)), dtype=float))

    def act(self, t, x):
        T, single_t = _batch(t, self.k)
        X, single_x = _batch(x, self.state_dim)
        out = np.mod(X + T / self.group_scale, 1.0)
        out = np.where(out >= 1.0, 0.0, out)
        return _unbatch(out, single_t and single_x)

    def dist(self, x, y):
        X, sx = _batch(x, self.state_dim)
        Y, sy = _batch(y, self.state_dim)
        d = np.mod(Y - X + 0.5, 1.0) - 0.5
        return _unbatch(np.linalg.norm(d, axis=1), sx and sy)

    def h1(self, x):
        X, single = _batch(x, self.state_dim)
        return _unbatch(0.5 + 0.5 * np.mean(np.sin(2.0 * np.pi * X), axis=1), single)

    def h2(self, x):
        X, single = _batch(x, self.state_dim)
        return _unbatch(0.5 + 0.5 * np.mean(np.cos(2.0 * np.pi * X), axis=1), single)

    @property
    def h2_rate(self) -> float:
        return np.pi / (np.sqrt(self.k) * self.group_scale)

    def rho(self, x, y):
        X, sx = _batch(x, self.state_dim)
        Y, sy = _batch(y, self.state_dim)
        diff = (Y - X)[:, None, :] + self._lifts[None, :, :]
        r = self.group_scale * np.min(np.linalg.norm(diff, axis=2), axis=1)
        return _unbatch(r, sx and sy)

    def is_fixed(self, x):
        X, single = _batch(x, self.state_dim)
        return _unbatch(np.zeros(X.shape[0], dtype=bool), single)

    def periods(self, radius: float) -> np.ndarray:
        reach = int(np.floor(radius / self.group_scale))
        if reach < 1:
            return np.empty((0, self.k))
        r = range(-reach, reach + 1)
        lattice = np.array([n for n in itertools.product(r, repeat=self.k) if any(n)], dtype=float)
        return self.group_scale * lattice

    def markers(self, p, x, lo, hi) -> np.ndarray:
        """All t in the box [lo, hi] with x + t/scale == p (mod 1)."""
        p = np.asarray(p, dtype=float).reshape(self.k)
        x = np.asarray(x, dtype=float).reshape(self.k)
        lo = np.broadcast_to(np.asarray(lo, dtype=float), (self.k,))
        hi = np.broadcast_to(np.asarray(hi, dtype=float), (self.k,))
        base = self.group_scale * (p - x)
        ranges = [
            range(int(np.ceil((lo[i] - base[i]) / self.group_scale)), int(np.floor((hi[i] - base[i]) / self.group_scale)) + 1)
            for i in range(self.k)
        ]
        hits = [base + self.group_scale * np.asarray(n, dtype=float) for n in itertools.product(*ranges)]
        if not hits:
            return np.empty((0, self.k))
        return np.array(hits)

    def sample_states(self, n: int, seed: int) -> np.ndarray:
        return np.random.default_rng(seed).random((n, self.k))

    def cover_anchors(self, radius: float) -> np.ndarray:
        """Cell centres of a regular n^k grid; the half-diagonal sqrt(k)/(2n) stays within radius."""
        if not radius > 0:
            raise PreconditionError("cover radius must be positive")
        n = int(np.ceil(np.sqrt(self.k) / (2.0 * radius)))
        centres = (np.arange(n) + 0.5) / n
        return np.array(list(itertools.product(centres, repeat=self.k)), dtype=float)

    def from_coordinates(self, values) -> np.ndarray:
        return np.mod(np.asarray(values, dtype=float).reshape(self.state_dim), 1.0)


@dataclass(frozen=True)
class LogisticFlow(Flow):
    """
    Flow of x' = x(1-x) on [0,1], stored in the orbit coordinate z = logit(x).
    act(t, z) = z + t is the closed form x e^t / (1 - x + x e^t) read in
    that coordinate; the fixed points 0 and 1 are z = -inf and z = +inf.
    Configs and presets give states as x in [0,1]; from_coordinates and
    to_coordinates convert at that boundary.
    """

    @staticmethod
    def state_from_interval(x):
        return np.atleast_1d(logit(np.asarray(x, dtype=float)))

    @staticmethod
    def interval_value(z):
        return expit(np.asarray(z, dtype=float))

    def act(self, t, x):
        T, single_t = _batch(t, 1)
        Z, single_z = _batch(x, 1)
        return _unbatch(Z + T, single_t and single_z)

    def dist(self, x, y):
        X, sx = _batch(x, 1)
        Y, sy = _batch(y, 1)
        return _unbatch(np.abs(expit(X[:, 0]) - expit(Y[:, 0])), sx and sy)

    def h1(self, x):
        X, single = _batch(x, 1)
        return _unbatch(expit(X[:, 0]), single)

    def h2(self, x):
        X, single = _batch(x, 1)
        return _unbatch(0.5 + 0.5 * np.cos(2.0 * np.pi * expit(X[:, 0])), single)

    @property
    def h2_rate(self) -> float:
        # d/dt expit(z + t) = x(1 - x) <= 1/4
        return np.pi / 4.0

    def rho(self, x, y):
        X, sx = _batch(x, 1)
        Y, sy = _batch(y, 1)
        a, b = np.broadcast_arrays(X[:, 0], Y[:, 0])
        finite = np.isfinite(a) & np.isfinite(b)
        with np.errstate(invalid="ignore"):
            r = np.where(finite, np.abs(b - a), np.inf)
        r = np.where(a == b, 0.0, r)
        return _unbatch(r, sx and sy)

    def is_fixed(self, x):
        X, single = _batch(x, 1)
        return _unbatch(~np.isfinite(X[:, 0]), single)

    @property
    def fixed_points(self) -> np.ndarray:
        return np.array([[-np.inf], [np.inf]])

    def markers(self, p, x, lo, hi) -> np.ndarray:
        p = float(np.asarray(p).reshape(-1)[0])
        x = float(np.asarray(x).reshape(-1)[0])
        if not (np.isfinite(p) and np.isfinite(x)):
            return np.empty((0, 1))
        t = p - x
        lo = float(np.asarray(lo).reshape(-1)[0])
        hi = float(np.asarray(hi).reshape(-1)[0])
        return np.array([[t]]) if lo <= t <= hi else np.empty((0, 1))

    def sample_states(self, n: int, seed: int) -> np.ndarray:
        x = np.random.default_rng(seed).uniform(0.02, 0.98, size=n)
        return logit(x).reshape(-1, 1)

    def cover_anchors(self, radius: float) -> np.ndarray:
        """Midpoints of n equal pieces of [0,1] in the interval coordinate, stored as logits."""
        if not radius > 0:
            raise PreconditionError("cover radius must be positive")
        n = int(np.ceil(1.0 / (2.0 * radius)))
        return logit((np.arange(n) + 0.5) / n).reshape(-1, 1)

    def from_coordinates(self, values) -> np.ndarray:
        x = np.asarray(values, dtype=float).reshape(1)
        if np.any((x < 0.0) | (x > 1.0)):
            raise PreconditionError("logistic states are given as x in [0,1]")
        with np.errstate(divide="ignore"):
            return self.state_from_interval(x)

    def to_coordinates(self, states) -> np.ndarray:
        return self.interval_value(states)


def torus_translation_flow(k: int, group_scale: float = 8.0) -> TorusFlow:
    if k < 1:
        raise PreconditionError("torus dimension must be positive")
    return TorusFlow(name=f"torus{k}", k=int(k), state_dim=int(k), group_scale=float(group_scale))


def logistic_interval_flow() -> LogisticFlow:
    return LogisticFlow(name="logistic", k=1, state_dim=1, group_scale=1.0)


def orbit_metric_rho(flow: Flow, x, y) -> float:
    """Length of the shortest group time moving x to y; inf across orbits."""
    return float(np.asarray(flow.rho(x, y)).reshape(-1)[0])


# ---------- Cross-sections ----------
@dataclass(frozen=True, eq=False)
class CrossSection:
    flow: Flow
    description: str
    lacunarity: float

    def nearest(self, x) -> Tuple[np.ndarray, np.ndarray]:
        """(nearest section point, rho to it) for each state."""
        raise NotImplementedError

    def alpha(self, s) -> np.ndarray:
        raise NotImplementedError

    def sample_points(self, count: int) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class SingletonSection(CrossSection):
    base: np.ndarray = None
    label: float = 1.5

    def nearest(self, x):
        X, _ = _batch(x, self.flow.state_dim)
        rho = np.atleast_1d(self.flow.rho(X, self.base))
        return np.broadcast_to(self.base, X.shape).copy(), rho

    def alpha(self, s):
        S, _ = _batch(s, self.flow.state_dim)
        return np.full(S.shape[0], self.label)

    def sample_points(self, count: int) -> np.ndarray:
        return np.asarray(self.base, dtype=float).reshape(1, -1)


@dataclass(frozen=True, eq=False)
class OrbitLatticeSection(CrossSection):
    """Points z0 + j * spacing (j in Z) on the non-fixed logistic orbit."""
    base: float = 0.0
    spacing: float = 8.0

    def _index(self, z: np.ndarray) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return np.round((z - self.base) / self.spacing)

    def nearest(self, x):
        Z, _ = _batch(x, 1)
        z = Z[:, 0]
        j = self._index(z)
        s = self.base + j * self.spacing
        finite = np.isfinite(z)
        rho = np.where(finite, np.abs(z - np.where(finite, s, 0.0)), np.inf)
        s = np.where(finite, s, np.nan)
        return s.reshape(-1, 1), rho

    def alpha(self, s):
        S, _ = _batch(s, 1)
        j = self._index(S[:, 0])
        return 1.5 + np.arctan(j) / np.pi

    def sample_points(self, count: int) -> np.ndarray:
        j = np.arange(count) - count // 2
        return (self.base + self.spacing * j).reshape(-1, 1)


def singleton_cross_section(flow: Flow, base) -> SingletonSection:
    """
    S = {base} on a torus flow. Orbit returns to base happen at lattice
    times scale * n, so scale >= 8 keeps S lacunary at radius 4.
    """
    if not isinstance(flow, TorusFlow):
        raise PreconditionError("singleton cross-sections are defined for torus flows")
    if flow.group_scale < MIN_SECTION_SCALE:
        raise PreconditionError("lacunarity violated")
    base = np.mod(np.asarray(base, dtype=float).reshape(flow.state_dim), 1.0)
    return SingletonSection(flow=flow, description=f"singleton at {base.tolist()}", lacunarity=1.0, base=base)


def orbit_lattice_cross_section(flow: Flow, base, spacing: float = 8.0) -> OrbitLatticeSection:
    if not isinstance(flow, LogisticFlow):
        raise PreconditionError("orbit lattice cross-sections are defined for the logistic flow")
    if spacing < MIN_LATTICE_SPACING:
        raise PreconditionError("lacunarity violated")
    z0 = float(np.asarray(base, dtype=float).reshape(-1)[0])
    if not np.isfinite(z0):
        raise PreconditionError("section base must not be a fixed point")
    return OrbitLatticeSection(flow=flow, description=f"lattice z0={z0!r} spacing={spacing!r}", lacunarity=1.0, base=z0, spacing=float(spacing))


# ---------- Local sections and markers ----------
@dataclass(frozen=True, eq=False)
class LocalSection:
    flow: Flow
    p: np.ndarray
    a: float

    @property
    def points(self) -> np.ndarray:
        return self.p.reshape(1, -1)


def local_section_at(flow: Flow, p, a: float, samples: int = 10_000, seed: int = 0) -> LocalSection:
    """
    Singleton local section {p} on the time box [-a, a]^k, after a seeded
    fuzz that (t1, t2) -> (act(t1, p), act(t2, p)) never collides. Pairs
    differing by a period of the flow are always included.
    """
    p = np.asarray(p, dtype=float).reshape(flow.state_dim)
    if bool(np.asarray(flow.is_fixed(p))):
        raise PreconditionError("local section base is a fixed point")
    if not a > 0:
        raise PreconditionError("local section scale must be positive")
    rng = np.random.default_rng(seed)
    t1 = rng.uniform(-a, a, size=(samples, flow.k))
    t2 = rng.uniform(-a, a, size=(samples, flow.k))
    for period in flow.periods(2.0 * a):
        lo = np.maximum(-a, -a + period)
        hi = np.minimum(a, a + period)
        u = rng.uniform(lo, hi, size=(16, flow.k))
        t1 = np.vstack([t1, u])
        t2 = np.vstack([t2, u - period])
    distinct = np.max(np.abs(t1 - t2), axis=1) > COLLISION_TOL
    d = np.atleast_1d(flow.dist(flow.act(t1[distinct], p), flow.act(t2[distinct], p)))
    if d.size and float(d.min()) <= COLLISION_TOL:
        raise SectionError(f"not a local section at scale a={a}")
    debug("flows", f"local section at {p.tolist()} scale {a} passed {int(distinct.sum())} pairs")
    return LocalSection(flow=flow, p=p, a=float(a))


def marker_set(flow: Flow, section: LocalSection, x, lo, hi) -> np.ndarray:
    """Times t in the box [lo, hi] with act(t, x) on the section; pairwise more than a apart."""
    hits = flow.markers(section.p, x, lo, hi)
    if len(hits) > 1:
        gaps = np.max(np.abs(hits[:, None, :] - hits[None, :, :]), axis=2)
        np.fill_diagonal(gaps, np.inf)
        if float(gaps.min()) <= section.a:
            raise SectionError("markers closer than the section scale")
    return hits
