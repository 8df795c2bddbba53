"""Map systems: forward evaluation, log-Jacobians and inverse branches.

Three systems are provided:

* ``Doubling(d)``: ``x -> d x mod 1`` on the circle, the exactly solvable control.
* ``Quadratic(a)``: ``x -> 1 - a x^2`` on ``[-1, 1]``.
* ``Viana(a0, alpha, d)``: ``(s, x) -> (d s mod 1, a0 + alpha sin(2 pi s) - x^2)``
  on ``S^1 x I``.

Internally every routine works on arrays of shape ``(N, dim)``. The scalar
helpers at the bottom of the module (``evaluate``, ``log_jacobian``,
``orbit``, ``preimages``) accept a float for one-dimensional systems and a
``(s, x)`` tuple for the skew product.

Jacobians are accumulated in log space. A factor whose absolute value falls
below ``DEGENERACY_FLOOR`` is replaced by ``NEGATIVE_DEGENERATE`` (``-inf``)
so orbits through the critical set compare false against every threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError, DomainError

DEGENERACY_FLOOR = 1e-300
NEGATIVE_DEGENERATE = -math.inf
MAX_ORBIT_HORIZON = 10_000

# critical point of x -> a0 - x^2 is pre-periodic: 0 -> a0 -> -p -> p with p fixed
MISIUREWICZ_A0 = 1.5436890126920764


def _safe_log(jac: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        out = np.log(jac)
    out[jac < DEGENERACY_FLOOR] = NEGATIVE_DEGENERATE
    return out


class Branches(NamedTuple):
    """One inverse branch evaluated on a batch of image points."""

    points: np.ndarray  # (N, dim)
    valid: np.ndarray  # (N,) bool
    multiplicity: np.ndarray  # (N,) int8, 2 for a double root


class MapSystem:
    """Common interface of the concrete systems.

    Subclasses are frozen dataclasses; instances are immutable and every
    method is a pure function of its arguments.
    """

    kind: str = ""
    dim: int = 1

    @property
    def sup_log_jac(self) -> float:
        raise NotImplementedError

    @property
    def branch_factor(self) -> int:
        """Upper bound on the number of pre-images of a point."""
        raise NotImplementedError

    @property
    def periodic(self) -> tuple[bool, ...]:
        """Per coordinate: True when the coordinate lives on the circle."""
        raise NotImplementedError

    def params(self) -> dict:
        raise NotImplementedError

    def contains(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def step(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def log_jac(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def branches(self, pts: np.ndarray) -> list[Branches]:
        raise NotImplementedError

    def from_uniform(self, u: np.ndarray) -> np.ndarray:
        """Map uniforms on ``[0,1)^dim`` to normalized Lebesgue on the domain."""
        raise NotImplementedError

    def as_points(self, x) -> np.ndarray:
        """Coerce a scalar, tuple or array into an ``(N, dim)`` float array."""
        arr = np.asarray(x, dtype=np.float64)
        if self.dim == 1:
            return arr.reshape(-1, 1)
        return arr.reshape(-1, self.dim)

    def check_domain(self, pts: np.ndarray) -> None:
        if not np.all(self.contains(pts)):
            bad = pts[~self.contains(pts)][0]
            raise DomainError(f"point {tuple(bad)} lies outside the {self.kind} domain")


@dataclass(frozen=True)
class Doubling(MapSystem):
    d: int = 2
    kind: str = field(default="doubling", init=False)
    dim: int = field(default=1, init=False)

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 2:
            raise ConfigurationError(f"doubling map needs an integer d >= 2, got {self.d}")

    @property
    def sup_log_jac(self) -> float:
        return math.log(self.d)

    @property
    def branch_factor(self) -> int:
        return self.d

    @property
    def periodic(self):
        return (True,)

    def params(self):
        return {"kind": "doubling", "d": self.d}

    def contains(self, pts):
        return (pts[:, 0] >= 0.0) & (pts[:, 0] < 1.0)

    def step(self, pts):
        return np.mod(self.d * pts, 1.0)

    def log_jac(self, pts):
        return np.full(pts.shape[0], math.log(self.d))

    def branches(self, pts):
        ones = np.ones(pts.shape[0], dtype=bool)
        mult = np.ones(pts.shape[0], dtype=np.int8)
        return [Branches((pts + k) / self.d, ones, mult) for k in range(self.d)]

    def from_uniform(self, u):
        return u[:, :1].copy()


@dataclass(frozen=True)
class Quadratic(MapSystem):
    a: float = 2.0
    kind: str = field(default="quadratic", init=False)
    dim: int = field(default=1, init=False)

    def __post_init__(self):
        if not 0.0 < self.a <= 2.0:
            raise ConfigurationError(f"quadratic parameter a must lie in (0, 2], got {self.a}")

    @property
    def sup_log_jac(self) -> float:
        return math.log(2.0 * self.a)

    @property
    def branch_factor(self) -> int:
        return 2

    @property
    def periodic(self):
        return (False,)

    def params(self):
        return {"kind": "quadratic", "a": self.a}

    def contains(self, pts):
        return np.abs(pts[:, 0]) <= 1.0

    def step(self, pts):
        out = 1.0 - self.a * pts * pts
        assert out.size == 0 or out.min() >= -1.0, "quadratic orbit left [-1, 1]"
        return out

    def log_jac(self, pts):
        return _safe_log(2.0 * self.a * np.abs(pts[:, 0]))

    def branches(self, pts):
        r = (1.0 - pts[:, 0]) / self.a
        valid = (r >= 0.0) & (r <= 1.0)
        root = np.sqrt(np.where(valid, r, 0.0))
        double = valid & (r == 0.0)
        mult = np.where(double, 2, 1).astype(np.int8)
        plus = Branches(root[:, None], valid, mult)
        minus = Branches(-root[:, None], valid & ~double, mult)
        return [plus, minus]

    def from_uniform(self, u):
        return 2.0 * u[:, :1] - 1.0


@dataclass(frozen=True)
class Viana(MapSystem):
    """Skew product over the ``d``-fold circle cover with quadratic fibres.

    ``interval`` defaults to a symmetric ``[-r, r]`` with ``r`` halfway
    between ``max a(s)`` and the largest radius still mapped inside.
    """

    a0: float = MISIUREWICZ_A0
    alpha: float = 0.05
    d: int = 2
    interval: tuple[float, float] | None = None
    kind: str = field(default="viana", init=False)
    dim: int = field(default=2, init=False)

    def __post_init__(self):
        if not 1.0 < self.a0 < 2.0:
            raise ConfigurationError(f"viana a0 must lie in (1, 2), got {self.a0}")
        if self.alpha <= 0:
            raise ConfigurationError(f"viana alpha must be positive, got {self.alpha}")
        if int(self.d) != self.d or self.d < 2:
            raise ConfigurationError(f"viana d must be an integer >= 2, got {self.d}")
        if self.interval is None:
            a_min, a_max = self.a0 - self.alpha, self.a0 + self.alpha
            r_max = (1.0 + math.sqrt(1.0 + 4.0 * a_min)) / 2.0
            if a_max >= r_max:
                raise ConfigurationError("alpha too large: no symmetric invariant interval exists")
            object.__setattr__(self, "interval", (-(a_max + r_max) / 2, (a_max + r_max) / 2))
        else:
            lo, hi = map(float, self.interval)
            if not lo < hi:
                raise ConfigurationError(f"empty fibre interval {self.interval}")
            object.__setattr__(self, "interval", (lo, hi))
        self._check_invariance()

    def _check_invariance(self, n_grid: int = 401) -> None:
        lo, hi = self.interval
        s = np.linspace(0.0, 1.0, n_grid, endpoint=False)
        x = np.concatenate([np.linspace(lo, hi, n_grid), [0.0]])
        grid = np.stack(np.meshgrid(s, x, indexing="ij"), axis=-1).reshape(-1, 2)
        image = self.step(grid)[:, 1]
        if not (np.all(image > lo) and np.all(image < hi)):
            raise ConfigurationError(
                f"S^1 x {self.interval} is not mapped into its interior for a0={self.a0}, alpha={self.alpha}")

    def a_of(self, s: np.ndarray) -> np.ndarray:
        return self.a0 + self.alpha * np.sin(2.0 * np.pi * s)

    @property
    def sup_log_jac(self) -> float:
        return math.log(2.0 * self.d * max(abs(self.interval[0]), abs(self.interval[1])))

    @property
    def branch_factor(self) -> int:
        return 2 * self.d

    @property
    def periodic(self):
        return (True, False)

    def params(self):
        return {"kind": "viana", "a0": self.a0, "alpha": self.alpha, "d": self.d,
                "interval": list(self.interval)}

    def contains(self, pts):
        lo, hi = self.interval
        return (pts[:, 0] >= 0.0) & (pts[:, 0] < 1.0) & (pts[:, 1] >= lo) & (pts[:, 1] <= hi)

    def step(self, pts):
        s, x = pts[:, 0], pts[:, 1]
        return np.stack([np.mod(self.d * s, 1.0), self.a_of(s) - x * x], axis=1)

    def log_jac(self, pts):
        # lower-triangular Jacobian: det = d * (-2x)
        return _safe_log(2.0 * self.d * np.abs(pts[:, 1]))

    def branches(self, pts):
        lo, hi = self.interval
        out = []
        for k in range(self.d):
            s = (pts[:, 0] + k) / self.d
            v = self.a_of(s) - pts[:, 1]
            ok = v >= 0.0
            root = np.sqrt(np.where(ok, v, 0.0))
            double = ok & (v == 0.0)
            mult = np.where(double, 2, 1).astype(np.int8)
            out.append(Branches(np.stack([s, root], axis=1), ok & (root <= hi) & (root >= lo), mult))
            out.append(Branches(np.stack([s, -root], axis=1), ok & ~double & (-root >= lo) & (-root <= hi), mult))
        return out

    def from_uniform(self, u):
        lo, hi = self.interval
        return np.stack([u[:, 0], lo + (hi - lo) * u[:, 1]], axis=1)


def make_system(spec: dict) -> MapSystem:
    """Build a system from a configuration mapping with a ``kind`` key."""
    spec = dict(spec)
    kind = spec.pop("kind", None)
    try:
        if kind == "doubling":
            return Doubling(d=int(spec.get("d", 2)))
        if kind == "quadratic":
            return Quadratic(a=float(spec.get("a", 2.0)))
        if kind == "viana":
            interval = spec.get("interval")
            return Viana(a0=float(spec.get("a0", MISIUREWICZ_A0)), alpha=float(spec.get("alpha", 0.05)),
                         d=int(spec.get("d", 2)), interval=tuple(interval) if interval is not None else None)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"bad {kind} parameters: {exc}") from exc
    raise ConfigurationError(f"unknown system kind {kind!r}")


def cumulative_log_jac(system: MapSystem, pts: np.ndarray, n: int, return_points: bool = False):
    """Cumulative log-Jacobians ``S_k`` for ``k = 0..n`` along each orbit.

    Returns an ``(N, n+1)`` array (and the ``(N, n+1, dim)`` orbit when
    ``return_points``). ``S_k = -inf`` once a degenerate factor occurred.
    """
    if n < 0 or n > MAX_ORBIT_HORIZON:
        raise ConfigurationError(f"orbit length {n} outside [0, {MAX_ORBIT_HORIZON}]")
    pts = np.asarray(pts, dtype=np.float64)
    lj = np.empty((n, pts.shape[0]))
    orbit_pts = np.empty((pts.shape[0], n + 1, system.dim)) if return_points else None
    cur = pts
    for k in range(n):
        if return_points:
            orbit_pts[:, k] = cur
        lj[k] = system.log_jac(cur)
        cur = system.step(cur)
    S = np.zeros((pts.shape[0], n + 1))
    for k in range(1, n):
        lj[k] += lj[k - 1]
    S[:, 1:] = lj.T
    if return_points:
        orbit_pts[:, n] = cur
        return S, orbit_pts
    return S


def circle_distance(system: MapSystem, p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Max-coordinate distance that wraps circle coordinates."""
    diff = np.abs(np.asarray(p, dtype=float) - np.asarray(q, dtype=float))
    diff = np.atleast_2d(diff)
    for i, per in enumerate(system.periodic):
        if per:
            diff[:, i] = np.minimum(diff[:, i], 1.0 - diff[:, i])
    return diff.max(axis=1)


# --- scalar API -----------------------------------------------------------

def _unpack(system: MapSystem, row: np.ndarray):
    return float(row[0]) if system.dim == 1 else tuple(float(v) for v in row)


@dataclass(frozen=True)
class OrbitRecord:
    points: list
    cum_log_jac: list[float]
    degenerate: bool


def evaluate(system: MapSystem, x):
    """Image of a single point."""
    pts = system.as_points(x)
    system.check_domain(pts)
    return _unpack(system, system.step(pts)[0])


def log_jacobian(system: MapSystem, x) -> float:
    """``log|det Df(x)|``, or ``NEGATIVE_DEGENERATE`` on the critical set."""
    pts = system.as_points(x)
    system.check_domain(pts)
    return float(system.log_jac(pts)[0])


def orbit(system: MapSystem, x, n: int) -> OrbitRecord:
    pts = system.as_points(x)
    system.check_domain(pts)
    S, P = cumulative_log_jac(system, pts, n, return_points=True)
    return OrbitRecord(points=[_unpack(system, p) for p in P[0]],
                       cum_log_jac=[float(v) for v in S[0]],
                       degenerate=bool(np.isneginf(S[0, -1])))


def preimages(system: MapSystem, y) -> list[tuple]:
    """All pre-images of ``y`` inside the domain as ``(point, branch_id, multiplicity)``."""
    pts = system.as_points(y)
    system.check_domain(pts)
    out = []
    for bid, br in enumerate(system.branches(pts)):
        if br.valid[0]:
            out.append((_unpack(system, br.points[0]), bid, int(br.multiplicity[0])))
    return out
