"""Pre-image trees and the uniform backward bound.

``build_tree`` enumerates ``f^{-n}(x)`` level by level. Each node carries
``back_log_jac = log|det Df^n(y)|`` accumulated from its parent, so the
per-level minimum is the measured backward rate ``sigma_n``. ``fit_backward``
extracts a constant ``C_x`` valid at every level of a window and
``lemma2_inclusion`` glues first-entry chains from every node to bound how
far past its level each node enters the ``U`` family.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import NEGATIVE_DEGENERATE, MapSystem, cumulative_log_jac
from .errors import ConfigurationError, PreconditionError, TreeTruncated

DEFAULT_NODE_CAP = 2**21
DEFAULT_FIT_START = 4
MIN_FIT_LEVELS = 5
RELIABLE_QUALITY = 0.5
GLUE_CHUNK = 32768


@dataclass(frozen=True)
class Level:
    points: np.ndarray  # (M, dim)
    parent: np.ndarray  # (M,) index into the previous level
    branch: np.ndarray  # (M,) branch id of the inverse map used
    back_log_jac: np.ndarray  # (M,)
    multiplicity: np.ndarray  # (M,)

    def __len__(self):
        return self.points.shape[0]


@dataclass
class PreimageTree:
    system: MapSystem
    root: np.ndarray
    levels: list[Level]
    n_max: int
    discarded: list[int] = field(default_factory=list)  # branches rejected per level (outside the domain)

    @property
    def depth(self) -> int:
        """Deepest non-empty level."""
        return len(self.levels) - 1

    @property
    def node_counts(self) -> list[int]:
        return [len(lv) for lv in self.levels]

    @property
    def level_minima(self) -> np.ndarray:
        return np.array([lv.back_log_jac.min() for lv in self.levels])

    def argmin(self, n: int) -> int:
        return int(np.argmin(self.levels[n].back_log_jac))

    def branch_path(self, n: int, idx: int) -> tuple[int, ...]:
        """Branch ids from level 1 down to node ``idx`` of level ``n``."""
        path = []
        while n > 0:
            lv = self.levels[n]
            path.append(int(lv.branch[idx]))
            idx = int(lv.parent[idx])
            n -= 1
        return tuple(reversed(path))


def build_tree(system: MapSystem, x, n_max: int, node_cap: int = DEFAULT_NODE_CAP) -> PreimageTree:
    """Complete tree of pre-images of ``x`` down to level ``n_max``.

    Children are stored parent-major and branch-minor, so node order is the
    lexicographic order of branch paths.
    """
    if n_max < 0:
        raise ConfigurationError("n_max must be non-negative")
    if system.branch_factor ** n_max > node_cap:
        raise ConfigurationError(
            f"{system.branch_factor}^{n_max} pre-images would exceed node_cap={node_cap}")
    root = system.as_points(x)
    system.check_domain(root)
    levels = [Level(root, np.array([-1]), np.array([-1], dtype=np.int16), np.zeros(1),
                    np.ones(1, dtype=np.int64))]
    tree = PreimageTree(system, root[0], levels, n_max)
    for n in range(1, n_max + 1):
        cur = levels[-1]
        brs = system.branches(cur.points)
        valid = np.stack([b.valid for b in brs], axis=1)  # (M, B)
        tree.discarded.append(int(valid.size - valid.sum()))
        flat = valid.ravel()
        count = int(flat.sum())
        if count > node_cap:
            raise TreeTruncated(f"level {n} holds {count} nodes > node_cap={node_cap}", tree, n - 1)
        if count == 0:
            break
        B = len(brs)
        pts = np.stack([b.points for b in brs], axis=1).reshape(-1, system.dim)[flat]
        parent = np.repeat(np.arange(len(cur)), B)[flat]
        branch = np.tile(np.arange(B, dtype=np.int16), len(cur))[flat]
        mult = (np.stack([b.multiplicity for b in brs], axis=1).ravel()[flat].astype(np.int64)
                * cur.multiplicity[parent])
        blj = cur.back_log_jac[parent] + system.log_jac(pts)
        levels.append(Level(pts, parent, branch, blj, mult))
    return tree


def sigma_profile(tree: PreimageTree) -> list[tuple[int, float, tuple[int, ...]]]:
    """``(n, sigma_n, argmin branch path)`` for every non-empty level."""
    return [(n, float(lv.back_log_jac.min()), tree.branch_path(n, tree.argmin(n)))
            for n, lv in enumerate(tree.levels)]


@dataclass(frozen=True)
class BackwardFit:
    family: str
    log_cx: float
    beta: float
    fit_quality: float
    window: tuple[int, int]
    reliable: bool
    n_hat: int | None = None
    c_from_n: float | None = None

    def describe(self) -> dict:
        return {"family": self.family, "log_cx": self.log_cx, "beta": self.beta,
                "fit_quality": self.fit_quality, "window": list(self.window),
                "reliable": self.reliable, "N_hat": self.n_hat, "C_from_N": self.c_from_n}


def growth_variable(b, n: np.ndarray) -> np.ndarray:
    n = np.asarray(n, dtype=float)
    if b.family == "exp":
        return n
    if b.family == "stretched":
        return n ** b.tau
    if b.family == "poly":
        return np.log(n)
    raise ConfigurationError(f"no growth variable for a {b.family} rate")


def fit_backward(sigma, b, window: tuple[int, int] | None = None) -> BackwardFit:
    """Uniform constant and slope of a measured backward profile.

    ``sigma[n]`` is the level-``n`` minimum. ``log_cx`` is the smallest
    residual ``sigma_n - log b_n`` over the window, capped at 0, so the bound
    ``sigma_n >= log C_x + log b_n`` holds at every fitted level. ``beta`` is
    the least-squares slope of ``sigma_n`` against the rate's growth variable.
    """
    sigma = np.asarray(sigma, dtype=float)
    n_last = sigma.size - 1
    lo, hi = window if window is not None else (DEFAULT_FIT_START, n_last)
    hi = min(hi, n_last)
    if hi - lo + 1 < MIN_FIT_LEVELS:
        raise ConfigurationError(f"fit window [{lo}, {hi}] has fewer than {MIN_FIT_LEVELS} levels")
    n = np.arange(lo, hi + 1)
    s = sigma[lo:hi + 1]
    log_cx = min(0.0, float(np.min(s - b.log_at(n))))
    x = growth_variable(b, n)
    finite = np.isfinite(s)
    if finite.sum() >= 2 and np.ptp(s[finite]) > 0:
        A = np.stack([np.ones(finite.sum()), x[finite]], axis=1)
        coef, *_ = np.linalg.lstsq(A, s[finite], rcond=None)
        beta = float(coef[1])
        resid = s[finite] - A @ coef
        quality = 1.0 - float(resid @ resid) / float(np.sum((s[finite] - s[finite].mean()) ** 2))
        if not finite.all():
            quality = 0.0
    else:
        beta, quality = 0.0, 0.0
    return BackwardFit(b.family, log_cx, beta, quality, (int(lo), int(hi)), quality >= RELIABLE_QUALITY)


def cx_from_N(N: int, system: MapSystem) -> float:
    """``K^-N`` with ``K = sup|det Df|``."""
    if N < 0:
        raise ConfigurationError("N must be non-negative")
    return math.exp(-N * system.sup_log_jac)


@dataclass
class Lemma2Result:
    n_hat: int | None
    violations: list[tuple[int, int]]  # (level, node index) of nodes with a censored walk
    node_total: int
    first_entry_excess: int | None  # max(u(y) - level): the raw first-entry statistic
    inclusion_failures: list[tuple[int, int]]  # glued total not confirmed by the membership predicate
    bound_failures: list[tuple[int, int]]  # nodes breaking back_log_jac >= log b_n + log K^-N_hat
    glued: dict[int, np.ndarray] = field(default_factory=dict, repr=False)  # level -> glued totals (0 = censored)

    @property
    def censored_fraction(self) -> float:
        return len(self.violations) / self.node_total if self.node_total else 0.0


def _first_from(S: np.ndarray, rows: np.ndarray, pos: np.ndarray, log_b: np.ndarray) -> np.ndarray:
    """First ``m >= 1`` with ``S[r, p+m] - S[r, p] >= log_b[m]``; 0 when none fits in the orbit."""
    L = S.shape[1] - 1
    u = np.zeros(rows.size, dtype=np.int64)
    base = S[rows, pos]
    pending = np.arange(rows.size)
    for m in range(1, L + 1):
        q = pos[pending] + m
        pending = pending[q <= L]
        if not pending.size:
            break
        hit = S[rows[pending], pos[pending] + m] - base[pending] >= log_b[m]
        u[pending[hit]] = m
        pending = pending[~hit]
        if not pending.size:
            break
    return u


def glue_walk(S: np.ndarray, log_b: np.ndarray, target: int) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized greedy gluing on cumulative sums ``S`` of shape ``(M, L+1)``.

    Returns ``(u0, total)`` where ``u0`` is the first entry at offset 0 and
    ``total`` the covering length; 0 marks a censored walk.
    """
    M = S.shape[0]
    pos = np.zeros(M, dtype=np.int64)
    alive = np.ones(M, dtype=bool)
    u0 = None
    while True:
        act = np.flatnonzero(alive & (pos < target))
        if not act.size:
            break
        u = _first_from(S, act, pos[act], log_b)
        if u0 is None:
            u0 = u.copy()
        alive[act[u == 0]] = False
        pos[act] += u
    total = np.where(alive, pos, 0)
    return (u0 if u0 is not None else np.zeros(M, dtype=np.int64)), total


def lemma2_inclusion(system: MapSystem, tree: PreimageTree, b, H: int,
                     bound_tol: float = 1e-7) -> Lemma2Result:
    """Glue chains forward from every node and bound the overshoot ``N_hat``.

    ``H`` is the forward orbit length computed from each node. A node at level
    ``n`` is censored when some chain the walk needs does not close within it.
    """
    if not b.certified_submultiplicative:
        raise PreconditionError("lemma2_inclusion needs a certified submultiplicative rate")
    if H < tree.depth:
        raise ConfigurationError(f"forward horizon {H} shorter than tree depth {tree.depth}")
    log_b = b.log_table(H)
    violations, failures = [], []
    excess_glue, excess_first = [], []
    glued = {}
    total_nodes = 0
    for n in range(1, tree.depth + 1):
        lv = tree.levels[n]
        totals = np.zeros(len(lv), dtype=np.int64)
        for start in range(0, len(lv), GLUE_CHUNK):
            pts = lv.points[start:start + GLUE_CHUNK]
            S = cumulative_log_jac(system, pts, H)
            u0, total = glue_walk(S, log_b, n)
            totals[start:start + pts.shape[0]] = total
            ok = total > 0
            rows = np.flatnonzero(ok)
            # membership of the glued total: direct comparison, not the first-crossing search
            member = S[rows, total[rows]] >= log_b[total[rows]]
            failures.extend((n, start + int(i)) for i in rows[~member])
            violations.extend((n, start + int(i)) for i in np.flatnonzero(~ok))
            if rows.size:
                excess_glue.append(int(np.max(total[rows] - n)))
            if np.any(u0 > 0):
                excess_first.append(int(np.max(u0[u0 > 0] - n)))
        glued[n] = totals
        total_nodes += len(lv)
    n_hat = max(excess_glue) if excess_glue else None
    first_excess = max(excess_first) if excess_first else None

    bound_failures = []
    if n_hat is not None:
        log_c = -n_hat * system.sup_log_jac
        for n, totals in glued.items():
            lv = tree.levels[n]
            ok = totals > 0
            lhs = lv.back_log_jac
            bad = ok & (lhs < log_b[n] + log_c - bound_tol) & (lhs != NEGATIVE_DEGENERATE)
            bound_failures.extend((n, int(i)) for i in np.flatnonzero(bad))
    return Lemma2Result(n_hat, violations, total_nodes, first_excess, failures, bound_failures, glued)
