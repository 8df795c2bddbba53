"""Hitting times of the expansion threshold and the statistics of their tails.

``h(x)`` is the first ``n`` with ``S_n(x) >= log a_n`` where ``S_n`` is the
cumulative log-Jacobian. ``Gamma_n = {h >= n}``; its normalized Lebesgue
measure is estimated by uniform Monte Carlo and its decay is classified as
exponential, stretched exponential or polynomial.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from . import sampling
from .dynamics import MAX_ORBIT_HORIZON, MapSystem, cumulative_log_jac
from .errors import ConfigurationError

CHUNK = 8192
FIT_START = 5
MIN_SURVIVORS = 30
MIN_NONZERO = 10
BLOCK_RATIO = 0.9
BLOCKS_CHECKED = 3
PLANTED_SAMPLE_SIZE = 10**12

CONVERGENT = "CONVERGENT"
DIVERGENT = "DIVERGENT"
DIVERGENT_OR_UNKNOWN = "DIVERGENT_OR_UNKNOWN"
VERDICT_NOTE = (f"finite-horizon proxy: CONVERGENT iff each of the last {BLOCKS_CHECKED} complete dyadic "
                f"blocks is at most {BLOCK_RATIO} times its predecessor")


@dataclass(frozen=True)
class HittingResult:
    value: int | None  # None when censored
    horizon: int
    margin: float  # S_h - log a_h, or the best (negative) margin up to the horizon

    @property
    def censored(self) -> bool:
        return self.value is None


@dataclass(frozen=True)
class TailProfile:
    """Estimated law of ``h`` up to a horizon.

    ``mu_hat[n-1]`` estimates ``Leb(h = n)`` and ``gamma_tail[n-1]`` estimates
    ``Leb(Gamma_n)`` including the censored mass.
    """

    horizon: int
    mu_hat: np.ndarray
    gamma_tail: np.ndarray
    censored_fraction: float
    sample_size: int
    seed: int | None = None
    stderr: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        g = self.gamma_tail
        if g.shape != (self.horizon,) or self.mu_hat.shape != (self.horizon,):
            raise ValueError("profile arrays must have length equal to the horizon")
        if np.any(np.diff(g) > 1e-12):
            raise ValueError("gamma_tail must be non-increasing")
        if not 0.0 <= self.censored_fraction <= 1.0:
            raise ValueError("censored_fraction must lie in [0, 1]")
        if np.any(g < self.censored_fraction - 1e-12):
            raise ValueError("gamma_tail cannot fall below the censored mass")
        if self.stderr is None:
            N = float(self.sample_size)
            object.__setattr__(self, "stderr", np.sqrt(np.clip(g * (1 - g), 0, None) / N))

    @classmethod
    def from_counts(cls, counts: np.ndarray, censored: int, seed: int | None = None):
        """Build from integer counts of ``h = 1..H`` plus the censored count."""
        counts = np.asarray(counts, dtype=np.int64)
        N = int(counts.sum() + censored)
        surv = np.cumsum(counts[::-1])[::-1] + censored
        return cls(horizon=counts.size, mu_hat=counts / N, gamma_tail=surv / N,
                   censored_fraction=censored / N, sample_size=N, seed=seed)

    @classmethod
    def from_masses(cls, mu, censored: float = 0.0, sample_size: int = PLANTED_SAMPLE_SIZE):
        """Planted law ``mu[n-1] ~ Leb(h = n)``; normalized together with ``censored``."""
        mu = np.asarray(mu, dtype=float)
        total = mu.sum() + censored
        mu = mu / total
        censored = censored / total
        g = np.cumsum(mu[::-1])[::-1] + censored
        return cls(horizon=mu.size, mu_hat=mu, gamma_tail=g, censored_fraction=censored,
                   sample_size=sample_size)

    @classmethod
    def from_tail(cls, gamma_tail, censored: float = 0.0, sample_size: int = PLANTED_SAMPLE_SIZE):
        """Planted tail values taken literally (no renormalization)."""
        g = np.asarray(gamma_tail, dtype=float)
        mu = g - np.append(g[1:], censored)
        return cls(horizon=g.size, mu_hat=mu, gamma_tail=g, censored_fraction=censored,
                   sample_size=sample_size)

    def survivors(self) -> np.ndarray:
        return self.gamma_tail * self.sample_size


@dataclass(frozen=True)
class TailClass:
    regime: str  # EXPONENTIAL | STRETCHED | POLYNOMIAL | TRIVIAL | UNDETERMINED
    fit_quality: float = float("nan")
    log_c: float = float("nan")
    alpha: float = float("nan")
    tau: float = float("nan")
    window: tuple[int, int] | None = None
    candidates: dict = field(default_factory=dict, compare=False)

    def describe(self) -> dict:
        return {"regime": self.regime, "alpha": self.alpha, "tau": self.tau, "log_c": self.log_c,
                "fit_quality": self.fit_quality,
                "fit_window": list(self.window) if self.window else None,
                "candidates": self.candidates}


@dataclass(frozen=True)
class SeriesReport:
    terms: np.ndarray
    partial_sums: np.ndarray
    block_sums: np.ndarray
    verdict: str
    note: str = VERDICT_NOTE
    bound_constant: float | None = None  # lp_diagnostic only: smallest K with mu <= K n^-p

    def describe(self) -> dict:
        out = {"verdict": self.verdict, "note": self.note,
               "final_partial_sum": float(self.partial_sums[-1]) if self.partial_sums.size else 0.0,
               "block_sums": [float(b) for b in self.block_sums]}
        if self.bound_constant is not None:
            out["bound_constant"] = self.bound_constant
        return out


# --- hitting times --------------------------------------------------------

def _check_horizon(a, H: int) -> None:
    if H < 1 or H > MAX_ORBIT_HORIZON:
        raise ConfigurationError(f"horizon {H} outside [1, {MAX_ORBIT_HORIZON}]")
    if a.max_index is not None and H > a.max_index:
        raise ConfigurationError(f"rate tabulated only up to {a.max_index}, horizon is {H}")


def first_crossing(S: np.ndarray, log_rate: np.ndarray) -> np.ndarray:
    """First ``n >= 1`` with ``S[:, n] >= log_rate[n]``; 0 where none exists."""
    hit = S[:, 1:] >= log_rate[1:S.shape[1]]
    first = np.argmax(hit, axis=1) + 1
    return np.where(hit.any(axis=1), first, 0)


def hitting_times(system: MapSystem, pts: np.ndarray, a, H: int) -> np.ndarray:
    """Vectorized hitting times; 0 marks a censored point."""
    _check_horizon(a, H)
    S = cumulative_log_jac(system, pts, H)
    return first_crossing(S, a.log_table(H))


def hitting_time(system: MapSystem, x, a, H: int) -> HittingResult:
    _check_horizon(a, H)
    pts = system.as_points(x)
    system.check_domain(pts)
    S = cumulative_log_jac(system, pts, H)[0]
    margins = S[1:] - a.log_table(H)[1:]
    hit = np.flatnonzero(margins >= 0)
    if hit.size:
        n = int(hit[0]) + 1
        return HittingResult(n, H, float(margins[n - 1]))
    return HittingResult(None, H, float(np.max(margins)))


def _tail_chunk(system, a, H, seed, start, count):
    u = sampling.uniforms(seed, sampling.STREAM_TAILS, start, count, system.dim)
    h = hitting_times(system, system.from_uniform(u), a, H)
    return np.bincount(h, minlength=H + 1)


def estimate_tails(system: MapSystem, a, H: int, n_samples: int, seed: int,
                   threads: int = 1) -> TailProfile:
    """Monte Carlo tail profile of ``h`` under normalized Lebesgue measure."""
    if n_samples < 100:
        raise ConfigurationError("estimate_tails needs at least 100 samples")
    _check_horizon(a, H)
    chunks = list(sampling.chunk_bounds(n_samples, CHUNK))
    job = lambda sc: _tail_chunk(system, a, H, seed, *sc)  # noqa: E731
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(job, chunks))
    else:
        parts = [job(sc) for sc in chunks]
    counts = np.sum(parts, axis=0)
    return TailProfile.from_counts(counts[1:], int(counts[0]), seed=seed)


# --- classification -------------------------------------------------------

def _linfit(x: np.ndarray, y: np.ndarray):
    A = np.stack([np.ones_like(x), x], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    rss = float(np.sum((A @ coef - y) ** 2))
    tss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - rss / tss if tss > 0 else 0.0
    return coef[0], coef[1], r2


def _fit_stretched(n: np.ndarray, y: np.ndarray):
    def r2_of(tau):
        return _linfit(n ** tau, y)[2]

    grid = np.linspace(0.02, 1.0, 50)
    scores = [r2_of(t) for t in grid]
    i = int(np.argmax(scores))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    res = minimize_scalar(lambda t: -r2_of(t), bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-7})
    tau = float(res.x) if -res.fun >= scores[i] else float(grid[i])
    log_c, slope, r2 = _linfit(n ** tau, y)
    return log_c, -slope, tau, r2


def _adjusted(r2: float, m: int, k: int) -> float:
    return 1.0 - (1.0 - r2) * (m - 1) / (m - k - 1)


def fit_window(profile: TailProfile, fit_start: int = FIT_START, min_survivors: int = MIN_SURVIVORS):
    surv = profile.survivors()
    ok = np.flatnonzero(surv >= min_survivors)
    if not ok.size:
        return None
    return fit_start, int(ok[-1]) + 1


def classify_tail(profile: TailProfile, fit_start: int = FIT_START,
                  min_survivors: int = MIN_SURVIVORS) -> TailClass:
    """Fit ``log Leb(Gamma_n)`` by the three candidate decay laws and keep the best.

    Candidates are compared by adjusted R^2 (one slope parameter for the
    exponential and polynomial laws, two for the stretched law); exact ties
    go to the simpler law.
    """
    g = profile.gamma_tail
    if profile.censored_fraction == 0 and np.all(g[1:] == 0):
        return TailClass("TRIVIAL", fit_quality=1.0)
    if np.count_nonzero(g[1:]) < MIN_NONZERO:
        return TailClass("UNDETERMINED")
    window = fit_window(profile, fit_start, min_survivors)
    if window is None or window[1] - window[0] + 1 < 4:
        return TailClass("UNDETERMINED", window=window)
    n = np.arange(window[0], window[1] + 1, dtype=float)
    y = np.log(g[window[0] - 1:window[1]])
    m = n.size
    if np.ptp(y) == 0:
        return TailClass("UNDETERMINED", window=window)

    fits = {}
    log_c, slope, r2 = _linfit(n, y)
    fits["EXPONENTIAL"] = dict(log_c=log_c, alpha=-slope, tau=1.0, r2=r2, adj=_adjusted(r2, m, 1))
    log_c, slope, r2 = _linfit(np.log(n), y)
    fits["POLYNOMIAL"] = dict(log_c=log_c, alpha=-slope, tau=float("nan"), r2=r2, adj=_adjusted(r2, m, 1))
    if m >= 5:
        log_c, alpha, tau, r2 = _fit_stretched(n, y)
        fits["STRETCHED"] = dict(log_c=log_c, alpha=alpha, tau=tau, r2=r2, adj=_adjusted(r2, m, 2))

    admissible = [k for k in ("EXPONENTIAL", "POLYNOMIAL", "STRETCHED")
                  if k in fits and fits[k]["alpha"] > 0]
    if not admissible:
        return TailClass("UNDETERMINED", window=window, candidates=_clean(fits))
    best = admissible[0]
    for k in admissible[1:]:
        if fits[k]["adj"] > fits[best]["adj"] + 1e-12:
            best = k
    f = fits[best]
    return TailClass(best, fit_quality=float(f["r2"]), log_c=float(f["log_c"]), alpha=float(f["alpha"]),
                     tau=float(f["tau"]), window=window, candidates=_clean(fits))


def _clean(fits: dict) -> dict:
    return {k: {kk: float(vv) for kk, vv in v.items()} for k, v in fits.items()}


# --- series diagnostics ---------------------------------------------------

def dyadic_blocks(terms: np.ndarray) -> np.ndarray:
    """Sums over ``2^j <= n < 2^(j+1)`` for every block fully inside ``1..len(terms)``."""
    H = terms.size
    out = []
    j = 0
    while 2 ** (j + 1) - 1 <= H:
        out.append(float(np.sum(terms[2 ** j - 1:2 ** (j + 1) - 1])))
        j += 1
    return np.asarray(out)


def block_verdict(blocks: np.ndarray) -> str:
    if blocks.size < BLOCKS_CHECKED:
        return DIVERGENT_OR_UNKNOWN
    tail = blocks[-BLOCKS_CHECKED:]
    for prev, nxt in zip(tail[:-1], tail[1:]):
        if nxt == 0:
            continue
        if prev == 0 or nxt / prev > BLOCK_RATIO:
            return DIVERGENT
    return CONVERGENT


def series_report(terms: np.ndarray, censored: bool = False, bound_constant=None) -> SeriesReport:
    terms = np.asarray(terms, dtype=float)
    blocks = dyadic_blocks(terms)
    verdict = DIVERGENT_OR_UNKNOWN if censored else block_verdict(blocks)
    return SeriesReport(terms=terms, partial_sums=np.cumsum(terms), block_sums=blocks,
                        verdict=verdict, bound_constant=bound_constant)


def lp_diagnostic(profile: TailProfile, p: float) -> SeriesReport:
    """Partial sums of ``sum_n n^p Leb(h = n)`` and the smallest ``K`` with ``Leb(h=n) <= K n^-p``."""
    if not p > 0:
        raise ConfigurationError(f"p must be positive, got {p}")
    n = np.arange(1, profile.horizon + 1, dtype=float)
    terms = n ** p * profile.mu_hat
    K = float(np.max(terms)) if terms.size else 0.0
    return series_report(terms, censored=profile.censored_fraction > 0, bound_constant=K)
