"""The sets ``U_n = {S_n >= log b_n}``, first-entry times and chain gluing.

For a submultiplicative ``b`` the family ``(U_n)`` is closed under orbit
concatenation: ``x in U_n`` and ``f^n(x) in U_m`` give ``x in U_{n+m}``
because ``S_{n+m}(x) = S_n(x) + S_m(f^n x) >= log b_n + log b_m >= log b_{n+m}``.
Gluing first-entry chains along a pre-orbit therefore lands in ``U_m`` for
some ``m`` just past the target length.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import sampling
from .dynamics import MapSystem, cumulative_log_jac
from .errors import ConfigurationError, PreconditionError
from .profile import CHUNK, SeriesReport, TailProfile, first_crossing, series_report

CONCAT_TOL = 1e-8


def _require_certified(b) -> None:
    if not b.certified_submultiplicative:
        raise PreconditionError(f"rate {b.family} is not certified submultiplicative")


def membership_U(system: MapSystem, x, b, n: int) -> bool:
    """True iff ``S_n(x) >= log b_n`` (strict float comparison, no tolerance)."""
    _require_certified(b)
    if n < 1:
        raise ConfigurationError("U_n is defined for n >= 1")
    pts = system.as_points(x)
    system.check_domain(pts)
    S = cumulative_log_jac(system, pts, n)[0, n]
    return bool(S >= b.log_at(n))


@dataclass(frozen=True)
class ChainState:
    base: object
    u_value: int | None  # None when censored
    chain_points: list

    @property
    def censored(self) -> bool:
        return self.u_value is None


def first_entries(system: MapSystem, pts: np.ndarray, b, H: int) -> np.ndarray:
    """Vectorized ``u(x)``; 0 marks a censored point."""
    S = cumulative_log_jac(system, pts, H)
    return first_crossing(S, b.log_table(H))


def first_entry(system: MapSystem, x, b, H: int) -> ChainState:
    _require_certified(b)
    pts = system.as_points(x)
    system.check_domain(pts)
    S, P = cumulative_log_jac(system, pts, H, return_points=True)
    u = int(first_crossing(S, b.log_table(H))[0])
    unpack = (lambda r: float(r[0])) if system.dim == 1 else (lambda r: tuple(map(float, r)))
    if u == 0:
        return ChainState(unpack(pts[0]), None, [])
    return ChainState(unpack(pts[0]), u, [unpack(P[0, k]) for k in range(u)])


@dataclass(frozen=True)
class Violation:
    index: int
    point: tuple
    n: int
    m: int
    margin: float  # S_{n+m}(x) - log b_{n+m}


def _concat_chunk(system, b, H, seed, start, count, tol):
    u = sampling.uniforms(seed, sampling.STREAM_TRIPLES, start, count, system.dim)
    pts = system.from_uniform(u)
    n = sampling.integers(seed, sampling.STREAM_TRIPLES, start, count, 1, H - 1, coord=system.dim)
    m = sampling.integers(seed, sampling.STREAM_TRIPLES, start, count, 1, H - n, coord=system.dim + 1)
    Lb = b.log_table(H)
    S, P = cumulative_log_jac(system, pts, H, return_points=True)
    rows = np.arange(count)
    # S_m along a fresh orbit started at f^n(x): a different summation order from S_{n+m}(x)
    S2 = cumulative_log_jac(system, P[rows, n], H)
    in_n = S[rows, n] >= Lb[n]
    in_m = S2[rows, m] >= Lb[m]
    margin = S[rows, n + m] - Lb[n + m]
    bad = np.flatnonzero(in_n & in_m & (margin < -tol))
    return [Violation(start + int(i), tuple(map(float, pts[i])), int(n[i]), int(m[i]), float(margin[i]))
            for i in bad]


def concatenation_check(system: MapSystem, b, samples: int, H: int, seed: int, threads: int = 1,
                        tol: float = CONCAT_TOL) -> list[Violation]:
    """Sample triples ``(x, n, m)`` with ``n + m <= H`` and list every failure of concatenation."""
    _require_certified(b)
    if H < 2:
        raise ConfigurationError("concatenation_check needs H >= 2")
    if b.max_index is not None and H > b.max_index:
        raise ConfigurationError(f"rate tabulated only up to {b.max_index}")
    chunks = list(sampling.chunk_bounds(samples, CHUNK))
    job = lambda sc: _concat_chunk(system, b, H, seed, *sc, tol)  # noqa: E731
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(job, chunks))
    else:
        parts = [job(sc) for sc in chunks]
    return [v for part in parts for v in part]


@dataclass(frozen=True)
class ChainDecomposition:
    segments: tuple[int, ...]
    total: int | None  # None when the walk met a censored first entry
    target_n: int
    terminal_contains_x: bool
    censored_at: int | None = None

    @property
    def failed(self) -> bool:
        return self.censored_at is not None


def glue_decomposition(u_along_orbit, target_n: int) -> ChainDecomposition:
    """Stack first-entry chains along the orbit of ``z`` until they cover ``target_n``.

    ``u_along_orbit[j]`` is ``u(f^j z)`` (``None`` or 0 when censored); it may be a
    sequence or a mapping and is only read at the offsets the walk visits.
    """
    if target_n < 1:
        raise ConfigurationError("target_n must be >= 1")

    def u_at(j):
        try:
            v = u_along_orbit[j]
        except (IndexError, KeyError):
            return None
        return int(v) if v else None

    segments = []
    offset = 0
    while offset < target_n:
        u = u_at(offset)
        if u is None:
            return ChainDecomposition(tuple(segments), None, target_n, False, censored_at=offset)
        segments.append(u)
        last_offset = offset
        offset += u
    return ChainDecomposition(tuple(segments), offset, target_n,
                              terminal_contains_x=last_offset <= target_n < offset)


def tower_mass(b, u_mass, censored_fraction: float = 0.0) -> SeriesReport:
    """Majorized tower series ``sum_n sum_{j<n} min(1, b_j Leb(U*_n))``.

    ``u_mass[n-1]`` estimates ``Leb(U*_n) = Leb(u = n)``. Each pushed-forward
    piece is bounded by ``b_j Leb(U*_n)`` and by the total mass 1.
    """
    u_mass = np.asarray(u_mass, dtype=float)
    H = u_mass.size
    Lb = b.log_table(max(H - 1, 0))
    terms = np.zeros(H)
    nz = np.flatnonzero(u_mass > 0)
    for i in nz:
        n = i + 1
        logs = Lb[:n] + np.log(u_mass[i])
        terms[i] = float(np.sum(np.exp(np.minimum(logs, 0.0))))
    return series_report(terms, censored=censored_fraction > 0)


def sample_first_entries(system: MapSystem, b, H: int, n_samples: int, seed: int,
                         threads: int = 1) -> np.ndarray:
    """``u(x)`` for Lebesgue-sampled points (0 = censored), indexed by sample."""
    _require_certified(b)
    if b.max_index is not None and H > b.max_index:
        raise ConfigurationError(f"rate tabulated only up to {b.max_index}")

    def job(sc):
        start, count = sc
        u = sampling.uniforms(seed, sampling.STREAM_CHAINS, start, count, system.dim)
        return first_entries(system, system.from_uniform(u), b, H)

    chunks = list(sampling.chunk_bounds(n_samples, CHUNK))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(job, chunks))
    else:
        parts = [job(sc) for sc in chunks]
    return np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)


def first_entry_profile(u_values: np.ndarray, H: int) -> TailProfile:
    counts = np.bincount(u_values, minlength=H + 1)
    return TailProfile.from_counts(counts[1:], int(counts[0]))
