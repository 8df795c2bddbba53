"""Threshold and backward-rate sequences.

A rate is stored through its logarithm ``log_at(n)``; ``log_at(0) = 0`` for
every family so that ``b_0 = 1``. Families:

=========== ===============================  ===========================
EXP(c)      ``b_n = exp(c n)``                additive in ``n``
STRETCHED   ``b_n = exp(c n^tau)``            ``n -> n^tau`` subadditive
POLY(c)     ``b_n = (n + 1)^c``               ``(k+1)(n+1) >= k+n+1``
CUSTOM      tabulated ``b_1 .. b_T``          exhaustive check only
=========== ===============================  ===========================
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DerivationFailure, HypothesisViolation
from .profile import SeriesReport, TailClass, TailProfile, series_report

K_CERT = 2000
CERT_TOL = 1e-9
DOMINATION_TOL = 1e-9
DEFAULT_SLACK = 0.1

_ANALYTIC = {
    "exp": "log b_k + log b_n = c(k+n) = log b_(k+n)",
    "stretched": "k^tau + n^tau >= (k+n)^tau for 0 < tau <= 1",
    "poly": "(k+1)(n+1) = k+n+1+kn >= k+n+1",
}


@dataclass(frozen=True)
class RateSequence:
    family: str
    c: float = 0.0
    tau: float = 1.0
    table: tuple[float, ...] = ()  # CUSTOM: log b_1 .. log b_T
    certified_submultiplicative: bool = False
    cert_bound: int = 0
    justification: str = ""

    @property
    def max_index(self) -> int | None:
        """Largest index the sequence is defined at (``None`` for closed forms)."""
        return len(self.table) if self.family == "custom" else None

    def log_at(self, n):
        n_arr = np.asarray(n)
        if np.any(n_arr < 0):
            raise ValueError("rate index must be non-negative")
        if self.family == "exp":
            out = self.c * n_arr.astype(float)
        elif self.family == "stretched":
            out = self.c * np.power(n_arr.astype(float), self.tau)
        elif self.family == "poly":
            out = self.c * np.log1p(n_arr.astype(float))
        else:
            if np.any(n_arr > len(self.table)):
                raise ConfigurationError(
                    f"custom rate is tabulated only up to n={len(self.table)}")
            out = np.concatenate([[0.0], self.table])[n_arr]
        return float(out) if np.ndim(out) == 0 else out

    def log_table(self, horizon: int) -> np.ndarray:
        """``log_at(0..horizon)`` as an array."""
        return np.asarray(self.log_at(np.arange(horizon + 1)), dtype=float)

    def describe(self) -> dict:
        out = {"family": self.family, "certified_submultiplicative": self.certified_submultiplicative,
               "certification_bound": self.cert_bound}
        if self.family in ("exp", "poly"):
            out["c"] = self.c
        elif self.family == "stretched":
            out.update(c=self.c, tau=self.tau)
        else:
            out["log_values"] = list(self.table)
        if self.justification:
            out["justification"] = self.justification
        return out


def is_submultiplicative(log_values: np.ndarray, bound: int, tol: float = CERT_TOL) -> bool:
    """Exhaustive check of ``L[k] + L[n] >= L[k+n]`` for ``1 <= k, n`` with ``k+n <= len-1``
    and ``k, n <= bound``. ``log_values[0]`` is ``log b_0``."""
    L = np.asarray(log_values, dtype=float)
    top = min(bound, len(L) - 2)
    for k in range(1, top + 1):
        n = np.arange(1, min(bound, len(L) - 1 - k) + 1)
        if n.size and np.any(L[k] + L[n] < L[k + n] - tol):
            return False
    return True


def is_monotone(log_values: np.ndarray) -> bool:
    return bool(np.all(np.diff(np.asarray(log_values)[1:]) >= 0))


def make_rate(family: str, *, c: float | None = None, tau: float = 1.0, values=None,
              log_values=None, k_cert: int = K_CERT) -> RateSequence:
    """Construct and certify a rate sequence.

    ``values`` gives raw terms ``b_1, b_2, ...`` for the CUSTOM family,
    ``log_values`` their logarithms.
    """
    family = family.lower()
    if family in ("exp", "stretched", "poly"):
        if c is None or not c > 0:
            raise ConfigurationError(f"{family} rate needs c > 0, got {c}")
        if family == "stretched" and not 0.0 < tau <= 1.0:
            raise ConfigurationError(f"stretched rate needs tau in (0, 1], got {tau}")
        rate = RateSequence(family, c=float(c), tau=float(tau) if family == "stretched" else 1.0)
        L = rate.log_table(2 * k_cert)
        ok = is_monotone(L) and is_submultiplicative(L, k_cert)
        return RateSequence(family, c=rate.c, tau=rate.tau, certified_submultiplicative=ok,
                            cert_bound=k_cert, justification=_ANALYTIC[family] if ok else "")
    if family == "custom":
        if log_values is None:
            if values is None:
                raise ConfigurationError("custom rate needs values or log_values")
            vals = np.asarray(values, dtype=float)
            if np.any(vals <= 0):
                raise ConfigurationError("custom rate values must be positive")
            log_values = np.log(vals)
        table = tuple(float(v) for v in log_values)
        if not table:
            raise ConfigurationError("custom rate table is empty")
        L = np.concatenate([[0.0], table])
        ok = is_monotone(L) and is_submultiplicative(L, k_cert)
        return RateSequence("custom", table=table, certified_submultiplicative=ok,
                            cert_bound=min(k_cert, len(table)))
    raise ConfigurationError(f"unknown rate family {family!r}")


def rate_from_dict(d: dict) -> RateSequence:
    """Inverse of ``RateSequence.describe`` (re-certifies)."""
    fam = d["family"]
    if fam == "custom":
        if "log_values" in d:
            return make_rate("custom", log_values=d["log_values"])
        return make_rate("custom", values=d["values"])
    return make_rate(fam, c=d.get("c"), tau=d.get("tau", 1.0))


def gamma_bound(p: float) -> float:
    """Largest admissible exponent ``(p-3)/(p-1)`` for an ``L^p`` hitting time."""
    if not p > 3:
        raise HypothesisViolation(f"the L^p hypothesis needs p > 3, got {p}")
    return (p - 3.0) / (p - 1.0)


def default_gamma(cls: TailClass) -> float:
    if cls.regime == "POLYNOMIAL":
        return 0.5 * (1.0 - 2.0 / cls.alpha)
    return 0.5


@dataclass(frozen=True)
class DerivedRate:
    b: RateSequence
    n0: int
    gamma: float
    slack: float
    horizon: int
    beta: float = field(default=0.0)

    def describe(self) -> dict:
        return {**self.b.describe(), "beta": self.beta, "gamma": self.gamma, "n0": self.n0,
                "slack": self.slack, "horizon": self.horizon}


def domination_bound(a: RateSequence, profile: TailProfile, gamma: float) -> np.ndarray:
    """``min(log a_n, -gamma log Leb(Gamma_n))`` for ``n = 1..H`` (``+inf`` where the tail is empty)."""
    n = np.arange(1, profile.horizon + 1)
    g = profile.gamma_tail
    with np.errstate(divide="ignore"):
        tail_term = np.where(g > 0, -gamma * np.log(np.where(g > 0, g, 1.0)), np.inf)
    return np.minimum(a.log_at(n), tail_term)


def least_n0(b: RateSequence, bound: np.ndarray, tol: float = DOMINATION_TOL) -> int | None:
    """Least ``n0`` with ``log b_n <= bound[n-1] + tol`` for every ``n0 <= n <= H``."""
    H = bound.shape[0]
    ok = b.log_at(np.arange(1, H + 1)) <= bound + tol
    if not ok[-1]:
        return None
    bad = np.flatnonzero(~ok)
    return int(bad[-1]) + 2 if bad.size else 1


def derive_b(a: RateSequence, profile: TailProfile, cls: TailClass, gamma: float | None = None,
             slack: float = DEFAULT_SLACK) -> DerivedRate:
    """Pick a backward rate dominated by ``min(a_n, Leb(Gamma_n)^-gamma)``.

    A TRIVIAL tail only constrains ``b`` through ``a`` and gives
    EXP((1 - slack) lambda).
    EXPONENTIAL(alpha) gives EXP(beta), STRETCHED(alpha, tau) gives
    STRETCHED(beta, tau) with ``beta = (1 - slack) min(lambda, gamma alpha)``;
    POLYNOMIAL(alpha) gives POLY((1 - slack) gamma alpha) and requires
    ``alpha > 2``.
    """
    if a.family != "exp":
        raise ConfigurationError("threshold sequence must be EXP(lambda)")
    if cls.regime == "UNDETERMINED":
        raise DerivationFailure("no rate can be derived from an UNDETERMINED tail")
    if cls.regime == "POLYNOMIAL" and not cls.alpha > 2:
        raise HypothesisViolation(f"polynomial tail exponent {cls.alpha:.4g} <= 2")
    if not 0 <= slack < 1:
        raise ConfigurationError(f"slack must lie in [0, 1), got {slack}")
    if gamma is None:
        gamma = default_gamma(cls)
    if not 0 < gamma < 1:
        raise ConfigurationError(f"gamma must lie in (0, 1), got {gamma}")

    lam = a.c
    if cls.regime == "TRIVIAL":
        # Gamma_n is null for n >= 2: only b_n <= a_n constrains the rate
        beta = (1 - slack) * lam
        b = make_rate("exp", c=beta)
    elif cls.regime == "EXPONENTIAL":
        beta = (1 - slack) * min(lam, gamma * cls.alpha)
        b = make_rate("exp", c=beta)
    elif cls.regime == "STRETCHED":
        beta = (1 - slack) * min(lam, gamma * cls.alpha)
        b = make_rate("stretched", c=beta, tau=cls.tau)
    else:
        beta = (1 - slack) * gamma * cls.alpha
        b = make_rate("poly", c=beta)
    n0 = least_n0(b, domination_bound(a, profile, gamma))
    if n0 is None:
        raise DerivationFailure(f"{b.family}({beta:.4g}) is not dominated at the horizon {profile.horizon}")
    return DerivedRate(b=b, n0=n0, gamma=gamma, slack=slack, horizon=profile.horizon, beta=beta)


def theorem_series(profile: TailProfile, gamma: float) -> SeriesReport:
    """Partial sums of ``sum_n n Leb(Gamma_n)^(1-gamma)`` with the dyadic-block verdict."""
    if not 0 < gamma < 1:
        raise ConfigurationError(f"gamma must lie in (0, 1), got {gamma}")
    n = np.arange(1, profile.horizon + 1, dtype=float)
    terms = n * np.power(profile.gamma_tail, 1.0 - gamma)
    return series_report(terms, censored=profile.censored_fraction > 0)
