import math
from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from backcontract import sampling
from backcontract.chains import (
    concatenation_check,
    first_entries,
    first_entry,
    first_entry_profile,
    glue_decomposition,
    membership_U,
    sample_first_entries,
    tower_mass,
)
from backcontract.dynamics import Doubling, Quadratic, cumulative_log_jac, orbit
from backcontract.errors import PreconditionError
from backcontract.profile import CONVERGENT, DIVERGENT, DIVERGENT_OR_UNKNOWN
from backcontract.rates import make_rate

DOUBLING = Doubling(2)
QUAD = Quadratic(2.0)
EXP03 = make_rate("exp", c=0.3)


def exact_log_jac_sum(x, n, a=2):
    """``S_n`` by 60-digit iteration, independent of the vectorized accumulator."""
    mpmath.mp.dps = 60
    x = mpmath.mpf(x)
    s = mpmath.mpf(0)
    for _ in range(n):
        s += mpmath.log(abs(2 * a * x))
        x = 1 - a * x * x
    return s


# --- membership and first entry ------------------------------------------------

def test_membership_examples():
    assert membership_U(DOUBLING, 0.123, make_rate("exp", c=0.5), 7)
    b08 = make_rate("exp", c=0.8)
    assert not any(membership_U(DOUBLING, x, b08, n) for x in (0.1, 0.5) for n in (1, 5, 20))
    assert not membership_U(QUAD, 0.3, EXP03, 1)
    assert membership_U(QUAD, 0.3, EXP03, 2)


def test_membership_requires_certified_rate():
    with pytest.raises(PreconditionError):
        membership_U(DOUBLING, 0.1, make_rate("custom", values=[2, 3, 7]), 2)


def test_first_entry_examples():
    st1 = first_entry(DOUBLING, 0.37, make_rate("exp", c=0.5), 20)
    assert st1.u_value == 1 and st1.chain_points == [0.37]
    st2 = first_entry(QUAD, 0.3, EXP03, 20)
    assert st2.u_value == 2
    assert st2.chain_points == pytest.approx([0.3, 0.82], abs=1e-15)
    assert first_entry(QUAD, 0.0, EXP03, 20).censored


@settings(max_examples=60, deadline=None)
@given(x=st.floats(-1.0, 1.0), c=st.floats(0.05, 0.6))
def test_first_entry_minimality(x, c):
    b = make_rate("exp", c=c)
    state = first_entry(QUAD, x, b, 40)
    if state.censored:
        assert not any(membership_U(QUAD, x, b, m) for m in range(1, 41))
        return
    assert membership_U(QUAD, x, b, state.u_value)
    assert not any(membership_U(QUAD, x, b, m) for m in range(1, state.u_value))


# --- concatenation ---------------------------------------------------------------

@pytest.mark.parametrize("system", [DOUBLING, QUAD], ids=["doubling", "quadratic"])
@pytest.mark.parametrize("b", [make_rate("exp", c=0.3), make_rate("stretched", c=0.5, tau=0.5),
                               make_rate("poly", c=1.5)], ids=["exp", "stretched", "poly"])
def test_concatenation_certified_rates(system, b):
    assert concatenation_check(system, b, 10_000, 60, seed=17) == []


def test_concatenation_examples():
    assert concatenation_check(DOUBLING, make_rate("exp", c=0.5), 10_000, 60, seed=1) == []
    assert concatenation_check(QUAD, EXP03, 10_000, 60, seed=1) == []
    with pytest.raises(PreconditionError):
        concatenation_check(DOUBLING, make_rate("custom", values=[2, 3, 7]), 100, 3, seed=1)


def test_concatenation_detects_violations_of_a_non_submultiplicative_rate():
    # b_1 = 2, b_2 = 5 > b_1^2: on the doubling map S_1 = log 2 and S_2 = 2 log 2 < log 5
    bad = make_rate("custom", values=[2.0, 5.0])
    forced = type(bad)("custom", table=bad.table, certified_submultiplicative=True, cert_bound=2)
    viol = concatenation_check(DOUBLING, forced, 200, 2, seed=3)
    assert len(viol) == 200
    # exact replay in rationals: |det Df^2| = 4 < b_2 = 5 although 2 >= b_1 twice
    assert Fraction(2) >= Fraction(2) and Fraction(2) * Fraction(2) < Fraction(5)
    for v in viol:
        assert (v.n, v.m) == (1, 1)
        assert v.margin == pytest.approx(2 * math.log(2) - math.log(5), abs=1e-12)


def test_concatenation_flagged_triples_replay_exactly():
    # replay a sample of quadratic triples at 60 digits; the implication holds exactly
    seed, count, H = 1, 200, 40
    u = sampling.uniforms(seed, sampling.STREAM_TRIPLES, 0, count, 1)
    pts = QUAD.from_uniform(u)
    n = sampling.integers(seed, sampling.STREAM_TRIPLES, 0, count, 1, H - 1, coord=1)
    m = sampling.integers(seed, sampling.STREAM_TRIPLES, 0, count, 1, H - n, coord=2)
    for x, ni, mi in zip(pts[:, 0], n, m):
        ni, mi = int(ni), int(mi)
        Sn = exact_log_jac_sum(x, ni)
        y = orbit(QUAD, float(x), ni).points[-1]
        Sm = exact_log_jac_sum(y, mi)
        if Sn >= 0.3 * ni and Sm >= 0.3 * mi:
            assert Sn + Sm >= 0.3 * (ni + mi)


def test_concatenation_thread_independent():
    b = make_rate("custom", values=[1.9, 3.5, 7.0, 13.0])
    forced = type(b)("custom", table=b.table, certified_submultiplicative=True, cert_bound=4)
    v1 = concatenation_check(QUAD, forced, 3000, 4, seed=5, threads=1)
    v4 = concatenation_check(QUAD, forced, 3000, 4, seed=5, threads=4)
    assert v1 == v4


# --- greedy gluing -----------------------------------------------------------------

def test_glue_examples():
    d = glue_decomposition({0: 2, 2: 2, 4: 3}, 5)
    assert d.segments == (2, 2, 3) and d.total == 7
    d = glue_decomposition({0: 6}, 4)
    assert d.segments == (6,) and d.total == 6 and d.terminal_contains_x


def test_glue_censored_walk_is_reported():
    d = glue_decomposition({0: 2, 2: None}, 5)
    assert d.failed and d.censored_at == 2 and d.total is None
    assert glue_decomposition([3, 0, 0, 0], 6).failed


def brute_force_glue(u, target):
    total, segs = 0, []
    while total < target:
        segs.append(u[total])
        total += u[total]
    return segs, total


@settings(max_examples=300, deadline=None)
@given(u=st.lists(st.integers(1, 8), min_size=40, max_size=40), target=st.integers(1, 30))
def test_glue_soundness(u, target):
    d = glue_decomposition(u, target)
    segs, total = brute_force_glue(u, target)
    assert list(d.segments) == segs and d.total == total
    assert target <= d.total <= target + d.segments[-1] - 1
    assert sum(d.segments[:-1]) < target


def test_glue_quadratic_preimage_total_is_member():
    rng = np.random.default_rng(21)
    H = 12 + 60
    log_b = EXP03.log_table(H)
    for x in rng.uniform(-1, 1, 5):
        # walk twelve random inverse branches down from x
        z = x
        for _ in range(12):
            z = math.sqrt((1 - z) / 2) * rng.choice([-1, 1])
        S = cumulative_log_jac(QUAD, np.array([[z]]), H)[0]
        u_along = {}
        for j in range(H):
            tail = S[j + 1:] - S[j]
            hit = np.flatnonzero(tail >= log_b[1:H - j + 1])
            u_along[j] = int(hit[0]) + 1 if hit.size else None
        d = glue_decomposition(u_along, 12)
        assert not d.failed
        assert membership_U(QUAD, z, EXP03, d.total)


# --- tower mass -------------------------------------------------------------------

def test_tower_geometric_oracle():
    n = np.arange(1, 61, dtype=float)
    L = np.exp(-n)
    rep = tower_mass(make_rate("exp", c=0.5), L)
    # sum_{j<n} e^{0.5 j} e^{-n} = e^{-n} (e^{0.5 n} - 1)/(e^{0.5} - 1), each piece below 1
    oracle = np.exp(-n) * (np.exp(0.5 * n) - 1) / (math.exp(0.5) - 1)
    assert np.allclose(rep.terms, oracle, rtol=1e-12)
    assert np.all(rep.terms <= np.exp(-n) * np.exp(0.5 * n + 0.5) / (math.exp(0.5) - 1))
    assert rep.verdict == CONVERGENT
    assert rep.partial_sums[-1] == pytest.approx(np.sum(oracle), rel=1e-12)


def test_tower_polynomial_diverges():
    n = np.arange(1, 201, dtype=float)
    rep = tower_mass(make_rate("poly", c=3.0), 1.0 / (n * (n + 1)))
    assert rep.verdict == DIVERGENT


def test_tower_doubling_and_censoring():
    b = make_rate("exp", c=0.5)
    u = sample_first_entries(DOUBLING, b, 30, 2000, seed=4)
    prof = first_entry_profile(u, 30)
    assert prof.mu_hat[0] == 1.0 and prof.censored_fraction == 0
    rep = tower_mass(b, prof.mu_hat, prof.censored_fraction)
    assert rep.partial_sums[-1] == pytest.approx(1.0)  # only the b_0 Leb(U*_1) piece
    rep = tower_mass(b, [0.5, 0.4], censored_fraction=0.1)
    assert rep.verdict == DIVERGENT_OR_UNKNOWN


def test_vectorized_first_entries_match_scalar():
    rng = np.random.default_rng(8)
    pts = rng.uniform(-1, 1, (100, 1))
    u = first_entries(QUAD, pts, EXP03, 50)
    for x, v in zip(pts[:, 0], u):
        st_ = first_entry(QUAD, x, EXP03, 50)
        assert (st_.u_value or 0) == v
