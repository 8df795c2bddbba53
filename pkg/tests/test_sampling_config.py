import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from backcontract import sampling
from backcontract.config import config_from_dict
from backcontract.errors import ConfigurationError
from backcontract.io import fmt, jsonable


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**63), start=st.integers(0, 10**6), count=st.integers(1, 300),
       split=st.integers(0, 300))
def test_uniforms_are_chunking_invariant(seed, start, count, split):
    split = min(split, count)
    whole = sampling.uniforms(seed, 0, start, count, 2)
    parts = np.concatenate([sampling.uniforms(seed, 0, start, split, 2),
                            sampling.uniforms(seed, 0, start + split, count - split, 2)])
    assert np.array_equal(whole, parts)
    assert np.all((whole >= 0) & (whole < 1))


def test_streams_and_seeds_differ():
    a = sampling.uniforms(1, sampling.STREAM_TAILS, 0, 100)
    assert not np.array_equal(a, sampling.uniforms(1, sampling.STREAM_ROOTS, 0, 100))
    assert not np.array_equal(a, sampling.uniforms(2, sampling.STREAM_TAILS, 0, 100))


def test_uniforms_look_uniform():
    u = sampling.uniforms(5, 0, 0, 200_000)[:, 0]
    hist = np.bincount((u * 10).astype(int), minlength=10) / u.size
    assert np.max(np.abs(hist - 0.1)) < 0.005


def test_integers_in_range():
    low = np.full(1000, 3)
    high = np.arange(3, 1003)
    v = sampling.integers(9, 2, 0, 1000, low, high)
    assert np.all((v >= low) & (v <= high))


def test_chunk_bounds_cover():
    assert list(sampling.chunk_bounds(10, 4)) == [(0, 4), (4, 4), (8, 2)]


BASE = {"seed": 1, "lambda": 0.35, "system": {"kind": "quadratic", "a": 2.0}}


def test_config_defaults_materialized():
    cfg = config_from_dict(BASE)
    d = cfg.resolved()
    assert d["tree_depth"] == 18 and d["node_cap"] == 2**21 and d["slack"] == 0.1
    assert d["system"] == {"kind": "quadratic", "a": 2.0}
    assert config_from_dict({**BASE, "system": {"kind": "viana"}}).tree_depth == 8


@pytest.mark.parametrize("bad", [
    {k: v for k, v in BASE.items() if k != "seed"},
    {**BASE, "seed": -1},
    {**BASE, "lambda": 0.0},
    {**BASE, "horizons": {"orbit": 0}},
    {**BASE, "rates": {"gamma": 1.2}},
    {**BASE, "samples": {"tails": 50}},
    {**BASE, "extra": 1},
    {**BASE, "system": {"kind": "quadratic", "a": 3.0}},
])
def test_config_rejections(bad):
    with pytest.raises(ConfigurationError):
        config_from_dict(bad)


def test_float_format_and_json_sanitizing():
    assert fmt(0.1) == "0.10000000000000001"
    assert fmt(np.int64(3)) == "3" and fmt(True) == "1"
    assert jsonable({"a": float("nan"), "b": float("-inf"), "c": np.arange(2)}) == \
        {"a": None, "b": "-inf", "c": [0, 1]}
