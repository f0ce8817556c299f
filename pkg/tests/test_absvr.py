import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from narrative_attn.absvr import (
    AbsvrParams,
    Emphasis,
    FrameSegments,
    absvr_apply,
    band_recommendation,
    cumulative_energy,
    detect_knees,
    plain_svr,
    segment_frames,
    select_rank,
    spectral_report,
    trunk_projector,
    write_spectrum_csv,
)
from narrative_attn.errors import ConfigurationError, DimensionError, InvalidInputError, InvalidParameterError
from narrative_attn.numkernel import thin_svd

from oracles import plateau_spectrum, rank_bruteforce


def test_select_rank_examples():
    assert select_rank([3, 0, 0], 0.99) == 1
    assert select_rank([2, 1, 1], 0.85) == 3
    for tau in (0.01, 0.5, 1.0):
        assert select_rank([1.0], tau) == 1
    assert select_rank([0, 0], 0.5) == 0
    assert AbsvrParams().tau == 0.85
    for bad in (0.0, 1.5, -0.1):
        with pytest.raises(ConfigurationError):
            select_rank([1.0], bad)


def test_select_rank_matches_exact_scan(rng):
    for _ in range(2000):
        m = int(rng.integers(1, 12))
        s = np.sort(rng.exponential(size=m) * (rng.random(m) > 0.2))[::-1]
        tau = float(rng.choice([rng.random() * 0.999 + 0.001, 1.0, 0.85]))
        assert select_rank(s, tau) == rank_bruteforce(s, tau)


@given(st.lists(st.floats(0, 100), min_size=1, max_size=20))
def test_cumulative_energy_monotone(vals):
    s = np.sort(np.array(vals))[::-1]
    e = cumulative_energy(s)
    assert np.all(np.diff(e) >= 0)
    if np.sum(s * s) > 0:
        assert e[-1] == 1.0


def test_projector_examples(rng):
    x = rng.normal(size=(5, 5))
    svd = thin_svd(x)
    assert np.allclose(trunk_projector(svd, 5), np.eye(5), atol=1e-12)
    assert not trunk_projector(svd, 0).any()
    P = trunk_projector(thin_svd(rng.normal(size=(6, 4))), 2)
    assert abs(np.trace(P) - 2) <= 1e-9
    with pytest.raises(InvalidParameterError):
        trunk_projector(svd, 6)


@settings(max_examples=40)
@given(st.integers(1, 64), st.integers(1, 77), st.integers(0, 2**32 - 1), st.floats(0.05, 1.0))
def test_projector_and_notch_properties(D, T, seed, tau):
    g = np.random.default_rng(seed)
    X_exp, X_sup = g.normal(size=(D, T)), g.normal(size=(D, int(g.integers(1, 20))))
    segs, rep = absvr_apply(FrameSegments((X_exp, X_sup), 0), AbsvrParams(tau=tau))
    P = trunk_projector(thin_svd(X_exp), rep.k)
    assert np.linalg.norm(P - P.T) <= 1e-10
    assert np.linalg.norm(P @ P - P) <= 1e-9
    assert abs(np.trace(P) - rep.k) <= 1e-9
    assert np.linalg.norm(P @ segs.frames[1]) <= 1e-8 * np.linalg.norm(X_sup)


@settings(max_examples=30)
@given(st.integers(2, 30), st.integers(2, 30), st.integers(0, 2**32 - 1), st.floats(1.0, 2.0))
def test_gain_exp_scaling(D, T, seed, gain):
    X = np.random.default_rng(seed).normal(size=(D, T))
    segs, rep = absvr_apply(FrameSegments((X,), 0), AbsvrParams(tau=0.7, gain_exp=gain))
    P = trunk_projector(thin_svd(X), rep.k)
    assert abs(np.linalg.norm(segs.express) - gain * np.linalg.norm(P @ X)) <= 1e-10 * max(1.0, np.linalg.norm(X))


def test_absvr_examples(rng):
    X = rng.normal(size=(8, 6))
    segs, _ = absvr_apply(FrameSegments((X,), 0), AbsvrParams(tau=1.0, gain_exp=1.0))
    assert np.linalg.norm(segs.express - X) <= 1e-8 * np.linalg.norm(X)
    r1 = np.outer(rng.normal(size=5), rng.normal(size=4))
    segs, rep = absvr_apply(FrameSegments((r1,), 0), AbsvrParams(tau=0.5, gain_exp=1.1))
    assert rep.k == 1
    assert np.allclose(segs.express, 1.1 * r1, atol=1e-12)
    # zero energy: trunk empty, suppress only attenuated
    sup = rng.normal(size=(5, 3))
    segs, rep = absvr_apply(FrameSegments((np.zeros((5, 2)), sup), 0))
    assert rep.k == 0 and not segs.express.any()
    assert np.array_equal(segs.frames[1], 0.9 * sup)


def test_absvr_dimension_mismatch(rng):
    with pytest.raises(DimensionError):
        FrameSegments((rng.normal(size=(4, 2)), rng.normal(size=(5, 2))), 0)


def test_plain_svr_vs_notch(rng):
    e, s = np.ones((3, 3)), [np.ones((3, 2))]
    pe, ps = plain_svr(e, s, 1, 1)
    assert np.array_equal(pe, e) and np.array_equal(ps[0], s[0])
    pe, ps = plain_svr(e, s, 2, 0.5)
    assert np.isclose(np.linalg.norm(pe), 2 * np.linalg.norm(e))
    assert np.isclose(np.linalg.norm(ps[0]), 0.5 * np.linalg.norm(s[0]))
    X_exp, X_sup = rng.normal(size=(10, 4)), rng.normal(size=(10, 5))
    segs, rep = absvr_apply(FrameSegments((X_exp, X_sup), 0))
    P = trunk_projector(thin_svd(X_exp), rep.k)
    _, (plain_sup,) = plain_svr(X_exp, [X_sup], 1.1, 0.9)
    assert np.linalg.norm(P @ plain_sup) > 1e-3
    assert np.linalg.norm(P @ segs.frames[1]) <= 1e-10


def test_knee_examples():
    assert {0, 3} <= set(detect_knees([10, 1, 0.9, 0.8, 0.1]))
    assert detect_knees(2.0 ** -np.arange(8)) == (0, 1, 2)
    assert detect_knees([1, 1]) == (0,)
    assert detect_knees([1]) == ()


def test_knees_recover_plateaus():
    assert detect_knees(plateau_spectrum()) == (2, 5, 8)


@given(
    st.lists(st.floats(0.5, 50), min_size=4, max_size=4, unique=True),
    st.integers(2, 5),
)
def test_knees_recover_random_plateaus(levels, width):
    levels = sorted(levels, reverse=True)
    # plateau boundaries sit at the end of each plateau
    assert detect_knees(plateau_spectrum(levels, width)) == (width - 1, 2 * width - 1, 3 * width - 1)


def test_band_recommendation_table():
    expect = {"Identity": 0.60, "Actions": 0.80, "Background": 0.90, "Style": 0.93, "Details": 0.98}
    for name, tau in expect.items():
        assert band_recommendation(name) == tau
        assert band_recommendation(Emphasis(name)) == tau


def test_segment_frames_examples(rng):
    x = rng.normal(size=(3, 10))
    s = segment_frames(x, [], 0)
    assert len(s.frames) == 1 and s.express.shape == (3, 10)
    s = segment_frames(x, [4], 1)
    assert [f.shape[1] for f in s.frames] == [4, 6] and s.current_index == 1
    with pytest.raises(InvalidInputError):
        segment_frames(x, [4], 2)
    with pytest.raises(InvalidInputError):
        segment_frames(x, [11], 0)


def test_spectrum_csv(tmp_path):
    rep = spectral_report(np.array([2.0, 1.0, 1.0]), 0.85)
    p = tmp_path / "s.csv"
    write_spectrum_csv(p, rep)
    lines = p.read_text().splitlines()
    assert lines[0] == "i,sigma,energy_cum,is_knee,k_selected"
    assert len(lines) == 4
    assert [l.split(",")[4] for l in lines[1:]] == ["1", "1", "1"]
