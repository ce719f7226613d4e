import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from egopnr import sampling
from egopnr.annotations import ClipAnnotation
from egopnr.errors import ConfigError, SamplingError
from egopnr.sampling import (
    SamplerKind,
    TrimmedRange,
    assign_pseudo_pnr,
    half_gap_expected_shift,
    monte_carlo_shift,
    sample_clip,
    sample_frames,
    trim_clip,
)

KINDS = list(SamplerKind)


def brute_nearest(indices, pnr):
    best = None
    for slot, f in enumerate(indices):
        d = abs(f - pnr)
        if best is None or d < best[0]:
            best = (d, slot)
    return best


# -- trimming ---------------------------------------------------------------


def test_trim_forced_min():
    r = trim_clip(ClipAnnotation("a", False), np.random.default_rng(0), duration_s=5.0)
    assert r.length_frames == 150


def test_trim_forced_full_length():
    r = trim_clip(ClipAnnotation("a", False), np.random.default_rng(0), duration_s=8.0)
    assert r == TrimmedRange(0, 240)


def test_trim_contains_pnr():
    rng = np.random.default_rng(1)
    for pnr in [0, 1, 50, 120, 200, 239]:
        ann = ClipAnnotation("a", True, pnr)
        for _ in range(200):
            r = trim_clip(ann, rng)
            assert r.start_frame <= pnr < r.stop_frame
            assert 0 <= r.start_frame and r.stop_frame <= 240


def test_trim_untrimmable():
    with pytest.raises(SamplingError):
        trim_clip(ClipAnnotation("a", False, num_frames=149), np.random.default_rng(0))


def test_trim_short_clip_clamped():
    ann = ClipAnnotation("a", False, num_frames=180)
    rng = np.random.default_rng(0)
    for _ in range(100):
        r = trim_clip(ann, rng)
        assert 150 <= r.length_frames <= 180 and r.stop_frame <= 180


def test_trim_length_support_and_mean():
    rng = np.random.default_rng(2)
    ann = ClipAnnotation("a", False)
    S = np.array([trim_clip(ann, rng).length_frames for _ in range(100_000)])
    assert S.min() >= 150 and S.max() <= 240
    assert abs(S.mean() - 195) < 0.3  # SE ~ 0.08 at 1e5 draws


def test_vectorised_trims_match_eq2_density():
    _, S = sampling.draw_trims(240, 30.0, 1_000_000, np.random.default_rng(3))
    assert S.min() == 150 and S.max() == 240
    assert abs(S.mean() - 195) < 0.1
    counts = np.bincount(S, minlength=241)[150:241] / len(S)
    law = sampling.trim_length_probabilities(30.0)
    for s, c in zip(range(150, 241), counts):
        # 1/90 per interior frame; endpoints carry half a bin under rounding
        assert abs(c - law[s]) <= 0.05 * law[s], s
    assert law[175] == pytest.approx(1 / 90)
    assert sum(law.values()) == pytest.approx(1.0)


# -- frame samplers -----------------------------------------------------------


def test_even_closed_form():
    assert sample_frames(TrimmedRange(0, 160), 16, "even") == list(range(5, 160, 10))


def test_even_offset_window():
    assert sample_frames(TrimmedRange(40, 160), 16, "even") == list(range(45, 200, 10))


@pytest.mark.parametrize("kind", KINDS)
def test_n_equals_window(kind):
    idx = sample_frames(TrimmedRange(7, 16), 16, kind, np.random.default_rng(0))
    assert idx == list(range(7, 23))


@pytest.mark.parametrize("kind", KINDS)
def test_n_too_large(kind):
    with pytest.raises(SamplingError):
        sample_frames(TrimmedRange(0, 10), 11, kind, np.random.default_rng(0))


def test_stratified_one_per_segment():
    win = TrimmedRange(3, 195)
    S, n = win.length_frames, 16
    for seed in range(1000):
        idx = sample_frames(win, n, "stratified", np.random.default_rng(seed))
        for i, f in enumerate(idx):
            rel = f - win.start_frame
            assert i * S / n <= rel < (i + 1) * S / n


def test_random_is_uniform_over_frames():
    rng = np.random.default_rng(0)
    counts = np.zeros(20)
    for _ in range(20_000):
        counts[sample_frames(TrimmedRange(0, 20), 5, "random", rng)] += 1
    expected = 20_000 * 5 / 20
    assert np.all(np.abs(counts - expected) < 5 * np.sqrt(expected))


@settings(max_examples=200, deadline=None)
@given(
    start=st.integers(0, 500),
    length=st.integers(1, 300),
    n=st.integers(1, 40),
    kind=st.sampled_from(KINDS),
    seed=st.integers(0, 2**32 - 1),
)
def test_sampler_invariants(start, length, n, kind, seed):
    if n > length:
        return
    idx = sample_frames(TrimmedRange(start, length), n, kind, np.random.default_rng(seed))
    assert len(idx) == n
    assert all(a < b for a, b in zip(idx, idx[1:]))
    assert idx[0] >= start and idx[-1] < start + length


# -- pseudo-PNR -------------------------------------------------------------------


@pytest.mark.parametrize("pnr,slot", [(12, 1), (15, 1), (20, 2), (-3, 0), (99, 2), (5, 0)])
def test_pseudo_pnr_examples(pnr, slot):
    assert assign_pseudo_pnr([0, 10, 20], pnr) == slot


@settings(max_examples=300, deadline=None)
@given(
    idx=st.lists(st.integers(0, 400), min_size=1, max_size=20, unique=True),
    pnr=st.integers(0, 400),
)
def test_pseudo_pnr_is_literal_argmin(idx, pnr):
    idx = sorted(idx)
    assert assign_pseudo_pnr(idx, pnr) == brute_nearest(idx, pnr)[1]


def test_sample_clip_slot_presence():
    rng = np.random.default_rng(0)
    pos = sample_clip(ClipAnnotation("p", True, 100), 16, "stratified", rng)
    neg = sample_clip(ClipAnnotation("n", False), 16, "stratified", rng)
    assert pos.pseudo_pnr_slot is not None and neg.pseudo_pnr_slot is None
    assert pos.frame_indices[pos.pseudo_pnr_slot] == min(
        pos.frame_indices, key=lambda f: abs(f - 100)
    )


# -- shift analysis --------------------------------------------------------------


def test_half_gap_reference_value():
    assert half_gap_expected_shift(16, 30, 150, 240) == 0.203125


def test_half_gap_single_frame_gap():
    assert half_gap_expected_shift(160, 30, 160, 160) == pytest.approx(1 / 60)


def test_half_gap_fixed_length():
    assert half_gap_expected_shift(16, 30, 160, 160) == pytest.approx(160 / 960)


@pytest.mark.parametrize("args", [(0, 30, 150, 240), (16, 0, 150, 240), (16, 30, 240, 150),
                                  (16, -30, 150, 240), (16, 30, 0, 240)])
def test_half_gap_domain(args):
    with pytest.raises(ConfigError):
        half_gap_expected_shift(*args)


def exact_even_shift(S, n):
    """Mean nearest-sample distance (frames) over every PNR position in the window."""
    idx = [((2 * i + 1) * S) // (2 * n) for i in range(n)]
    return sum(brute_nearest(idx, p)[0] for p in range(S)) / S


def test_mc_even_fixed_length_matches_brute_force():
    expected = exact_even_shift(160, 16) / 30  # 2.5 frames
    assert expected == pytest.approx(2.5 / 30)
    stats = monte_carlo_shift("even", 16, 30, 200_000, seed=1, trim_frames=160)
    assert abs(stats.mean_s - expected) < 0.001
    assert stats.max_s == pytest.approx(5 / 30)


@pytest.mark.parametrize("kind", KINDS)
def test_mc_exhaustive_sampling_is_exact(kind):
    stats = monte_carlo_shift(kind, 16, 30, 5000, seed=0, trim_frames=16)
    assert stats.mean_s == 0 and stats.max_s == 0


def test_mc_even_full_trim_against_exact_law():
    law = sampling.trim_length_probabilities(30.0)
    exact = sum(p * exact_even_shift(S, 16) for S, p in law.items()) / 30
    assert exact == pytest.approx(195 / 1920, abs=5e-4)  # E[S]/(4 n fps)
    stats = monte_carlo_shift("even", 16, 30, 300_000, seed=2)
    assert abs(stats.mean_s - exact) < 0.0006  # ~5 SE
    assert stats.mean_s <= half_gap_expected_shift(16, 30, 150, 240)


def test_mc_reproducible_and_worker_independent():
    a = monte_carlo_shift("random", 16, 30, 150_000, seed=11)
    b = monte_carlo_shift("random", 16, 30, 150_000, seed=11)
    c = monte_carlo_shift("random", 16, 30, 150_000, seed=11, workers=3)
    assert a == b == c
    assert monte_carlo_shift("random", 16, 30, 150_000, seed=12) != a


def test_mc_argument_checks():
    with pytest.raises(ConfigError):
        monte_carlo_shift("even", trials=0)
    with pytest.raises(SamplingError):
        monte_carlo_shift("even", n=200, trials=10)
    with pytest.raises(ConfigError):
        monte_carlo_shift("zigzag", trials=10)


def test_shiftstats_invariants():
    s = monte_carlo_shift("stratified", 16, 30, 10_000, seed=4)
    assert 0 <= s.mean_s <= s.max_s and s.trials == 10_000 and s.std_s >= 0
