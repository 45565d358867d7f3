from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcwlad.features import CIRCLE, Keypoint, detect_fast, fast_score_map, strict_local_maxima


def brute_segment_score(img, x, y, t):
    """Plain-loop segment test: 9 contiguous circle pixels all brighter or
    all darker than the centre by more than ``t``."""
    c = img[y, x]
    ring = [img[y + dy, x + dx] for dx, dy in CIRCLE]
    best = 0.0
    for sign in (1, -1):
        hits = [sign * (v - c) > t for v in ring]
        run = longest = 0
        for h in hits + hits:
            run = run + 1 if h else 0
            longest = max(longest, min(run, 16))
        if longest >= 9:
            best = max(best, sum(sign * (v - c) - t for v in ring if sign * (v - c) > t))
    return best


def test_circle_is_radius_three_bresenham():
    assert len(CIRCLE) == 16 and len(set(CIRCLE)) == 16
    for dx, dy in CIRCLE:
        assert 2.8 <= np.hypot(dx, dy) <= 3.7
    # contiguous: consecutive offsets are 8-neighbours
    for (a, b), (c, d) in zip(CIRCLE, CIRCLE[1:] + CIRCLE[:1]):
        assert max(abs(a - c), abs(b - d)) == 1


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.0, 0.3))
def test_score_map_matches_brute_force(seed, t):
    img = np.random.default_rng(seed).random((14, 15))
    fast = fast_score_map(img, t)
    for y in range(14):
        for x in range(15):
            if 3 <= y < 11 and 3 <= x < 12:
                assert fast[y, x] == pytest.approx(brute_segment_score(img, x, y, t), abs=1e-12)
            else:
                assert fast[y, x] == 0


def test_constant_map_has_no_corners():
    assert detect_fast(np.full((40, 40), 0.3)) == []


def test_single_dot_gives_one_keypoint():
    img = np.zeros((21, 21))
    img[10, 7] = 1.0
    kps = detect_fast(img, fast_threshold=0.1)
    assert kps == [Keypoint(7, 10, pytest.approx(16 * 0.9))]
    # the oracle agrees that no other pixel passes the test
    passing = [(x, y) for y in range(3, 18) for x in range(3, 18)
               if brute_segment_score(img, x, y, 0.1) > 0]
    assert passing == [(7, 10)]


def test_nms_is_strict():
    s = np.zeros((5, 5))
    s[2, 2] = s[2, 3] = 1.0  # plateau: neither survives
    s[0, 0] = 0.5
    keep = strict_local_maxima(s)
    assert keep.sum() == 1 and keep[0, 0]


def test_output_order_and_margin():
    img = np.random.default_rng(1).random((80, 80))
    kps = detect_fast(img, target_count=50, margin=12)
    keys = [(-k.score, k.y, k.x) for k in kps]
    assert keys == sorted(keys)
    assert all(12 <= k.x < 68 and 12 <= k.y < 68 for k in kps)


def _cell(k, w, h, g, m):
    return (min((k.y - m) * g // (h - 2 * m), g - 1), min((k.x - m) * g // (w - 2 * m), g - 1))


def test_grid_quota_round_robin():
    img = np.random.default_rng(7).random((256, 256))
    everything = detect_fast(img, target_count=10**6, grid=8)
    assert len(everything) >= 1000
    chosen = detect_fast(img, target_count=1000, grid=8)
    assert len(chosen) == 1000

    avail = Counter(_cell(k, 256, 256, 8, 0) for k in everything)
    got = Counter(_cell(k, 256, 256, 8, 0) for k in chosen)
    top = max(got.values())
    # a cell that still had spare corners is never more than one behind
    for c, n in avail.items():
        if got[c] < n:
            assert got[c] >= top - 1
    # within each cell the strongest corners are the ones taken
    by_cell = {}
    for k in everything:
        by_cell.setdefault(_cell(k, 256, 256, 8, 0), []).append(k)
    chosen_set = set(chosen)
    for c, ks in by_cell.items():
        ks.sort(key=lambda k: (-k.score, k.y, k.x))
        assert set(ks[:got[c]]) <= chosen_set


def test_rejects_bad_count():
    with pytest.raises(ValueError):
        detect_fast(np.zeros((10, 10)), target_count=0)
