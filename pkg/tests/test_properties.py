"""Property-based checks for the invariants that hold on all inputs."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from lesionaug import (
    ImageBuffer,
    compute_auc,
    denormalize,
    derive_stream,
    normalize,
    resize_max_side,
    sample_crop,
)


@given(
    scores=st.lists(st.floats(min_value=0.0, max_value=1.0), min_size=2, max_size=60),
    labels=st.data(),
)
@settings(max_examples=60, deadline=None)
def test_auc_invariant_under_monotone_transform(scores, labels):
    y = labels.draw(
        st.lists(st.booleans(), min_size=len(scores), max_size=len(scores)).filter(
            lambda v: any(v) and not all(v)
        )
    )
    base = compute_auc(y, scores)
    transformed = compute_auc(y, [s**3 + 2.0 * s for s in scores])  # strictly monotone
    assert abs(base - transformed) < 1e-12


@given(
    w=st.integers(min_value=1, max_value=400),
    h=st.integers(min_value=1, max_value=400),
    seed=st.integers(min_value=0, max_value=2**32 - 1),
)
@settings(max_examples=200, deadline=None)
def test_crop_window_always_inside_image(w, h, seed):
    win = sample_crop(w, h, derive_stream(seed, "prop", 0, 0))
    assert 1 <= win.w <= w and 1 <= win.h <= h
    assert 0 <= win.x <= w - win.w and 0 <= win.y <= h - win.h


@given(
    mean=st.tuples(*[st.floats(min_value=0.0, max_value=1.0)] * 3),
    std=st.tuples(*[st.floats(min_value=0.05, max_value=4.0)] * 3),
    seed=st.integers(min_value=0, max_value=1000),
)
@settings(max_examples=50, deadline=None)
def test_normalize_denormalize_round_trip(mean, std, seed):
    rng = np.random.default_rng(seed)
    img = ImageBuffer.from_array(rng.integers(0, 256, (9, 13, 3), dtype=np.uint8))
    recovered = denormalize(normalize(img, mean, std), mean, std)
    assert np.abs(recovered - img.pixels / 255.0).max() < 1e-6


@given(
    w=st.integers(min_value=1, max_value=3000),
    h=st.integers(min_value=1, max_value=3000),
    max_side=st.integers(min_value=1, max_value=1024),
)
@settings(max_examples=80, deadline=None)
def test_resize_max_side_idempotent_and_bounded(w, h, max_side):
    img = ImageBuffer.full(w, h, (10, 20, 30))
    once = resize_max_side(img, max_side)
    assert max(once.width, once.height) <= max(max_side, 1)
    assert resize_max_side(once, max_side) is once
