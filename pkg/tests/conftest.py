import numpy as np
import pytest
from hypothesis import strategies as st

from photocorr.frames import ANALOG, BINARY, FrameStack


def random_stack(rng, mode=BINARY, width=16, height=12, n_frames=50, density=0.05,
                 metadata=None):
    """Stack with independent Bernoulli(density) events per superpixel per frame."""
    frames = []
    for _ in range(n_frames):
        mask = rng.random((height, width)) < density
        ys, xs = np.nonzero(mask)
        if mode == ANALOG:
            s = rng.normal(700.0, 120.0, xs.size)
            frames.append(list(zip(xs.tolist(), ys.tolist(), s.tolist())))
        else:
            frames.append(list(zip(xs.tolist(), ys.tolist())))
    return FrameStack.from_frames(mode, width, height, frames, metadata)


@st.composite
def stacks(draw, max_side=256, max_frames=1000, modes=(BINARY, ANALOG)):
    """Randomized sparse stacks for property tests."""
    mode = draw(st.sampled_from(modes))
    width = draw(st.integers(1, max_side))
    height = draw(st.integers(1, max_side))
    n_frames = draw(st.integers(0, max_frames))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    mean_events = draw(st.floats(0.0, 4.0))
    counts = np.minimum(rng.poisson(mean_events, n_frames), width * height)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    xs, ys = [], []
    for c in counts:
        flat = np.sort(rng.choice(width * height, size=int(c), replace=False))
        ys.append(flat // width)
        xs.append(flat % width)
    x = np.concatenate(xs) if xs else np.zeros(0)
    y = np.concatenate(ys) if ys else np.zeros(0)
    signal = None
    if mode == ANALOG:
        # arbitrary finite float32 bit patterns, including subnormals and -0.0
        raw = rng.integers(0, 2**32, x.size, dtype=np.uint64).astype(np.uint32)
        signal = raw.view(np.float32)
        bad = ~np.isfinite(signal)
        signal[bad] = rng.normal(700.0, 100.0, int(bad.sum())).astype(np.float32)
    meta = {"seed": int(seed), "note": draw(st.text(max_size=20)), "frame_count": int(n_frames)}
    return FrameStack(mode, width, height, offsets, x, y, signal, meta)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# criterion number -> (name, passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        name, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d} {name}: {detail}")
