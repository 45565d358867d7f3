import numpy as np
import pytest


@pytest.fixture(scope="session")
def astronaut():
    """512x512 natural image in [0, 1] (bundled with scikit-image, no network)."""
    skdata = pytest.importorskip("skimage.data")
    return skdata.astronaut().astype(np.float64).mean(axis=2) / 255.0


@pytest.fixture(scope="session")
def camera():
    skdata = pytest.importorskip("skimage.data")
    return skdata.camera().astype(np.float64) / 255.0


def smooth_texture(shape, seed=0, sigma=3.0):
    """Band-limited random texture scaled to [0, 1]."""
    from scipy.ndimage import gaussian_filter

    rng = np.random.default_rng(seed)
    t = gaussian_filter(rng.random(shape), sigma)
    return (t - t.min()) / (t.max() - t.min())


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in sorted(ACCEPTANCE, key=lambda r: int(r[0].split()[1])):
        terminalreporter.write_line(f"{name}: {'PASS' if ok else 'FAIL'}  {detail}")
