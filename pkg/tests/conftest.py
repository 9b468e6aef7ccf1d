import numpy as np
import pytest
import torch

from invfuse.data import ImagePair, write_image

# PASS/FAIL lines from the acceptance module, printed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def synthetic_pair(size=120, identifier="syn"):
    """Smooth gradients, a sinusoidal texture and a few blobs; both planes in [0, 1]."""
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1.0)
    mri = np.clip(0.3 + 0.3 * xx + 0.2 * np.sin(10 * yy) * np.cos(7 * xx)
                  + 0.2 * ((xx - 0.3) ** 2 + (yy - 0.6) ** 2 < 0.03), 0, 1)
    func = np.clip(0.1 + 0.8 * np.exp(-((xx - 0.6) ** 2 + (yy - 0.4) ** 2) / 0.02)
                   + 0.5 * np.exp(-((xx - 0.25) ** 2 + (yy - 0.3) ** 2) / 0.01) + 0.2 * yy, 0, 1)
    return ImagePair(mri, func, None, identifier)


def colour_functional(size=256, shift=0.0):
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1.0)
    blob = np.exp(-((xx - 0.5) ** 2 + (yy - 0.4 - shift) ** 2) / 0.03)
    return np.stack([blob, 0.5 * blob + 0.1, 1.0 - blob], axis=-1)


def write_dataset(root, n=2, size=256, colour=True):
    """Write ``n`` MRI / functional PNG pairs and a manifest; returns the manifest path."""
    lines = []
    for i in range(n):
        pair = synthetic_pair(size, f"case{i}")
        mri_path = root / f"case{i}_mri.png"
        func_path = root / f"case{i}_func.png"
        write_image(mri_path, np.roll(pair.mri, 7 * i, axis=1))
        write_image(func_path, colour_functional(size, 0.1 * i) if colour else pair.functional_y)
        lines.append(f"{mri_path.name}\t{func_path.name}")
    manifest = root / "manifest.tsv"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


@pytest.fixture
def pair120():
    return synthetic_pair(120)


@pytest.fixture
def small_pair():
    return synthetic_pair(32, "small")


@pytest.fixture(autouse=True)
def _torch_threads():
    torch.set_num_threads(1)
    yield
