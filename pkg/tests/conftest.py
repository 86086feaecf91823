"""
Pytest configuration and shared fixtures for fixdiff tests.
"""

import sys
import tempfile
from pathlib import Path
from typing import Generator

import numpy as np
import pytest

# Add src to path for testing
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))


@pytest.fixture
def temp_dir() -> Generator[Path, None, None]:
    """Create a temporary directory for test outputs."""
    with tempfile.TemporaryDirectory() as tmpdir:
        yield Path(tmpdir)


@pytest.fixture
def temp_config_dir(temp_dir: Path) -> Path:
    """Create a temporary config directory."""
    config_dir = temp_dir / "config"
    config_dir.mkdir(parents=True, exist_ok=True)
    return config_dir


@pytest.fixture
def temp_state_dir(temp_dir: Path) -> Path:
    """Create a temporary state directory."""
    state_dir = temp_dir / "state"
    state_dir.mkdir(parents=True, exist_ok=True)
    return state_dir


@pytest.fixture
def mock_xdg_dirs(temp_dir: Path, monkeypatch):
    """Mock XDG directories to use temporary paths."""
    monkeypatch.setenv("XDG_CONFIG_HOME", str(temp_dir / "config"))
    monkeypatch.setenv("XDG_STATE_HOME", str(temp_dir / "state"))
    monkeypatch.setenv("XDG_CACHE_HOME", str(temp_dir / "cache"))
    monkeypatch.delenv("FIXDIFF_THREADS", raising=False)


@pytest.fixture
def default_config():
    """Return a default Config instance for testing."""
    from fixdiff.config import Config

    return Config()


@pytest.fixture
def tiny_config():
    """Config small enough for end-to-end experiment runs in a few seconds."""
    from fixdiff.config import Config

    return Config.for_library(
        seeds=2,
        workers=1,
        ref_accuracy=1e-8,
        ref_cap=5000,
        elastic_n=30,
        elastic_d=12,
        elastic_informative=4,
        elastic_lam1_fractions=[0.1],
        elastic_t_max=20,
        elastic_t_step=5,
        elastic_k_grid=[5, 20],
        poison_n=40,
        poison_corrupt=12,
        poison_val=40,
        poison_p=6,
        poison_classes=3,
        poison_k_grid=[20, 40],
    )


@pytest.fixture
def small_elastic():
    """Elastic net with n=40, d=8 at lam1 = 0.1 * lambda_max, lam2 = 0.5."""
    from fixdiff.problems import build_elastic_net, gen_elastic_net, lambda_max

    train, val, _ = gen_elastic_net(3, n=40, d=8, n_informative=3)
    lam = np.array([0.1 * lambda_max(train), 0.5])
    return build_elastic_net(train, val, lam), lam


@pytest.fixture
def contraction_map():
    """Smooth tanh map in dimension 4 with ||A1|| = 0.6 and two parameters."""
    from fixdiff.linalg import Rng
    from fixdiff.maps import tanh_affine_map

    rng = Rng(11)
    a1 = rng.gaussian(16).reshape(4, 4)
    a1 *= 0.6 / np.linalg.norm(a1, 2)
    a2 = rng.gaussian(8).reshape(4, 2)
    return tanh_affine_map(a1, a2, rng.gaussian(4))


@pytest.fixture
def idx_files(temp_dir: Path):
    """
    100 images of 2x2 pixels with labels cycling over 3 classes, as IDX files.

    Pixel bytes stay at or below 25 so the scaled features are at most 0.1.
    """
    from fixdiff.datasets import IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC

    count = 100
    pixels = bytes((7 * i + 3) % 26 for i in range(count * 4))
    labels = bytes(i % 3 for i in range(count))
    images_path = temp_dir / "images.idx3-ubyte"
    labels_path = temp_dir / "labels.idx1-ubyte"
    head = IDX_IMAGES_MAGIC.to_bytes(4, "big") + b"".join(d.to_bytes(4, "big") for d in (count, 2, 2))
    images_path.write_bytes(head + pixels)
    labels_path.write_bytes(IDX_LABELS_MAGIC.to_bytes(4, "big") + count.to_bytes(4, "big") + labels)
    return images_path, labels_path
