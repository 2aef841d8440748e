import numpy as np
import pytest

from stainscope import imaging
from stainscope.promptsynth import SpecializedPrompt
from stainscope.report import FIELD_ORDER
from stainscope.toy import ToySpec, make_toy_backend


@pytest.fixture(scope="session")
def toy_backend():
    return make_toy_backend(ToySpec(seed=42))


@pytest.fixture(scope="session")
def toy_prompt():
    return SpecializedPrompt(
        system_prompt="Analyze the provided stained slide.",
        notes="none",
        required_json_keys=FIELD_ORDER,
    )


@pytest.fixture(scope="session")
def random_slide():
    """Seeded random raster; exercises non-trivial gradients everywhere."""
    rng = np.random.default_rng(7)
    return imaging.ImageBuffer(rng.integers(0, 256, (48, 40, 3), dtype=np.uint8))


@pytest.fixture(scope="session")
def disk_slide():
    """White 100×100 frame with a filled (60,60,200) disk of radius 30."""
    px = np.full((100, 100, 3), 255, np.uint8)
    px[disk_bits()] = (60, 60, 200)
    return imaging.ImageBuffer(px)


def disk_bits(size: int = 100, center: float = 49.5, radius: float = 30.0) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    return (yy - center) ** 2 + (xx - center) ** 2 <= radius**2


@pytest.fixture(scope="session")
def bait_slide():
    """Textured tissue block on a bright background.

    Constructed so the bright background pulls heatmap mass away from the
    tissue before in-painting; replacing it with the tissue mean color moves
    mass back onto the block.
    """
    rng = np.random.default_rng(0)
    px = np.full((100, 100, 3), 245, np.uint8)
    tex = rng.integers(-60, 61, (40, 40, 3))
    px[30:70, 30:70] = np.clip(np.array([120, 60, 150]) + tex, 0, 255).astype(np.uint8)
    return imaging.ImageBuffer(px)
