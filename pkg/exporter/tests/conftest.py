import numpy as np
import pytest
from PIL import Image


@pytest.fixture(scope="session")
def core50_tree(tmp_path_factory):
    """Tiny core50-style directory: 3 sessions x 10 objects x 2 frames.

    Session 3 is a canonical test session; 1 and 2 are train. Pixels are
    seeded per (session, object, frame) so the tree is deterministic.
    """
    root = tmp_path_factory.mktemp("core50")
    rng = np.random.default_rng(123)
    for session in (1, 2, 3):
        for obj in range(1, 11):
            d = root / f"s{session}" / f"o{obj}"
            d.mkdir(parents=True)
            for frame in range(2):
                pixels = rng.integers(0, 256, size=(48, 48, 3), dtype=np.uint8)
                Image.fromarray(pixels, "RGB").save(d / f"C_{session:02d}_{obj:02d}_{frame:03d}.png")
    return root
