import numpy as np
import pytest

from codectok.streams import VideoConfig


@pytest.fixture
def small_config() -> VideoConfig:
    return VideoConfig(width=32, height=32, channels=1, block_size=16,
                       gop_size=16, fps=30, fusion_window=1)


def random_frame(rng: np.random.Generator, config: VideoConfig) -> np.ndarray:
    return rng.integers(0, 256, size=config.frame_shape, dtype=np.uint8)
