from dataclasses import dataclass
from typing import Optional, Tuple

TINY_RANDOM = "tiny-random"
DEFAULT_MODEL_ID = "segmind/SSD-1B"
DEFAULT_TIMESTEP = 50
DEFAULT_RESIZE = (1024, 1024)


@dataclass(frozen=True)
class ExtractionSpec:
    """Everything that determines one extraction run.

    The output tensor is (H, W, C) float32 with H*W >= 4, written in the
    engine's NPY tensor format.
    """

    model_id: str = DEFAULT_MODEL_ID
    timestep: int = DEFAULT_TIMESTEP
    prompt: str = ""
    resize: Tuple[int, int] = DEFAULT_RESIZE
    batch_size: int = 1
    device: str = "cpu"
    noise_seed: Optional[int] = 0  # None => fresh noise per run

    def __post_init__(self):
        if self.timestep < 0:
            raise ValueError("timestep must be >= 0")
        h, w = self.resize
        if h < 2 or w < 2 or h * w < 4:
            raise ValueError("resize must give at least 4 pixels")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def manifest(self, hook_point: str) -> dict:
        return {
            "model_id": self.model_id,
            "timestep": self.timestep,
            "prompt": self.prompt,
            "resize": list(self.resize),
            "dtype": "<f4",
            "noise_seed": self.noise_seed,
            "hook_point": hook_point,
        }
