"""Parameter initialisation."""
import numpy as np


def uniform_init(rng: np.random.Generator, shape, fan_in: int, dtype=np.float64) -> np.ndarray:
    """Seeded ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))`` weights."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)
