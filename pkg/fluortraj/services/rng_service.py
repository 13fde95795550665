"""
RNG Service for fluortraj
Hands out one counter-based random stream per trajectory seed.
"""

from typing import List
import logging
import numpy as np

logger = logging.getLogger(__name__)


class RNGService:
    """Seed policy: ensemble member k draws from Philox keyed by base_seed + k"""

    def __init__(self, base_seed: int = 0):
        if base_seed < 0:
            raise ValueError("Seeds must be non-negative")
        self.base_seed = int(base_seed)

    def member_seeds(self, n: int) -> List[int]:
        """Distinct seeds for n ensemble members"""
        if n < 0:
            raise ValueError("Member count must be non-negative")
        return [self.base_seed + k for k in range(n)]


def generator_for_seed(seed: int) -> np.random.Generator:
    """
    Independent stream for one seed.

    Raises:
        ValueError: If the seed is negative
    """
    if seed < 0:
        raise ValueError("Seeds must be non-negative")
    return np.random.Generator(np.random.Philox(key=int(seed)))
