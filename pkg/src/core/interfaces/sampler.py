from abc import ABC, abstractmethod

import numpy as np

from src.core.entities.simulation import PathBatch


class IPathSampler(ABC):
    """Draws CTMC paths in jump-indexed blocks. Same (seed, block) must give the same block."""

    @abstractmethod
    def sample_block(self, i0: int, n_paths: int, n_jumps: int, seed: int, block: int) -> PathBatch:
        pass

    @property
    @abstractmethod
    def name(self) -> str:
        pass

    def block_rng(self, seed: int, block: int) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, block])))
