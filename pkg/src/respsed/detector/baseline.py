from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from ..features import ENERGY_OFFSET, FeatureTensor
from .model import SegmentProbabilities


@dataclass(frozen=True)
class BaselineConfig:
    gain: float = 2.0
    offset: float = -1.0
    # energy band per task: 250-500 Hz, 500-1000 Hz, 0-2000 Hz
    band: dict[str, int] = field(default_factory=lambda: {"I": 1, "E": 2, "C": 3})


def baseline_detect(f: FeatureTensor, task: str, cfg: BaselineConfig = BaselineConfig()) -> SegmentProbabilities:
    """Logistic of the task's normalized band energy averaged over frame pairs."""
    col = f.x[:, ENERGY_OFFSET + cfg.band[task]]
    if len(col) % 2:
        col = np.append(col, col[-1])
    seg = col.reshape(-1, 2).mean(axis=1)
    return SegmentProbabilities(expit(cfg.gain * seg + cfg.offset), task)
