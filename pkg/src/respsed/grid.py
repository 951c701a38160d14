from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import CLIP_SECONDS, SAMPLE_RATE

N_SEGMENTS = 469
SEGMENT_SAMPLES = 128  # two STFT hops


@dataclass(frozen=True)
class SegmentGrid:
    """Segment j spans [j*32 ms, (j+1)*32 ms), the last one clipped to 15 s."""

    n_segments: int = N_SEGMENTS
    segment_samples: int = SEGMENT_SAMPLES
    sample_rate: int = SAMPLE_RATE
    clip_seconds: float = CLIP_SECONDS

    @property
    def segment_s(self) -> float:
        return self.segment_samples / self.sample_rate

    def start(self, j: int) -> float:
        return float(j * self.segment_samples / self.sample_rate)

    def end(self, j: int) -> float:
        return float(min((j + 1) * self.segment_samples / self.sample_rate, self.clip_seconds))

    def starts(self) -> np.ndarray:
        return np.arange(self.n_segments) * self.segment_samples / self.sample_rate

    def ends(self) -> np.ndarray:
        return np.minimum(np.arange(1, self.n_segments + 1) * self.segment_samples / self.sample_rate,
                          self.clip_seconds)


GRID = SegmentGrid()
