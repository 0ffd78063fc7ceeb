"""Monte Carlo summaries: means with normal confidence intervals and bootstrap."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

Z95 = 1.959963984540054


@dataclass(frozen=True)
class McEstimate:
    value: float
    half_width: float
    n_samples: int
    seed: int | None = None
    n: int | None = None
    dt: float | None = None

    def __post_init__(self):
        if not np.isfinite(self.value) or not self.half_width >= 0:
            raise ValueError(f"invalid estimate {self.value} +- {self.half_width}")

    @property
    def lo(self):
        return self.value - self.half_width

    @property
    def hi(self):
        return self.value + self.half_width

    def to_dict(self):
        return asdict(self)


def mean_ci(samples, seed=None, n=None, dt=None):
    """Sample mean with a 95% normal-theory half-width (np.mean sums pairwise)."""
    x = np.asarray(samples, float).ravel()
    m = float(np.mean(x))
    hw = float(Z95 * np.std(x, ddof=1) / np.sqrt(x.size)) if x.size > 1 else 0.0
    return McEstimate(m, hw, int(x.size), seed, n, dt)


def combined_half_width(*hws):
    return float(np.sqrt(np.sum(np.square(hws))))


def bootstrap_ci(stat, arrays, n_boot=1000, seed=0, alpha=0.05):
    """Percentile bootstrap of ``stat(*arrays)`` resampling rows jointly.

    Returns (point, lo, hi, replicates).
    """
    arrays = [np.asarray(a) for a in arrays]
    size = arrays[0].shape[0]
    gen = np.random.default_rng(seed)
    point = float(stat(*arrays))
    reps = np.empty(n_boot)
    for b in range(n_boot):
        idx = gen.integers(0, size, size)
        reps[b] = stat(*(a[idx] for a in arrays))
    lo, hi = np.quantile(reps, [alpha / 2, 1 - alpha / 2])
    return point, float(lo), float(hi), reps
