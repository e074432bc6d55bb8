"""Task distribution over the AoI/power trade-off weight lambda."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import EnvConfig, TaskSpec
from .evaluation import aggregate, rollout
from .policies import random_policy


@dataclass(frozen=True)
class LambdaRange:
    low: float
    high: float
    aoi_term: float
    power_term: float

    def geometric(self, n: int) -> np.ndarray:
        """``n`` log-spaced values from ``low`` to ``high``."""
        return np.geomspace(self.low, self.high, n)


def lambda_range(cfg: EnvConfig, layout_seed: int = 0, episodes: int = 200, seed: int = 0,
                 low_share: float = 0.01, high_share: float = 1.0) -> LambdaRange:
    """Monte-Carlo bounds on lambda from random-walk rollouts.

    ``low``/``high`` make ``lambda * mean power`` equal ``low_share``/``high_share``
    of the mean weighted-AoI term.
    """
    recs = rollout([random_policy()] * cfg.U, cfg, TaskSpec(0.0, layout_seed), episodes, seed)
    mean = aggregate(recs)
    if mean.power <= 0:
        raise ValueError("random walk spent no transmit power; cannot scale lambda")
    ratio = mean.weighted_aoi / mean.power
    return LambdaRange(low_share * ratio, high_share * ratio, mean.weighted_aoi, mean.power)


def sample_tasks(n: int, lam_range: LambdaRange, rng: np.random.Generator, layout_seed: int = 0) -> list[TaskSpec]:
    """``n`` tasks with distinct log-uniform lambdas on a fixed device layout."""
    lams: list[float] = []
    while len(lams) < n:
        lam = float(np.exp(rng.uniform(np.log(lam_range.low), np.log(lam_range.high))))
        if lam not in lams:
            lams.append(lam)
    return [TaskSpec(lam, layout_seed) for lam in lams]
