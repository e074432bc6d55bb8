"""Input checks shared by the estimators and the CLI."""
from __future__ import annotations

import numpy as np

from .data import DatasetBundle, DatasetError
from .env import EnvConfig


def check_bundle(bundle, *, min_size: int = 1) -> DatasetBundle:
    if not isinstance(bundle, DatasetBundle):
        raise TypeError(f"expected a DatasetBundle, got {type(bundle).__name__}")
    if bundle.size < min_size:
        raise DatasetError(f"dataset has {bundle.size} entries per agent, need at least {min_size}")
    return bundle


def check_bundles(bundles, *, min_size: int = 1) -> list[DatasetBundle]:
    if isinstance(bundles, DatasetBundle):
        raise TypeError("expected a list of DatasetBundle, one per task")
    bundles = [check_bundle(b, min_size=min_size) for b in bundles]
    if not bundles:
        raise ValueError("need at least one task dataset")
    return bundles


def check_observations(obs, n_agents: int, obs_dim: int) -> np.ndarray:
    """Return observations as a float ``(n_agents, N, obs_dim)`` array.

    A ``(n_agents, obs_dim)`` input is one joint observation (``N = 1``).
    """
    x = np.asarray(obs, dtype=float)
    if x.ndim == 2:
        x = x[:, None, :]
    if x.ndim != 3 or x.shape[0] != n_agents or x.shape[2] != obs_dim:
        raise ValueError(f"observations of shape {np.shape(obs)}; expected ({n_agents}, N, {obs_dim}) "
                         f"or ({n_agents}, {obs_dim})")
    if not np.isfinite(x).all():
        raise ValueError("observations contain NaN or infinity")
    return x


def check_params(params_list, cfg: EnvConfig) -> list:
    params_list = list(params_list)
    if len(params_list) != cfg.U:
        raise ValueError(f"{len(params_list)} networks for U={cfg.U} agents")
    for p in params_list:
        if (p.in_dim, p.out_dim) != (cfg.obs_dim, cfg.n_actions):
            raise ValueError(f"network maps {p.in_dim}->{p.out_dim}, environment needs "
                             f"{cfg.obs_dim}->{cfg.n_actions}")
    return params_list
