"""Grid-world UAV data-collection environment with age-of-information dynamics.

Devices sit at cell centers of an ``L x L`` grid. Each UAV either moves one
cell (east/west/north/south) or hovers and receives one uplink packet from the
device it schedules. The shared reward penalizes the weighted AoI of all
devices and the transmit power spent by the devices that were served.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

DIRECTIONS = ("east", "west", "north", "south", "hover")
HOVER = 4
_MOVES = np.array([(1, 0), (-1, 0), (0, 1), (0, -1), (0, 0)], dtype=np.int64)


class ConfigError(ValueError):
    """Invalid environment or task configuration."""


class EpisodeDoneError(RuntimeError):
    """Raised when stepping an episode that already reached ``T``."""


@dataclass(frozen=True)
class EnvConfig:
    """Grid, radio and reward parameters.

    Defaults follow the full-scale setup (11 x 11 cells of 100 m, 10 devices,
    2 UAVs at 100 m, g0 = 30 dB, noise -100 dBm, 5 Mb packets over 1 MHz).
    ``delta=None`` means uniform weights ``1/D``.
    """

    L: int = 11
    cell_size: float = 100.0
    D: int = 10
    U: int = 2
    h_u: float = 100.0
    g0: float = 1e3
    sigma2: float = 1e-13
    M: float = 5e6
    B: float = 1e6
    T: int = 100
    delta: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.delta is None:
            object.__setattr__(self, "delta", tuple([1.0 / self.D] * self.D))
        else:
            object.__setattr__(self, "delta", tuple(float(d) for d in self.delta))
        self.validate()

    def validate(self):
        if self.L < 2:
            raise ConfigError(f"grid side L must be >= 2, got {self.L}")
        if self.D < 1 or self.U < 1:
            raise ConfigError(f"need D >= 1 and U >= 1, got D={self.D}, U={self.U}")
        if self.T < 1:
            raise ConfigError(f"episode length T must be >= 1, got {self.T}")
        for name in ("cell_size", "h_u", "g0", "sigma2", "B"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.M < 0:
            raise ConfigError(f"packet size M must be >= 0, got {self.M}")
        if len(self.delta) != self.D:
            raise ConfigError(f"delta has {len(self.delta)} weights for D={self.D} devices")
        if any(d <= 0 for d in self.delta):
            raise ConfigError("device weights delta must all be > 0")
        if self.D > self.L * self.L:
            raise ConfigError(f"cannot place D={self.D} devices on a {self.L}x{self.L} grid")

    @property
    def n_actions(self) -> int:
        return len(DIRECTIONS) * self.D

    @property
    def obs_dim(self) -> int:
        return 2 + self.D

    @property
    def power_factor(self) -> float:
        """(2^(M/B) - 1) * sigma2 / g0, watts per square meter of squared range."""
        return (2.0 ** (self.M / self.B) - 1.0) * self.sigma2 / self.g0


@dataclass(frozen=True)
class TaskSpec:
    lam: float = 0.0
    layout_seed: int = 0

    def __post_init__(self):
        if not self.lam >= 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")


@dataclass(frozen=True)
class EnvState:
    uav_pos: tuple[tuple[int, int], ...]
    aoi: tuple[int, ...]
    t: int = 0


@dataclass(frozen=True)
class StepOutcome:
    observations: np.ndarray
    reward: float
    served: tuple[bool, ...]
    power: float
    done: bool
    weighted_aoi: float = field(default=0.0)


def encode_action(direction: int, device: int, D: int) -> int:
    if not (0 <= direction < len(DIRECTIONS) and 0 <= device < D):
        raise ValueError(f"invalid action (direction={direction}, device={device}) for D={D}")
    return direction * D + device


def decode_action(action_id: int, D: int) -> tuple[int, int]:
    if not 0 <= action_id < len(DIRECTIONS) * D:
        raise ValueError(f"action id {action_id} outside [0, {len(DIRECTIONS) * D})")
    return divmod(int(action_id), D)


@lru_cache(maxsize=256)
def _layout(L: int, D: int, layout_seed: int) -> tuple[tuple[int, int], ...]:
    rng = np.random.default_rng(layout_seed)
    cells = rng.choice(L * L, size=D, replace=False)
    return tuple((int(c % L), int(c // L)) for c in cells)


def device_cells(cfg: EnvConfig, task: TaskSpec) -> tuple[tuple[int, int], ...]:
    """Device cell coordinates ``(x, y)``, sampled without replacement from ``layout_seed``."""
    return _layout(cfg.L, cfg.D, task.layout_seed)


def start_cells(cfg: EnvConfig) -> tuple[tuple[int, int], ...]:
    m = cfg.L - 1
    corners = ((0, 0), (m, m), (0, m), (m, 0))
    return tuple(corners[u % 4] for u in range(cfg.U))


def planar_distance(cfg: EnvConfig, a, b) -> float:
    return cfg.cell_size * float(np.hypot(a[0] - b[0], a[1] - b[1]))


def channel_gain(cfg: EnvConfig, device_cell, uav_cell) -> float:
    r = planar_distance(cfg, device_cell, uav_cell)
    return cfg.g0 / (cfg.h_u**2 + r**2)


def transmit_power(cfg: EnvConfig, device_cell, uav_cell) -> float:
    """Power in watts for ``device_cell`` to deliver one packet to a UAV above ``uav_cell``."""
    r = planar_distance(cfg, device_cell, uav_cell)
    return cfg.power_factor * (cfg.h_u**2 + r**2)


def aoi_update(aoi: int, served: bool) -> int:
    if aoi < 1:
        raise ValueError(f"AoI must be >= 1, got {aoi}")
    return 1 if served else aoi + 1


def reset(cfg: EnvConfig, task: TaskSpec) -> EnvState:
    cfg.validate()
    device_cells(cfg, task)
    return EnvState(uav_pos=start_cells(cfg), aoi=(1,) * cfg.D, t=0)


def observe(state: EnvState, agent: int, cfg: EnvConfig) -> np.ndarray:
    if not 0 <= agent < cfg.U:
        raise IndexError(f"agent {agent} outside [0, {cfg.U})")
    x, y = state.uav_pos[agent]
    obs = np.empty(cfg.obs_dim)
    obs[0] = x / (cfg.L - 1)
    obs[1] = y / (cfg.L - 1)
    obs[2:] = np.minimum(np.asarray(state.aoi, dtype=float) / cfg.T, 1.0)
    return obs


def observe_all(state: EnvState, cfg: EnvConfig) -> np.ndarray:
    return np.stack([observe(state, u, cfg) for u in range(cfg.U)])


def global_state(state: EnvState, cfg: EnvConfig) -> np.ndarray:
    """All UAV positions followed by the AoI vector, same normalization as :func:`observe`."""
    pos = np.asarray(state.uav_pos, dtype=float).ravel() / (cfg.L - 1)
    aoi = np.minimum(np.asarray(state.aoi, dtype=float) / cfg.T, 1.0)
    return np.concatenate([pos, aoi])


def step(state: EnvState, actions, cfg: EnvConfig, task: TaskSpec) -> tuple[EnvState, StepOutcome]:
    if state.t >= cfg.T:
        raise EpisodeDoneError(f"episode finished at t={state.t}; call reset()")
    if len(actions) != cfg.U:
        raise ValueError(f"expected {cfg.U} actions, got {len(actions)}")
    devices = device_cells(cfg, task)

    new_pos = []
    receiver: dict[int, tuple[float, int]] = {}
    for u, a in enumerate(actions):
        direction, device = decode_action(a, cfg.D)
        x, y = state.uav_pos[u]
        if direction == HOVER:
            dist = planar_distance(cfg, devices[device], (x, y))
            best = receiver.get(device)
            if best is None or dist < best[0]:
                receiver[device] = (dist, u)
        else:
            nx, ny = x + _MOVES[direction][0], y + _MOVES[direction][1]
            if 0 <= nx < cfg.L and 0 <= ny < cfg.L:
                x, y = int(nx), int(ny)
        new_pos.append((x, y))

    served = [False] * cfg.D
    power = 0.0
    for d in sorted(receiver):
        served[d] = True
        power += transmit_power(cfg, devices[d], new_pos[receiver[d][1]])

    aoi = tuple(aoi_update(a, s) for a, s in zip(state.aoi, served))
    weighted = float(np.dot(cfg.delta, aoi))
    reward = -weighted - task.lam * power
    nxt = EnvState(uav_pos=tuple(new_pos), aoi=aoi, t=state.t + 1)
    outcome = StepOutcome(
        observations=observe_all(nxt, cfg),
        reward=reward,
        served=tuple(served),
        power=power,
        done=nxt.t == cfg.T,
        weighted_aoi=weighted,
    )
    return nxt, outcome


class UAVDataCollectionEnv:
    """Stateful wrapper around :func:`reset` / :func:`step` for rollout loops."""

    def __init__(self, cfg: EnvConfig, task: TaskSpec):
        self.cfg = cfg
        self.task = task
        self.state = reset(cfg, task)

    @property
    def devices(self):
        return device_cells(self.cfg, self.task)

    def reset(self) -> np.ndarray:
        self.state = reset(self.cfg, self.task)
        return observe_all(self.state, self.cfg)

    def step(self, actions) -> StepOutcome:
        self.state, outcome = step(self.state, actions, self.cfg, self.task)
        return outcome

    def with_task(self, task: TaskSpec) -> "UAVDataCollectionEnv":
        return UAVDataCollectionEnv(self.cfg, task)


def desk_config(**overrides) -> EnvConfig:
    """Reduced 5 x 5 grid with 4 devices, 2 UAVs and 50-step episodes."""
    base = EnvConfig(L=5, D=4, U=2, T=50)
    return replace(base, **{"delta": None, **overrides}) if overrides else base
