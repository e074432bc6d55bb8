"""Baseline and evaluation policies: random walk, deterministic sweep, greedy-Q."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import env as envlib
from . import qnet
from .env import HOVER, EnvConfig, TaskSpec

EAST, WEST, NORTH, SOUTH = range(4)
KINDS = ("random", "deterministic", "greedy-q")


@dataclass(frozen=True)
class PolicyDescriptor:
    kind: str
    seed: int | None = None
    route: tuple[int, ...] = field(default=())
    params: qnet.NetParams | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "deterministic" and not self.route:
            raise ValueError("deterministic policy needs a non-empty route")
        if self.kind == "greedy-q" and self.params is None:
            raise ValueError("greedy-q policy needs Q-network parameters")

    def check(self, cfg: EnvConfig):
        if self.kind == "deterministic" and any(not 0 <= a < cfg.n_actions for a in self.route):
            raise ValueError("route contains action ids outside the action space")
        if self.kind == "greedy-q" and (self.params.in_dim, self.params.out_dim) != (cfg.obs_dim, cfg.n_actions):
            raise ValueError(f"Q-network maps {self.params.in_dim}->{self.params.out_dim}, "
                             f"environment needs {cfg.obs_dim}->{cfg.n_actions}")


def random_walk_action(rng: np.random.Generator, D: int) -> int:
    return int(rng.integers(5 * D))


def greedy_q_action(params: qnet.NetParams, obs) -> int:
    # np.argmax returns the first maximum, i.e. the lowest id on ties
    return int(np.argmax(qnet.forward(params, obs)))


def strip_groups(cfg: EnvConfig, task: TaskSpec) -> list[list[int]]:
    """Partition devices into ``U`` vertical strips of the grid by their x cell."""
    groups = [[] for _ in range(cfg.U)]
    for d, (x, _) in enumerate(envlib.device_cells(cfg, task)):
        groups[min(cfg.U - 1, x * cfg.U // cfg.L)].append(d)
    return groups


def _manhattan(a, b) -> int:
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


def nearest_neighbor_tour(start, cells, members: list[int]) -> list[int]:
    order, pos, left = [], start, list(members)
    while left:
        d = min(left, key=lambda k: (_manhattan(pos, cells[k]), k))
        order.append(d)
        left.remove(d)
        pos = cells[d]
    return order


def _move_toward(pos, target) -> int:
    if target[0] > pos[0]:
        return EAST
    if target[0] < pos[0]:
        return WEST
    if target[1] > pos[1]:
        return NORTH
    return SOUTH


def deterministic_route(cfg: EnvConfig, task: TaskSpec, agent: int) -> list[int]:
    """``T`` flat action ids sweeping the agent's strip.

    The agent cycles a nearest-neighbor tour over its devices, moving x first
    then y and hovering one step on each device cell to serve it. An agent
    with no devices hovers and schedules the device nearest its start cell.
    """
    cells = envlib.device_cells(cfg, task)
    start = envlib.start_cells(cfg)[agent]
    members = strip_groups(cfg, task)[agent]
    if not members:
        nearest = min(range(cfg.D), key=lambda k: (envlib.planar_distance(cfg, cells[k], start), k))
        return [envlib.encode_action(HOVER, nearest, cfg.D)] * cfg.T
    tour = nearest_neighbor_tour(start, cells, members)
    actions, pos, k = [], start, 0
    while len(actions) < cfg.T:
        d = tour[k % len(tour)]
        if tuple(pos) == tuple(cells[d]):
            actions.append(envlib.encode_action(HOVER, d, cfg.D))
            k += 1
        else:
            move = _move_toward(pos, cells[d])
            actions.append(envlib.encode_action(move, d, cfg.D))
            dx, dy = envlib._MOVES[move]
            pos = (pos[0] + int(dx), pos[1] + int(dy))
    return actions


def random_policy(seed: int | None = None) -> PolicyDescriptor:
    return PolicyDescriptor("random", seed=seed)


def deterministic_policies(cfg: EnvConfig, task: TaskSpec) -> list[PolicyDescriptor]:
    return [PolicyDescriptor("deterministic", route=tuple(deterministic_route(cfg, task, u))) for u in range(cfg.U)]


def greedy_policies(params_list) -> list[PolicyDescriptor]:
    return [PolicyDescriptor("greedy-q", params=p) for p in params_list]


def act(policy: PolicyDescriptor, obs, t: int, rng: np.random.Generator, D: int) -> int:
    if policy.kind == "random":
        return random_walk_action(rng, D)
    if policy.kind == "deterministic":
        return policy.route[t % len(policy.route)]
    return greedy_q_action(policy.params, obs)
