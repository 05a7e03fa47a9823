"""Placement-search MDP: states are feasible placements, an action relocates
one task, reward is the objective improvement measured by the simulator."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .domain import random_placement
from .simulator import LatencyModel, simulate, total_cost


class MaskExhaustedError(RuntimeError):
    """Every action is masked; the episode should terminate."""


@dataclass(frozen=True)
class Action:
    task: int
    device: int


@dataclass(frozen=True)
class Objective:
    """What the search optimizes: simulated makespan (under optional noise)
    or the analytic total computation+communication cost."""

    name: str = "makespan"
    sigma: float = 0.0

    def __post_init__(self):
        if self.name not in ("makespan", "total_cost"):
            raise ValueError(f"unknown objective {self.name!r}")

    def evaluate(self, instance, placement, rng=None):
        """Returns (objective value, noise-free trace). The trace always comes
        from a zero-noise run so downstream features stay deterministic."""
        trace0 = simulate(instance, placement, LatencyModel(0.0))
        if self.name == "total_cost":
            return total_cost(instance, placement), trace0
        if self.sigma == 0.0:
            return trace0.makespan, trace0
        noisy = simulate(instance, placement, LatencyModel(self.sigma), rng)
        return noisy.makespan, trace0


@dataclass
class SearchState:
    instance: object
    placement: object
    objective_value: float
    trace: object                  # noise-free trace of the current placement
    last_moved_task: int | None
    t: int
    best_placement: object
    best_objective: float


def initial_state(instance, placement, objective, rng=None):
    value, trace = objective.evaluate(instance, placement, rng)
    return SearchState(instance, placement, value, trace, None, 0, placement, value)


def _offsets(instance):
    cached = getattr(instance, "_option_offsets", None)
    if cached is None:
        sizes = [len(s) for s in instance.feasible_sets]
        cached = np.concatenate([[0], np.cumsum(sizes)]).astype(np.intp)
        instance._option_offsets = cached
    return cached


def action_space(state):
    """All feasible (task, device) actions in lexicographic order; this is
    exactly the gpNet node order."""
    instance = state.instance if isinstance(state, SearchState) else state
    cached = getattr(instance, "_action_space", None)
    if cached is None:
        cached = [Action(v, int(d))
                  for v in range(instance.graph.n_tasks)
                  for d in instance.feasible_sets[v]]
        instance._action_space = cached
    return cached


def action_index(instance, action):
    off = _offsets(instance)
    devs = instance.feasible_arrays[action.task]
    pos = int(np.searchsorted(devs, action.device))
    if pos >= len(devs) or devs[pos] != action.device:
        raise ValueError(f"action {action} is infeasible")
    return int(off[action.task]) + pos


def action_mask(state):
    """True marks a masked action: either a no-op (task stays on its device)
    or a move of the task moved in the previous step."""
    instance = state.instance
    off = _offsets(instance)
    masked = np.zeros(int(off[-1]), dtype=bool)
    for v in range(instance.graph.n_tasks):
        masked[action_index(instance, Action(v, state.placement.assignment[v]))] = True
    if state.last_moved_task is not None:
        v = state.last_moved_task
        masked[off[v]:off[v + 1]] = True
    if masked.all():
        raise MaskExhaustedError(
            "all actions are masked; terminate the episode")
    return masked


def step(state, action, rng=None, objective=Objective(), enforce_mask=True):
    """Apply one relocation. Reward is the drop in the objective, so positive
    means the new placement is better.

    Masked actions raise unless enforce_mask is off (tests use that to force
    identity moves, which leave the placement and objective untouched)."""
    if action.device not in state.instance.feasible_sets[action.task]:
        raise ValueError(f"action {action} is infeasible")
    is_noop = action.device == state.placement.assignment[action.task]
    if enforce_mask and (is_noop or action.task == state.last_moved_task):
        raise ValueError(f"action {action} is masked at this state")
    if is_noop:
        nxt = SearchState(state.instance, state.placement, state.objective_value,
                          state.trace, action.task, state.t + 1,
                          state.best_placement, state.best_objective)
        return nxt, 0.0

    placement = state.placement.with_move(action.task, action.device)
    value, trace = objective.evaluate(state.instance, placement, rng)
    reward = state.objective_value - value
    best_placement, best_value = state.best_placement, state.best_objective
    if value < best_value:
        best_placement, best_value = placement, value
    nxt = SearchState(state.instance, placement, value, trace, action.task,
                      state.t + 1, best_placement, best_value)
    return nxt, reward


@dataclass
class StepRecord:
    t: int
    action: Action
    reward: float
    objective_value: float
    best_objective: float
    cache: object = None


@dataclass
class EpisodeResult:
    initial_placement: object
    initial_objective: float
    steps: list
    best_placement: object
    best_objective: float

    def rewards(self):
        return np.array([s.reward for s in self.steps])

    def best_curve(self):
        """Best-so-far objective after 0..len(steps) evaluations."""
        return [self.initial_objective] + [s.best_objective for s in self.steps]


def run_episode(instance, placement, policy, T, rng, objective=Objective(),
                greedy=False, train=False, plateau_window=None, plateau_tol=1e-3):
    """Roll the policy for up to T steps from the given placement.

    The policy supplies `select(state, rng, greedy, want_cache)`; in train
    mode the per-step cache needed for the policy-gradient backward pass is
    kept on each record. Stops early if every action is masked or, when a
    plateau window is set, if the best objective stalls."""
    if T < 1:
        raise ValueError("episode length must be at least 1")
    state = initial_state(instance, placement, objective, rng)
    initial_objective = state.objective_value
    records = []
    for t in range(T):
        try:
            action, cache = policy.select(state, rng, greedy=greedy, want_cache=train)
        except MaskExhaustedError:
            break
        # Masking belongs to the policy: task-selection policies may emit
        # no-op device choices (EFT landed on the current device).
        state, reward = step(state, action, rng, objective, enforce_mask=False)
        records.append(StepRecord(t, action, reward, state.objective_value,
                                  state.best_objective, cache))
        if plateau_window and len(records) > plateau_window:
            prev = records[-plateau_window - 1].best_objective
            cur = records[-1].best_objective
            if abs(prev - cur) < plateau_tol * max(abs(prev), 1e-12):
                break
    return EpisodeResult(placement, initial_objective, records,
                         state.best_placement, state.best_objective)
