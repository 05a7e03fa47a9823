"""Non-learned comparison policies: HEFT, EFT-based search, random sampling,
and the exhaustive optimum for tiny instances."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .domain import Placement, random_placement
from .simulator import (LatencyModel, expected_comm_time, simulate)


@dataclass
class Schedule:
    """Explicit start/finish times per task as planned by a list scheduler."""

    device: list
    start: list
    finish: list

    @property
    def makespan(self):
        return max(self.finish)


def _mean_comm_cost(instance, edge_index, src_task, dst_task):
    """Average expected transmission time over all feasible device pairs,
    local pairs included (they cost zero)."""
    net = instance.network
    di = instance.feasible_arrays[src_task]
    dj = instance.feasible_arrays[dst_task]
    b = instance.graph.edges[edge_index].bytes
    dl = net.delay[np.ix_(di, dj)]
    bw = net.bandwidth[np.ix_(di, dj)]
    c = dl + b / bw
    c[di[:, None] == dj[None, :]] = 0.0
    return float(c.mean())


def upward_ranks(instance):
    """rank(i) = mean_w(i) + max over children j of (mean_c(i,j) + rank(j))."""
    g = instance.graph
    w_mean = np.array([instance.compute_times[v, instance.feasible_arrays[v]].mean()
                       for v in range(g.n_tasks)])
    rank = np.zeros(g.n_tasks)
    for v in reversed(g.topo_order):
        tail = 0.0
        for c, e in zip(g.children[v], g.child_edges[v]):
            tail = max(tail, _mean_comm_cost(instance, e, v, c) + rank[c])
        rank[v] = w_mean[v] + tail
    return rank


def _earliest_slot(timeline, ready, duration, insertion):
    """First start >= ready with a free gap of the given length. The timeline
    is a sorted list of (start, end) busy intervals."""
    if not insertion:
        start = max(ready, timeline[-1][1] if timeline else 0.0)
        return start
    t = ready
    for s, e in timeline:
        if s - t >= duration:
            return t
        t = max(t, e)
    return t


def heft(instance, insertion=True):
    """Classic heterogeneous list scheduling: tasks by descending upward rank,
    each assigned to the feasible device finishing it earliest (insertion-based
    slot search). Returns the induced placement and the planned schedule."""
    g = instance.graph
    rank = upward_ranks(instance)
    topo_pos = {v: i for i, v in enumerate(g.topo_order)}
    # Topological position breaks rank ties without violating precedence.
    order = sorted(range(g.n_tasks), key=lambda v: (-rank[v], topo_pos[v]))

    device = [-1] * g.n_tasks
    start = [0.0] * g.n_tasks
    finish = [0.0] * g.n_tasks
    timelines = [[] for _ in range(instance.network.n_devices)]
    for v in order:
        best = None
        for d in instance.feasible_sets[v]:
            ready = 0.0
            for p, e in zip(g.parents[v], g.parent_edges[v]):
                arrive = finish[p] + expected_comm_time(instance, e, device[p], d)
                ready = max(ready, arrive)
            w = instance.compute_times[v, d]
            s = _earliest_slot(timelines[d], ready, w, insertion)
            f = s + w
            if best is None or f < best[0] - 1e-15:
                best = (f, d, s)
        f, d, s = best
        device[v] = d
        start[v] = s
        finish[v] = f
        timelines[d].append((s, f))
        timelines[d].sort()
    placement = Placement(tuple(device))
    return placement, Schedule(device, start, finish)


def analytic_finish_times(instance, placement):
    """Queueing-free finish estimate per task under the given placement."""
    g = instance.graph
    dev = placement.assignment
    fin = np.zeros(g.n_tasks)
    for v in g.topo_order:
        ready = 0.0
        for p, e in zip(g.parents[v], g.parent_edges[v]):
            ready = max(ready, fin[p] + expected_comm_time(instance, e, dev[p], dev[v]))
        fin[v] = ready + instance.compute_times[v, dev[v]]
    return fin


def eft_device(instance, placement, task):
    """Feasible device minimizing the task's queueing-free finish time given
    where its parents currently sit; ties go to the lowest device id."""
    g = instance.graph
    dev = placement.assignment
    fin = analytic_finish_times(instance, placement)
    best_d, best_f = None, None
    for d in instance.feasible_sets[task]:
        ready = 0.0
        for p, e in zip(g.parents[task], g.parent_edges[task]):
            ready = max(ready, fin[p] + expected_comm_time(instance, e, dev[p], d))
        f = ready + instance.compute_times[task, d]
        if best_f is None or f < best_f - 1e-15:
            best_d, best_f = d, f
    return best_d


def random_task_eft_search(instance, placement, T, rng, objective=None):
    """Each step relocates a uniformly chosen task to its EFT device and
    scores the result; tracks the best placement seen."""
    from .environment import Objective

    objective = objective or Objective()
    value, _ = objective.evaluate(instance, placement, rng)
    best_placement, best_value = placement, value
    curve = [value]
    current = placement
    for _ in range(T):
        task = int(rng.integers(instance.graph.n_tasks))
        current = current.with_move(task, eft_device(instance, current, task))
        value, _ = objective.evaluate(instance, current, rng)
        if value < best_value:
            best_placement, best_value = current, value
        curve.append(best_value)
    return best_placement, best_value, curve


def random_sampling_search(instance, placement, T, rng, objective=None):
    """T independent uniform placements; the initial one counts as sample 0."""
    from .environment import Objective

    objective = objective or Objective()
    value, _ = objective.evaluate(instance, placement, rng)
    best_placement, best_value = placement, value
    curve = [value]
    for _ in range(T):
        cand = random_placement(instance, rng)
        value, _ = objective.evaluate(instance, cand, rng)
        if value < best_value:
            best_placement, best_value = cand, value
        curve.append(best_value)
    return best_placement, best_value, curve


def giph_task_eft_policy(params, k=None, aggregate="mean"):
    """RL task selection with EFT device selection (the gpNet-free variant)."""
    from .policy import NeuralPolicy

    return NeuralPolicy(params, mode="task", k=k, aggregate=aggregate)


def brute_force_optimal(instance, guard=10 ** 6):
    """Exhaustive search over all feasible placements at zero noise. Ties go
    to the lexicographically smallest assignment."""
    count = instance.state_space_size
    if count > guard:
        raise ValueError(f"state space has {count} placements, over the {guard} guard")
    best_assign, best_make = None, math.inf
    for assign in itertools.product(*instance.feasible_sets):
        trace = simulate(instance, Placement(assign), LatencyModel(0.0))
        if trace.makespan < best_make:
            best_assign, best_make = assign, trace.makespan
    return Placement(best_assign), best_make
