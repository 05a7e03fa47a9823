"""Discrete-event execution of a placed task graph, plus closed-form costs.

Devices run one task at a time, non-preemptively, dequeuing runnable tasks
FIFO. Outgoing transmissions start when a task finishes and proceed without
contention, overlapped with computation.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

# Event kinds in tie-break order at equal timestamps; subjects break remaining ties.
TX_DONE, TASK_RUNNABLE, TASK_DONE, TASK_START = 0, 1, 2, 3


@dataclass(frozen=True)
class LatencyModel:
    """Multiplicative uniform noise: realized time ~ U[x(1-noise), x(1+noise)]."""

    noise: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.noise < 1.0):
            raise ValueError("noise must lie in [0, 1)")


@dataclass(frozen=True)
class SimEvent:
    kind: int
    timestamp: float
    subject: int

    def sort_key(self):
        return (self.timestamp, self.kind, self.subject)


@dataclass
class SimTrace:
    """Per-task and per-edge timestamps of one simulated run (all in ms)."""

    device: np.ndarray      # task -> device it ran on
    t_runnable: np.ndarray
    t_start: np.ndarray
    t_done: np.ndarray
    tx_start: np.ndarray    # aligned with graph.edges
    tx_done: np.ndarray
    w_real: np.ndarray      # realized compute times
    c_real: np.ndarray      # realized transmission times
    makespan: float
    sigma: float

    def to_dict(self):
        return {
            "format": "giph-trace-v1",
            "sigma": self.sigma,
            "makespan": self.makespan,
            "tasks": [
                {"id": i, "device": int(self.device[i]), "t_runnable": float(self.t_runnable[i]),
                 "t_start": float(self.t_start[i]), "t_done": float(self.t_done[i])}
                for i in range(len(self.device))
            ],
            "edges": [
                {"index": e, "t_tx_start": float(self.tx_start[e]), "t_tx_done": float(self.tx_done[e])}
                for e in range(len(self.tx_start))
            ],
        }

    def has_queueing_wait(self, tol=1e-12):
        return bool(np.any(self.t_start > self.t_runnable + tol))


def expected_compute_time(instance, task, device):
    """w_{i,k} = C_i / SP_k. Errors if the device cannot host the task."""
    if device not in instance.feasible_sets[task]:
        raise ValueError(f"device {device} infeasible for task {task}")
    return float(instance.compute_times[task, device])


def expected_comm_time(instance, edge_index, src_device, dst_device):
    """c_{ij,kl} = DL_kl + B_ij / BW_kl; exactly 0 on the same device."""
    if src_device == dst_device:
        return 0.0
    net = instance.network
    b = instance.graph.edges[edge_index].bytes
    return float(net.delay[src_device, dst_device] + b / net.bandwidth[src_device, dst_device])


def _check_feasible(instance, placement):
    if not placement.is_feasible(instance):
        raise ValueError("placement violates hardware feasibility")


def simulate(instance, placement, model=LatencyModel(), rng=None):
    """Event-driven run of the placement; returns the full timing trace.

    With noise = 0 this is a pure function of (instance, placement) and rng
    is never touched. Otherwise realized times are presampled per task and
    per edge so the draw order never depends on event interleaving.
    """
    _check_feasible(instance, placement)
    g = instance.graph
    net = instance.network
    n, ne = g.n_tasks, g.n_edges
    dev = np.array(placement.assignment, dtype=np.intp)

    w_exp = instance.compute_times[np.arange(n), dev]
    c_exp = np.empty(ne)
    for e, link in enumerate(g.edges):
        c_exp[e] = expected_comm_time(instance, e, dev[link.src], dev[link.dst])
    sigma = model.noise
    if sigma > 0.0:
        if rng is None:
            raise ValueError("noise > 0 requires an rng")
        w_real = w_exp * rng.uniform(1.0 - sigma, 1.0 + sigma, size=n)
        c_real = c_exp * rng.uniform(1.0 - sigma, 1.0 + sigma, size=ne)
    else:
        w_real, c_real = w_exp.copy(), c_exp.copy()

    t_runnable = np.full(n, np.nan)
    t_start = np.full(n, np.nan)
    t_done = np.full(n, np.nan)
    tx_start = np.full(ne, np.nan)
    tx_done = np.full(ne, np.nan)

    pending = np.array([len(g.parents[v]) for v in range(n)])
    queues = [deque() for _ in range(net.n_devices)]
    busy = [False] * net.n_devices

    heap = []

    def push(kind, ts, subject):
        heapq.heappush(heap, (ts, kind, subject))

    push(TASK_RUNNABLE, 0.0, g.entry)
    while heap:
        ts, kind, subject = heapq.heappop(heap)
        if kind == TX_DONE:
            e = subject
            tx_done[e] = ts
            j = g.edges[e].dst
            pending[j] -= 1
            if pending[j] == 0:
                push(TASK_RUNNABLE, ts, j)
        elif kind == TASK_RUNNABLE:
            i = subject
            t_runnable[i] = ts
            d = dev[i]
            queues[d].append(i)
            if not busy[d]:
                busy[d] = True
                push(TASK_START, ts, queues[d].popleft())
        elif kind == TASK_START:
            i = subject
            t_start[i] = ts
            push(TASK_DONE, ts + w_real[i], i)
        else:  # TASK_DONE
            i = subject
            t_done[i] = ts
            for e in g.child_edges[i]:
                tx_start[e] = ts
                push(TX_DONE, ts + c_real[e], e)
            d = dev[i]
            if queues[d]:
                push(TASK_START, ts, queues[d].popleft())
            else:
                busy[d] = False

    makespan = float(t_done[g.exit] - t_start[g.entry])
    return SimTrace(dev, t_runnable, t_start, t_done, tx_start, tx_done,
                    w_real, c_real, makespan, sigma)


def validate_trace(instance, placement, trace, tol=1e-9):
    """Assert the trace's internal consistency; raises ValueError on violation."""
    g = instance.graph
    dev = trace.device
    if tuple(int(d) for d in dev) != placement.assignment:
        raise ValueError("trace does not match the placement")
    if np.any(np.abs(trace.t_done - (trace.t_start + trace.w_real)) > tol):
        raise ValueError("t_done != t_start + realized compute time")
    for e, link in enumerate(g.edges):
        if abs(trace.tx_start[e] - trace.t_done[link.src]) > tol:
            raise ValueError(f"edge {e}: transmission does not start at source finish")
        if abs(trace.tx_done[e] - (trace.tx_start[e] + trace.c_real[e])) > tol:
            raise ValueError(f"edge {e}: tx_done != tx_start + realized comm time")
    for v in range(g.n_tasks):
        expect = 0.0 if not g.parents[v] else max(trace.tx_done[e] for e in g.parent_edges[v])
        if abs(trace.t_runnable[v] - expect) > tol:
            raise ValueError(f"task {v}: runnable time mismatch")
        if trace.t_start[v] < trace.t_runnable[v] - tol:
            raise ValueError(f"task {v}: started before runnable")
    for d in range(instance.network.n_devices):
        on_dev = [v for v in range(g.n_tasks) if dev[v] == d]
        # Zero-duration tasks tie on t_start; order them before longer runs.
        on_dev.sort(key=lambda v: (trace.t_start[v], trace.t_done[v], v))
        for a, b in zip(on_dev, on_dev[1:]):
            if trace.t_start[b] < trace.t_done[a] - tol:
                raise ValueError(f"device {d}: overlapping executions {a} and {b}")
            if abs(trace.t_start[a] - trace.t_start[b]) <= tol:
                continue  # coincident zero-width starts: order unobservable
            # FIFO dequeue order follows arrival order (runnable time, then id).
            ra, rb = trace.t_runnable[a], trace.t_runnable[b]
            if ra > rb + tol or (abs(ra - rb) <= tol and a > b):
                raise ValueError(f"device {d}: FIFO order violated between {a} and {b}")
    return True


def path_makespan(instance, placement):
    """Max entry-to-exit path cost under expected times, one topological pass."""
    _check_feasible(instance, placement)
    g = instance.graph
    dev = placement.assignment
    dist = np.zeros(g.n_tasks)
    for v in g.topo_order:
        arrive = 0.0
        for p, e in zip(g.parents[v], g.parent_edges[v]):
            arrive = max(arrive, dist[p] + expected_comm_time(instance, e, dev[p], dev[v]))
        dist[v] = arrive + instance.compute_times[v, dev[v]]
    return float(dist[g.exit])


def min_compute_path(instance):
    """Critical-path lower bound: nodes weighted by their cheapest feasible
    compute time, edges free. This is the SLR denominator."""
    g = instance.graph
    best = np.zeros(g.n_tasks)
    for v in g.topo_order:
        w_min = instance.compute_times[v, instance.feasible_arrays[v]].min()
        head = max((best[p] for p in g.parents[v]), default=0.0)
        best[v] = head + w_min
    return float(best[g.exit])


def slr(makespan, instance):
    """Schedule Length Ratio: makespan over the min-compute critical path."""
    denom = slr_denominator(instance)
    return makespan / denom


def slr_denominator(instance):
    cached = getattr(instance, "_slr_denominator", None)
    if cached is None:
        cached = min_compute_path(instance)
        instance._slr_denominator = cached
    if cached == 0.0:
        raise ValueError("SLR undefined: every task on the critical path has zero compute")
    return cached


def total_cost(instance, placement):
    """Sum of all expected compute times plus all expected transmission times."""
    _check_feasible(instance, placement)
    g = instance.graph
    dev = placement.assignment
    cost = sum(instance.compute_times[v, dev[v]] for v in range(g.n_tasks))
    for e, link in enumerate(g.edges):
        cost += expected_comm_time(instance, e, dev[link.src], dev[link.dst])
    return float(cost)
