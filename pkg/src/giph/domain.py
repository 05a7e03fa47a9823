"""Core data model: task graphs, device networks, placements, feasibility."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

FORMAT = "giph-v1"

# Tag carried by unconstrained tasks; every device supports it implicitly.
UNIVERSAL_TAG = 0


class CycleError(ValueError):
    """Task graph contains a cycle; reports one back edge."""

    def __init__(self, src, dst):
        self.edge = (src, dst)
        super().__init__(f"graph has a cycle through back edge {src}->{dst}")


class InfeasibleTaskError(ValueError):
    """A task has no device supporting its hardware requirement."""


@dataclass(frozen=True)
class Task:
    id: int
    compute: float
    hw_req: int = UNIVERSAL_TAG


@dataclass(frozen=True)
class DataLink:
    src: int
    dst: int
    bytes: float


@dataclass(frozen=True)
class Device:
    id: int
    speed: float
    hw_support: frozenset[int] = frozenset()

    def supports(self, tag):
        return tag == UNIVERSAL_TAG or tag in self.hw_support


@dataclass(frozen=True)
class Link:
    bandwidth: float
    delay: float
    is_local: bool


def _toposort(n, children, parents):
    """Kahn's algorithm, smallest task id first among the ready set.

    Raises CycleError naming a back edge if the graph is cyclic.
    """
    import heapq

    indeg = [len(parents[v]) for v in range(n)]
    heap = [v for v in range(n) if indeg[v] == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        u = heapq.heappop(heap)
        order.append(u)
        for v in children[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                heapq.heappush(heap, v)
    if len(order) < n:
        remaining = set(range(n)) - set(order)
        # DFS inside the leftover subgraph to name an edge closing a cycle.
        start = min(remaining)
        stack, on_path, seen = [start], {start}, set()
        path = [start]
        while stack:
            u = path[-1]
            nxt = next((v for v in children[u] if v in remaining and v not in seen), None)
            if nxt is None:
                seen.add(u)
                on_path.discard(u)
                path.pop()
                if not path:
                    remaining -= seen
                    start = min(remaining)
                    path = [start]
                    on_path = {start}
                continue
            if nxt in on_path:
                raise CycleError(u, nxt)
            on_path.add(nxt)
            path.append(nxt)
        raise CycleError(start, start)  # unreachable for a finite graph
    return order


class TaskGraph:
    """Immutable DAG of tasks. Normalized to a single entry and a single exit.

    Multi-entry or multi-exit inputs get a pseudo entry/exit task appended
    (zero compute, universal tag) connected with zero-byte edges.
    """

    def __init__(self, tasks, edges):
        tasks = sorted(tasks, key=lambda t: t.id)
        n = len(tasks)
        if n == 0:
            raise ValueError("task graph needs at least one task")
        if [t.id for t in tasks] != list(range(n)):
            raise ValueError("task ids must be dense 0-based integers")
        for t in tasks:
            if not (t.compute >= 0.0 and math.isfinite(t.compute)):
                raise ValueError(f"task {t.id}: compute must be finite and >= 0")
            if t.hw_req < 0:
                raise ValueError(f"task {t.id}: hw_req must be >= 0")
        seen = set()
        for e in edges:
            if not (0 <= e.src < n and 0 <= e.dst < n):
                raise ValueError(f"edge ({e.src},{e.dst}) references an unknown task")
            if e.src == e.dst:
                raise ValueError(f"self loop on task {e.src}")
            if (e.src, e.dst) in seen:
                raise ValueError(f"duplicate edge ({e.src},{e.dst})")
            if not (e.bytes >= 0.0 and math.isfinite(e.bytes)):
                raise ValueError(f"edge ({e.src},{e.dst}): bytes must be finite and >= 0")
            seen.add((e.src, e.dst))
        tasks, edges, pseudo = self._normalize(tasks, list(edges))
        self.tasks = tuple(tasks)
        self.edges = tuple(edges)
        self.pseudo_tasks = frozenset(pseudo)
        n = len(self.tasks)

        children = [[] for _ in range(n)]
        parents = [[] for _ in range(n)]
        child_edges = [[] for _ in range(n)]
        parent_edges = [[] for _ in range(n)]
        for idx, e in enumerate(self.edges):
            children[e.src].append(e.dst)
            child_edges[e.src].append(idx)
            parents[e.dst].append(e.src)
            parent_edges[e.dst].append(idx)
        for v in range(n):
            order = sorted(range(len(children[v])), key=lambda i: children[v][i])
            children[v] = [children[v][i] for i in order]
            child_edges[v] = [child_edges[v][i] for i in order]
            order = sorted(range(len(parents[v])), key=lambda i: parents[v][i])
            parents[v] = [parents[v][i] for i in order]
            parent_edges[v] = [parent_edges[v][i] for i in order]
        self.children = tuple(tuple(c) for c in children)
        self.parents = tuple(tuple(p) for p in parents)
        self.child_edges = tuple(tuple(c) for c in child_edges)
        self.parent_edges = tuple(tuple(p) for p in parent_edges)
        self.edge_index = {(e.src, e.dst): i for i, e in enumerate(self.edges)}

        self.topo_order = tuple(_toposort(n, self.children, self.parents))
        entries = [v for v in range(n) if not self.parents[v]]
        exits = [v for v in range(n) if not self.children[v]]
        assert len(entries) == 1 and len(exits) == 1
        self.entry = entries[0]
        self.exit = exits[0]

    @staticmethod
    def _normalize(tasks, edges):
        n = len(tasks)
        has_parent = {e.dst for e in edges}
        has_child = {e.src for e in edges}
        entries = [t.id for t in tasks if t.id not in has_parent]
        exits = [t.id for t in tasks if t.id not in has_child]
        # Validate acyclicity on the raw graph before touching it.
        children = [[] for _ in range(n)]
        parents = [[] for _ in range(n)]
        for e in edges:
            children[e.src].append(e.dst)
            parents[e.dst].append(e.src)
        _toposort(n, children, parents)
        if not entries or not exits:
            raise CycleError(0, 0)  # unreachable: acyclic graphs always have both
        pseudo = []
        if len(entries) > 1:
            pid = len(tasks)
            tasks.append(Task(pid, 0.0, UNIVERSAL_TAG))
            edges.extend(DataLink(pid, v, 0.0) for v in entries)
            pseudo.append(pid)
        if len(exits) > 1:
            pid = len(tasks)
            tasks.append(Task(pid, 0.0, UNIVERSAL_TAG))
            edges.extend(DataLink(v, pid, 0.0) for v in exits)
            pseudo.append(pid)
        return tasks, edges, pseudo

    @property
    def n_tasks(self):
        return len(self.tasks)

    @property
    def n_edges(self):
        return len(self.edges)

    @cached_property
    def compute(self):
        return np.array([t.compute for t in self.tasks])

    @cached_property
    def edge_bytes(self):
        return np.array([e.bytes for e in self.edges])

    @cached_property
    def depth(self):
        """Length of the longest path, counted in nodes."""
        dist = [1] * self.n_tasks
        for v in self.topo_order:
            for c in self.children[v]:
                dist[c] = max(dist[c], dist[v] + 1)
        return max(dist)

    def to_dict(self):
        return {
            "format": FORMAT,
            "tasks": [{"id": t.id, "compute": t.compute, "hw_req": t.hw_req} for t in self.tasks],
            "edges": [{"src": e.src, "dst": e.dst, "bytes": e.bytes} for e in self.edges],
        }

    @classmethod
    def from_dict(cls, d):
        _check_format(d)
        tasks = [Task(t["id"], float(t["compute"]), int(t["hw_req"])) for t in d["tasks"]]
        edges = [DataLink(e["src"], e["dst"], float(e["bytes"])) for e in d["edges"]]
        return cls(tasks, edges)


def topological_order(graph):
    """Task ids such that every edge goes forward; ties by ascending id."""
    return list(graph.topo_order)


class DeviceNetwork:
    """Devices plus a dense link matrix. Diagonal links are local:
    zero delay and communication time treated as zero (infinite bandwidth)."""

    def __init__(self, devices, bandwidth, delay):
        devices = sorted(devices, key=lambda d: d.id)
        m = len(devices)
        if m == 0:
            raise ValueError("device network needs at least one device")
        if [d.id for d in devices] != list(range(m)):
            raise ValueError("device ids must be dense 0-based integers")
        for d in devices:
            if not (d.speed > 0.0 and math.isfinite(d.speed)):
                raise ValueError(f"device {d.id}: speed must be finite and > 0")
        bandwidth = np.asarray(bandwidth, dtype=float).copy()
        delay = np.asarray(delay, dtype=float).copy()
        if bandwidth.shape != (m, m) or delay.shape != (m, m):
            raise ValueError(f"link matrices must be {m}x{m}")
        off = ~np.eye(m, dtype=bool)
        if m > 1:
            if not np.all(bandwidth[off] > 0.0) or not np.all(np.isfinite(bandwidth[off])):
                raise ValueError("off-diagonal bandwidth must be finite and > 0")
            if not np.all(delay[off] >= 0.0) or not np.all(np.isfinite(delay[off])):
                raise ValueError("off-diagonal delay must be finite and >= 0")
        np.fill_diagonal(bandwidth, np.inf)
        np.fill_diagonal(delay, 0.0)
        bandwidth.setflags(write=False)
        delay.setflags(write=False)
        self.devices = tuple(devices)
        self.bandwidth = bandwidth
        self.delay = delay

    @property
    def n_devices(self):
        return len(self.devices)

    @cached_property
    def speeds(self):
        return np.array([d.speed for d in self.devices])

    @cached_property
    def max_finite_bandwidth(self):
        """Largest off-diagonal bandwidth; stands in for 'infinite' on local links."""
        m = self.n_devices
        if m == 1:
            return 1.0
        off = ~np.eye(m, dtype=bool)
        return float(self.bandwidth[off].max())

    def link(self, src, dst):
        return Link(float(self.bandwidth[src, dst]), float(self.delay[src, dst]), src == dst)

    def to_dict(self):
        links = []
        m = self.n_devices
        for k in range(m):
            for l in range(m):
                if k == l:
                    continue  # local links implied
                links.append({"src": k, "dst": l,
                              "bandwidth": float(self.bandwidth[k, l]),
                              "delay": float(self.delay[k, l])})
        return {
            "format": FORMAT,
            "devices": [{"id": d.id, "speed": d.speed, "hw_support": sorted(d.hw_support)}
                        for d in self.devices],
            "links": links,
        }

    @classmethod
    def from_dict(cls, d):
        _check_format(d)
        devices = [Device(x["id"], float(x["speed"]), frozenset(x["hw_support"]))
                   for x in d["devices"]]
        m = len(devices)
        bandwidth = np.full((m, m), np.inf)
        delay = np.zeros((m, m))
        seen = set()
        for link in d["links"]:
            k, l = link["src"], link["dst"]
            if k == l:
                raise ValueError(f"explicit local link ({k},{k}) not allowed")
            if not (0 <= k < m and 0 <= l < m):
                raise ValueError(f"link ({k},{l}) references an unknown device")
            bandwidth[k, l] = float(link["bandwidth"])
            delay[k, l] = float(link["delay"])
            seen.add((k, l))
        missing = [(k, l) for k in range(m) for l in range(m) if k != l and (k, l) not in seen]
        if missing:
            raise ValueError(f"link matrix incomplete, first missing pair {missing[0]}")
        return cls(devices, bandwidth, delay)


@dataclass(frozen=True)
class Placement:
    """Task id -> device id mapping, one entry per task."""

    assignment: tuple[int, ...]

    def device_of(self, task):
        return self.assignment[task]

    def with_move(self, task, device):
        a = list(self.assignment)
        a[task] = device
        return Placement(tuple(a))

    def is_feasible(self, instance):
        return all(d in instance.feasible_sets[v] for v, d in enumerate(self.assignment))


class ProblemInstance:
    """A (task graph, device network) pair with per-task feasible device sets."""

    def __init__(self, graph, network):
        self.graph = graph
        self.network = network
        feasible = []
        for t in graph.tasks:
            devs = tuple(d.id for d in network.devices if d.supports(t.hw_req))
            if not devs:
                raise InfeasibleTaskError(
                    f"task {t.id} (hw_req={t.hw_req}) has no feasible device")
            feasible.append(devs)
        self.feasible_sets = tuple(feasible)

    @cached_property
    def feasible_arrays(self):
        return tuple(np.array(s, dtype=np.intp) for s in self.feasible_sets)

    @cached_property
    def compute_times(self):
        """Expected compute time for every (task, device) pair, C_i / SP_k."""
        return self.graph.compute[:, None] / self.network.speeds[None, :]

    @property
    def action_space_size(self):
        return sum(len(s) for s in self.feasible_sets)

    @property
    def state_space_size(self):
        return math.prod(len(s) for s in self.feasible_sets)

    def to_dict(self):
        d = {"format": FORMAT}
        g = self.graph.to_dict()
        n = self.network.to_dict()
        d["tasks"], d["edges"] = g["tasks"], g["edges"]
        d["devices"], d["links"] = n["devices"], n["links"]
        return d

    @classmethod
    def from_dict(cls, d):
        _check_format(d)
        graph = TaskGraph.from_dict({"format": d["format"], "tasks": d["tasks"], "edges": d["edges"]})
        network = DeviceNetwork.from_dict({"format": d["format"], "devices": d["devices"], "links": d["links"]})
        return cls(graph, network)


def _check_format(d):
    if d.get("format") != FORMAT:
        raise ValueError(f"unsupported format {d.get('format')!r}, expected {FORMAT!r}")


def feasible_devices(instance, task):
    """Sorted device ids that support the task's hardware requirement."""
    if not (0 <= task < instance.graph.n_tasks):
        raise ValueError(f"unknown task id {task}")
    return set(instance.feasible_sets[task])


def random_placement(instance, rng):
    """Each task placed independently, uniform over its feasible devices."""
    picks = []
    for devs in instance.feasible_arrays:
        picks.append(int(devs[rng.integers(len(devs))]))
    return Placement(tuple(picks))


def dumps(obj):
    return json.dumps(obj.to_dict(), indent=1)


def loads(cls, text):
    return cls.from_dict(json.loads(text))
