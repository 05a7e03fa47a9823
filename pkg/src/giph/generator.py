"""Parametric random task graphs and device networks, plus device churn."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .domain import (FORMAT, DataLink, Device, DeviceNetwork, Task, TaskGraph,
                     UNIVERSAL_TAG)


class ChurnFeasibilityError(ValueError):
    """Churn left some required hardware tag without any supporting device."""

    def __init__(self, tags):
        self.tags = sorted(tags)
        super().__init__(f"churn orphaned hardware tags {self.tags}")


def _check_tags(hw_tags):
    total = 0.0
    for tag, p in hw_tags:
        if tag == UNIVERSAL_TAG:
            raise ValueError("the universal tag cannot carry an explicit probability")
        if tag < 0 or not (0.0 <= p <= 1.0):
            raise ValueError(f"bad hardware tag entry ({tag}, {p})")
        total += p
    return total


@dataclass(frozen=True)
class GraphGenParams:
    M: int
    alpha: float = 1.0
    p_c: float = 0.25
    C_bar: float = 100.0
    B_bar: float = 100.0
    eps_C: float = 0.5
    eps_B: float = 0.5
    hw_tags: tuple = ()  # ((tag, probability), ...); remainder is the universal tag

    def __post_init__(self):
        if self.M < 2:
            raise ValueError("M must be at least 2")
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")
        if not (0.0 <= self.p_c <= 1.0):
            raise ValueError("p_c must lie in [0, 1]")
        if self.C_bar < 0 or self.B_bar < 0:
            raise ValueError("mean compute and bytes must be >= 0")
        if not (0.0 <= self.eps_C < 1.0 and 0.0 <= self.eps_B < 1.0):
            raise ValueError("heterogeneity factors must lie in [0, 1)")
        if _check_tags(self.hw_tags) > 1.0 + 1e-12:
            raise ValueError("hardware tag probabilities must sum to <= 1")


@dataclass(frozen=True)
class NetworkGenParams:
    m: int
    SP_bar: float = 10.0
    BW_bar: float = 50.0
    DL_bar: float = 1.0
    eps_SP: float = 0.5
    eps_BW: float = 0.5
    hw_tags: tuple = ()  # ((tag, support probability per device), ...)

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be at least 1")
        if self.SP_bar <= 0 or self.BW_bar <= 0:
            raise ValueError("mean speed and bandwidth must be > 0")
        if self.DL_bar < 0:
            raise ValueError("mean delay must be >= 0")
        if not (0.0 <= self.eps_SP < 1.0 and 0.0 <= self.eps_BW < 1.0):
            raise ValueError("heterogeneity factors must lie in [0, 1)")
        for tag, p in self.hw_tags:
            if tag == UNIVERSAL_TAG or tag < 0 or not (0.0 <= p <= 1.0):
                raise ValueError(f"bad hardware tag entry ({tag}, {p})")


def _uniform_count(rng, mean, lo=1):
    """Integer ~ round(U[0, 2*mean]), clamped below at lo."""
    return max(lo, int(round(rng.uniform(0.0, 2.0 * mean))))


def _level_widths(params, rng):
    """Sample level count and widths, then reconcile to exactly M nodes."""
    root_m = math.sqrt(params.M)
    depth = min(_uniform_count(rng, root_m / params.alpha), params.M)
    widths = [_uniform_count(rng, params.alpha * root_m) for _ in range(depth)]
    total = sum(widths)
    widths = [max(1, int(round(w * params.M / total))) for w in widths]
    # Pad or trim, last level first, keeping every level at >= 1 node.
    i = depth - 1
    while sum(widths) != params.M:
        diff = params.M - sum(widths)
        if diff > 0:
            widths[i] += diff
        else:
            drop = min(widths[i] - 1, -diff)
            widths[i] -= drop
            i = (i - 1) % depth
    return widths


def _sample_hw_req(hw_tags, rng):
    u = rng.random()
    acc = 0.0
    for tag, p in hw_tags:
        acc += p
        if u < acc:
            return tag
    return UNIVERSAL_TAG


def generate_task_graph(params, rng):
    """Layered random DAG with exactly M tasks before entry/exit normalization.

    Edges go from earlier to later levels with probability p_c (any level
    gap). A spine through consecutive levels pins the longest path to the
    sampled depth, and parentless nodes are attached to the previous level.
    """
    widths = _level_widths(params, rng)
    level_of = []
    levels = []
    next_id = 0
    for w in widths:
        levels.append(list(range(next_id, next_id + w)))
        level_of.extend([len(levels) - 1] * w)
        next_id += w

    edges = set()
    for li in range(len(levels)):
        for lj in range(li + 1, len(levels)):
            for u in levels[li]:
                for v in levels[lj]:
                    if rng.random() < params.p_c:
                        edges.add((u, v))
    for li in range(len(levels) - 1):
        u = levels[li][rng.integers(len(levels[li]))]
        v = levels[li + 1][rng.integers(len(levels[li + 1]))]
        edges.add((u, v))
    has_parent = {v for _, v in edges}
    for li in range(1, len(levels)):
        for v in levels[li]:
            if v not in has_parent:
                u = levels[li - 1][rng.integers(len(levels[li - 1]))]
                edges.add((u, v))

    lo, hi = params.C_bar * (1 - params.eps_C), params.C_bar * (1 + params.eps_C)
    tasks = [Task(v, float(rng.uniform(lo, hi)), _sample_hw_req(params.hw_tags, rng))
             for v in range(params.M)]
    lo, hi = params.B_bar * (1 - params.eps_B), params.B_bar * (1 + params.eps_B)
    links = [DataLink(u, v, float(rng.uniform(lo, hi))) for u, v in sorted(edges)]
    return TaskGraph(tasks, links)


def generate_network(params, rng):
    """Random device network; the diagonal is local (zero delay, free comm).

    Every hardware tag with nonzero support probability ends up on at least
    one device, so any graph drawn from the same tag universe stays placeable.
    """
    m = params.m
    speeds = rng.uniform(params.SP_bar * (1 - params.eps_SP),
                         params.SP_bar * (1 + params.eps_SP), size=m)
    bw = rng.uniform(params.BW_bar * (1 - params.eps_BW),
                     params.BW_bar * (1 + params.eps_BW), size=(m, m))
    dl = rng.uniform(0.0, 2.0 * params.DL_bar, size=(m, m))
    support = [set() for _ in range(m)]
    for tag, p in params.hw_tags:
        got = rng.random(m) < p
        if p > 0 and not got.any():
            got[rng.integers(m)] = True
        for k in range(m):
            if got[k]:
                support[k].add(tag)
    devices = [Device(k, float(speeds[k]), frozenset(support[k])) for k in range(m)]
    return DeviceNetwork(devices, bw, dl)


def churn_network(network, n_remove, replacement_capacity_factor, rng, params,
                  required_tags=()):
    """Replace n_remove random devices with fresh ones whose speed and
    bandwidths are scaled by the capacity factor (delay unscaled).

    Survivors keep their links; every link touching a replacement is
    resampled from params. Raises ChurnFeasibilityError if a required tag
    ends up unsupported.
    """
    if not (0.0 < replacement_capacity_factor <= 1.0):
        raise ValueError("capacity factor must lie in (0, 1]")
    m = network.n_devices
    if n_remove >= m:
        raise ValueError("cannot remove every device")
    if n_remove == 0:
        return DeviceNetwork(list(network.devices), network.bandwidth, network.delay)

    removed = sorted(int(i) for i in rng.choice(m, size=n_remove, replace=False))
    keep = [i for i in range(m) if i not in removed]
    f = replacement_capacity_factor

    speeds_new = f * rng.uniform(params.SP_bar * (1 - params.eps_SP),
                                 params.SP_bar * (1 + params.eps_SP), size=n_remove)
    support_new = [set() for _ in range(n_remove)]
    for tag, p in params.hw_tags:
        got = rng.random(n_remove) < p
        for k in range(n_remove):
            if got[k]:
                support_new[k].add(tag)

    bw = np.empty((m, m))
    dl = np.empty((m, m))
    nk = len(keep)
    bw[:nk, :nk] = network.bandwidth[np.ix_(keep, keep)]
    dl[:nk, :nk] = network.delay[np.ix_(keep, keep)]
    fresh_bw = lambda size: f * rng.uniform(params.BW_bar * (1 - params.eps_BW),
                                            params.BW_bar * (1 + params.eps_BW), size=size)
    bw[nk:, :] = fresh_bw((n_remove, m))
    bw[:nk, nk:] = fresh_bw((nk, n_remove))
    dl[nk:, :] = rng.uniform(0.0, 2.0 * params.DL_bar, size=(n_remove, m))
    dl[:nk, nk:] = rng.uniform(0.0, 2.0 * params.DL_bar, size=(nk, n_remove))

    devices = [Device(i, network.devices[k].speed, network.devices[k].hw_support)
               for i, k in enumerate(keep)]
    devices += [Device(nk + j, float(speeds_new[j]), frozenset(support_new[j]))
                for j in range(n_remove)]
    result = DeviceNetwork(devices, bw, dl)

    supported = set().union(*(d.hw_support for d in result.devices)) | {UNIVERSAL_TAG}
    orphaned = set(required_tags) - supported
    if orphaned:
        raise ChurnFeasibilityError(orphaned)
    return result


# ---------------------------------------------------------------------------
# Parameter files and dataset files


def _axes(section, fields, path):
    """Each field is a list of candidate values; return the cross product
    enumerated in row-major order over fields."""
    pools = []
    for name in fields:
        if name not in section:
            raise ValueError(f"missing parameter {path}.{name}")
        vals = section[name]
        if not isinstance(vals, list) or not vals:
            raise ValueError(f"{path}.{name} must be a non-empty list of values")
        pools.append(vals)
    combos = [[]]
    for pool in pools:
        combos = [c + [v] for c in combos for v in pool]
    return combos


_GRAPH_FIELDS = ("M", "alpha", "p_c", "C_bar", "B_bar", "eps_C", "eps_B", "hw_tags")
_NET_FIELDS = ("m", "SP_bar", "BW_bar", "DL_bar", "eps_SP", "eps_BW", "hw_tags")


def _tags_tuple(raw, path):
    try:
        return tuple((int(t), float(p)) for t, p in raw)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"{path}.hw_tags entries must be [tag, probability] pairs") from exc


def graph_param_grid(section, path="graphs"):
    combos = _axes(section, _GRAPH_FIELDS, path)
    out = []
    for c in combos:
        kw = dict(zip(_GRAPH_FIELDS, c))
        kw["M"] = int(kw["M"])
        kw["hw_tags"] = _tags_tuple(kw["hw_tags"], path)
        out.append(GraphGenParams(**kw))
    return out


def network_param_grid(section, path="networks"):
    combos = _axes(section, _NET_FIELDS, path)
    out = []
    for c in combos:
        kw = dict(zip(_NET_FIELDS, c))
        kw["m"] = int(kw["m"])
        kw["hw_tags"] = _tags_tuple(kw["hw_tags"], path)
        out.append(NetworkGenParams(**kw))
    return out


def load_param_file(path):
    with open(path) as fh:
        raw = json.load(fh)
    for key in ("graphs", "networks"):
        if key not in raw:
            raise ValueError(f"parameter file missing section {key!r}")
        if "count" not in raw[key]:
            raise ValueError(f"missing parameter {key}.count")
    return {
        "graph_count": int(raw["graphs"]["count"]),
        "graph_grid": graph_param_grid(raw["graphs"]),
        "network_count": int(raw["networks"]["count"]),
        "network_grid": network_param_grid(raw["networks"]),
    }


def generate_graphs(grid, count, seed, stream):
    """Graphs cycle round-robin through the parameter combinations; each item
    draws from its own seeded stream so datasets are reproducible bit for bit."""
    out = []
    for i in range(count):
        rng = np.random.default_rng([seed, stream, i])
        out.append(generate_task_graph(grid[i % len(grid)], rng))
    return out


def generate_networks(grid, count, seed, stream):
    out = []
    for i in range(count):
        rng = np.random.default_rng([seed, stream, i])
        out.append(generate_network(grid[i % len(grid)], rng))
    return out


def save_graphs(graphs, path):
    payload = {"format": FORMAT, "graphs": [g.to_dict() for g in graphs]}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def load_graphs(path):
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != FORMAT:
        raise ValueError(f"{path}: unsupported format {payload.get('format')!r}")
    return [TaskGraph.from_dict(d) for d in payload["graphs"]]


def save_networks(networks, path):
    payload = {"format": FORMAT, "networks": [n.to_dict() for n in networks]}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def load_networks(path):
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != FORMAT:
        raise ValueError(f"{path}: unsupported format {payload.get('format')!r}")
    return [DeviceNetwork.from_dict(d) for d in payload["networks"]]
