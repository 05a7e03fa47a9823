"""The unified placement graph: one node per feasible (task, device) pair.

Nodes matching the current placement are pivots; an edge links two option
nodes when the underlying tasks share a data link and at least one endpoint
is a pivot. Node features are (compute, speed, compute time, start-time
potential); edge features are (bytes, bandwidth, delay, comm time).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .simulator import expected_comm_time

NORM_EPS = 1e-8


@dataclass
class GpNet:
    node_task: np.ndarray
    node_device: np.ndarray
    option_slices: tuple            # per task: (start, stop) into the node arrays
    pivot_node: np.ndarray          # per task: node index of its pivot
    is_pivot: np.ndarray
    edge_src: np.ndarray            # H-edge endpoints as node indices
    edge_dst: np.ndarray
    edge_graph: np.ndarray          # underlying task-graph edge per H-edge
    node_features_raw: np.ndarray   # (|V_H|, 4)
    edge_features_raw: np.ndarray   # (|E_H|, 4)
    node_features: np.ndarray       # per-channel mean-magnitude standardized
    edge_features: np.ndarray
    task_topo_order: tuple
    fwd_edges_by_task: dict         # task -> H-edge ids entering its options
    bwd_edges_by_task: dict         # task -> H-edge ids leaving its options
    indeg: np.ndarray
    outdeg: np.ndarray

    @property
    def n_nodes(self):
        return len(self.node_task)

    @property
    def n_edges(self):
        return len(self.edge_src)

    def options(self, task):
        start, stop = self.option_slices[task]
        return np.arange(start, stop)

    def to_dict(self):
        return {
            "format": "giph-gpnet-v1",
            "nodes": [
                {"task": int(self.node_task[u]), "device": int(self.node_device[u]),
                 "is_pivot": bool(self.is_pivot[u]),
                 "features": [float(x) for x in self.node_features_raw[u]]}
                for u in range(self.n_nodes)
            ],
            "edges": [
                {"src": int(self.edge_src[e]), "dst": int(self.edge_dst[e]),
                 "features": [float(x) for x in self.edge_features_raw[e]]}
                for e in range(self.n_edges)
            ],
        }


def _standardize(x):
    if len(x) == 0:
        return x.copy()
    scale = np.abs(x).mean(axis=0) + NORM_EPS
    return x / scale


def earliest_start(instance, task, device, trace):
    """Earliest possible start of `task` on `device`: all parents finish at
    their traced times and ship their data from their traced devices."""
    g = instance.graph
    est = 0.0
    for p, e in zip(g.parents[task], g.parent_edges[task]):
        c = expected_comm_time(instance, e, int(trace.device[p]), device)
        est = max(est, float(trace.t_done[p]) + c)
    return est


def compose_node_features(instance, task, device, trace):
    """(C_i, SP_k, w_ik, start-time potential), raw units."""
    if device not in instance.feasible_sets[task]:
        raise ValueError(f"device {device} infeasible for task {task}")
    c = instance.graph.tasks[task].compute
    sp = instance.network.devices[device].speed
    w = instance.compute_times[task, device]
    stp = earliest_start(instance, task, device, trace) - float(trace.t_start[task])
    return np.array([c, sp, w, stp])


def compose_edge_features(instance, edge_index, src_dev, dst_dev):
    """(B_ij, BW_kl, DL_kl, c_ijkl); local pairs carry the network's largest
    finite bandwidth, zero delay and zero comm time."""
    b = instance.graph.edges[edge_index].bytes
    net = instance.network
    if src_dev == dst_dev:
        return np.array([b, net.max_finite_bandwidth, 0.0, 0.0])
    bw = net.bandwidth[src_dev, dst_dev]
    dl = net.delay[src_dev, dst_dev]
    return np.array([b, bw, dl, dl + b / bw])


class GpNetBuilder:
    """Caches the placement-independent structure of an instance's gpNet."""

    def __init__(self, instance):
        self.instance = instance
        g = instance.graph
        opts = instance.feasible_arrays
        offsets = np.zeros(g.n_tasks + 1, dtype=np.intp)
        for v in range(g.n_tasks):
            offsets[v + 1] = offsets[v] + len(opts[v])
        self.offsets = offsets
        self.option_slices = tuple((int(offsets[v]), int(offsets[v + 1]))
                                   for v in range(g.n_tasks))
        self.node_task = np.repeat(np.arange(g.n_tasks, dtype=np.intp),
                                   [len(o) for o in opts])
        self.node_device = np.concatenate(opts)
        n = len(self.node_task)
        base = np.empty((n, 4))
        base[:, 0] = g.compute[self.node_task]
        base[:, 1] = instance.network.speeds[self.node_device]
        base[:, 2] = instance.compute_times[self.node_task, self.node_device]
        self.base_node_features = base

    def pivot_nodes(self, placement):
        inst = self.instance
        piv = np.empty(inst.graph.n_tasks, dtype=np.intp)
        for v in range(inst.graph.n_tasks):
            devs = inst.feasible_arrays[v]
            pos = int(np.searchsorted(devs, placement.assignment[v]))
            piv[v] = self.offsets[v] + pos
        return piv

    def _start_potentials(self, trace):
        inst = self.instance
        g = inst.graph
        net = inst.network
        stp = np.empty(len(self.node_task))
        for v in range(g.n_tasks):
            lo, hi = self.option_slices[v]
            cand = self.node_device[lo:hi]
            est = np.zeros(hi - lo)
            for p, e in zip(g.parents[v], g.parent_edges[v]):
                dp = int(trace.device[p])
                c = net.delay[dp, cand] + g.edges[e].bytes / net.bandwidth[dp, cand]
                c[cand == dp] = 0.0
                np.maximum(est, float(trace.t_done[p]) + c, out=est)
            stp[lo:hi] = est - float(trace.t_start[v])
        return stp

    def build(self, placement, trace):
        inst = self.instance
        g = inst.graph
        net = inst.network
        if tuple(int(d) for d in trace.device) != placement.assignment:
            raise ValueError("trace was produced for a different placement")
        if trace.sigma != 0.0:
            raise ValueError("gpNet features need a noise-free trace")

        piv = self.pivot_nodes(placement)
        is_pivot = np.zeros(len(self.node_task), dtype=bool)
        is_pivot[piv] = True

        node_feat = self.base_node_features.copy()
        node_feat[:, 3] = self._start_potentials(trace)

        srcs, dsts, graphs = [], [], []
        fwd_by_task = {v: [] for v in range(g.n_tasks)}
        bwd_by_task = {v: [] for v in range(g.n_tasks)}
        pos = 0
        for e, link in enumerate(g.edges):
            i, j = link.src, link.dst
            oi_lo, oi_hi = self.option_slices[i]
            oj_lo, oj_hi = self.option_slices[j]
            oj = np.arange(oj_lo, oj_hi, dtype=np.intp)
            oi_rest = np.arange(oi_lo, oi_hi, dtype=np.intp)
            oi_rest = oi_rest[oi_rest != piv[i]]
            src = np.concatenate([np.full(len(oj), piv[i], dtype=np.intp), oi_rest])
            dst = np.concatenate([oj, np.full(len(oi_rest), piv[j], dtype=np.intp)])
            count = len(src)
            srcs.append(src)
            dsts.append(dst)
            graphs.append(np.full(count, e, dtype=np.intp))
            ids = np.arange(pos, pos + count, dtype=np.intp)
            fwd_by_task[j].append(ids)
            bwd_by_task[i].append(ids)
            pos += count
        if srcs:
            edge_src = np.concatenate(srcs)
            edge_dst = np.concatenate(dsts)
            edge_graph = np.concatenate(graphs)
        else:
            edge_src = edge_dst = edge_graph = np.empty(0, dtype=np.intp)

        kk = self.node_device[edge_src]
        ll = self.node_device[edge_dst]
        edge_feat = np.empty((len(edge_src), 4))
        edge_feat[:, 0] = g.edge_bytes[edge_graph]
        local = kk == ll
        bw = net.bandwidth[kk, ll]
        dl = net.delay[kk, ll]
        bw[local] = net.max_finite_bandwidth
        dl[local] = 0.0
        edge_feat[:, 1] = bw
        edge_feat[:, 2] = dl
        with np.errstate(invalid="ignore"):
            edge_feat[:, 3] = dl + edge_feat[:, 0] / bw
        edge_feat[local, 3] = 0.0

        n = len(self.node_task)
        indeg = np.bincount(edge_dst, minlength=n).astype(float)
        outdeg = np.bincount(edge_src, minlength=n).astype(float)
        fwd = {v: (np.concatenate(parts) if parts else np.empty(0, dtype=np.intp))
               for v, parts in fwd_by_task.items()}
        bwd = {v: (np.concatenate(parts) if parts else np.empty(0, dtype=np.intp))
               for v, parts in bwd_by_task.items()}

        return GpNet(
            node_task=self.node_task, node_device=self.node_device,
            option_slices=self.option_slices, pivot_node=piv, is_pivot=is_pivot,
            edge_src=edge_src, edge_dst=edge_dst, edge_graph=edge_graph,
            node_features_raw=node_feat, edge_features_raw=edge_feat,
            node_features=_standardize(node_feat), edge_features=_standardize(edge_feat),
            task_topo_order=g.topo_order,
            fwd_edges_by_task=fwd, bwd_edges_by_task=bwd,
            indeg=indeg, outdeg=outdeg,
        )


def build_gpnet(instance, placement, trace):
    """Build the placement graph for (instance, placement) with trace-derived
    start-time potentials. The builder is cached on the instance."""
    builder = getattr(instance, "_gpnet_builder", None)
    if builder is None:
        builder = GpNetBuilder(instance)
        instance._gpnet_builder = builder
    return builder.build(placement, trace)
