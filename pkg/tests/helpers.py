"""Shared builders for the test suite."""

import numpy as np

from giph.domain import (DataLink, Device, DeviceNetwork, Placement,
                         ProblemInstance, Task, TaskGraph)
from giph.generator import GraphGenParams, NetworkGenParams, generate_network, generate_task_graph
from giph.neuralnet import PARAM_SHAPES, PolicyParams


def two_task_instance():
    """Two constrained tasks on three devices: |D_0| = |D_1| = 2, so there
    are 4 feasible placements and 4 actions."""
    graph = TaskGraph(
        [Task(0, 4.0, hw_req=1), Task(1, 2.0, hw_req=2)],
        [DataLink(0, 1, 10.0)],
    )
    network = DeviceNetwork(
        [Device(0, 1.0, frozenset({1})),
         Device(1, 2.0, frozenset({1, 2})),
         Device(2, 4.0, frozenset({2}))],
        bandwidth=[[0, 5.0, 5.0], [5.0, 0, 5.0], [5.0, 5.0, 0]],
        delay=[[0, 1.0, 1.0], [1.0, 0, 1.0], [1.0, 1.0, 0]],
    )
    return ProblemInstance(graph, network)


def chain_instance(computes=(2.0, 2.0, 2.0), speeds=(1.0, 2.0), bytes_=10.0,
                   bandwidth=5.0, delay=1.0):
    n = len(computes)
    graph = TaskGraph(
        [Task(i, c) for i, c in enumerate(computes)],
        [DataLink(i, i + 1, bytes_) for i in range(n - 1)],
    )
    m = len(speeds)
    bw = np.full((m, m), bandwidth)
    dl = np.full((m, m), delay)
    network = DeviceNetwork([Device(k, s) for k, s in enumerate(speeds)], bw, dl)
    return ProblemInstance(graph, network)


def single_task_instance(compute=4.0, speeds=(1.0, 2.0)):
    graph = TaskGraph([Task(0, compute)], [])
    m = len(speeds)
    network = DeviceNetwork([Device(k, s) for k, s in enumerate(speeds)],
                            np.full((m, m), 5.0), np.zeros((m, m)))
    return ProblemInstance(graph, network)


def tiny_graph_params(rng):
    return GraphGenParams(
        M=int(rng.integers(2, 4)), alpha=1.0, p_c=0.5,
        C_bar=10.0, B_bar=10.0, eps_C=0.6, eps_B=0.6,
        hw_tags=((1, 0.3), (2, 0.3)))


def tiny_network_params(rng, m_range=(2, 4)):
    return NetworkGenParams(
        m=int(rng.integers(m_range[0], m_range[1])), SP_bar=2.0, BW_bar=5.0,
        DL_bar=0.5, eps_SP=0.5, eps_BW=0.5,
        hw_tags=((1, 0.6), (2, 0.6)))


def random_small_instance(seed, m_range=(2, 4)):
    """Generator-backed instance with 2-5 tasks and 2-3 devices by default."""
    rng = np.random.default_rng(seed)
    graph = generate_task_graph(tiny_graph_params(rng), rng)
    network = generate_network(tiny_network_params(rng, m_range), rng)
    return ProblemInstance(graph, network)


def heft_benchmark_instance(seed, master=101):
    """Tiny instance from the frozen list-scheduling benchmark distribution:
    2-6 tasks (pseudo included), 3-4 devices, light constraints, mild comm."""
    rng = np.random.default_rng([master, seed])
    gp = GraphGenParams(M=int(rng.integers(2, 5)), alpha=1.0, p_c=0.7,
                        C_bar=10.0, B_bar=5.0, eps_C=0.6, eps_B=0.6,
                        hw_tags=((1, 0.15), (2, 0.15)))
    npar = NetworkGenParams(m=int(rng.integers(3, 5)), SP_bar=2.0, BW_bar=10.0,
                            DL_bar=0.2, eps_SP=0.6, eps_BW=0.5,
                            hw_tags=((1, 0.8), (2, 0.8)))
    return ProblemInstance(generate_task_graph(gp, rng), generate_network(npar, rng))


def random_params(rng, scale=0.5):
    """Random-valued parameters. Gradient tests need these: zero biases put
    structurally-zero pre-activations exactly on the ReLU kink, where central
    differences are invalid."""
    return PolicyParams({name: rng.normal(scale=scale, size=shape)
                         for name, shape in PARAM_SHAPES.items()})
