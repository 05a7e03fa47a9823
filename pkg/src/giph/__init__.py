"""Learning generalizable task-placement policies for DAG applications on
heterogeneous device networks."""

from .domain import (DataLink, Device, DeviceNetwork, Placement,
                     ProblemInstance, Task, TaskGraph, feasible_devices,
                     random_placement, topological_order)
from .environment import Action, Objective, action_mask, action_space, run_episode, step
from .gpnet import GpNet, build_gpnet
from .neuralnet import PolicyParams, Gradients, embed, embed_k, init_params, score
from .simulator import (LatencyModel, SimTrace, expected_comm_time,
                        expected_compute_time, path_makespan, simulate, slr,
                        total_cost)

__version__ = "0.1.0"
