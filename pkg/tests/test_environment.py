import itertools

import numpy as np
import pytest

from giph.domain import (DataLink, Device, DeviceNetwork, Placement,
                         ProblemInstance, Task, TaskGraph, random_placement)
from giph.environment import (Action, MaskExhaustedError, Objective,
                              action_index, action_mask, action_space,
                              initial_state, run_episode, step)
from giph.gpnet import build_gpnet
from giph.policy import UniformRandomPolicy
from giph.simulator import simulate
from helpers import random_small_instance, single_task_instance, two_task_instance


def state_for(inst, assignment, last=None):
    st = initial_state(inst, Placement(assignment), Objective())
    st.last_moved_task = last
    return st


def test_action_space_two_task_instance():
    inst = two_task_instance()
    acts = action_space(inst)
    assert acts == [Action(0, 0), Action(0, 1), Action(1, 1), Action(1, 2)]


def test_action_space_unconstrained_count():
    graph = TaskGraph([Task(0, 1.0), Task(1, 1.0), Task(2, 1.0)],
                      [DataLink(0, 1, 1.0), DataLink(1, 2, 1.0)])
    net = DeviceNetwork([Device(k, 1.0) for k in range(4)],
                        np.full((4, 4), 1.0), np.zeros((4, 4)))
    inst = ProblemInstance(graph, net)
    assert len(action_space(inst)) == 12


def test_action_space_matches_gpnet_order():
    for seed in range(20):
        inst = random_small_instance(seed)
        p = random_placement(inst, np.random.default_rng(seed))
        gp = build_gpnet(inst, p, simulate(inst, p))
        acts = action_space(inst)
        assert len(acts) == inst.action_space_size == gp.n_nodes
        for u, a in enumerate(acts):
            assert (a.task, a.device) == (int(gp.node_task[u]), int(gp.node_device[u]))


def test_mask_fresh_episode_only_noops():
    inst = two_task_instance()
    st = state_for(inst, (0, 1))
    masked = action_mask(st)
    assert masked.tolist() == [True, False, True, False]


def test_mask_after_move_blocks_that_task():
    inst = two_task_instance()
    st = state_for(inst, (0, 1), last=1)
    masked = action_mask(st)
    # v1's whole option group plus v0's no-op.
    assert masked.tolist() == [True, False, True, True]


def test_mask_exhausted_single_task():
    inst = single_task_instance(speeds=(1.0, 2.0))
    st = state_for(inst, (0,), last=0)
    with pytest.raises(MaskExhaustedError):
        action_mask(st)


def test_mask_exhausted_when_every_task_is_forced():
    graph = TaskGraph([Task(0, 1.0, hw_req=1), Task(1, 1.0, hw_req=1)],
                      [DataLink(0, 1, 1.0)])
    net = DeviceNetwork([Device(0, 1.0, frozenset({1})), Device(1, 1.0)],
                        np.full((2, 2), 1.0), np.zeros((2, 2)))
    inst = ProblemInstance(graph, net)
    with pytest.raises(MaskExhaustedError):
        action_mask(state_for(inst, (0, 0)))


def test_step_reward_positive_for_faster_device():
    inst = single_task_instance(compute=4.0, speeds=(1.0, 2.0))
    st = state_for(inst, (0,))
    nxt, reward = step(st, Action(0, 1))
    assert reward == pytest.approx(2.0)
    assert nxt.placement.assignment == (1,)
    assert nxt.best_objective == pytest.approx(2.0)
    assert nxt.last_moved_task == 0


def test_step_identity_forced_unmasked():
    inst = two_task_instance()
    st = state_for(inst, (0, 1))
    nxt, reward = step(st, Action(0, 0), enforce_mask=False)
    assert reward == 0.0
    assert nxt.placement.assignment == st.placement.assignment
    assert nxt.objective_value == st.objective_value


def test_step_rejects_masked_actions():
    inst = two_task_instance()
    st = state_for(inst, (0, 1), last=1)
    with pytest.raises(ValueError):
        step(st, Action(0, 0))      # no-op
    with pytest.raises(ValueError):
        step(st, Action(1, 2))      # moved last step
    with pytest.raises(ValueError):
        step(st, Action(0, 2))      # infeasible device


def test_any_placement_reachable_in_v_moves():
    rng = np.random.default_rng(0)
    for seed in range(30):
        inst = random_small_instance(seed)
        start = random_placement(inst, rng)
        target = random_placement(inst, rng)
        st = initial_state(inst, start, Objective())
        moves = 0
        for v in range(inst.graph.n_tasks):
            if st.placement.assignment[v] != target.assignment[v]:
                st, _ = step(st, Action(v, target.assignment[v]))
                moves += 1
        assert st.placement == target
        assert moves <= inst.graph.n_tasks


def test_state_space_size_matches_enumeration():
    inst = two_task_instance()
    states = set(itertools.product(*inst.feasible_sets))
    assert len(states) == inst.state_space_size == 4


def test_run_episode_rejects_zero_budget():
    inst = two_task_instance()
    with pytest.raises(ValueError):
        run_episode(inst, Placement((0, 1)), UniformRandomPolicy(), 0,
                    np.random.default_rng(0))


def coverage_probability(inst, start, horizon):
    """Exact probability that a uniform-over-unmasked walk visits every
    placement within `horizon` steps, by dynamic programming over the chain
    (placement, last moved task, visited set)."""
    placements = sorted(itertools.product(*inst.feasible_sets))
    index = {p: i for i, p in enumerate(placements)}
    n_tasks = inst.graph.n_tasks
    acts = action_space(inst)

    def transitions(p, last):
        allowed = [a for a in acts
                   if a.device != p[a.task] and a.task != last]
        out = []
        for a in allowed:
            q = list(p)
            q[a.task] = a.device
            out.append((tuple(q), a.task))
        return out

    start_key = (index[start], None, frozenset([index[start]]))
    dist = {start_key: 1.0}
    full = frozenset(range(len(placements)))
    done = 0.0
    for _ in range(horizon):
        nxt = {}
        for (pi, last, seen), prob in dist.items():
            outs = transitions(placements[pi], last)
            share = prob / len(outs)
            for q, moved in outs:
                qi = index[q]
                seen2 = seen | {qi}
                if seen2 == full:
                    done += share
                else:
                    key = (qi, moved, seen2)
                    nxt[key] = nxt.get(key, 0.0) + share
        dist = nxt
    return done


def test_uniform_policy_covers_state_space():
    inst = two_task_instance()
    prob = coverage_probability(inst, (0, 1), 50)
    assert prob > 0.999
    # Empirical cross-check of the chain computation.
    hits = 0
    for seed in range(200):
        ep = run_episode(inst, Placement((0, 1)), UniformRandomPolicy(), 50,
                         np.random.default_rng(seed))
        seen = {ep.initial_placement.assignment}
        st = initial_state(inst, ep.initial_placement, Objective())
        for rec in ep.steps:
            st, _ = step(st, rec.action)
            seen.add(st.placement.assignment)
        if len(seen) == 4:
            hits += 1
    assert hits >= 198


def test_best_so_far_never_increases():
    for seed in range(20):
        inst = random_small_instance(seed)
        rng = np.random.default_rng(seed)
        ep = run_episode(inst, random_placement(inst, rng), UniformRandomPolicy(),
                         12, rng)
        curve = ep.best_curve()
        assert all(b <= a + 1e-12 for a, b in zip(curve, curve[1:]))


def test_sampled_actions_respect_mask():
    rng = np.random.default_rng(1)
    total = 0
    for seed in range(50):
        inst = random_small_instance(seed)
        ep = run_episode(inst, random_placement(inst, rng),
                         UniformRandomPolicy(), 40, rng)
        st = initial_state(inst, ep.initial_placement, Objective())
        for rec in ep.steps:
            masked = action_mask(st)
            assert not masked[action_index(inst, rec.action)]
            st, _ = step(st, rec.action)
            total += 1
    assert total > 1000


def test_episode_deterministic_at_zero_noise():
    inst = two_task_instance()
    a = run_episode(inst, Placement((0, 1)), UniformRandomPolicy(), 20,
                    np.random.default_rng(42))
    b = run_episode(inst, Placement((0, 1)), UniformRandomPolicy(), 20,
                    np.random.default_rng(42))
    assert [r.action for r in a.steps] == [r.action for r in b.steps]
    assert [r.reward for r in a.steps] == [r.reward for r in b.steps]


def test_total_cost_objective():
    inst = two_task_instance()
    obj = Objective("total_cost")
    st = initial_state(inst, Placement((0, 1)), obj)
    from giph.simulator import total_cost

    assert st.objective_value == pytest.approx(total_cost(inst, Placement((0, 1))))
    nxt, reward = step(st, Action(0, 1), objective=obj)
    assert reward == pytest.approx(st.objective_value - nxt.objective_value)


def test_plateau_stop_cuts_episode_short():
    from helpers import chain_instance

    # Free communication and identical devices: every placement has the same
    # makespan, so the best objective plateaus immediately.
    inst = chain_instance(computes=(2.0, 2.0), speeds=(1.0, 1.0, 1.0),
                          bytes_=0.0, delay=0.0)
    ep = run_episode(inst, Placement((0, 0)), UniformRandomPolicy(), 50,
                     np.random.default_rng(0), plateau_window=5)
    assert len(ep.steps) == 6
    no_stop = run_episode(inst, Placement((0, 0)), UniformRandomPolicy(), 50,
                          np.random.default_rng(0))
    assert len(no_stop.steps) == 50
