"""Action-selection policies for the placement search."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import neuralnet
from .baselines import eft_device
from .environment import Action, MaskExhaustedError, action_mask
from .gpnet import build_gpnet


def masked_softmax(q, masked):
    """Softmax over unmasked entries; masked entries get probability zero."""
    if masked.all():
        raise MaskExhaustedError("all actions are masked")
    z = np.where(masked, -np.inf, q - q[~masked].max())
    p = np.exp(z)
    p[masked] = 0.0
    return p / p.sum()


def _draw(p, rng, greedy, masked):
    if greedy:
        idx = int(np.argmax(np.where(masked, -np.inf, p)))
    else:
        idx = int(rng.choice(len(p), p=p))
    if masked[idx]:
        raise AssertionError("sampled a masked action")
    return idx


@dataclass
class StepCache:
    """Everything the policy-gradient backward pass needs for one step."""

    gpnet: object
    forward: dict
    probs: np.ndarray
    chosen: int
    mode: str


class NeuralPolicy:
    """Scores relocations with the message-passing network.

    mode "pair": one action per gpNet node (full task-device selection).
    mode "task": scores the pivot node of each task, then places the chosen
    task on its earliest-finish device.
    """

    def __init__(self, params, mode="pair", k=None, aggregate="mean"):
        if mode not in ("pair", "task"):
            raise ValueError(f"unknown policy mode {mode!r}")
        self.params = params
        self.mode = mode
        self.k = k
        self.aggregate = aggregate

    def _scores(self, state):
        gp = build_gpnet(state.instance, state.placement, state.trace)
        if self.k is None:
            q, cache = neuralnet.scores(gp, self.params, self.aggregate)
        else:
            q, cache = neuralnet.scores_k(gp, self.params, self.k, self.aggregate)
        return gp, q, cache

    def select(self, state, rng, greedy=False, want_cache=False):
        gp, q, fwd = self._scores(state)
        if self.mode == "pair":
            masked = action_mask(state)
            p = masked_softmax(q, masked)
            idx = _draw(p, rng, greedy, masked)
            action = Action(int(gp.node_task[idx]), int(gp.node_device[idx]))
        else:
            n_tasks = state.instance.graph.n_tasks
            masked = np.zeros(n_tasks, dtype=bool)
            if state.last_moved_task is not None:
                masked[state.last_moved_task] = True
            qt = q[gp.pivot_node]
            p = masked_softmax(qt, masked)
            idx = _draw(p, rng, greedy, masked)
            device = eft_device(state.instance, state.placement, idx)
            action = Action(idx, device)
        cache = StepCache(gp, fwd, p, idx, self.mode) if want_cache else None
        return action, cache

    def log_prob_grad(self, cache):
        """d log pi(chosen) / d q per gpNet node: one-hot minus the softmax."""
        if cache.mode == "pair":
            g = -cache.probs.copy()
            g[cache.chosen] += 1.0
            return g
        g = np.zeros(cache.gpnet.n_nodes)
        gt = -cache.probs.copy()
        gt[cache.chosen] += 1.0
        g[cache.gpnet.pivot_node] = gt
        return g

    def backprop(self, cache, upstream):
        if self.k is None:
            return neuralnet.backprop(cache.gpnet, self.params, upstream,
                                      cache=cache.forward, aggregate=self.aggregate)
        return neuralnet.backprop_k(cache.gpnet, self.params, upstream, self.k,
                                    cache=cache.forward, aggregate=self.aggregate)


class UniformRandomPolicy:
    """Picks uniformly among unmasked actions; handy as a learning-free stub."""

    def select(self, state, rng, greedy=False, want_cache=False):
        from .environment import action_space

        masked = action_mask(state)
        allowed = np.flatnonzero(~masked)
        idx = int(allowed[rng.integers(len(allowed))])
        return action_space(state)[idx], None
