"""Episode-level policy-gradient training with a per-step reward baseline
and Adam updates, over datasets of (task graph, device network) pairs."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from .domain import ProblemInstance, random_placement
from .environment import Objective, run_episode
from .neuralnet import (PARAM_SHAPES, Gradients, PolicyParams, init_params,
                        load_arrays, save_arrays, save_params)
from .policy import NeuralPolicy
from .simulator import slr

# Substream tags keep every source of randomness on its own seeded stream.
STREAM_EPISODE = 1
STREAM_EVAL = 2


def substream(seed, *path):
    return np.random.default_rng([seed, *path])


@dataclass(frozen=True)
class TrainConfig:
    episodes: int = 200
    lr: float = 0.01
    gamma: float = 0.97
    T_factor: int = 2
    eval_every: int = 25
    seed: int = 0
    noise: float = 0.0
    objective: str = "makespan"
    variant: str = "giph"          # giph | giph-task-eft
    k: int | None = None           # bounded message passing when set
    aggregate: str = "mean"
    plateau_stop: bool = False
    greedy_eval: bool = False
    eval_cases: int = 20

    def __post_init__(self):
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError("gamma must lie in (0, 1]")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.variant not in ("giph", "giph-task-eft"):
            raise ValueError(f"unknown variant {self.variant!r}")

    @property
    def policy_mode(self):
        return "task" if self.variant == "giph-task-eft" else "pair"


@dataclass
class Dataset:
    train_graphs: list
    train_networks: list
    test_graphs: list
    test_networks: list

    FILES = ("train_graphs.json", "test_graphs.json",
             "train_networks.json", "test_networks.json")

    @classmethod
    def load(cls, directory):
        from .generator import load_graphs, load_networks

        paths = [os.path.join(directory, f) for f in cls.FILES]
        for p in paths:
            if not os.path.exists(p):
                raise FileNotFoundError(f"dataset file missing: {p}")
        return cls(load_graphs(paths[0]), load_networks(paths[2]),
                   load_graphs(paths[1]), load_networks(paths[3]))


class InstanceCache:
    """Problem instances keyed by (graph index, network index)."""

    def __init__(self, graphs, networks):
        self.graphs = graphs
        self.networks = networks
        self._cache = {}

    def get(self, gi, ni):
        key = (gi, ni)
        if key not in self._cache:
            self._cache[key] = ProblemInstance(self.graphs[gi], self.networks[ni])
        return self._cache[key]


def build_cases(n_graphs, n_networks, count):
    """Deterministic case list walking the graph x network grid row-major."""
    total = n_graphs * n_networks
    return [(i % n_graphs, (i // n_graphs) % n_networks)
            for i in range(min(count, total))]


# ---------------------------------------------------------------------------
# REINFORCE


def discounted_returns(rewards, gamma):
    g = 0.0
    out = np.zeros(len(rewards))
    for t in range(len(rewards) - 1, -1, -1):
        g = rewards[t] + gamma * g
        out[t] = g
    return out


def reward_baselines(rewards):
    """b_t = mean of rewards strictly before t; b_0 = 0."""
    out = np.zeros(len(rewards))
    if len(rewards) > 1:
        out[1:] = np.cumsum(rewards)[:-1] / np.arange(1, len(rewards))
    return out


def reinforce_coefficients(rewards, gamma):
    """Per-step scaling gamma^t * (return_t - baseline_t) of the log-prob
    gradient in the episode update."""
    rewards = np.asarray(rewards, dtype=float)
    returns = discounted_returns(rewards, gamma)
    baselines = reward_baselines(rewards)
    return gamma ** np.arange(len(rewards)) * (returns - baselines)


def reinforce_gradient(episode, gamma, policy):
    """Accumulated ascent gradient for one episode; needs the caches that
    run_episode stores in train mode."""
    total = Gradients()
    coefs = reinforce_coefficients(episode.rewards(), gamma)
    for record, coef in zip(episode.steps, coefs):
        if record.cache is None:
            raise ValueError("step is missing its backprop context; "
                             "run the episode in train mode")
        upstream = coef * policy.log_prob_grad(record.cache)
        total.add(policy.backprop(record.cache, upstream))
    return total.check_finite()


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls):
        return cls({n: np.zeros(s) for n, s in PARAM_SHAPES.items()},
                   {n: np.zeros(s) for n, s in PARAM_SHAPES.items()})

    def save(self, path):
        arrays = {f"m.{n}": a for n, a in self.m.items()}
        arrays.update({f"v.{n}": a for n, a in self.v.items()})
        save_arrays(arrays, path, extra={"t": self.t})

    @classmethod
    def load(cls, path):
        arrays, extra = load_arrays(path)
        m = {n: arrays[f"m.{n}"] for n in PARAM_SHAPES}
        v = {n: arrays[f"v.{n}"] for n in PARAM_SHAPES}
        return cls(m, v, int(extra["t"]))


def adam_step(params, grads, state, lr):
    """One ascent step with bias correction; returns fresh params and state."""
    grads.check_finite()
    t = state.t + 1
    new_arrays, new_m, new_v = {}, {}, {}
    for n in PARAM_SHAPES:
        g = grads[n]
        m = state.beta1 * state.m[n] + (1 - state.beta1) * g
        v = state.beta2 * state.v[n] + (1 - state.beta2) * g * g
        m_hat = m / (1 - state.beta1 ** t)
        v_hat = v / (1 - state.beta2 ** t)
        new_arrays[n] = params[n] + lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[n], new_v[n] = m, v
    return PolicyParams(new_arrays), AdamState(new_m, new_v, t, state.beta1,
                                               state.beta2, state.eps)


# ---------------------------------------------------------------------------
# Training loop


@dataclass
class TrainResult:
    params: PolicyParams
    adam: AdamState
    log_rows: list
    eval_rows: list
    checkpoints: dict = field(default_factory=dict)  # episode -> params snapshot

    def best_checkpoint(self):
        """Checkpoint with the best mean held-out eval score; falls back to
        the final parameters when no evals ran."""
        if not self.eval_rows:
            return self.params
        scores = {}
        for row in self.eval_rows:
            scores.setdefault(row["episode"], []).append(row["score"])
        best_ep = min(scores, key=lambda ep: float(np.mean(scores[ep])))
        return self.checkpoints.get(best_ep, self.params)


def evaluate_params(params, config, cache, n_graphs, n_networks, episode_tag):
    """Mean best-so-far SLR (or best objective for total_cost) on held-out
    cases, at zero noise with seeded action sampling."""
    objective = Objective(config.objective, 0.0)
    cases = build_cases(n_graphs, n_networks, config.eval_cases)
    policy = NeuralPolicy(params, mode=config.policy_mode, k=config.k,
                          aggregate=config.aggregate)
    rows = []
    for case_idx, (gi, ni) in enumerate(cases):
        instance = cache.get(gi, ni)
        rng = substream(config.seed, STREAM_EVAL, episode_tag, case_idx)
        placement = random_placement(instance, rng)
        T = config.T_factor * instance.graph.n_tasks
        episode = run_episode(instance, placement, policy, T, rng,
                              objective=objective, greedy=config.greedy_eval)
        value = (slr(episode.best_objective, instance)
                 if config.objective == "makespan" else episode.best_objective)
        rows.append({"episode": episode_tag, "case": case_idx,
                     "instance_id": f"g{gi}-n{ni}", "score": value})
    return rows


def train(config, dataset, run_dir=None, params=None, adam=None, start_episode=0,
          log_hook=None):
    """REINFORCE over uniformly sampled training instances.

    One gradient update per episode. Every eval_every episodes the current
    parameters are scored on the held-out split and checkpointed. Passing
    params/adam/start_episode resumes a run bit-identically because all
    randomness is drawn from per-episode substreams of the config seed."""
    if not dataset.train_graphs or not dataset.train_networks:
        raise ValueError("training dataset is empty")
    if params is None:
        params = init_params(substream(config.seed, 0))
    if adam is None:
        adam = AdamState.zeros()

    train_cache = InstanceCache(dataset.train_graphs, dataset.train_networks)
    eval_cache = InstanceCache(dataset.test_graphs, dataset.test_networks)
    objective = Objective(config.objective, config.noise)
    log_rows, eval_rows = [], []
    checkpoints = {}

    for ep in range(start_episode, config.episodes):
        rng = substream(config.seed, STREAM_EPISODE, ep)
        gi = int(rng.integers(len(dataset.train_graphs)))
        ni = int(rng.integers(len(dataset.train_networks)))
        instance = train_cache.get(gi, ni)
        placement = random_placement(instance, rng)
        policy = NeuralPolicy(params, mode=config.policy_mode, k=config.k,
                              aggregate=config.aggregate)
        T = config.T_factor * instance.graph.n_tasks
        episode = run_episode(
            instance, placement, policy, T, rng, objective=objective, train=True,
            plateau_window=5 if config.plateau_stop else None)
        grads = reinforce_gradient(episode, config.gamma, policy)
        params, adam = adam_step(params, grads, adam, config.lr)

        rewards = episode.rewards()
        ep_return = float((config.gamma ** np.arange(len(rewards)) * rewards).sum())
        final_score = (slr(episode.best_objective, instance)
                       if config.objective == "makespan" else episode.best_objective)
        row = {"episode": ep + 1, "instance_id": f"g{gi}-n{ni}",
               "return": ep_return, "final_slr": final_score, "eval_slr": ""}

        done = ep + 1 == config.episodes
        if (ep + 1) % config.eval_every == 0 or done:
            ev = evaluate_params(params, config, eval_cache,
                                 len(dataset.test_graphs),
                                 len(dataset.test_networks), ep + 1)
            eval_rows.extend(ev)
            row["eval_slr"] = float(np.mean([r["score"] for r in ev])) if ev else ""
            checkpoints[ep + 1] = params
            if run_dir is not None:
                checkpoint(params, adam, run_dir, ep + 1)
        log_rows.append(row)
        if log_hook:
            log_hook(row)

    if run_dir is not None:
        write_log(log_rows, os.path.join(run_dir, "train_log.csv"))
        write_eval(eval_rows, os.path.join(run_dir, "eval.csv"))
    return TrainResult(params, adam, log_rows, eval_rows, checkpoints)


def checkpoint(params, adam, run_dir, episode):
    save_params(params,
                os.path.join(run_dir, f"policy_{episode}"),
                os.path.join(run_dir, f"embedding_{episode}"))
    adam.save(os.path.join(run_dir, f"optimizer_{episode}"))


def latest_checkpoint(run_dir):
    eps = []
    for name in os.listdir(run_dir):
        if name.startswith("policy_"):
            try:
                eps.append(int(name.split("_", 1)[1]))
            except ValueError:
                continue
    if not eps:
        raise FileNotFoundError(f"no checkpoints found in {run_dir}")
    return max(eps)


def load_checkpoint(run_dir, episode=None):
    from .neuralnet import load_params

    if episode is None:
        episode = latest_checkpoint(run_dir)
    params = load_params(os.path.join(run_dir, f"policy_{episode}"),
                         os.path.join(run_dir, f"embedding_{episode}"))
    return params, episode


def write_log(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["episode", "instance_id", "return",
                                                "final_slr", "eval_slr"])
        writer.writeheader()
        writer.writerows(rows)


def write_eval(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["episode", "case", "instance_id", "score"])
        writer.writeheader()
        writer.writerows(rows)
