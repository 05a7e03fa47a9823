"""Shared benchmark harness: run several placement policies on the same
cases with the same initial placements and seeded randomness."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import baselines
from .domain import random_placement
from .environment import Objective, run_episode
from .policy import NeuralPolicy
from .simulator import slr
from .training import InstanceCache, build_cases, substream

STREAM_TEST_INIT = 3
STREAM_TEST_POLICY = 4


@dataclass
class SearchOutcome:
    best_placement: object
    best_objective: float
    curve: list      # best-so-far objective after 0..T evaluations
    steps: int


class NeuralRunner:
    def __init__(self, name, params, mode="pair", k=None, aggregate="mean",
                 greedy=False, plateau_window=None):
        self.name = name
        self.policy = NeuralPolicy(params, mode=mode, k=k, aggregate=aggregate)
        self.greedy = greedy
        self.plateau_window = plateau_window

    def search(self, instance, placement, T, rng, objective):
        ep = run_episode(instance, placement, self.policy, T, rng,
                         objective=objective, greedy=self.greedy,
                         plateau_window=self.plateau_window)
        curve = ep.best_curve()
        curve += [curve[-1]] * (T + 1 - len(curve))
        return SearchOutcome(ep.best_placement, ep.best_objective, curve, len(ep.steps))


class RandomSamplingRunner:
    name = "random"

    def search(self, instance, placement, T, rng, objective):
        best_p, best_v, curve = baselines.random_sampling_search(
            instance, placement, T, rng, objective)
        return SearchOutcome(best_p, best_v, curve, T)


class RandomTaskEftRunner:
    name = "random-task-eft"

    def search(self, instance, placement, T, rng, objective):
        best_p, best_v, curve = baselines.random_task_eft_search(
            instance, placement, T, rng, objective)
        return SearchOutcome(best_p, best_v, curve, T)


class HeftRunner:
    """One-shot heuristic: its curve is flat at the quality of its single
    placement, evaluated under the same objective as everyone else."""

    name = "heft"

    def search(self, instance, placement, T, rng, objective):
        heft_placement, _ = baselines.heft(instance)
        value, _ = objective.evaluate(instance, heft_placement, rng)
        return SearchOutcome(heft_placement, value, [value] * (T + 1), 1)


class BruteForceRunner:
    name = "brute-force"

    def search(self, instance, placement, T, rng, objective):
        best_p, makespan = baselines.brute_force_optimal(instance)
        value, _ = objective.evaluate(instance, best_p, rng)
        return SearchOutcome(best_p, value, [value] * (T + 1), 1)


def make_runner(name, params=None, k=None, aggregate="mean", greedy=False):
    if name == "giph":
        if params is None:
            raise ValueError("policy 'giph' needs trained parameters")
        return NeuralRunner("giph", params, mode="pair", k=k,
                            aggregate=aggregate, greedy=greedy)
    if name == "giph-task-eft":
        if params is None:
            raise ValueError("policy 'giph-task-eft' needs trained parameters")
        return NeuralRunner("giph-task-eft", params, mode="task", k=k,
                            aggregate=aggregate, greedy=greedy)
    if name == "random":
        return RandomSamplingRunner()
    if name == "random-task-eft":
        return RandomTaskEftRunner()
    if name == "heft":
        return HeftRunner()
    if name == "brute-force":
        return BruteForceRunner()
    raise ValueError(f"unknown policy {name!r}")


def evaluate_policies(runners, graphs, networks, n_cases, seed, objective,
                      T_factor=2, stage=""):
    """Every policy sees the same instances and the same seeded initial
    placement per case. Returns (result rows, curve rows, timing rows)."""
    cache = InstanceCache(graphs, networks)
    cases = build_cases(len(graphs), len(networks), n_cases)
    results, curves, timings = [], [], []
    for case_idx, (gi, ni) in enumerate(cases):
        instance = cache.get(gi, ni)
        T = T_factor * instance.graph.n_tasks
        init_rng = substream(seed, STREAM_TEST_INIT, case_idx)
        initial = random_placement(instance, init_rng)
        init_text = "-".join(str(d) for d in initial.assignment)
        for p_idx, runner in enumerate(runners):
            rng = substream(seed, STREAM_TEST_POLICY, case_idx, p_idx)
            t0 = time.perf_counter()
            outcome = runner.search(instance, initial, T, rng, objective)
            wall_ms = 1000.0 * (time.perf_counter() - t0)
            if objective.name == "makespan":
                best_slr = slr(outcome.best_objective, instance)
            else:
                best_slr = ""
            results.append({
                "case_id": case_idx, "instance_id": f"g{gi}-n{ni}",
                "policy": runner.name, "stage": stage, "steps": outcome.steps,
                "depth": instance.graph.depth, "initial_placement": init_text,
                "best_objective": outcome.best_objective, "best_slr": best_slr,
            })
            denom = None
            if objective.name == "makespan":
                from .simulator import slr_denominator
                denom = slr_denominator(instance)
            for step_idx, value in enumerate(outcome.curve):
                curves.append({
                    "case_id": case_idx, "policy": runner.name, "stage": stage,
                    "step": step_idx, "best_objective": value,
                    "best_slr": value / denom if denom else "",
                })
            timings.append({"case_id": case_idx, "policy": runner.name,
                            "stage": stage, "wall_ms": wall_ms})
    return results, curves, timings


RESULT_FIELDS = ["case_id", "instance_id", "policy", "stage", "steps", "depth",
                 "initial_placement", "best_objective", "best_slr"]
CURVE_FIELDS = ["case_id", "policy", "stage", "step", "best_objective", "best_slr"]
TIMING_FIELDS = ["case_id", "policy", "stage", "wall_ms"]


def write_csv(rows, fields, path):
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)


def read_csv(path):
    import csv

    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
