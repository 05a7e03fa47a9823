"""Command-line entry point: dataset generation, training, evaluation,
device-churn experiments, baselines, and reporting."""

from __future__ import annotations

import argparse
import datetime
import json
import os
import sys

import numpy as np

from . import evaluation, generator, report, training
from .domain import ProblemInstance
from .environment import Objective
from .generator import ChurnFeasibilityError
from .training import Dataset, TrainConfig, substream

STREAM_GENERATE_TRAIN_G = 10
STREAM_GENERATE_TEST_G = 11
STREAM_GENERATE_TRAIN_N = 12
STREAM_GENERATE_TEST_N = 13
STREAM_ADAPT = 14


class CliError(Exception):
    """User-facing failure; rendered as one line on stderr."""


def _timestamp():
    return datetime.datetime.now().strftime("%Y-%m-%d_%H-%M-%S")


def _write_args(run_dir, args):
    snapshot = {k: v for k, v in vars(args).items() if k != "func"}
    with open(os.path.join(run_dir, "args.json"), "w") as fh:
        json.dump(snapshot, fh, indent=1, sort_keys=True)


# ---------------------------------------------------------------------------
# generate


def cmd_generate(args):
    spec = generator.load_param_file(args.params)
    os.makedirs(args.out, exist_ok=True)
    n_train_g = (spec["graph_count"] + 1) // 2
    n_test_g = spec["graph_count"] - n_train_g
    n_train_n = (spec["network_count"] + 1) // 2
    n_test_n = spec["network_count"] - n_train_n
    # Single-network datasets share the one network between both splits.
    if spec["network_count"] == 1:
        n_train_n = n_test_n = 1

    train_g = generator.generate_graphs(spec["graph_grid"], n_train_g,
                                        args.seed, STREAM_GENERATE_TRAIN_G)
    test_g = generator.generate_graphs(spec["graph_grid"], n_test_g,
                                       args.seed, STREAM_GENERATE_TEST_G)
    train_n = generator.generate_networks(spec["network_grid"], n_train_n,
                                          args.seed, STREAM_GENERATE_TRAIN_N)
    if spec["network_count"] == 1:
        test_n = train_n
    else:
        test_n = generator.generate_networks(spec["network_grid"], n_test_n,
                                             args.seed, STREAM_GENERATE_TEST_N)

    generator.save_graphs(train_g, os.path.join(args.out, "train_graphs.json"))
    generator.save_graphs(test_g, os.path.join(args.out, "test_graphs.json"))
    generator.save_networks(train_n, os.path.join(args.out, "train_networks.json"))
    generator.save_networks(test_n, os.path.join(args.out, "test_networks.json"))
    print(f"wrote dataset to {args.out}: {len(train_g)}/{len(test_g)} graphs, "
          f"{len(train_n)}/{len(test_n)} networks")
    return 0


# ---------------------------------------------------------------------------
# train


def cmd_train(args):
    dataset = Dataset.load(args.dataset)
    config = TrainConfig(
        episodes=args.episodes, lr=args.lr, gamma=args.gamma,
        T_factor=args.t_factor, eval_every=args.eval_every, seed=args.seed,
        noise=args.noise, objective=args.objective, variant=args.variant,
        k=args.k, plateau_stop=args.plateau_stop, greedy_eval=args.greedy,
        eval_cases=args.eval_cases)

    params = adam = None
    start_episode = 0
    if args.resume:
        run_dir = args.resume
        params, start_episode = training.load_checkpoint(run_dir)
        adam = training.AdamState.load(
            os.path.join(run_dir, f"optimizer_{start_episode}"))
    else:
        name = args.run_name or f"{_timestamp()}_{args.variant}"
        run_dir = os.path.join(args.logdir, name)
        os.makedirs(run_dir, exist_ok=True)
        _write_args(run_dir, args)
        with open(os.path.join(run_dir, "dataset_path.txt"), "w") as fh:
            fh.write(args.dataset + "\n")

    def progress(row):
        if row["episode"] % 10 == 0 or row["eval_slr"] != "":
            print(f"episode {row['episode']}: return={row['return']:.3f} "
                  f"final={row['final_slr']:.4f} eval={row['eval_slr']}")

    training.train(config, dataset, run_dir=run_dir, params=params, adam=adam,
                   start_episode=start_episode,
                   log_hook=progress if args.verbose else None)
    print(f"run folder: {run_dir}")
    return 0


# ---------------------------------------------------------------------------
# test / baseline


def _policy_params(args, run_dir):
    if args.checkpoint:
        return training.load_checkpoint(run_dir, args.checkpoint)[0]
    return training.load_checkpoint(run_dir)[0]


def _run_suite(runners, graphs, networks, args, out_dir, stage=""):
    objective = Objective(args.objective, args.noise)
    results, curves, timings = evaluation.evaluate_policies(
        runners, graphs, networks, args.num_cases, args.seed, objective,
        T_factor=args.t_factor, stage=stage)
    os.makedirs(out_dir, exist_ok=True)
    evaluation.write_csv(results, evaluation.RESULT_FIELDS,
                         os.path.join(out_dir, "results.csv"))
    evaluation.write_csv(curves, evaluation.CURVE_FIELDS,
                         os.path.join(out_dir, "search_curve.csv"))
    evaluation.write_csv(timings, evaluation.TIMING_FIELDS,
                         os.path.join(out_dir, "timings.csv"))
    return results


def cmd_test(args):
    run_dir = args.run_folder
    if not os.path.isdir(run_dir):
        raise CliError(f"run folder not found: {run_dir}")
    params = _policy_params(args, run_dir)
    dataset_dir = args.dataset
    if dataset_dir is None:
        marker = os.path.join(run_dir, "dataset_path.txt")
        if not os.path.exists(marker):
            raise CliError("no --dataset given and the run folder does not record one")
        dataset_dir = open(marker).read().strip()
    dataset = Dataset.load(dataset_dir)

    names = [p.strip() for p in args.policies.split(",") if p.strip()]
    runners = [evaluation.make_runner(n, params=params, greedy=args.greedy)
               for n in names]
    out_dir = os.path.join(run_dir, f"test_{args.tag or _timestamp()}")
    results = _run_suite(runners, dataset.test_graphs, dataset.test_networks,
                         args, out_dir)
    _print_policy_means(results)
    print(f"results in {out_dir}")
    return 0


def cmd_baseline(args):
    dataset = Dataset.load(args.dataset)
    runner = evaluation.make_runner(args.name)
    out_dir = args.out or os.path.join(args.logdir, f"baseline_{args.name}")
    results = _run_suite([runner], dataset.test_graphs, dataset.test_networks,
                         args, out_dir)
    _print_policy_means(results)
    print(f"results in {out_dir}")
    return 0


def _print_policy_means(results):
    for row in report.summarize_by_policy(results):
        print(f"{row['policy']:>16}: mean={row['mean']:.4f} std={row['std']:.4f} "
              f"({row['cases']} cases)")


# ---------------------------------------------------------------------------
# adapt


def cmd_adapt(args):
    run_dir = args.run_folder
    if not os.path.isdir(run_dir):
        raise CliError(f"run folder not found: {run_dir}")
    params = _policy_params(args, run_dir)
    with open(args.churn_config) as fh:
        churn = json.load(fh)
    stages = int(churn.get("stages", 4))
    n_remove = int(churn.get("n_remove", 4))
    factor = float(churn.get("capacity_factor", 0.5))
    n_graphs = int(churn.get("n_graphs", 20))
    net_raw = dict(churn["network"])
    net_raw["m"] = int(net_raw["m"])
    net_raw["hw_tags"] = tuple((int(t), float(p))
                               for t, p in net_raw.get("hw_tags", []))
    net_params = generator.NetworkGenParams(**net_raw)

    dataset_dir = args.dataset
    if dataset_dir is None:
        marker = os.path.join(run_dir, "dataset_path.txt")
        if not os.path.exists(marker):
            raise CliError("no --dataset given and the run folder does not record one")
        dataset_dir = open(marker).read().strip()
    dataset = Dataset.load(dataset_dir)
    graphs = dataset.test_graphs[:n_graphs]
    required = {t.hw_req for g in graphs for t in g.tasks}

    names = [p.strip() for p in args.policies.split(",") if p.strip()]
    runners = [evaluation.make_runner(n, params=params, greedy=args.greedy)
               for n in names]

    rng = substream(args.seed, STREAM_ADAPT)
    network = generator.generate_network(net_params, rng)
    out_dir = os.path.join(run_dir, f"adapt_{args.tag or _timestamp()}")
    os.makedirs(out_dir, exist_ok=True)

    all_results, all_curves, all_timings = [], [], []
    for stage in range(stages + 1):
        objective = Objective(args.objective, args.noise)
        results, curves, timings = evaluation.evaluate_policies(
            runners, graphs, [network], n_graphs, args.seed, objective,
            T_factor=args.t_factor, stage=str(stage))
        all_results += results
        all_curves += curves
        all_timings += timings
        if stage < stages:
            network = _churn_with_retry(network, n_remove, factor, rng,
                                        net_params, required)

    evaluation.write_csv(all_results, evaluation.RESULT_FIELDS,
                         os.path.join(out_dir, "results.csv"))
    evaluation.write_csv(all_curves, evaluation.CURVE_FIELDS,
                         os.path.join(out_dir, "search_curve.csv"))
    evaluation.write_csv(all_timings, evaluation.TIMING_FIELDS,
                         os.path.join(out_dir, "timings.csv"))
    for row in report.summarize_by_policy(all_results):
        print(f"stage {row['stage']:>2} {row['policy']:>16}: mean={row['mean']:.4f}")
    print(f"results in {out_dir}")
    return 0


def _churn_with_retry(network, n_remove, factor, rng, net_params, required,
                      attempts=50):
    for _ in range(attempts):
        try:
            return generator.churn_network(network, n_remove, factor, rng,
                                           net_params, required_tags=required)
        except ChurnFeasibilityError:
            continue
    raise CliError("churn could not keep every required hardware tag supported")


# ---------------------------------------------------------------------------
# report


def cmd_report(args):
    curves = args.curves
    if curves is None and len(args.results) == 1:
        guess = os.path.join(os.path.dirname(args.results[0]), "search_curve.csv")
        curves = guess if os.path.exists(guess) else None
    summary = report.generate_report(args.results, args.out, curves_path=curves)
    for row in summary:
        stage = f" stage {row['stage']}" if row["stage"] else ""
        print(f"{row['policy']:>16}{stage}: mean={row['mean']:.4f} std={row['std']:.4f}")
    print(f"report in {args.out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_common(p, *, dataset=False, budget=True):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.0,
                   help="latency noise sigma in [0,1)")
    p.add_argument("--objective", choices=["makespan", "total_cost"],
                   default="makespan")
    if dataset:
        p.add_argument("--dataset", default=None, help="dataset directory")
    if budget:
        p.add_argument("--t-factor", type=int, default=2,
                       help="search budget = t_factor * |tasks|")


def build_parser():
    top = argparse.ArgumentParser(prog="giph",
                                  description="placement-policy learning toolkit")
    sub = top.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a seeded dataset from a parameter file")
    p.add_argument("--params", required=True, help="JSON parameter file")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a placement policy")
    _add_common(p)
    p.add_argument("--dataset", required=True, help="dataset directory")
    p.add_argument("--logdir", default="runs")
    p.add_argument("--episodes", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--gamma", type=float, default=0.97)
    p.add_argument("--eval-every", type=int, default=25)
    p.add_argument("--eval-cases", type=int, default=20)
    p.add_argument("--variant", choices=["giph", "giph-task-eft"], default="giph")
    p.add_argument("--k", type=int, default=None,
                   help="bound message passing to k rounds")
    p.add_argument("--greedy", action="store_true",
                   help="argmax instead of sampling during held-out evals")
    p.add_argument("--plateau-stop", action="store_true",
                   help="stop episodes early when the best objective stalls")
    p.add_argument("--run-name", default=None,
                   help="run folder name (default: timestamp)")
    p.add_argument("--resume", default=None, metavar="RUN_FOLDER",
                   help="continue a previous run from its last checkpoint")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("test", help="evaluate a trained run against baselines")
    _add_common(p, dataset=True)
    p.add_argument("--run-folder", required=True)
    p.add_argument("--checkpoint", type=int, default=None,
                   help="checkpoint episode (default: latest)")
    p.add_argument("--num-cases", type=int, default=20)
    p.add_argument("--policies", default="giph,random,random-task-eft,heft")
    p.add_argument("--greedy", action="store_true")
    p.add_argument("--tag", default=None, help="test subfolder name")
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("baseline", help="run a single non-learned policy")
    _add_common(p, dataset=True)
    p.add_argument("--name", required=True,
                   choices=["random", "random-task-eft", "heft", "brute-force"])
    p.add_argument("--num-cases", type=int, default=20)
    p.add_argument("--logdir", default="runs")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("adapt", help="churn the device network and re-evaluate")
    _add_common(p, dataset=True)
    p.add_argument("--run-folder", required=True)
    p.add_argument("--checkpoint", type=int, default=None)
    p.add_argument("--churn-config", required=True,
                   help="JSON: stages, n_remove, capacity_factor, n_graphs, network")
    p.add_argument("--policies", default="giph,random")
    p.add_argument("--greedy", action="store_true")
    p.add_argument("--tag", default=None)
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("report", help="aggregate result CSVs into tables and figures")
    p.add_argument("--results", nargs="+", required=True)
    p.add_argument("--curves", default=None, help="search_curve.csv to include")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return top


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: cli: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
