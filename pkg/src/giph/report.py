"""Result aggregation: summary tables, plot-ready CSV, and rendered figures.

Figures land next to the delimited output; the CSV files carry the same
numbers so any external plotting tool can reproduce them.
"""

from __future__ import annotations

import json
import os
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluation import read_csv, write_csv


def _to_float(value):
    return float(value) if value not in ("", None) else None


def _metric(row):
    v = _to_float(row.get("best_slr"))
    if v is None:
        v = _to_float(row.get("best_objective"))
    return v


def summarize_by_policy(rows):
    """Mean/std of the quality metric per policy (and per stage if present)."""
    groups = defaultdict(list)
    for r in rows:
        groups[(r.get("stage", ""), r["policy"])].append(_metric(r))
    out = []
    for (stage, policy), vals in sorted(groups.items()):
        arr = np.array(vals, dtype=float)
        out.append({"stage": stage, "policy": policy, "cases": len(arr),
                    "mean": float(arr.mean()), "std": float(arr.std())})
    return out


def summarize_by_depth(rows):
    """Quality per (policy, graph depth) bucket."""
    groups = defaultdict(list)
    for r in rows:
        groups[(int(r["depth"]), r["policy"])].append(_metric(r))
    out = []
    for (depth, policy), vals in sorted(groups.items()):
        arr = np.array(vals, dtype=float)
        out.append({"depth": depth, "policy": policy, "cases": len(arr),
                    "mean": float(arr.mean()), "std": float(arr.std())})
    return out


def summarize_curves(curve_rows):
    """Mean best-so-far metric per (policy, step), averaged over cases."""
    groups = defaultdict(list)
    for r in curve_rows:
        v = _to_float(r.get("best_slr")) or _to_float(r.get("best_objective"))
        groups[(r["policy"], int(r["step"]))].append(v)
    out = []
    for (policy, step_idx), vals in sorted(groups.items()):
        out.append({"policy": policy, "step": step_idx,
                    "mean": float(np.mean(vals)), "cases": len(vals)})
    return out


def format_table(rows, columns):
    if not rows:
        return "(no rows)\n"
    widths = {c: max(len(c), *(len(_fmt(r[c])) for r in rows)) for c in columns}
    lines = ["  ".join(c.ljust(widths[c]) for c in columns)]
    lines.append("  ".join("-" * widths[c] for c in columns))
    for r in rows:
        lines.append("  ".join(_fmt(r[c]).ljust(widths[c]) for c in columns))
    return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def plot_curves(curve_summary, path, ylabel="best SLR"):
    fig, ax = plt.subplots(figsize=(6, 4))
    policies = sorted({r["policy"] for r in curve_summary})
    for policy in policies:
        pts = [(r["step"], r["mean"]) for r in curve_summary if r["policy"] == policy]
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts], label=policy)
    ax.set_xlabel("search step")
    ax.set_ylabel(ylabel)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_by_depth(depth_summary, path, ylabel="mean SLR"):
    fig, ax = plt.subplots(figsize=(6, 4))
    policies = sorted({r["policy"] for r in depth_summary})
    depths = sorted({r["depth"] for r in depth_summary})
    width = 0.8 / max(len(policies), 1)
    for i, policy in enumerate(policies):
        means = {r["depth"]: r["mean"] for r in depth_summary if r["policy"] == policy}
        xs = np.arange(len(depths)) + i * width
        ax.bar(xs, [means.get(d, np.nan) for d in depths], width=width, label=policy)
    ax.set_xticks(np.arange(len(depths)) + 0.4 - width / 2)
    ax.set_xticklabels([str(d) for d in depths])
    ax.set_xlabel("task graph depth")
    ax.set_ylabel(ylabel)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_by_stage(policy_summary, path, ylabel="mean SLR"):
    fig, ax = plt.subplots(figsize=(6, 4))
    policies = sorted({r["policy"] for r in policy_summary})
    for policy in policies:
        pts = [(int(r["stage"]), r["mean"]) for r in policy_summary
               if r["policy"] == policy and r["stage"] != ""]
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=policy)
    ax.set_xlabel("churn stage")
    ax.set_ylabel(ylabel)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def generate_report(results_paths, out_dir, curves_path=None):
    """Aggregate result CSVs into tables, plot-data CSVs, JSON, and figures."""
    rows = []
    for p in results_paths:
        rows.extend(read_csv(p))
    if not rows:
        raise ValueError("no result rows to report on")
    os.makedirs(out_dir, exist_ok=True)

    by_policy = summarize_by_policy(rows)
    by_depth = summarize_by_depth(rows)
    write_csv(by_policy, ["stage", "policy", "cases", "mean", "std"],
              os.path.join(out_dir, "summary_by_policy.csv"))
    write_csv(by_depth, ["depth", "policy", "cases", "mean", "std"],
              os.path.join(out_dir, "summary_by_depth.csv"))

    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump({"by_policy": by_policy, "by_depth": by_depth}, fh, indent=1)
    with open(os.path.join(out_dir, "summary.txt"), "w") as fh:
        fh.write("Quality by policy\n")
        fh.write(format_table(by_policy, ["stage", "policy", "cases", "mean", "std"]))
        fh.write("\nQuality by task-graph depth\n")
        fh.write(format_table(by_depth, ["depth", "policy", "cases", "mean", "std"]))

    plot_by_depth(by_depth, os.path.join(out_dir, "quality_by_depth.png"))
    stages = {r["stage"] for r in by_policy}
    if stages - {""}:
        plot_by_stage(by_policy, os.path.join(out_dir, "quality_by_stage.png"))

    if curves_path and os.path.exists(curves_path):
        curve_rows = read_csv(curves_path)
        curve_summary = summarize_curves(curve_rows)
        write_csv(curve_summary, ["policy", "step", "mean", "cases"],
                  os.path.join(out_dir, "search_efficiency.csv"))
        plot_curves(curve_summary, os.path.join(out_dir, "search_efficiency.png"))
    return by_policy
