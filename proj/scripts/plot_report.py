#!/usr/bin/env python3
"""Render loss/accuracy/selection curves from a report directory and 2-D
projections of exported embeddings. The core emits data only; this script is
the optional rendering step.

Usage:
  plot_report.py REPORT_DIR [--embeddings RUN_DIR/embeddings.csv] [--out DIR]
"""

import argparse
import csv
import os
import sys
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def plot_curves(report_dir, out_dir):
    rows = read_csv(os.path.join(report_dir, "loss_curves.csv"))
    by_run = defaultdict(list)
    for r in rows:
        by_run[r["run"]].append(r)

    fig, axes = plt.subplots(1, 3, figsize=(15, 4))
    for run, recs in by_run.items():
        iters = [int(r["iter"]) for r in recs]
        label = os.path.basename(run.rstrip("/"))
        axes[0].plot(iters, [float(r["total"]) for r in recs], label=label)
        axes[1].plot(iters, [float(r["accuracy"]) for r in recs], label=label)
        axes[2].plot(iters, [float(r["l_mmd"]) for r in recs], label=label)
    for ax, title in zip(axes, ["total loss", "target accuracy", "mmd loss"]):
        ax.set_xlabel("iteration")
        ax.set_title(title)
        ax.legend(fontsize=6)
    fig.tight_layout()
    fig.savefig(os.path.join(out_dir, "curves.png"), dpi=120)
    print(f"wrote {out_dir}/curves.png")

    sel_path = os.path.join(report_dir, "selection_curves.csv")
    if os.path.exists(sel_path):
        rows = read_csv(sel_path)
        by_run = defaultdict(list)
        for r in rows:
            by_run[r["run"]].append(r)
        fig, ax = plt.subplots(figsize=(6, 4))
        for run, recs in by_run.items():
            iters = [int(r["iter"]) for r in recs]
            label = os.path.basename(run.rstrip("/"))
            ax.plot(iters, [int(r["m_pse"]) for r in recs], label=f"{label} |M_pse|")
        ax.set_xlabel("iteration")
        ax.set_title("selected pseudo-label set size")
        ax.legend(fontsize=6)
        fig.tight_layout()
        fig.savefig(os.path.join(out_dir, "selection.png"), dpi=120)
        print(f"wrote {out_dir}/selection.png")


def plot_embeddings(path, out_dir):
    rows = read_csv(path)
    feats = np.array(
        [[float(v) for k, v in r.items() if k.startswith("f")] for r in rows]
    )
    labels = np.array([int(r["label"]) for r in rows])
    split = np.array([r["split"] for r in rows])

    if feats.shape[1] > 2:  # PCA to 2-D
        centered = feats - feats.mean(axis=0)
        _, _, vt = np.linalg.svd(centered, full_matrices=False)
        proj = centered @ vt[:2].T
    else:
        proj = feats

    fig, ax = plt.subplots(figsize=(5, 5))
    for y in sorted(set(labels)):
        m = (labels == y) & (split == "target_unlabeled")
        ax.scatter(proj[m, 0], proj[m, 1], s=6, alpha=0.6, label=f"class {y}")
        m = (labels == y) & (split == "target_labeled")
        ax.scatter(proj[m, 0], proj[m, 1], s=60, marker="*", edgecolors="k")
    ax.set_title("target features (stars: labeled shots)")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(os.path.join(out_dir, "embeddings.png"), dpi=120)
    print(f"wrote {out_dir}/embeddings.png")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("report_dir")
    ap.add_argument("--embeddings", help="embeddings.csv from a run directory")
    ap.add_argument("--out", default=None, help="output directory (default: report dir)")
    args = ap.parse_args()

    out_dir = args.out or args.report_dir
    os.makedirs(out_dir, exist_ok=True)
    if os.path.exists(os.path.join(args.report_dir, "loss_curves.csv")):
        plot_curves(args.report_dir, out_dir)
    else:
        print(f"no loss_curves.csv in {args.report_dir}", file=sys.stderr)
    if args.embeddings:
        plot_embeddings(args.embeddings, out_dir)


if __name__ == "__main__":
    main()
