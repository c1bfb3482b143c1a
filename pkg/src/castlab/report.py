"""File-based reporting: delimited tables plus rendered figures.

Every report writes a machine-readable artifact (CSV or JSON) and a
matplotlib PNG next to it, so runs can be inspected without re-running.
"""

from __future__ import annotations

import csv
import json
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

__all__ = ["write_loss_curve", "write_ablation_table", "write_metrics"]


def write_loss_curve(rows, out_dir, stem="training"):
    """rows: dicts with at least epoch, lr, train_loss; extra keys pass through.

    Writes ``<stem>.csv`` and ``<stem>_loss.png``; returns both paths.
    """
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, f"{stem}.csv")
    keys = list(rows[0]) if rows else ["epoch", "lr", "train_loss"]
    with open(csv_path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=keys)
        writer.writeheader()
        writer.writerows(rows)

    png_path = os.path.join(out_dir, f"{stem}_loss.png")
    fig, ax = plt.subplots(figsize=(6, 4))
    epochs = [r["epoch"] for r in rows]
    ax.plot(epochs, [r["train_loss"] for r in rows], marker="o", label="train loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("cross-entropy")
    hm_points = [(r["epoch"], r["val_hm"]) for r in rows
                 if isinstance(r.get("val_hm"), (int, float))]
    if hm_points:
        twin = ax.twinx()
        twin.plot([p[0] for p in hm_points], [p[1] for p in hm_points],
                  color="tab:orange", marker="s", label="val harmonic mean")
        twin.set_ylabel("harmonic mean (%)")
        twin.set_ylim(0, 100)
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return csv_path, png_path


def write_ablation_table(results, out_dir, stem="ablation"):
    """results: list of dicts with name, harmonic_mean, and per-task accuracies.

    Writes ``<stem>.json``, a plain-text table, and a bar chart PNG.
    """
    os.makedirs(out_dir, exist_ok=True)
    json_path = os.path.join(out_dir, f"{stem}.json")
    with open(json_path, "w") as f:
        json.dump(results, f, indent=2)

    txt_path = os.path.join(out_dir, f"{stem}.txt")
    width = max([len(r["name"]) for r in results] + [8])
    lines = [f"{'variant':<{width}}  {'appearance':>10}  {'motion':>10}  {'hm':>8}"]
    for r in results:
        lines.append(f"{r['name']:<{width}}  {r['appearance_top1']:>10.4f}  "
                     f"{r['motion_top1']:>10.4f}  {r['harmonic_mean']:>8.4f}")
    with open(txt_path, "w") as f:
        f.write("\n".join(lines) + "\n")

    png_path = os.path.join(out_dir, f"{stem}.png")
    fig, ax = plt.subplots(figsize=(max(6, 1.2 * len(results)), 4))
    names = [r["name"] for r in results]
    ax.bar(names, [r["harmonic_mean"] for r in results], color="tab:blue")
    ax.set_ylabel("harmonic mean of task accuracies (%)")
    ax.set_ylim(0, 100)
    ax.tick_params(axis="x", rotation=30)
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return json_path, txt_path, png_path


def write_metrics(report, path, **extra):
    with open(path, "w") as f:
        f.write(report.to_json(**extra))
    return path
