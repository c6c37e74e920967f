"""Aggregation and reporting: final-window statistics, significance tests,
results tables, and learning-curve / scaling figures.

Reports are a pure function of the run directories they read.  Figures are
rendered with matplotlib to both SVG and PNG next to the CSV outputs; curves
carry a 68% confidence band (plus/minus one standard error across seeds).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from scipy import stats as sps

__all__ = [
    "read_metrics",
    "final_window_mean",
    "ttest",
    "RunRecord",
    "load_runs",
    "write_report",
    "FINAL_WINDOW_FRAC",
]

FINAL_WINDOW_FRAC = 0.01  # statistics over the last 1% of updates


def read_metrics(run_dir: str | Path) -> dict[str, np.ndarray]:
    path = Path(run_dir) / "metrics.csv"
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    cols = {name: np.asarray([float(r[i]) for r in body]) for i, name in enumerate(header)}
    return cols


def final_window_mean(values: np.ndarray, frac: float = FINAL_WINDOW_FRAC) -> float:
    """Mean over the trailing `frac` of entries (at least one)."""
    n = max(1, int(round(len(values) * frac)))
    return float(np.mean(values[-n:]))


def ttest(a, b) -> tuple[float, float, float]:
    """Two-sample two-tailed Welch t-test -> (t, dof, p)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    va, vb = a.var(ddof=1), b.var(ddof=1)
    if va == 0.0 and vb == 0.0:
        same = float(a.mean()) == float(b.mean())
        return 0.0 if same else math.inf, float(len(a) + len(b) - 2), 1.0 if same else 0.0
    res = sps.ttest_ind(a, b, equal_var=False)
    na, nb = len(a), len(b)
    dof = (va / na + vb / nb) ** 2 / (
        (va / na) ** 2 / (na - 1) + (vb / nb) ** 2 / (nb - 1)
    )
    return float(res.statistic), float(dof), float(res.pvalue)


@dataclass
class RunRecord:
    run_dir: Path
    method: str
    seed: int
    metrics: dict[str, np.ndarray]
    final_return: float
    param_count: int | None = None
    meta: dict | None = None


def _method_label(config: dict) -> str:
    arch = config.get("architecture", "?")
    if arch == "hypernetwork":
        return f"hypernetwork+{config.get('init', {}).get('scheme', '?')}"
    if arch == "film":
        return f"film+{config.get('init', {}).get('scheme', '?')}"
    return arch


def load_runs(run_dirs, window_frac: float = FINAL_WINDOW_FRAC) -> list[RunRecord]:
    run_dirs = [Path(rd) for rd in run_dirs]
    if not run_dirs:
        raise ValueError("no run directories to report on")
    loaded = [(rd, json.loads((rd / "config.json").read_text()), read_metrics(rd)) for rd in run_dirs]
    schemas = {tuple(metrics.keys()) for _, _, metrics in loaded}
    if len(schemas) != 1:
        raise ValueError(f"mismatched metric schemas across runs: {schemas}")
    records = []
    for rd, config, metrics in loaded:
        meta = {}
        done = rd / "done.json"
        if done.exists():
            meta = json.loads(done.read_text())
        records.append(
            RunRecord(
                run_dir=rd,
                method=_method_label(config),
                seed=int(config["seeds"][0]),
                metrics=metrics,
                final_return=final_window_mean(metrics["mean_meta_return"], window_frac),
                param_count=meta.get("param_count"),
                meta=meta,
            )
        )
    return records


def _group(records: list[RunRecord]) -> dict[str, list[RunRecord]]:
    groups: dict[str, list[RunRecord]] = {}
    for r in records:
        groups.setdefault(r.method, []).append(r)
    return groups


def write_report(run_dirs, out_dir: str | Path, alpha: float = 0.05) -> dict:
    """Results table with best-equivalence marking, pairwise t-tests, and
    learning-curve figures.  Returns the table as a dict for callers."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = load_runs(run_dirs)
    groups = _group(records)

    finals = {m: np.asarray([r.final_return for r in rs]) for m, rs in groups.items()}
    means = {m: float(v.mean()) for m, v in finals.items()}
    stderrs = {
        m: float(v.std(ddof=1) / np.sqrt(len(v))) if len(v) > 1 else 0.0 for m, v in finals.items()
    }
    best = max(means, key=means.get)

    table_rows = []
    for method in sorted(groups):
        if method == best:
            p_vs_best = 1.0
        else:
            _, _, p_vs_best = ttest(finals[method], finals[best])
        table_rows.append(
            {
                "method": method,
                "n_seeds": len(finals[method]),
                "mean_final_return": means[method],
                "stderr": stderrs[method],
                "p_vs_best": p_vs_best,
                "best_equivalent": method == best or p_vs_best >= alpha,
                "param_count": groups[method][0].param_count,
            }
        )

    with open(out_dir / "results_table.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(table_rows[0].keys()))
        writer.writeheader()
        writer.writerows(table_rows)

    pair_rows = []
    methods = sorted(groups)
    for i, a in enumerate(methods):
        for b in methods[i + 1 :]:
            t, dof, p = ttest(finals[a], finals[b])
            pair_rows.append({"method_a": a, "method_b": b, "t": t, "dof": dof, "p": p})
    with open(out_dir / "pairwise_ttests.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["method_a", "method_b", "t", "dof", "p"])
        writer.writeheader()
        writer.writerows(pair_rows)

    _plot_curves(groups, out_dir)
    _write_summary(table_rows, best, out_dir)
    return {"rows": table_rows, "best": best, "pairwise": pair_rows}


def _write_summary(table_rows, best: str, out_dir: Path):
    lines = [f"{'method':34s} {'final return':>16s} {'p vs best':>10s}  best-equiv"]
    for row in table_rows:
        mark = "*" if row["best_equivalent"] else " "
        lines.append(
            f"{row['method']:34s} {row['mean_final_return']:10.3f} +/- {row['stderr']:.3f}"
            f" {row['p_vs_best']:>10.4f}  {mark}"
        )
    lines.append(f"best: {best} (* = insignificant difference from best)")
    (out_dir / "summary.txt").write_text("\n".join(lines) + "\n")


def _plot_curves(groups: dict[str, list[RunRecord]], out_dir: Path):
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for method in sorted(groups):
        runs = groups[method]
        n = min(len(r.metrics["mean_meta_return"]) for r in runs)
        x = runs[0].metrics["env_steps"][:n]
        stack = np.stack([r.metrics["mean_meta_return"][:n] for r in runs])
        mean = stack.mean(axis=0)
        if len(runs) > 1:
            half = stack.std(axis=0, ddof=1) / np.sqrt(len(runs))
        else:
            half = np.zeros_like(mean)
        (line,) = ax.plot(x, mean, label=f"{method} (n={len(runs)})", linewidth=1.4)
        ax.fill_between(x, mean - half, mean + half, alpha=0.25, color=line.get_color())
    ax.set_xlabel("environment steps")
    ax.set_ylabel("meta-episode return")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_dir / "learning_curves.svg")
    fig.savefig(out_dir / "learning_curves.png", dpi=150)
    plt.close(fig)


def write_scaling_figure(cells: list[dict], out_dir: Path):
    """Final return vs total parameter count, one line per architecture.

    `cells` rows need: architecture, size, param_count, mean, stderr.
    """
    out_dir = Path(out_dir)
    by_arch: dict[str, list[dict]] = {}
    for c in cells:
        by_arch.setdefault(c["architecture"], []).append(c)
    fig, ax = plt.subplots(figsize=(6.5, 4.2))
    for arch in sorted(by_arch):
        rows = sorted(by_arch[arch], key=lambda c: c["param_count"])
        x = [c["param_count"] for c in rows]
        y = [c["mean"] for c in rows]
        err = [c["stderr"] for c in rows]
        ax.errorbar(x, y, yerr=err, marker="o", capsize=3, label=arch)
        for c in rows:
            ax.annotate(c["size"], (c["param_count"], c["mean"]), fontsize=7,
                        textcoords="offset points", xytext=(4, 4))
    ax.set_xscale("log")
    ax.set_xlabel("total model parameters")
    ax.set_ylabel("final meta-episode return")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_dir / "scaling.svg")
    fig.savefig(out_dir / "scaling.png", dpi=150)
    plt.close(fig)
