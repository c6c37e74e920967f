"""Command-line entry point.

Subcommands: train, analyze-init, equivalence, sweep, report.

Exit codes: 0 success, 1 config error, 2 runtime failure, 3 refusal
(existing output without --force, or a contract violation such as running
the equivalence oracle under Adam).  The default output root is the
HYPERPOLICY_RUNS environment variable, falling back to ./runs.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config, save_config
from .layout import SIZE_TABLE

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_REFUSAL = 3


class Refusal(RuntimeError):
    pass


def _out_root(cfg: RunConfig, override: str | None) -> Path:
    if override:
        return Path(override)
    if cfg.out_dir:
        return Path(cfg.out_dir)
    return Path(os.environ.get("HYPERPOLICY_RUNS", "runs"))


def _prepare_dir(path: Path, force: bool):
    if path.exists() and any(path.iterdir()):
        if not force:
            raise Refusal(f"output directory {path} exists; pass --force to overwrite")
        shutil.rmtree(path)
    path.mkdir(parents=True, exist_ok=True)


def _seeds(cfg: RunConfig, override: int | None) -> list[int]:
    return [override] if override is not None else list(cfg.seeds)


# ---------------------------------------------------------------------------
# train


def cmd_train(args) -> int:
    from .trainer import train

    cfg = load_config(args.config)
    root = _out_root(cfg, args.out) / cfg.name
    _prepare_dir(root, args.force)
    save_config(cfg, root / "config.yaml")
    for seed in _seeds(cfg, args.seed):
        run_dir = root / f"seed_{seed}"
        print(f"[train] {cfg.name} seed={seed} -> {run_dir}")
        train(cfg, seed, run_dir)
    print(f"[train] done: {root}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# analyze-init


def _probe_scheme_config(cfg: RunConfig, name: str):
    from .models import scheme_from_config
    import math

    if name in ("weight_hyperinit", "bias_hyperinit"):
        # probe with a relu-matched base: gain sqrt(2) on hidden layers
        probe_cfg = _clone(cfg)
        probe_cfg.init.base.hidden_gain = math.sqrt(2.0)
        probe_cfg.encoder = "recurrent"  # unit-variance embedding assumption
        return scheme_from_config(probe_cfg, scheme_name=name)
    probe_cfg = _clone(cfg)
    probe_cfg.encoder = "recurrent"
    if name == "normc":
        probe_cfg.init.gain = 1.0
    return scheme_from_config(probe_cfg, scheme_name=name)


def cmd_analyze_init(args) -> int:
    from .analysis import init_stats, variance_probe
    from .layout import BaseNetSpec
    from .rng import RngPool

    cfg = load_config(args.config)
    out = _out_root(cfg, args.out) / cfg.name / "init_analysis"
    _prepare_dir(out, args.force)
    a = cfg.analyze
    spec = BaseNetSpec.from_size(cfg.base_size, input_dim=a.probe_input_dim, action_dim=5)
    lo, hi = a.pass_band
    flo, fhi = a.fail_band

    rows = []
    verdicts = []
    for name in a.schemes:
        scheme = _probe_scheme_config(cfg, name)
        stable_ok = 0
        for seed_i in range(a.n_seeds):
            rng = RngPool(seed_i).fresh(f"probe/{name}")
            rep = variance_probe(scheme, spec, a.probe_e_dim, a.n_samples, rng)
            in_pass = rep.ratios_within(lo, hi)
            outside_fail = not (flo <= rep.final_ms <= fhi)
            stable_ok += in_pass
            for li, (ms, ratio) in enumerate(zip(rep.layer_ms, rep.ratios)):
                rows.append(
                    {
                        "scheme": name,
                        "seed": seed_i,
                        "layer": li,
                        "mean_square": ms,
                        "ratio": ratio,
                        "final_ms": rep.final_ms,
                        "ratios_in_pass_band": in_pass,
                        "final_outside_fail_band": outside_fail,
                    }
                )
        verdicts.append(
            {
                "scheme": name,
                "seeds_in_pass_band": stable_ok,
                "n_seeds": a.n_seeds,
                "verdict": "stable" if stable_ok == a.n_seeds else (
                    "unstable" if stable_ok == 0 else "mixed"
                ),
            }
        )

    with open(out / "variance_report.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    with open(out / "verdicts.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(verdicts[0].keys()))
        writer.writeheader()
        writer.writerows(verdicts)

    stats_rows = []
    stats_rng = RngPool(0)
    for name in ("kaiming", "normc", "orthogonal"):
        stats_rows.append(
            init_stats(name, (1000, 4), a.stats_draws, stats_rng.fresh(f"stats/{name}"),
                       gain=1.0, distribution="normal")
        )
    with open(out / "init_stats.csv", "w", newline="") as fh:
        keys = sorted({k for r in stats_rows for k in r})
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        writer.writerows(stats_rows)

    lines = [f"{v['scheme']:20s} {v['seeds_in_pass_band']}/{v['n_seeds']} seeds in pass band -> {v['verdict']}" for v in verdicts]
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    print(f"[analyze-init] wrote {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# equivalence


def cmd_equivalence(args) -> int:
    from .analysis import equivalence_oracle
    from .layout import BaseNetSpec

    cfg = load_config(args.config)
    eq = cfg.equivalence
    if eq.optimizer != "sgd":
        raise Refusal(
            f"equivalence oracle refuses optimizer {eq.optimizer!r}: per-column gradient "
            "isolation only holds under SGD (adam is available as a fault injection)"
        )
    out = _out_root(cfg, args.out) / cfg.name / "equivalence"
    _prepare_dir(out, args.force)
    spec = BaseNetSpec(input_dim=eq.input_dim, hidden=tuple(eq.hidden), action_dim=eq.action_dim)

    variants = ["none", *eq.faults]
    summary = []
    for fault in variants:
        rep = equivalence_oracle(
            spec,
            eq.n_tasks,
            eq.steps,
            seed=cfg.seeds[0],
            learning_rate=eq.learning_rate,
            batch=eq.batch,
            fault=fault,
        )
        with open(out / f"diffs_{fault}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "max_abs_diff"])
            for i, d in enumerate(rep.max_diffs):
                writer.writerow([i + 1, repr(d)])
        summary.append({"fault": fault, "optimizer": rep.optimizer, "final": rep.final, "peak": rep.peak})
        print(f"[equivalence] fault={fault:16s} optimizer={rep.optimizer} peak diff={rep.peak:.3e}")
    with open(out / "summary.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["fault", "optimizer", "final", "peak"])
        writer.writeheader()
        writer.writerows(summary)
    print(f"[equivalence] wrote {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep


def _clone(cfg: RunConfig) -> RunConfig:
    from .config import parse_config, config_to_dict

    return parse_config(config_to_dict(cfg))


def sweep_cells(cfg: RunConfig) -> list[dict]:
    s = cfg.sweep
    if not (s.architectures and s.sizes and s.schemes and s.seeds):
        raise ConfigError("sweep set is empty")
    for size in s.sizes:
        if size not in SIZE_TABLE:
            raise ConfigError(f"unknown sweep size {size!r}")
    cells = []
    seen = set()
    for arch in s.architectures:
        for size in s.sizes:
            for scheme in s.schemes:
                label_scheme = scheme if arch in ("hypernetwork", "film") else "default"
                key = (arch, size, label_scheme)
                if key in seen:
                    continue
                seen.add(key)
                cells.append({"architecture": arch, "size": size, "scheme": label_scheme})
    return cells


def _cell_config(cfg: RunConfig, cell: dict, seed: int) -> RunConfig:
    run = _clone(cfg)
    run.architecture = cell["architecture"]
    run.base_size = cell["size"]
    if cell["scheme"] != "default":
        run.init.scheme = cell["scheme"]
        if run.architecture == "film" and cell["scheme"] == "bias_hyperinit":
            run.init.scheme = "film_bias_hyperinit"
    run.seeds = [seed]
    run.name = f"{cell['architecture']}_{cell['size']}_{cell['scheme']}"
    return run


def _run_cell(payload) -> str:
    from .trainer import train

    run_cfg_dict, seed, run_dir = payload
    from .config import parse_config

    run_cfg = parse_config(run_cfg_dict)
    train(run_cfg, seed, run_dir)
    return run_dir


def cmd_sweep(args) -> int:
    from .config import config_to_dict
    from .reporting import final_window_mean, read_metrics, write_scaling_figure

    cfg = load_config(args.config)
    root = _out_root(cfg, args.out) / cfg.name
    _prepare_dir(root, args.force)
    save_config(cfg, root / "config.yaml")
    cells = sweep_cells(cfg)
    seeds = [args.seed] if args.seed is not None else list(cfg.sweep.seeds)

    jobs = []
    for cell in cells:
        for seed in seeds:
            run_cfg = _cell_config(cfg, cell, seed)
            run_dir = root / run_cfg.name / f"seed_{seed}"
            jobs.append((cell, seed, config_to_dict(run_cfg), str(run_dir)))

    print(f"[sweep] {len(cells)} cells x {len(seeds)} seeds = {len(jobs)} runs")
    if args.parallel > 1:
        with ProcessPoolExecutor(max_workers=args.parallel) as pool:
            list(pool.map(_run_cell, [(j[2], j[1], j[3]) for j in jobs]))
    else:
        for j in jobs:
            print(f"[sweep] {j[2]['name']} seed={j[1]}")
            _run_cell((j[2], j[1], j[3]))

    rows = []
    cell_rows = []
    for cell in cells:
        name = f"{cell['architecture']}_{cell['size']}_{cell['scheme']}"
        finals = []
        param_count = None
        for seed in seeds:
            run_dir = root / name / f"seed_{seed}"
            metrics = read_metrics(run_dir)
            final = final_window_mean(metrics["mean_meta_return"])
            done = json.loads((run_dir / "done.json").read_text())
            param_count = done["param_count"]
            finals.append(final)
            rows.append({**cell, "seed": seed, "final_return": final, "param_count": param_count})
        finals = np.asarray(finals)
        cell_rows.append(
            {
                **cell,
                "n_seeds": len(seeds),
                "mean": float(finals.mean()),
                "stderr": float(finals.std(ddof=1) / np.sqrt(len(finals))) if len(finals) > 1 else 0.0,
                "param_count": param_count,
            }
        )

    with open(root / "sweep_runs.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    with open(root / "sweep_results.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(cell_rows[0].keys()))
        writer.writeheader()
        writer.writerows(cell_rows)
    write_scaling_figure(cell_rows, root)
    for c in cell_rows:
        print(
            f"[sweep] {c['architecture']:13s} {c['size']:3s} {c['scheme']:18s} "
            f"params={c['param_count']:>9d} final={c['mean']:8.3f} +/- {c['stderr']:.3f}"
        )
    return EXIT_OK


# ---------------------------------------------------------------------------
# report


def cmd_report(args) -> int:
    from .reporting import write_report

    out = Path(args.out) if args.out else Path(args.run_dirs[0]).parent / "report"
    out.mkdir(parents=True, exist_ok=True)
    result = write_report(args.run_dirs, out)
    print((out / "summary.txt").read_text())
    print(f"[report] wrote {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hyperpolicy", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True, help="run-config YAML path")
        p.add_argument("--seed", type=int, default=None, help="override the config seed list")
        p.add_argument("--out", default=None, help="output root directory")
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")
        p.add_argument("--parallel", type=int, default=1, help="parallel sweep workers")

    common(sub.add_parser("train", help="train one configuration over its seed list"))
    common(sub.add_parser("analyze-init", help="variance probes and init statistics"))
    common(sub.add_parser("equivalence", help="hypernetwork/per-task equivalence oracle"))
    common(sub.add_parser("sweep", help="cartesian (architecture, size, scheme, seed) sweep"))
    rep = sub.add_parser("report", help="tables, t-tests and figures from run directories")
    rep.add_argument("run_dirs", nargs="+", help="completed run directories")
    rep.add_argument("--out", default=None, help="report output directory")
    return parser


COMMANDS = {
    "train": cmd_train,
    "analyze-init": cmd_analyze_init,
    "equivalence": cmd_equivalence,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Refusal as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_REFUSAL
    except Exception as exc:  # runtime failure; partial outputs are retained
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
