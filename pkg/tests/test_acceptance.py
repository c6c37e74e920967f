"""Acceptance suite: one test per numbered criterion, each printing a
pass/fail line (run with `pytest -s` to see them inline).

The two training-based criteria (4 and 6) execute their committed sweep
configs from configs/ in full; together they dominate the suite's runtime
(roughly 10 and 25 minutes on a desktop CPU).
"""

import math
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest

from hyperpolicy import autodiff as ad
from hyperpolicy.analysis import equivalence_oracle, variance_probe
from hyperpolicy.autodiff import Tensor, grad_check
from hyperpolicy.config import load_config
from hyperpolicy.initschemes import BaseInit, InitScheme, bias_hyperinit, weight_hyperinit
from hyperpolicy.layout import BaseNetSpec, film_layout_for, layout_for
from hyperpolicy.models import build_model
from hyperpolicy.policies import base_forward, film_forward
from hyperpolicy.reporting import final_window_mean, read_metrics, ttest
from hyperpolicy.rng import RngPool
from hyperpolicy.trainer import train

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
SQRT2 = math.sqrt(2.0)


def report(criterion: int, passed: bool, detail: str):
    line = f"[criterion {criterion}] {'PASS' if passed else 'FAIL'}: {detail}"
    print(line)
    assert passed, line


# ---------------------------------------------------------------------------
# criterion 1: equivalence theorem + fault injections


def test_criterion_1_equivalence_theorem():
    cfg = load_config(CONFIGS / "equivalence.yaml")
    eq = cfg.equivalence
    spec = BaseNetSpec(input_dim=eq.input_dim, hidden=tuple(eq.hidden), action_dim=eq.action_dim)
    clean = equivalence_oracle(
        spec, eq.n_tasks, eq.steps, seed=cfg.seeds[0], learning_rate=eq.learning_rate, batch=eq.batch
    )
    ok = clean.peak < 1e-9
    details = [f"sgd max diff {clean.peak:.3e} over {eq.steps} paired updates"]
    for fault in eq.faults:
        rep = equivalence_oracle(
            spec, eq.n_tasks, eq.steps, seed=cfg.seeds[0],
            learning_rate=eq.learning_rate, batch=eq.batch, fault=fault,
        )
        ok = ok and rep.peak > 1e-3
        details.append(f"{fault} peak {rep.peak:.3e}")
    report(1, ok, "; ".join(details))


# ---------------------------------------------------------------------------
# criterion 2: the two HyperInit contracts, bitwise


def test_criterion_2_hyperinit_contracts():
    spec = BaseNetSpec(input_dim=4, hidden=(16, 12, 8), action_dim=5)
    layout = layout_for(spec)
    f = BaseInit()
    rng_pool = RngPool(0)

    head_w, head_b, shared = bias_hyperinit(layout, f, 10, rng_pool.stream("bias"))
    e_rng = rng_pool.stream("embeddings")
    bias_ok = all(
        np.array_equal(head_w @ e_rng.standard_normal(10) + head_b, shared) for _ in range(100)
    )

    n_cols = 12
    w_head_w, w_head_b, columns = weight_hyperinit(layout, f, n_cols, rng_pool.stream("weight"))
    weight_ok = True
    for i in range(n_cols):
        e = np.zeros(n_cols)
        e[i] = 1.0
        weight_ok = weight_ok and np.array_equal(w_head_w @ e + w_head_b, columns[i])

    report(
        2,
        bias_ok and weight_ok,
        f"bias contract bitwise on 100 embeddings: {bias_ok}; "
        f"weight contract exact for all {n_cols} one-hot columns: {weight_ok}",
    )


# ---------------------------------------------------------------------------
# criterion 3: stability ordering of the initialization schemes


def test_criterion_3_variance_ordering():
    cfg = load_config(CONFIGS / "analyze_init.yaml")
    a = cfg.analyze
    spec = BaseNetSpec.from_size(cfg.base_size, input_dim=a.probe_input_dim, action_dim=5)
    lo, hi = a.pass_band
    flo, fhi = a.fail_band
    schemes = {
        "kaiming": InitScheme("kaiming", gain=SQRT2),
        "normc": InitScheme("normc", gain=1.0),
        "hfi": InitScheme("hfi"),
        "bias_hyperinit": InitScheme("bias_hyperinit", base=BaseInit(hidden_gain=SQRT2)),
    }
    hits = {name: 0 for name in schemes}
    for seed in range(a.n_seeds):
        for name, scheme in schemes.items():
            rep = variance_probe(scheme, spec, a.probe_e_dim, a.n_samples, RngPool(seed).fresh(f"p/{name}"))
            if name in ("kaiming", "normc"):
                hits[name] += not (flo <= rep.final_ms <= fhi)
            else:
                hits[name] += rep.ratios_within(lo, hi)
    ok = all(h >= 9 for h in hits.values())
    report(
        3,
        ok,
        f"seeds meeting their band out of {a.n_seeds}: "
        + ", ".join(f"{k}={v}" for k, v in hits.items()),
    )


# ---------------------------------------------------------------------------
# criterion 4: grid-world ordering reproduction (committed budget)


def _sweep_finals(config_name: str, tmp_root: Path) -> dict[tuple, list[float]]:
    """Run every (cell, seed) of a committed sweep config; final returns per cell."""
    from hyperpolicy.cli import _cell_config, sweep_cells
    from hyperpolicy.config import parse_config, config_to_dict

    cfg = load_config(CONFIGS / config_name)
    finals: dict[tuple, list[float]] = {}
    for cell in sweep_cells(cfg):
        key = (cell["architecture"], cell["size"], cell["scheme"])
        finals[key] = []
        for seed in cfg.sweep.seeds:
            run_cfg = _cell_config(cfg, cell, seed)
            run_dir = tmp_root / run_cfg.name / f"seed_{seed}"
            if not (run_dir / "done.json").exists():
                train(run_cfg, seed, run_dir)
            metrics = read_metrics(run_dir)
            finals[key].append(final_window_mean(metrics["mean_meta_return"]))
    return finals


@pytest.fixture(scope="session")
def table1_finals(tmp_path_factory):
    root = tmp_path_factory.mktemp("table1")
    return _sweep_finals("table1_grid.yaml", root)


def test_criterion_4_gridworld_ordering(table1_finals):
    by_scheme = {key[2]: np.asarray(vals) for key, vals in table1_finals.items()}
    bias = by_scheme["bias_hyperinit"]
    _, _, p_kaiming = ttest(bias, by_scheme["kaiming"])
    _, _, p_normc = ttest(bias, by_scheme["normc"])
    t_hfi, _, p_hfi = ttest(bias, by_scheme["hfi"])
    beats_kaiming = bias.mean() > by_scheme["kaiming"].mean() and p_kaiming < 0.05
    beats_normc = bias.mean() > by_scheme["normc"].mean() and p_normc < 0.05
    not_below_hfi = bias.mean() >= by_scheme["hfi"].mean() or p_hfi >= 0.05
    means = {k: round(float(v.mean()), 2) for k, v in by_scheme.items()}
    report(
        4,
        beats_kaiming and beats_normc and not_below_hfi,
        f"final means {means}; p(bias vs kaiming)={p_kaiming:.4f}, "
        f"p(bias vs normc)={p_normc:.4f}, p(bias vs hfi)={p_hfi:.4f}",
    )


# ---------------------------------------------------------------------------
# criterion 5: autodiff soundness over all ops and full policies


def _op_cases():
    rng = np.random.default_rng(123)

    def vec(n=6):
        x = rng.uniform(-2.0, 2.0, n)
        x[np.abs(x) < 5e-3] += 0.01
        return x

    other = Tensor(vec())
    mat_r = Tensor(rng.uniform(-2, 2, (4, 6)))
    bmm_r = Tensor(rng.uniform(-1, 1, (2, 3, 4)))
    cases = {
        "add": (lambda t: ad.tsum(ad.mul(ad.add(t, other), ad.add(t, 1.5))), vec),
        "sub": (lambda t: ad.tsum(ad.mul(ad.sub(t, other), t)), vec),
        "mul": (lambda t: ad.tsum(ad.mul(ad.mul(t, other), t)), vec),
        "scale": (lambda t: ad.tsum(ad.mul(ad.mul(t, -1.7), t)), vec),
        "neg": (lambda t: ad.tsum(ad.mul(ad.neg(t), t)), vec),
        "relu": (lambda t: ad.tsum(ad.mul(ad.relu(t), t)), vec),
        "tanh": (lambda t: ad.tsum(ad.mul(ad.tanh(t), ad.tanh(t))), vec),
        "sigmoid": (lambda t: ad.tsum(ad.mul(ad.sigmoid(t), t)), vec),
        "exp": (lambda t: ad.tsum(ad.exp(ad.mul(t, 0.4))), vec),
        "log": (lambda t: ad.tsum(ad.log(ad.add(ad.mul(t, t), 0.5))), vec),
        "matmul": (lambda t: ad.tsum(ad.mul(ad.matmul(mat_r, t), ad.matmul(mat_r, t))), vec),
        "bmm": (
            lambda t: ad.tsum(ad.mul(ad.bmm(ad.reshape(t, (2, 4, 3)), bmm_r), ad.bmm(ad.reshape(t, (2, 4, 3)), bmm_r))),
            lambda: rng.uniform(-1, 1, 24),
        ),
        "transpose": (lambda t: ad.tsum(ad.mul(ad.transpose(ad.reshape(t, (2, 3))), ad.transpose(ad.reshape(t, (2, 3))))), vec),
        "transpose_last2": (
            lambda t: ad.tsum(ad.mul(ad.transpose_last2(ad.reshape(t, (2, 3, 4))), ad.transpose_last2(ad.reshape(t, (2, 3, 4))))),
            lambda: rng.uniform(-1, 1, 24),
        ),
        "reshape": (lambda t: ad.tsum(ad.mul(ad.reshape(t, (3, 2)), ad.reshape(t, (3, 2)))), vec),
        "narrow": (lambda t: ad.tsum(ad.mul(ad.narrow(t, 0, 1, 4), ad.narrow(t, 0, 0, 4))), vec),
        "concat": (lambda t: ad.tsum(ad.mul(ad.concat([ad.narrow(t, 0, 0, 3), ad.narrow(t, 0, 3, 3)]), t)), vec),
        "expand_rows": (lambda t: ad.tsum(ad.mul(ad.expand_rows(t, 3), ad.expand_rows(t, 3))), vec),
        "expand_mid": (
            lambda t: ad.tsum(ad.mul(ad.expand_mid(ad.reshape(t, (2, 3)), 4), ad.expand_mid(ad.reshape(t, (2, 3)), 4))),
            vec,
        ),
        "sum_axis": (lambda t: ad.tsum(ad.mul(ad.tsum(ad.reshape(t, (2, 3)), axis=0), ad.tsum(ad.reshape(t, (2, 3)), axis=0))), vec),
        "mean": (lambda t: ad.mul(ad.tmean(ad.mul(t, t)), 3.0), vec),
        "softmax_logprob": (lambda t: ad.softmax_logprob(t, 2), vec),
        "softmax_entropy": (lambda t: ad.softmax_entropy(t), vec),
    }
    return cases


def _policy_case(arch: str, seed: int):
    rng = np.random.default_rng(seed)
    spec = BaseNetSpec(input_dim=3, hidden=(6, 5, 4), action_dim=3)
    state = Tensor(rng.uniform(0.0, 1.0, 3))
    if arch == "hypernetwork":
        layout = layout_for(spec)
        e = Tensor(rng.standard_normal(4))
        n_w = layout.total_len * 4

        def f(flat):
            head_w = ad.reshape(ad.narrow(flat, 0, 0, n_w), (layout.total_len, 4))
            head_b = ad.narrow(flat, 0, n_w, layout.total_len)
            phi = ad.add(ad.matmul(head_w, e), head_b)
            logits, value = base_forward(phi, layout, state)
            return ad.add(ad.softmax_logprob(logits, 1), ad.mul(value, 0.5))

        x0 = rng.standard_normal(n_w + layout.total_len) * 0.2
        return f, x0
    if arch == "standard":
        from hyperpolicy.policies import MlpParams, standard_forward

        dims = [3 + 4, 6, 5]
        e = Tensor(rng.standard_normal(4))
        shapes = []
        for out_dim in (3, 1):
            d = dims + [out_dim]
            shapes.append([(d[i + 1], d[i]) for i in range(len(d) - 1)])

        def f(flat):
            off = 0
            nets = []
            for net_shapes in shapes:
                layers = []
                for (o, i) in net_shapes:
                    w = ad.reshape(ad.narrow(flat, 0, off, o * i), (o, i))
                    off2 = off + o * i
                    b = ad.narrow(flat, 0, off2, o)
                    off = off2 + o
                    layers.append((w, b))
                nets.append(MlpParams(layers))
            logits, value = standard_forward(nets[0], nets[1], state, e)
            return ad.add(ad.softmax_logprob(logits, 0), ad.mul(value, 0.3))

        total = sum(o * i + o for net in shapes for (o, i) in net)
        return f, rng.standard_normal(total) * 0.3
    # film
    from hyperpolicy.policies import FilmParams, HypernetParams

    film_layout = film_layout_for(spec)
    e = Tensor(rng.standard_normal(4))
    w_shapes = {}
    for head in ("actor", "critic"):
        d = spec.head_dims(head)
        for i in range(len(d) - 1):
            w_shapes[f"{head}/w{i}"] = (d[i + 1], d[i])
    n_head = film_layout.total_len * 4 + film_layout.total_len

    def f(flat):
        off = 0
        weights = {}
        for name, (o, i) in w_shapes.items():
            weights[name] = ad.reshape(ad.narrow(flat, 0, off, o * i), (o, i))
            off += o * i
        head_w = ad.reshape(ad.narrow(flat, 0, off, film_layout.total_len * 4), (film_layout.total_len, 4))
        off += film_layout.total_len * 4
        head_b = ad.narrow(flat, 0, off, film_layout.total_len)
        params = FilmParams(weights=weights, head=HypernetParams(head_w=head_w, head_b=head_b), layout=film_layout)
        logits, value = film_forward(params, e, state)
        return ad.add(ad.softmax_logprob(logits, 2), ad.mul(value, 0.5))

    total = sum(o * i for (o, i) in w_shapes.values()) + n_head
    return f, rng.standard_normal(total) * 0.3


def test_criterion_5_autodiff_soundness():
    worst = 0.0
    worst_name = ""
    rng = np.random.default_rng(7)
    for name, (f, draw) in _op_cases().items():
        for _ in range(20):
            err = grad_check(f, Tensor(draw()))
            if err > worst:
                worst, worst_name = err, name
    for arch in ("hypernetwork", "standard", "film"):
        for k in range(20):
            f, x0 = _policy_case(arch, seed=1000 + k)
            err = grad_check(f, Tensor(x0))
            if err > worst:
                worst, worst_name = err, arch
    report(5, worst < 1e-5, f"max relative gradient error {worst:.3e} (worst case: {worst_name})")


# ---------------------------------------------------------------------------
# criterion 6: size sweep (XS, XL), hypernetwork vs standard at XL


@pytest.fixture(scope="session")
def size_sweep_finals(tmp_path_factory):
    root = tmp_path_factory.mktemp("size_sweep")
    return _sweep_finals("size_sweep.yaml", root)


def test_criterion_6_size_sweep(size_sweep_finals):
    hyp = np.asarray(size_sweep_finals[("hypernetwork", "XL", "bias_hyperinit")])
    std = np.asarray(size_sweep_finals[("standard", "XL", "default")])
    t, dof, p_two = ttest(hyp, std)
    if hyp.mean() >= std.mean():
        ok = True
        verdict = "hypernetwork mean >= standard mean"
    else:
        p_one = p_two / 2.0
        ok = p_one >= 0.05
        verdict = f"one-sided p={p_one:.4f} (not significantly worse required)"

    from hyperpolicy.cli import _cell_config, sweep_cells

    cfg = load_config(CONFIGS / "size_sweep.yaml")
    n_tasks = cfg.env.width * cfg.env.height - 1
    counts = {}
    for cell in sweep_cells(cfg):
        cell_cfg = _cell_config(cfg, cell, 0)
        _, manifest = build_model(cell_cfg, n_tasks, 3, 5, seed=0)
        counts[(cell["architecture"], cell["size"])] = manifest["param_count"]
    report(
        6,
        ok,
        f"XL finals: hypernetwork {hyp.mean():.2f}+/-{hyp.std(ddof=1)/np.sqrt(len(hyp)):.2f} vs "
        f"standard {std.mean():.2f}+/-{std.std(ddof=1)/np.sqrt(len(std)):.2f}; {verdict}; "
        f"param counts {counts}",
    )


# ---------------------------------------------------------------------------
# criterion 7: determinism of committed configs


def test_criterion_7_determinism(tmp_path):
    cfg = load_config(CONFIGS / "smoke.yaml")
    d1 = train(cfg, cfg.seeds[0], tmp_path / "a")
    d2 = train(cfg, cfg.seeds[0], tmp_path / "b")
    same_metrics = (d1 / "metrics.csv").read_bytes() == (d2 / "metrics.csv").read_bytes()
    same_eval = (d1 / "eval.csv").read_bytes() == (d2 / "eval.csv").read_bytes()
    report(7, same_metrics and same_eval, "metrics.csv and eval.csv byte-identical across reruns")


# ---------------------------------------------------------------------------
# criterion 8: FiLM Bias-HyperInit equals the plain base network at init


def test_criterion_8_film_equals_plain_mlp():
    from hyperpolicy.initschemes import film_bias_hyperinit, sample_base_flat
    from hyperpolicy.policies import FilmParams, HypernetParams

    spec = BaseNetSpec(input_dim=3, hidden=(8, 6, 5), action_dim=4)
    film_layout = film_layout_for(spec)
    mlp_layout = layout_for(spec)
    f = BaseInit()

    # reproduce the draw the film init consumes by replaying the stream
    pool = RngPool(42)
    draw = sample_base_flat(mlp_layout, f, pool.fresh("film"))
    head_w, head_b, base_weights = film_bias_hyperinit(film_layout, f, 7, pool.fresh("film"))

    params = FilmParams(
        weights={k: Tensor(v) for k, v in base_weights.items()},
        head=HypernetParams(head_w=Tensor(head_w), head_b=Tensor(head_b)),
        layout=film_layout,
    )
    rng = np.random.default_rng(9)
    ok = True
    for _ in range(100):
        state = Tensor(rng.uniform(-1.0, 1.0, 3))
        e = Tensor(rng.standard_normal(7))
        film_logits, film_value = film_forward(params, e, state)
        mlp_logits, mlp_value = base_forward(Tensor(draw), mlp_layout, state)
        ok = ok and np.array_equal(film_logits.data, mlp_logits.data)
        ok = ok and film_value.item() == mlp_value.item()
    report(8, ok, "film outputs bitwise equal to the plain base network on 100 random pairs")
