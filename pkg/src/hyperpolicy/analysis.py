"""Verification instruments for the initialization claims.

* `variance_probe` measures, by Monte Carlo over fresh head draws and
  unit-variance inputs/embeddings, the per-layer mean-square activation of
  the generated base network.  Well-scaled schemes keep successive-layer
  ratios near 1; naive head initializations explode or vanish by the last
  hidden layer.

* `equivalence_oracle` replays one synthetic per-task data stream to (a) a
  linear bias-free hypernetwork conditioned on one-hot task IDs and (b) one
  independently trained network per task, and reports the max parameter
  difference per paired SGD step.  Fault injections (head bias, dense
  embeddings, an adaptive-moment optimizer) demonstrate that each of the
  three conditions is necessary.

* `init_stats` summarizes draws of a scheme against its closed-form moments.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, backward, tape
from .initschemes import (
    BaseInit,
    InitScheme,
    init_hypernet_head,
    kaiming_init,
    normc_init,
    orthogonal_init,
)
from .layout import BaseNetSpec, ParamLayout, layout_for
from .optim import Adam, Sgd
from .policies import base_forward
from .rng import RngPool

__all__ = [
    "VarianceReport",
    "variance_probe",
    "EquivalenceReport",
    "equivalence_oracle",
    "EquivalenceConfigError",
    "init_stats",
    "FAULTS",
]


# ---------------------------------------------------------------------------
# variance probe


@dataclass
class VarianceReport:
    scheme: str
    n_samples: int
    layer_ms: list[float]  # mean-square post-activation per hidden layer
    ratios: list[float]  # successive ratios, layer 1 vs unit input first
    final_ms: float  # last hidden layer vs unit-variance input

    def ratios_within(self, lo: float, hi: float) -> bool:
        return all(lo <= r <= hi for r in self.ratios)


def variance_probe(
    scheme: InitScheme,
    base_spec: BaseNetSpec,
    e_dim: int,
    n_samples: int,
    rng: np.random.Generator,
    inputs_per_draw: int = 50,
) -> VarianceReport:
    """Mean-square activations of freshly generated base actor networks.

    Embeddings and inputs are i.i.d. unit normals; `n_samples` counts
    (draw, input) pairs and must be at least 1000.
    """
    if n_samples < 1000:
        raise ValueError("variance probe needs n_samples >= 1000")
    layout = layout_for(base_spec)
    n_hidden = len(base_spec.hidden)
    n_draws = max(1, n_samples // inputs_per_draw)
    ms_sums = np.zeros(n_hidden)
    ratio_sums = np.zeros(n_hidden)
    for _ in range(n_draws):
        head_w, head_b, _ = init_hypernet_head(scheme, layout, e_dim, rng)
        e = rng.standard_normal(e_dim)
        phi = head_w @ e + head_b
        x = rng.standard_normal((inputs_per_draw, base_spec.input_dim))
        prev = 1.0  # unit-variance input
        for li in range(n_hidden):
            w_e = layout.slice_of(f"actor/w{li}")
            b_e = layout.slice_of(f"actor/b{li}")
            w = layout.view(phi, w_e)
            b = layout.view(phi, b_e)
            z = x @ w.T + b
            x = np.maximum(z, 0.0) if base_spec.activation == "relu" else np.tanh(z)
            ms = float(np.mean(x * x))
            ms_sums[li] += ms
            # per-draw ratio: avoids compounding one draw's embedding-norm
            # fluctuation across layers when averaging
            ratio_sums[li] += ms / prev if prev > 0 else 0.0
            prev = ms
    return VarianceReport(
        scheme=scheme.kind,
        n_samples=n_draws * inputs_per_draw,
        layer_ms=(ms_sums / n_draws).tolist(),
        ratios=(ratio_sums / n_draws).tolist(),
        final_ms=float(ms_sums[-1] / n_draws),
    )


# ---------------------------------------------------------------------------
# equivalence oracle


FAULTS = ("none", "head_bias", "dense_embedding", "adam_optimizer")


class EquivalenceConfigError(ValueError):
    """Raised when the oracle is configured outside its validity envelope."""


@dataclass
class EquivalenceReport:
    optimizer: str
    fault: str
    max_diffs: list[float] = field(default_factory=list)  # one entry per step

    @property
    def final(self) -> float:
        return self.max_diffs[-1] if self.max_diffs else 0.0

    @property
    def peak(self) -> float:
        return max(self.max_diffs) if self.max_diffs else 0.0


@dataclass
class _SyntheticStream:
    """Pre-generated per-task (state, action, advantage, value target) batches.

    Step k trains task k mod n_tasks on both sides, so the streams are
    byte-identical by construction.
    """

    states: np.ndarray  # (n_tasks, steps_per_task, batch, obs)
    actions: np.ndarray
    advantages: np.ndarray
    value_targets: np.ndarray


def _make_stream(spec: BaseNetSpec, n_tasks: int, steps: int, batch: int, rng: np.random.Generator) -> _SyntheticStream:
    per_task = (steps + n_tasks - 1) // n_tasks
    shape = (n_tasks, per_task, batch)
    return _SyntheticStream(
        states=rng.standard_normal(shape + (spec.input_dim,)),
        actions=rng.integers(0, spec.action_dim, shape),
        advantages=rng.standard_normal(shape),
        value_targets=rng.standard_normal(shape),
    )


def _task_loss(phi: Tensor, layout: ParamLayout, states, actions, advantages, value_targets) -> Tensor:
    logits, values = base_forward(phi, layout, Tensor(states))
    logp = ad.softmax_logprob(logits, actions)
    policy = ad.neg(ad.tmean(ad.mul(logp, Tensor(advantages))))
    verr = ad.sub(values, Tensor(value_targets))
    return ad.add(policy, ad.mul(ad.tmean(ad.mul(verr, verr)), 0.5))


def equivalence_oracle(
    base_spec: BaseNetSpec,
    n_tasks: int,
    steps: int,
    seed: int,
    learning_rate: float = 0.05,
    batch: int = 16,
    optimizer: str = "sgd",
    fault: str = "none",
    base_scheme: BaseInit | None = None,
) -> EquivalenceReport:
    """Paired training of a hypernetwork vs per-task networks.

    The per-task side always starts from the parameters the hypernetwork
    implies at step 0, so the reported difference starts at exactly zero and
    measures training-dynamics divergence only.
    """
    if fault not in FAULTS:
        raise EquivalenceConfigError(f"unknown fault {fault!r}; known: {FAULTS}")
    if optimizer != "sgd" and fault != "adam_optimizer":
        raise EquivalenceConfigError(
            "the equivalence oracle is only valid under SGD: adaptive-moment "
            "optimizers couple head columns across steps (use the "
            "adam_optimizer fault injection to demonstrate this)"
        )

    pool = RngPool(seed)
    layout = layout_for(base_spec)
    f = base_scheme or BaseInit()
    from .initschemes import weight_hyperinit

    head_w_np, head_b_np, _cols = weight_hyperinit(layout, f, n_tasks, pool.stream("init"))
    head_w = Tensor(head_w_np, requires_grad=True)
    hyper_params = {"head_w": head_w}
    use_bias = fault == "head_bias"
    head_b = None
    if use_bias:
        head_b = Tensor(head_b_np, requires_grad=True)  # zeros; coupling alone diverges
        hyper_params["head_b"] = head_b

    embeddings = np.eye(n_tasks)
    if fault == "dense_embedding":
        embeddings = embeddings + 0.05 * pool.stream("embedding_noise").standard_normal(
            (n_tasks, n_tasks)
        )

    def implied_phi_np(i: int) -> np.ndarray:
        phi = head_w.data @ embeddings[i]
        if head_b is not None:
            phi = phi + head_b.data
        return phi

    per_task = [Tensor(implied_phi_np(i), requires_grad=True) for i in range(n_tasks)]

    use_adam = fault == "adam_optimizer"
    if use_adam:
        hyper_opt = Adam(hyper_params, learning_rate)
        task_opts = [Adam({"phi": p}, learning_rate) for p in per_task]
    else:
        hyper_opt = Sgd(hyper_params, learning_rate)
        task_opts = [Sgd({"phi": p}, learning_rate) for p in per_task]

    stream = _make_stream(base_spec, n_tasks, steps, batch, pool.stream("data"))
    report = EquivalenceReport(optimizer="adam" if use_adam else "sgd", fault=fault)

    for k in range(steps):
        i = k % n_tasks
        j = k // n_tasks
        args = (
            stream.states[i, j],
            stream.actions[i, j],
            stream.advantages[i, j],
            stream.value_targets[i, j],
        )

        # hypernetwork side
        with tape():
            e = Tensor(embeddings[i])
            phi = ad.matmul(head_w, e)
            if head_b is not None:
                phi = ad.add(phi, head_b)
            backward(_task_loss(phi, layout, *args))
        hyper_opt.step()
        hyper_opt.zero_grad()

        # per-task side
        with tape():
            backward(_task_loss(per_task[i], layout, *args))
        task_opts[i].step()
        task_opts[i].zero_grad()

        diff = max(
            float(np.max(np.abs(implied_phi_np(t) - per_task[t].data))) for t in range(n_tasks)
        )
        report.max_diffs.append(diff)

    return report


# ---------------------------------------------------------------------------
# init statistics


def init_stats(scheme_kind: str, shape: tuple[int, int], n_draws: int, rng: np.random.Generator, gain: float = 1.0, distribution: str = "normal") -> dict:
    """Empirical moments of a direct scheme against closed-form expectations.

    `n_draws` counts sampled entries (>= 1000); matrices are drawn whole and
    pooled.
    """
    if n_draws < 1000:
        raise ValueError("init_stats needs n_draws >= 1000")
    rows, cols = shape
    per_draw = rows * cols
    n_mats = max(1, n_draws // per_draw)
    entries = []
    col_norms = []
    sv_dev = []
    for _ in range(n_mats):
        if scheme_kind == "kaiming":
            w = kaiming_init(shape, gain, distribution, rng)
        elif scheme_kind == "normc":
            w = normc_init(shape, gain, rng)
        elif scheme_kind == "orthogonal":
            w = orthogonal_init(shape, gain, rng)
            sv = np.linalg.svd(w, compute_uv=False)
            sv_dev.append(float(np.max(np.abs(sv - gain))))
        else:
            raise ValueError(f"init_stats supports direct schemes only, got {scheme_kind!r}")
        entries.append(w.reshape(-1))
        col_norms.append(np.linalg.norm(w, axis=0))
    pooled = np.concatenate(entries)
    out = {
        "scheme": scheme_kind,
        "shape": list(shape),
        "gain": gain,
        "n_entries": int(pooled.size),
        "mean": float(pooled.mean()),
        "variance": float(pooled.var()),
        "col_norm_max_dev": float(np.max(np.abs(np.concatenate(col_norms) - gain))),
    }
    if scheme_kind == "kaiming":
        out["expected_variance"] = gain * gain / shape[1]
    elif scheme_kind == "normc":
        out["expected_variance"] = gain * gain / shape[0]
    if sv_dev:
        out["singular_value_max_dev"] = float(max(sv_dev))
    return out
