"""Model assembly: architecture + task encoder + initialization manifest.

Each model exposes the same small rollout protocol the trainer drives:

    ctx = model.begin_rollout(task_ids)            # inside a tape for training
    logits, values = model.act(ctx, obs, prev_actions, prev_rewards)

With a one-hot encoder, embeddings (and generated parameters) are fixed for
the whole rollout and are computed once in `begin_rollout`; with the
recurrent encoder they are recomputed at every step so the policy can adapt
within the meta-episode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor  # noqa: F401
from .config import RunConfig
from .encoders import GruEncoder, encode_onehot
from .initschemes import (
    BaseInit,
    InitScheme,
    film_bias_hyperinit,
    init_hypernet_head,
    kaiming_init,
    normc_init,
    orthogonal_init,
    sample_base_flat,
)
from .layout import BaseNetSpec, film_layout_for, layout_for
from .policies import (
    BaseSlices,
    FilmParams,
    FilmSlices,
    HypernetParams,
    MlpParams,
    hypernet_forward,
    mlp_forward,
    standard_forward,
)
from .rng import RngPool

__all__ = ["build_model", "HypernetPolicy", "StandardPolicy", "FilmPolicy", "scheme_from_config"]


def scheme_from_config(cfg: RunConfig, scheme_name: str | None = None, n_tasks: int | None = None) -> InitScheme:
    """Materialize the InitScheme for a run, resolving hfi's embedding moment.

    One-hot embeddings have per-coordinate second moment 1/n_tasks; unit
    variance is assumed otherwise.
    """
    name = scheme_name or cfg.init.scheme
    needs_base = name in ("weight_hyperinit", "bias_hyperinit", "film_bias_hyperinit")
    base = None
    if needs_base:
        b = cfg.init.base
        base = BaseInit(
            kind=b.kind,
            hidden_gain=b.hidden_gain,
            actor_head_gain=b.actor_head_gain,
            critic_head_gain=b.critic_head_gain,
            distribution=b.distribution,
        )
    m2 = cfg.init.embedding_second_moment
    if m2 is None:
        m2 = (1.0 / n_tasks) if (cfg.encoder == "onehot" and n_tasks) else 1.0
    return InitScheme(
        kind=name,
        gain=cfg.init.gain,
        distribution=cfg.init.distribution,
        base=base,
        embedding_second_moment=m2,
    )


# ---------------------------------------------------------------------------
# embedders


class OneHotEmbedder:
    static = True

    def __init__(self, n_tasks: int):
        self.n_tasks = n_tasks
        self.e_dim = n_tasks

    def params(self) -> dict[str, Tensor]:
        return {}

    def embed_tasks(self, task_ids: np.ndarray) -> np.ndarray:
        return np.stack([encode_onehot(int(t), self.n_tasks) for t in task_ids])


class RecurrentEmbedder:
    static = False

    def __init__(self, encoder: GruEncoder, n_actions: int):
        self.encoder = encoder
        self.n_actions = n_actions
        self.e_dim = encoder.e_dim

    def params(self) -> dict[str, Tensor]:
        return self.encoder.named()

    def begin(self, batch: int) -> Tensor:
        return self.encoder.initial_hidden(batch)

    def step(self, hidden: Tensor, obs: np.ndarray, prev_actions, prev_rewards) -> tuple[Tensor, Tensor]:
        batch = obs.shape[0]
        a = np.zeros((batch, self.n_actions), dtype=np.float64)
        if prev_actions is not None:
            a[np.arange(batch), np.asarray(prev_actions, dtype=int)] = 1.0
        r = np.zeros((batch, 1)) if prev_rewards is None else np.asarray(prev_rewards, dtype=np.float64).reshape(batch, 1)
        x = Tensor(np.concatenate([obs, a, r], axis=1))
        new_hidden = self.encoder.step(x, hidden)
        return self.encoder.project(new_hidden), new_hidden


# ---------------------------------------------------------------------------
# policies implementing the rollout protocol


@dataclass
class _Ctx:
    embedder_state: object = None
    base: object = None  # cached BaseSlices / FilmSlices / embedding for static encoders
    e_const: Tensor | None = None


def _policy_heads_time(logits_bt: Tensor, actions_tb: np.ndarray):
    """Shared tail of the recompute paths: (B, T, A) logits plus (T, B)
    actions -> row-major-by-slot (logprobs, entropies) of length B*T."""
    b, n_time, n_act = logits_bt.data.shape
    flat = ad.reshape(logits_bt, (b * n_time, n_act))
    acts = actions_tb.T.reshape(-1)
    return ad.softmax_logprob(flat, acts), ad.softmax_entropy(flat)


class HypernetPolicy:
    architecture = "hypernetwork"

    def __init__(self, hyper: HypernetParams, layout, embedder):
        self.hyper = hyper
        self.layout = layout
        self.embedder = embedder

    def params(self) -> dict[str, Tensor]:
        out = self.hyper.named()
        out.update(self.embedder.params())
        return out

    def begin_rollout(self, task_ids: np.ndarray) -> _Ctx:
        if self.embedder.static:
            e = Tensor(self.embedder.embed_tasks(task_ids))
            phi = hypernet_forward(self.hyper, e)
            return _Ctx(base=BaseSlices(phi, self.layout), e_const=e)
        return _Ctx(embedder_state=self.embedder.begin(len(task_ids)))

    def act(self, ctx: _Ctx, obs: np.ndarray, prev_actions, prev_rewards, actor_only: bool = False):
        states = Tensor(obs)
        if self.embedder.static:
            return ctx.base.forward(states, actor_only=actor_only)
        e, ctx.embedder_state = self.embedder.step(ctx.embedder_state, obs, prev_actions, prev_rewards)
        phi = hypernet_forward(self.hyper, e)
        return BaseSlices(phi, self.layout).forward(states, actor_only=actor_only)

    def recompute(self, task_ids: np.ndarray, states_tb: np.ndarray, actions_tb: np.ndarray):
        """Time-batched loss-pass for static embedders: one bmm per layer."""
        e = Tensor(self.embedder.embed_tasks(task_ids))
        phi = hypernet_forward(self.hyper, e)
        slices = BaseSlices(phi, self.layout)
        states_bt = Tensor(states_tb.transpose(1, 0, 2))
        logits_bt, values_bt = slices.forward_time(states_bt)
        logprobs, entropies = _policy_heads_time(logits_bt, actions_tb)
        return logprobs, values_bt, entropies


class StandardPolicy:
    architecture = "standard"

    def __init__(self, actor: MlpParams, critic: MlpParams, embedder):
        self.actor = actor
        self.critic = critic
        self.embedder = embedder

    def params(self) -> dict[str, Tensor]:
        out = self.actor.named("actor")
        out.update(self.critic.named("critic"))
        out.update(self.embedder.params())
        return out

    def begin_rollout(self, task_ids: np.ndarray) -> _Ctx:
        if self.embedder.static:
            return _Ctx(e_const=Tensor(self.embedder.embed_tasks(task_ids)))
        return _Ctx(embedder_state=self.embedder.begin(len(task_ids)))

    def act(self, ctx: _Ctx, obs: np.ndarray, prev_actions, prev_rewards, actor_only: bool = False):
        states = Tensor(obs)
        if self.embedder.static:
            e = ctx.e_const
        else:
            e, ctx.embedder_state = self.embedder.step(ctx.embedder_state, obs, prev_actions, prev_rewards)
        if actor_only:
            axis = 0 if states.data.ndim == 1 else 1
            x = ad.concat([states, e], axis=axis)
            return mlp_forward(self.actor, x), None
        return standard_forward(self.actor, self.critic, states, e)

    def recompute(self, task_ids: np.ndarray, states_tb: np.ndarray, actions_tb: np.ndarray):
        n_time, batch = states_tb.shape[:2]
        e = self.embedder.embed_tasks(task_ids)  # (B, e_dim), constant
        states_flat = states_tb.transpose(1, 0, 2).reshape(batch * n_time, -1)
        e_flat = np.repeat(e, n_time, axis=0)
        x = Tensor(np.concatenate([states_flat, e_flat], axis=1))
        logits = mlp_forward(self.actor, x)
        values = ad.reshape(mlp_forward(self.critic, x), (batch, n_time))
        logits_bt = ad.reshape(logits, (batch, n_time, logits.data.shape[1]))
        logprobs, entropies = _policy_heads_time(logits_bt, actions_tb)
        return logprobs, values, entropies


class FilmPolicy:
    architecture = "film"

    def __init__(self, film: FilmParams, embedder):
        self.film = film
        self.embedder = embedder

    def params(self) -> dict[str, Tensor]:
        out = self.film.named()
        out.update(self.embedder.params())
        return out

    def begin_rollout(self, task_ids: np.ndarray) -> _Ctx:
        if self.embedder.static:
            e = Tensor(self.embedder.embed_tasks(task_ids))
            mod = hypernet_forward(self.film.head, e)
            return _Ctx(base=FilmSlices(self.film, mod), e_const=e)
        return _Ctx(embedder_state=self.embedder.begin(len(task_ids)))

    def act(self, ctx: _Ctx, obs: np.ndarray, prev_actions, prev_rewards, actor_only: bool = False):
        states = Tensor(obs)
        if self.embedder.static:
            return ctx.base.forward(states, actor_only=actor_only)
        e, ctx.embedder_state = self.embedder.step(ctx.embedder_state, obs, prev_actions, prev_rewards)
        mod = hypernet_forward(self.film.head, e)
        return FilmSlices(self.film, mod).forward(states, actor_only=actor_only)

    def recompute(self, task_ids: np.ndarray, states_tb: np.ndarray, actions_tb: np.ndarray):
        e = Tensor(self.embedder.embed_tasks(task_ids))
        mod = hypernet_forward(self.film.head, e)
        slices = FilmSlices(self.film, mod)
        states_bt = Tensor(states_tb.transpose(1, 0, 2))
        logits_bt, values_bt = slices.forward_time(states_bt)
        logprobs, entropies = _policy_heads_time(logits_bt, actions_tb)
        return logprobs, values_bt, entropies


# ---------------------------------------------------------------------------
# construction


def _leaf(data: np.ndarray) -> Tensor:
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)


def _build_embedder(cfg: RunConfig, n_tasks: int, obs_dim: int, n_actions: int, rng_pool: RngPool, manifest: list):
    if cfg.encoder == "onehot":
        return OneHotEmbedder(n_tasks)
    in_dim = obs_dim + n_actions + 1
    hid = cfg.encoder_hidden
    rng = rng_pool.stream("init/encoder")
    enc = GruEncoder(
        w_x=_leaf(kaiming_init((3 * hid, in_dim), 1.0, "uniform", rng)),
        w_h=_leaf(np.concatenate([orthogonal_init((hid, hid), 1.0, rng) for _ in range(3)], axis=0)),
        b=_leaf(np.zeros(3 * hid)),
        proj_w=_leaf(kaiming_init((cfg.embedding_dim, hid), 1.0, "uniform", rng)),
        proj_b=_leaf(np.zeros(cfg.embedding_dim)),
    )
    manifest.append({"group": "encoder", "scheme": "kaiming_uniform+orthogonal_rnn", "gain": 1.0})
    return RecurrentEmbedder(enc, n_actions)


def _build_hypernet(cfg: RunConfig, layout, e_dim: int, scheme: InitScheme, rng_pool: RngPool, manifest: list) -> HypernetParams:
    hidden: list[tuple[Tensor, Tensor]] = []
    in_dim = e_dim
    rng_hidden = rng_pool.stream("init/hypernet_hidden")
    for i, width in enumerate(cfg.hypernet_hidden):
        hidden.append(
            (
                _leaf(kaiming_init((width, in_dim), math.sqrt(2.0), "uniform", rng_hidden)),
                _leaf(np.zeros(width)),
            )
        )
        manifest.append({"group": f"hypernet/h{i}", "scheme": "kaiming_uniform", "gain": math.sqrt(2.0)})
        in_dim = width
    head_w, head_b, record = init_hypernet_head(scheme, layout, in_dim, rng_pool.stream("init/hypernet_head"))
    record["group"] = "hypernet/head"
    manifest.append(record)
    return HypernetParams(head_w=_leaf(head_w), head_b=_leaf(head_b), hidden=hidden)


def _build_mlp(
    spec_dims: list[int],
    head_role: str,
    rng: np.random.Generator,
    manifest: list,
    group: str,
    hidden_gain: float = 1.0,
    out_gain: float | None = None,
) -> MlpParams:
    """Baseline MLP init: normc hidden layers, role-dependent output gain."""
    if out_gain is None:
        out_gain = 0.01 if head_role == "actor" else 1.0
    layers = []
    n = len(spec_dims) - 1
    for i in range(n):
        fan_in, fan_out = spec_dims[i], spec_dims[i + 1]
        gain = out_gain if i == n - 1 else hidden_gain
        w = normc_init((fan_in, fan_out), gain, rng).T
        layers.append((_leaf(w), _leaf(np.zeros(fan_out))))
    manifest.append({"group": group, "scheme": "normc", "hidden_gain": hidden_gain, "out_gain": out_gain})
    return MlpParams(layers=layers)


def build_model(cfg: RunConfig, n_tasks: int, obs_dim: int, n_actions: int, seed: int):
    """Build and initialize the configured model; returns (model, manifest)."""
    rng_pool = RngPool(seed)
    manifest: list[dict] = []
    embedder = _build_embedder(cfg, n_tasks, obs_dim, n_actions, rng_pool, manifest)
    e_dim = embedder.e_dim
    scheme = scheme_from_config(cfg, n_tasks=n_tasks)

    if cfg.architecture == "hypernetwork":
        spec = BaseNetSpec.from_size(cfg.base_size, input_dim=obs_dim, action_dim=n_actions)
        layout = layout_for(spec)
        if scheme.kind == "film_bias_hyperinit":
            raise ValueError("film_bias_hyperinit applies to the film architecture")
        hyper = _build_hypernet(cfg, layout, e_dim, scheme, rng_pool, manifest)
        model = HypernetPolicy(hyper, layout, embedder)

    elif cfg.architecture == "standard":
        spec = BaseNetSpec.from_size(cfg.base_size, input_dim=obs_dim + e_dim, action_dim=n_actions)
        rng = rng_pool.stream("init/standard")
        actor = _build_mlp(spec.head_dims("actor"), "actor", rng, manifest, "standard/actor")
        critic = _build_mlp(spec.head_dims("critic"), "critic", rng, manifest, "standard/critic")
        model = StandardPolicy(actor, critic, embedder)

    elif cfg.architecture == "film":
        spec = BaseNetSpec.from_size(cfg.base_size, input_dim=obs_dim, action_dim=n_actions)
        film_layout = film_layout_for(spec)
        mlp_layout = layout_for(spec)
        rng = rng_pool.stream("init/film")
        if scheme.kind == "film_bias_hyperinit":
            head_w, head_b, base_weights = film_bias_hyperinit(film_layout, scheme.base, e_dim, rng)
            manifest.append(
                {"group": "film", "scheme": "film_bias_hyperinit", "base": scheme.base.kind}
            )
        else:
            base = scheme.base or BaseInit()
            draw = sample_base_flat(mlp_layout, base, rng)
            base_weights = {
                e.name: mlp_layout.view(draw, e).copy()
                for e in mlp_layout.entries
                if e.kind == "weight"
            }
            head_w, head_b, record = init_hypernet_head(scheme, film_layout, e_dim, rng)
            record["group"] = "film/head"
            manifest.append(record)
        head = HypernetParams(head_w=_leaf(head_w), head_b=_leaf(head_b))
        film = FilmParams(
            weights={k: _leaf(v) for k, v in base_weights.items()},
            head=head,
            layout=film_layout,
        )
        model = FilmPolicy(film, embedder)
    else:
        raise ValueError(f"unknown architecture {cfg.architecture!r}")

    manifest_doc = {
        "seed": seed,
        "architecture": cfg.architecture,
        "encoder": cfg.encoder,
        "e_dim": e_dim,
        "scheme": scheme.kind,
        "groups": manifest,
        "param_count": int(sum(p.data.size for p in model.params().values())),
    }
    return model, manifest_doc
