"""Meta-episode rollouts and synchronous advantage-actor-critic training.

Each update collects one batch of complete meta-episodes (one per worker
slot, all stepped in lockstep), computes GAE advantages over the whole
meta-episode (the value chain bootstraps across episode boundaries inside a
meta-episode, since the task persists, and is cut only at meta-episode
ends), then takes a single optimizer step on

    -E[log pi * A] + value_coef * E[(V - target)^2] - entropy_coef * E[H].

Everything is a pure function of (config, seed): rollouts are vectorized in
one thread and all sampling goes through named RNG streams.
"""

from __future__ import annotations

import csv
import json
import traceback
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, backward, tape
from .checkpoint import save_arrays
from .config import RunConfig, config_to_dict
from .gridworld import (
    GridTask,
    GridWorldConfig,
    VectorGridWorld,
    enumerate_tasks,
    mean_oracle_meta_return,
    oracle_meta_return,
)
from .models import build_model
from .optim import clip_grad_norm, make_optimizer
from .rng import RngPool

__all__ = [
    "RolloutBatch",
    "collect_rollout",
    "compute_advantages",
    "a2c_losses",
    "a2c_update",
    "a2c_update_recompute",
    "train",
    "TrainerAbort",
    "METRIC_COLUMNS",
]

METRIC_COLUMNS = [
    "env_steps",
    "update",
    "mean_meta_return",
    "return_stderr",
    "policy_loss",
    "value_loss",
    "entropy",
    "grad_norm",
]


class TrainerAbort(RuntimeError):
    """Non-finite loss or parameters; a diagnostic checkpoint was written."""


@dataclass
class RolloutBatch:
    """One synchronous batch: (T, B) arrays plus the per-step graph nodes."""

    states: np.ndarray  # (T, B, obs)
    actions: np.ndarray  # (T, B) int
    rewards: np.ndarray  # (T, B)
    values: np.ndarray  # (T, B) detached critic outputs
    episode_done: np.ndarray  # (T, B) bool
    meta_done: np.ndarray  # (T, B) bool
    logprob_nodes: list  # T tensors of shape (B,)
    value_nodes: list  # T tensors of shape (B,)
    entropy_nodes: list  # T tensors of shape (B,)
    tasks: list[GridTask]

    @property
    def horizon(self) -> int:
        return self.states.shape[0]

    @property
    def batch(self) -> int:
        return self.states.shape[1]

    def meta_returns(self) -> np.ndarray:
        """Undiscounted return summed across the whole meta-episode, per slot."""
        return self.rewards.sum(axis=0)


def _sample_actions(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF categorical sampling, one draw per row."""
    cum = np.cumsum(probs, axis=1)
    u = rng.random((probs.shape[0], 1))
    return np.minimum((u > cum).sum(axis=1), probs.shape[1] - 1)


def collect_rollout(
    model,
    env: VectorGridWorld,
    tasks: list[GridTask],
    rng: np.random.Generator,
    greedy: bool = False,
    record_graph: bool = True,
) -> RolloutBatch:
    """Roll complete meta-episodes in lockstep; graph nodes are kept only
    when a tape is active (training)."""
    cfg = env.cfg
    batch = env.batch
    horizon = cfg.meta_len
    obs = env.reset(tasks)
    ctx = model.begin_rollout(np.asarray([t.task_id for t in tasks]))

    states = np.zeros((horizon, batch, cfg.obs_dim))
    actions = np.zeros((horizon, batch), dtype=np.int64)
    rewards = np.zeros((horizon, batch))
    values = np.zeros((horizon, batch))
    episode_done = np.zeros((horizon, batch), dtype=bool)
    meta_done = np.zeros((horizon, batch), dtype=bool)
    logprob_nodes: list = []
    value_nodes: list = []
    entropy_nodes: list = []

    prev_actions = None
    prev_rewards = None
    for t in range(horizon):
        states[t] = obs
        logits, value_t = model.act(ctx, obs, prev_actions, prev_rewards, actor_only=not record_graph)
        if greedy:
            acts = np.argmax(logits.data, axis=1)
        else:
            acts = _sample_actions(ad.softmax(logits.data), rng)
        obs, r, ep_done, m_done = env.step(acts)
        actions[t] = acts
        rewards[t] = r
        episode_done[t] = ep_done
        meta_done[t] = m_done
        if record_graph:
            values[t] = value_t.data
            logprob_nodes.append(ad.softmax_logprob(logits, acts))
            value_nodes.append(value_t)
            entropy_nodes.append(ad.softmax_entropy(logits))
        prev_actions = acts
        prev_rewards = r

    return RolloutBatch(
        states=states,
        actions=actions,
        rewards=rewards,
        values=values,
        episode_done=episode_done,
        meta_done=meta_done,
        logprob_nodes=logprob_nodes,
        value_nodes=value_nodes,
        entropy_nodes=entropy_nodes,
        tasks=tasks,
    )


def compute_advantages(
    rewards: np.ndarray,
    values: np.ndarray,
    meta_done: np.ndarray,
    gamma: float,
    lam: float,
    bootstrap: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """GAE over (T, B) arrays; the recursion is cut at meta-episode ends only.

    `bootstrap` is the value of the state after step T-1 (zero where the
    meta-episode truly ended, which in this benchmark is every slot).
    """
    if rewards.shape != values.shape or rewards.shape != meta_done.shape:
        raise ValueError("rewards, values, meta_done must share the (T, B) shape")
    horizon, batch = rewards.shape
    if bootstrap is None:
        bootstrap = np.zeros(batch)
    adv = np.zeros_like(rewards)
    last = np.zeros(batch)
    next_value = bootstrap
    for t in range(horizon - 1, -1, -1):
        carry = 1.0 - meta_done[t].astype(np.float64)
        delta = rewards[t] + gamma * next_value * carry - values[t]
        last = delta + gamma * lam * carry * last
        adv[t] = last
        next_value = values[t]
    return adv, adv + values


@dataclass
class UpdateStats:
    policy_loss: float
    value_loss: float
    entropy: float
    grad_norm: float
    total_loss: float


def a2c_losses(logprobs, values, entropies, advantages_flat, targets_flat, cfg):
    """Scalar loss from flat (N,) nodes and matching constant arrays."""
    adv = Tensor(advantages_flat)
    tgt = Tensor(targets_flat)
    policy_loss = ad.neg(ad.tmean(ad.mul(logprobs, adv)))
    verr = ad.sub(values, tgt)
    value_loss = ad.tmean(ad.mul(verr, verr))
    entropy = ad.tmean(entropies)
    total = ad.add(
        ad.add(policy_loss, ad.mul(value_loss, cfg.value_coef)),
        ad.mul(entropy, -cfg.entropy_coef),
    )
    return total, policy_loss, value_loss, entropy


def _apply_update(model, optimizer, total, policy_loss, value_loss, entropy, cfg) -> UpdateStats:
    if not np.isfinite(total.data):
        raise TrainerAbort(f"non-finite loss: {total.data}")
    backward(total)
    grad_norm = clip_grad_norm(model.params(), cfg.grad_clip)
    optimizer.step()
    optimizer.zero_grad()
    return UpdateStats(
        policy_loss=policy_loss.item(),
        value_loss=value_loss.item(),
        entropy=entropy.item(),
        grad_norm=grad_norm,
        total_loss=total.item(),
    )


def a2c_update(model, optimizer, batch: RolloutBatch, cfg, gamma: float, lam: float) -> UpdateStats:
    """One gradient step over a batch whose graph was recorded during the
    rollout (the recurrent-encoder path); gradients flow through policy,
    critic, encoder and hypernetwork alike."""
    advantages, value_targets = compute_advantages(
        batch.rewards, batch.values, batch.meta_done, gamma, lam
    )
    total, policy_loss, value_loss, entropy = a2c_losses(
        ad.concat(batch.logprob_nodes, axis=0),
        ad.concat(batch.value_nodes, axis=0),
        ad.concat(batch.entropy_nodes, axis=0),
        advantages.reshape(-1),
        value_targets.reshape(-1),
        cfg,
    )
    return _apply_update(model, optimizer, total, policy_loss, value_loss, entropy, cfg)


def a2c_update_recompute(model, optimizer, batch: RolloutBatch, cfg, gamma: float, lam: float) -> UpdateStats:
    """One gradient step via a time-batched second forward pass.

    Valid when the task embedding is static over the rollout; the loss pass
    then needs one batched matmul per layer instead of one per step.
    """
    task_ids = np.asarray([t.task_id for t in batch.tasks])
    logprobs, values_bt, entropies = model.recompute(task_ids, batch.states, batch.actions)
    values_tb = values_bt.data.T
    advantages, value_targets = compute_advantages(
        batch.rewards, values_tb, batch.meta_done, gamma, lam
    )
    total, policy_loss, value_loss, entropy = a2c_losses(
        logprobs,
        ad.reshape(values_bt, (values_bt.data.size,)),
        entropies,
        advantages.T.reshape(-1),
        value_targets.T.reshape(-1),
        cfg,
    )
    return _apply_update(model, optimizer, total, policy_loss, value_loss, entropy, cfg)


def _check_finite_params(params: dict[str, Tensor]):
    for name, p in params.items():
        if not np.all(np.isfinite(p.data)):
            raise TrainerAbort(f"non-finite parameter {name!r}")


def evaluate(model, env_cfg: GridWorldConfig, tasks, rng: np.random.Generator, n_meta: int, greedy: bool) -> tuple[float, float]:
    """Mean (raw, oracle-normalized) meta-return over fresh task draws."""
    env = VectorGridWorld(env_cfg, n_meta)
    drawn = [tasks[int(rng.integers(len(tasks)))] for _ in range(n_meta)]
    batch = collect_rollout(model, env, drawn, rng, greedy=greedy, record_graph=False)
    raw = batch.meta_returns()
    oracle = np.asarray([oracle_meta_return(t, env_cfg) for t in drawn])
    return float(raw.mean()), float(np.mean(raw / np.where(oracle == 0, 1.0, oracle)))


def _env_config(cfg: RunConfig) -> GridWorldConfig:
    e = cfg.env
    return GridWorldConfig(
        width=e.width,
        height=e.height,
        episode_len=e.episode_len,
        episodes_per_meta=e.episodes_per_meta,
        step_reward=e.step_reward,
        goal_reward=e.goal_reward,
        observation=e.observation,
    )


def train(cfg: RunConfig, seed: int, run_dir: str | Path) -> Path:
    """Full training run; writes config snapshot, manifest, metrics, eval
    curves and a final checkpoint into `run_dir`."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)

    env_cfg = _env_config(cfg)
    tasks = enumerate_tasks(env_cfg)
    model, manifest = build_model(cfg, len(tasks), env_cfg.obs_dim, env_cfg.n_actions, seed)
    params = model.params()
    optimizer = make_optimizer(cfg.trainer.optimizer, params, cfg.learning_rate(), cfg.trainer.adam_eps)
    rng_pool = RngPool(seed)
    task_rng = rng_pool.stream("tasks")
    action_rng = rng_pool.stream("actions")
    eval_rng = rng_pool.stream("eval")

    tcfg = cfg.trainer
    env = VectorGridWorld(env_cfg, tcfg.workers)
    steps_per_update = tcfg.workers * env_cfg.meta_len
    n_updates = max(1, tcfg.total_env_steps // steps_per_update)

    from . import __version__

    snapshot = dict(config_to_dict(cfg))
    snapshot["seeds"] = [seed]
    (run_dir / "config.json").write_text(json.dumps(snapshot, indent=2, sort_keys=True))
    (run_dir / "manifest.json").write_text(
        json.dumps({"code_version": __version__, **manifest}, indent=2, sort_keys=True)
    )

    metrics_path = run_dir / "metrics.csv"
    eval_path = run_dir / "eval.csv"
    traj_path = run_dir / "trajectories.jsonl" if tcfg.dump_trajectories else None
    oracle_mean = mean_oracle_meta_return(tasks, env_cfg)

    try:
        with open(metrics_path, "w", newline="") as mfh, open(eval_path, "w", newline="") as efh:
            mwriter = csv.writer(mfh)
            mwriter.writerow(METRIC_COLUMNS)
            ewriter = csv.writer(efh)
            ewriter.writerow(
                ["env_steps", "update", "greedy_return", "greedy_oracle_frac", "sample_return", "sample_oracle_frac"]
            )
            fast_path = model.embedder.static
            for update in range(1, n_updates + 1):
                drawn = [tasks[int(task_rng.integers(len(tasks)))] for _ in range(tcfg.workers)]
                if fast_path:
                    batch = collect_rollout(model, env, drawn, action_rng, record_graph=False)
                    with tape():
                        stats = a2c_update_recompute(
                            model, optimizer, batch, tcfg, tcfg.gamma, tcfg.gae_lambda
                        )
                else:
                    with tape():
                        batch = collect_rollout(model, env, drawn, action_rng)
                        stats = a2c_update(model, optimizer, batch, tcfg, tcfg.gamma, tcfg.gae_lambda)
                _check_finite_params(params)
                returns = batch.meta_returns()
                stderr = float(returns.std(ddof=1) / np.sqrt(len(returns))) if len(returns) > 1 else 0.0
                mwriter.writerow(
                    [
                        update * steps_per_update,
                        update,
                        repr(float(returns.mean())),
                        repr(stderr),
                        repr(stats.policy_loss),
                        repr(stats.value_loss),
                        repr(stats.entropy),
                        repr(stats.grad_norm),
                    ]
                )
                if traj_path is not None and update == n_updates:
                    _dump_trajectories(traj_path, batch)
                if tcfg.eval_every and (update % tcfg.eval_every == 0 or update == n_updates):
                    g_ret, g_frac = evaluate(model, env_cfg, tasks, eval_rng, tcfg.eval_meta_episodes, True)
                    s_ret, s_frac = evaluate(model, env_cfg, tasks, eval_rng, tcfg.eval_meta_episodes, False)
                    ewriter.writerow(
                        [
                            update * steps_per_update,
                            update,
                            repr(g_ret),
                            repr(g_frac),
                            repr(s_ret),
                            repr(s_frac),
                        ]
                    )
    except TrainerAbort as exc:
        save_arrays(run_dir / "checkpoint.bin", {k: v.data for k, v in params.items()})
        (run_dir / "FAILED").write_text(f"{exc}\n{traceback.format_exc()}")
        raise

    save_arrays(run_dir / "checkpoint.bin", {k: v.data for k, v in params.items()})
    (run_dir / "done.json").write_text(
        json.dumps(
            {
                "updates": n_updates,
                "env_steps": n_updates * steps_per_update,
                "oracle_mean_meta_return": oracle_mean,
                "param_count": manifest["param_count"],
            },
            indent=2,
            sort_keys=True,
        )
    )
    return run_dir


def _dump_trajectories(path: Path, batch: RolloutBatch):
    with open(path, "w") as fh:
        for b in range(batch.batch):
            for t in range(batch.horizon):
                fh.write(
                    json.dumps(
                        {
                            "slot": b,
                            "t": t,
                            "state": batch.states[t, b].tolist(),
                            "action": int(batch.actions[t, b]),
                            "reward": float(batch.rewards[t, b]),
                            "episode_done": bool(batch.episode_done[t, b]),
                            "meta_done": bool(batch.meta_done[t, b]),
                        }
                    )
                    + "\n"
                )
