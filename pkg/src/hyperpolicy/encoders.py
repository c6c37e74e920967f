"""Task encoders: one-hot task IDs and a recurrent (GRU) history encoder.

The recurrent encoder consumes (state, previous action one-hot, previous
reward) steps and carries its hidden state across episode boundaries inside a
meta-episode; it resets only when a new meta-episode starts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

__all__ = ["encode_onehot", "GruEncoder"]


def encode_onehot(task_id: int, n_tasks: int) -> np.ndarray:
    if not 0 <= task_id < n_tasks:
        raise ValueError(f"task id {task_id} out of range [0, {n_tasks})")
    e = np.zeros(n_tasks, dtype=np.float64)
    e[task_id] = 1.0
    return e


@dataclass
class GruEncoder:
    """Single gated recurrent cell plus a linear projection to the embedding."""

    w_x: Tensor  # (3H, in_dim) stacked reset/update/candidate input weights
    w_h: Tensor  # (3H, H)
    b: Tensor  # (3H,)
    proj_w: Tensor  # (e_dim, H)
    proj_b: Tensor  # (e_dim,)

    @property
    def hidden_dim(self) -> int:
        return self.w_h.data.shape[1]

    @property
    def input_dim(self) -> int:
        return self.w_x.data.shape[1]

    @property
    def e_dim(self) -> int:
        return self.proj_w.data.shape[0]

    def named(self, prefix: str = "encoder") -> dict[str, Tensor]:
        return {
            f"{prefix}/w_x": self.w_x,
            f"{prefix}/w_h": self.w_h,
            f"{prefix}/b": self.b,
            f"{prefix}/proj_w": self.proj_w,
            f"{prefix}/proj_b": self.proj_b,
        }

    def initial_hidden(self, batch: int | None) -> Tensor:
        h = self.hidden_dim
        shape = (h,) if batch is None else (batch, h)
        return Tensor(np.zeros(shape))

    def step(self, x: Tensor, h: Tensor) -> Tensor:
        """One cell update; x is (in,) or (B, in), h matches."""
        hd = self.hidden_dim
        if x.data.ndim == 1:
            gx = ad.add(ad.matmul(self.w_x, x), self.b)
            gh = ad.matmul(self.w_h, h)
            axis = 0
        else:
            batch = x.data.shape[0]
            gx = ad.add(ad.matmul(x, ad.transpose(self.w_x)), ad.expand_rows(self.b, batch))
            gh = ad.matmul(h, ad.transpose(self.w_h))
            axis = 1
        r = ad.sigmoid(ad.add(ad.narrow(gx, axis, 0, hd), ad.narrow(gh, axis, 0, hd)))
        z = ad.sigmoid(ad.add(ad.narrow(gx, axis, hd, hd), ad.narrow(gh, axis, hd, hd)))
        n = ad.tanh(ad.add(ad.narrow(gx, axis, 2 * hd, hd), ad.mul(r, ad.narrow(gh, axis, 2 * hd, hd))))
        one_minus_z = ad.add(ad.neg(z), 1.0)
        return ad.add(ad.mul(one_minus_z, n), ad.mul(z, h))

    def project(self, h: Tensor) -> Tensor:
        if h.data.ndim == 1:
            return ad.add(ad.matmul(self.proj_w, h), self.proj_b)
        return ad.add(
            ad.matmul(h, ad.transpose(self.proj_w)), ad.expand_rows(self.proj_b, h.data.shape[0])
        )

    def encode(self, prefix: list[np.ndarray]) -> Tensor:
        """Embedding after consuming a whole step sequence (empty -> initial)."""
        h = self.initial_hidden(None)
        for step_input in prefix:
            h = self.step(Tensor(step_input), h)
        return self.project(h)


def gru_step_input(state: np.ndarray, prev_action: int | None, n_actions: int, prev_reward: float) -> np.ndarray:
    """Pack one encoder input: state, previous action one-hot (zeros at t=0), reward."""
    a = np.zeros(n_actions, dtype=np.float64)
    if prev_action is not None:
        a[prev_action] = 1.0
    return np.concatenate([np.asarray(state, dtype=np.float64), a, [prev_reward]])
