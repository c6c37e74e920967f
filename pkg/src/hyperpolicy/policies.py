"""Forward passes for the three policy architectures.

All three produce (action logits, state value) from a state and a task
embedding; they differ in how the embedding enters:

  * hypernetwork: a (possibly linear) network maps the embedding to the flat
    parameter vector of the base MLP, which is then run on the state alone;
  * standard: the embedding is concatenated to the state as a plain input of
    two separate actor/critic MLPs;
  * FiLM: the base MLP owns its weights, while a generated vector scales and
    shifts each layer's pre-activations.

`BaseSlices`/`FilmSlices` carve the generated flat vector into per-layer
tensors once, so a rollout that reuses the same parameters across many steps
does not re-slice at every step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .layout import FilmLayout, ParamLayout

__all__ = [
    "HypernetParams",
    "hypernet_forward",
    "BaseSlices",
    "base_forward",
    "base_forward_batched",
    "MlpParams",
    "mlp_forward",
    "standard_forward",
    "FilmParams",
    "FilmSlices",
    "film_forward",
]


def _activation(name: str):
    return ad.relu if name == "relu" else ad.tanh


def _layer_indices(layout, head: str) -> list[int]:
    seen = sorted({int(e.name.split("/")[1][1:]) for e in layout.entries if e.head == head})
    return seen


# ---------------------------------------------------------------------------
# hypernetwork


@dataclass
class HypernetParams:
    """Final layer (head) plus optional hidden layers of the hypernetwork.

    With no hidden layers the hypernetwork is linear and its head input is
    the embedding itself.
    """

    head_w: Tensor  # (total_len, x_dim)
    head_b: Tensor  # (total_len,)
    hidden: list[tuple[Tensor, Tensor]] = field(default_factory=list)

    @property
    def x_dim(self) -> int:
        return self.head_w.data.shape[1]

    @property
    def e_dim(self) -> int:
        return self.hidden[0][0].data.shape[1] if self.hidden else self.x_dim

    def named(self, prefix: str = "hypernet") -> dict[str, Tensor]:
        out = {f"{prefix}/head_w": self.head_w, f"{prefix}/head_b": self.head_b}
        for i, (w, b) in enumerate(self.hidden):
            out[f"{prefix}/h{i}_w"] = w
            out[f"{prefix}/h{i}_b"] = b
        return out


def hypernet_forward(h: HypernetParams, e: Tensor) -> Tensor:
    """Generate the flat base-parameter vector: (x_dim,) -> (total_len,),
    or batched (B, x_dim) -> (B, total_len)."""
    if e.data.shape[-1] != h.e_dim:
        raise ad.AutodiffError(
            f"embedding dim {e.data.shape[-1]} does not match hypernetwork input {h.e_dim}"
        )
    x = e
    for w, b in h.hidden:
        if x.data.ndim == 1:
            x = ad.relu(ad.add(ad.matmul(w, x), b))
        else:
            x = ad.relu(ad.add(ad.matmul(x, ad.transpose(w)), ad.expand_rows(b, x.data.shape[0])))
    if x.data.ndim == 1:
        return ad.add(ad.matmul(h.head_w, x), h.head_b)
    return ad.add(ad.matmul(x, ad.transpose(h.head_w)), ad.expand_rows(h.head_b, x.data.shape[0]))


# ---------------------------------------------------------------------------
# base network evaluated from a flat parameter vector


class BaseSlices:
    """Per-layer (weight, bias) tensors carved out of a flat vector.

    `phi` may be (total_len,) for one shared parameter set, or
    (B, total_len) for per-row parameters; states follow the same batching.
    """

    def __init__(self, phi: Tensor, layout: ParamLayout):
        if phi.data.shape[-1] != layout.total_len:
            raise ad.AutodiffError(
                f"flat parameter length {phi.data.shape} != layout total {layout.total_len}"
            )
        if phi.data.ndim not in (1, 2):
            raise ad.AutodiffError("phi must be 1-D or 2-D")
        self.layout = layout
        self.per_row = phi.data.ndim == 2
        self.batch = phi.data.shape[0] if self.per_row else None
        axis = 1 if self.per_row else 0
        self.layers: dict[str, list] = {}
        for head in layout.spec.heads:
            chain = []
            for li in _layer_indices(layout, head):
                w_e = layout.slice_of(f"{head}/w{li}")
                b_e = layout.slice_of(f"{head}/b{li}")
                w = ad.narrow(phi, axis, w_e.offset, w_e.size)
                if self.per_row:
                    w = ad.reshape(w, (self.batch,) + w_e.shape)
                else:
                    w = ad.reshape(w, w_e.shape)
                b = ad.narrow(phi, axis, b_e.offset, b_e.size)
                chain.append((w, b, w_e))
            self.layers[head] = chain

    def _chain(self, head: str, x: Tensor) -> Tensor:
        act = _activation(self.layout.spec.activation)
        for w, b, w_e in self.layers[head]:
            if self.per_row:
                z = ad.add(
                    ad.reshape(
                        ad.bmm(w, ad.reshape(x, (self.batch, w_e.shape[1], 1))),
                        (self.batch, w_e.shape[0]),
                    ),
                    b,
                )
            elif x.data.ndim == 1:
                z = ad.add(ad.matmul(w, x), b)
            else:
                z = ad.add(ad.matmul(x, ad.transpose(w)), ad.expand_rows(b, x.data.shape[0]))
            x = z if w_e.is_output else act(z)
        return x

    def forward(self, states: Tensor, actor_only: bool = False) -> tuple[Tensor, Tensor | None]:
        if self.per_row and states.data.shape[0] != self.batch:
            raise ad.AutodiffError("states and parameter batch sizes disagree")
        logits = self._chain("actor", states)
        if actor_only:
            return logits, None
        value = self._chain("critic", states)
        if states.data.ndim == 1 and not self.per_row:
            value = ad.reshape(value, ())
        else:
            value = ad.reshape(value, (states.data.shape[0],))
        return logits, value

    def _chain_time(self, head: str, x: Tensor) -> Tensor:
        # x is (B, T, in); weights stay (B, out, in) per row, so each layer is
        # one batched matmul and the weight gradient is accumulated over time
        # inside the bmm backward instead of T outer products.
        act = _activation(self.layout.spec.activation)
        n_time = x.data.shape[1]
        for w, b, w_e in self.layers[head]:
            z = ad.add(ad.bmm(x, ad.transpose_last2(w)), ad.expand_mid(b, n_time))
            x = z if w_e.is_output else act(z)
        return x

    def forward_time(self, states: Tensor) -> tuple[Tensor, Tensor]:
        """Time-batched evaluation: states (B, T, obs) -> ((B, T, A), (B, T)).

        Requires per-row parameters shared across the T axis (a rollout with
        a static task embedding).
        """
        if not self.per_row:
            raise ad.AutodiffError("forward_time needs per-row parameters")
        if states.data.ndim != 3 or states.data.shape[0] != self.batch:
            raise ad.AutodiffError(f"expected ({self.batch}, T, obs) states, got {states.data.shape}")
        logits = self._chain_time("actor", states)
        value = self._chain_time("critic", states)
        return logits, ad.reshape(value, states.data.shape[:2])


def base_forward(phi: Tensor, layout: ParamLayout, state: Tensor) -> tuple[Tensor, Tensor]:
    """Run the base policy from one flat parameter vector.

    `state` may be a single (obs,) vector or a (B, obs) batch sharing `phi`.
    """
    if phi.data.ndim != 1:
        raise ad.AutodiffError("base_forward expects a 1-D flat vector; see base_forward_batched")
    return BaseSlices(phi, layout).forward(state)


def base_forward_batched(phi: Tensor, layout: ParamLayout, states: Tensor) -> tuple[Tensor, Tensor]:
    """Per-row parameter vectors: phi (B, total_len) with states (B, obs)."""
    if phi.data.ndim != 2:
        raise ad.AutodiffError("base_forward_batched expects (B, total_len) parameters")
    return BaseSlices(phi, layout).forward(states)


# ---------------------------------------------------------------------------
# standard architecture


@dataclass
class MlpParams:
    layers: list[tuple[Tensor, Tensor]]
    activation: str = "relu"

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for i, (w, b) in enumerate(self.layers):
            out[f"{prefix}/w{i}"] = w
            out[f"{prefix}/b{i}"] = b
        return out


def mlp_forward(params: MlpParams, x: Tensor) -> Tensor:
    act = _activation(params.activation)
    n = len(params.layers)
    for i, (w, b) in enumerate(params.layers):
        if x.data.ndim == 1:
            z = ad.add(ad.matmul(w, x), b)
        else:
            z = ad.add(ad.matmul(x, ad.transpose(w)), ad.expand_rows(b, x.data.shape[0]))
        x = z if i == n - 1 else act(z)
    return x


def standard_forward(
    actor: MlpParams, critic: MlpParams, state: Tensor, e: Tensor
) -> tuple[Tensor, Tensor]:
    """Concatenate state and embedding, run the two separate MLPs."""
    if state.data.ndim != e.data.ndim:
        raise ad.AutodiffError("state and embedding must have matching batch rank")
    axis = 0 if state.data.ndim == 1 else 1
    x = ad.concat([state, e], axis=axis)
    logits = mlp_forward(actor, x)
    value = mlp_forward(critic, x)
    if state.data.ndim == 1:
        value = ad.reshape(value, ())
    else:
        value = ad.reshape(value, (state.data.shape[0],))
    return logits, value


# ---------------------------------------------------------------------------
# FiLM


@dataclass
class FilmParams:
    """Base MLP weights (no biases of their own) plus the generator head."""

    weights: dict[str, Tensor]  # "actor/w0" ... matching the film layout layers
    head: HypernetParams
    layout: FilmLayout

    def named(self, prefix: str = "film") -> dict[str, Tensor]:
        out = {f"{prefix}/{k}": v for k, v in self.weights.items()}
        out.update(self.head.named(f"{prefix}/head"))
        return out


class FilmSlices:
    """Per-layer (scale, bias) tensors carved out of a generated modulation."""

    def __init__(self, params: FilmParams, mod: Tensor):
        if mod.data.shape[-1] != params.layout.total_len:
            raise ad.AutodiffError("modulation length does not match the film layout")
        self.params = params
        self.per_row = mod.data.ndim == 2
        self.batch = mod.data.shape[0] if self.per_row else None
        axis = 1 if self.per_row else 0
        self.layers: dict[str, list] = {}
        for head in params.layout.spec.heads:
            chain = []
            for li in _layer_indices(params.layout, head):
                s_e = params.layout.slice_of(f"{head}/s{li}")
                b_e = params.layout.slice_of(f"{head}/b{li}")
                scale = ad.narrow(mod, axis, s_e.offset, s_e.size)
                bias = ad.narrow(mod, axis, b_e.offset, b_e.size)
                chain.append((params.weights[f"{head}/w{li}"], scale, bias, s_e))
            self.layers[head] = chain

    def _chain(self, head: str, x: Tensor) -> Tensor:
        act = _activation(self.params.layout.spec.activation)
        for w, scale, bias, s_e in self.layers[head]:
            if x.data.ndim == 1:
                if self.per_row:
                    raise ad.AutodiffError("batched modulation requires batched states")
                pre = ad.matmul(w, x)
            else:
                pre = ad.matmul(x, ad.transpose(w))
                if not self.per_row:
                    scale = ad.expand_rows(scale, x.data.shape[0])
                    bias = ad.expand_rows(bias, x.data.shape[0])
            z = ad.add(ad.mul(scale, pre), bias)
            x = z if s_e.is_output else act(z)
        return x

    def forward(self, states: Tensor, actor_only: bool = False) -> tuple[Tensor, Tensor | None]:
        logits = self._chain("actor", states)
        if actor_only:
            return logits, None
        value = self._chain("critic", states)
        if states.data.ndim == 1:
            value = ad.reshape(value, ())
        else:
            value = ad.reshape(value, (states.data.shape[0],))
        return logits, value

    def _chain_time(self, head: str, x: Tensor) -> Tensor:
        # x is (B, T, in); owned weights are shared, modulation is per row.
        act = _activation(self.params.layout.spec.activation)
        b, n_time, _ = x.data.shape
        for w, scale, bias, s_e in self.layers[head]:
            flat = ad.reshape(x, (b * n_time, x.data.shape[2]))
            pre = ad.reshape(ad.matmul(flat, ad.transpose(w)), (b, n_time, w.data.shape[0]))
            if self.per_row:
                z = ad.add(ad.mul(ad.expand_mid(scale, n_time), pre), ad.expand_mid(bias, n_time))
            else:
                raise ad.AutodiffError("forward_time needs per-row modulation")
            x = z if s_e.is_output else act(z)
        return x

    def forward_time(self, states: Tensor) -> tuple[Tensor, Tensor]:
        """Time-batched evaluation: states (B, T, obs) -> ((B, T, A), (B, T))."""
        if states.data.ndim != 3:
            raise ad.AutodiffError("forward_time expects (B, T, obs) states")
        logits = self._chain_time("actor", states)
        value = self._chain_time("critic", states)
        return logits, ad.reshape(value, states.data.shape[:2])


def film_forward(params: FilmParams, e: Tensor, state: Tensor) -> tuple[Tensor, Tensor]:
    """FiLM policy: generated per-layer scales/biases modulate the owned weights."""
    mod = hypernet_forward(params.head, e)
    return FilmSlices(params, mod).forward(state)
