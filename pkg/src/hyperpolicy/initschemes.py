"""Initialization schemes for hypernetwork heads and plain networks.

Three default matrix initializers (kaiming, normc, orthogonal) plus the
hypernetwork-aware schemes:

  * hfi: scales the head rows so the generated base network preserves
    forward activation variance, given the embedding's per-coordinate
    second moment;
  * weight_hyperinit: each head column is an independent full draw of the
    base parameter vector from a base scheme f, head bias zero, so a one-hot
    embedding selects one recorded draw exactly;
  * bias_hyperinit: head weights zero, head bias a single draw from f, so
    every embedding yields the same base network;
  * film_bias_hyperinit: the FiLM adaptation, placing a draw's weights into
    the base network, its biases into the generated bias slices, and ones
    into the generated scale slices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .layout import BaseNetSpec, FilmLayout, ParamLayout, layout_for

__all__ = [
    "kaiming_init",
    "normc_init",
    "orthogonal_init",
    "BaseInit",
    "sample_base_flat",
    "hfi_init",
    "weight_hyperinit",
    "bias_hyperinit",
    "film_bias_hyperinit",
    "InitScheme",
    "init_hypernet_head",
    "DIRECT_SCHEMES",
    "HYPER_SCHEMES",
]

DIRECT_SCHEMES = ("kaiming", "normc", "orthogonal")
HYPER_SCHEMES = ("hfi", "weight_hyperinit", "bias_hyperinit", "film_bias_hyperinit")

SQRT2 = math.sqrt(2.0)


# ---------------------------------------------------------------------------
# default matrix initializers


def _check_2d(shape) -> tuple[int, int]:
    shape = tuple(int(s) for s in shape)
    if len(shape) != 2:
        raise ValueError(f"expected a 2-D shape, got {shape}")
    return shape


def kaiming_init(shape, gain: float, distribution: str, rng: np.random.Generator) -> np.ndarray:
    """Fan-in scaled draw for an (out, in) matrix."""
    out_dim, fan_in = _check_2d(shape)
    if distribution == "normal":
        return rng.standard_normal((out_dim, fan_in)) * (gain / math.sqrt(fan_in))
    if distribution == "uniform":
        bound = gain * math.sqrt(3.0 / fan_in)
        return rng.uniform(-bound, bound, (out_dim, fan_in))
    raise ValueError(f"unknown kaiming distribution {distribution!r}")


def normc_init(shape, gain: float, rng: np.random.Generator) -> np.ndarray:
    """Standard-normal draw with each column rescaled to norm `gain`."""
    rows, cols = _check_2d(shape)
    w = rng.standard_normal((rows, cols))
    norms = np.sqrt(np.square(w).sum(axis=0, keepdims=True))
    return w * (gain / norms)


def orthogonal_init(shape, gain: float, rng: np.random.Generator) -> np.ndarray:
    """QR-based orthogonal rows/columns (whichever fits), scaled by `gain`."""
    rows, cols = _check_2d(shape)
    flat = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(flat)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


# ---------------------------------------------------------------------------
# base scheme f: how to draw a full flat base-parameter vector


@dataclass(frozen=True)
class BaseInit:
    """The base scheme f, with per-role gains.

    Weight entries are drawn so each unit's incoming weight vector follows
    the scheme's property (for normc: incoming norm equals the gain); bias
    entries are zero.
    """

    kind: str = "normc"
    hidden_gain: float = 1.0
    actor_head_gain: float = SQRT2
    critic_head_gain: float = SQRT2
    distribution: str = "uniform"  # kaiming only

    def __post_init__(self):
        if self.kind not in DIRECT_SCHEMES:
            raise ValueError(f"base scheme must be one of {DIRECT_SCHEMES}, got {self.kind!r}")

    def gain_for(self, entry) -> float:
        if not entry.is_output:
            return self.hidden_gain
        return self.actor_head_gain if entry.head == "actor" else self.critic_head_gain

    def draw_weight(self, entry, rng: np.random.Generator) -> np.ndarray:
        gain = self.gain_for(entry)
        out_dim, fan_in = entry.shape
        if self.kind == "kaiming":
            return kaiming_init((out_dim, fan_in), gain, self.distribution, rng)
        if self.kind == "normc":
            # Draw transposed so the normalized columns become incoming
            # weight vectors (one per output unit) in the (out, in) matrix.
            return normc_init((fan_in, out_dim), gain, rng).T
        return orthogonal_init((out_dim, fan_in), gain, rng)


def sample_base_flat(layout: ParamLayout, f: BaseInit, rng: np.random.Generator) -> np.ndarray:
    """One full draw of the flat base-parameter vector under f."""
    flat = np.zeros(layout.total_len, dtype=np.float64)
    for entry in layout.entries:
        if entry.kind == "weight":
            flat[entry.offset : entry.offset + entry.size] = f.draw_weight(entry, rng).reshape(-1)
        # bias entries stay zero
    return flat


# ---------------------------------------------------------------------------
# hypernetwork-aware schemes


def hfi_init(
    layout: ParamLayout,
    e_dim: int,
    rng: np.random.Generator,
    embedding_second_moment: float = 1.0,
    relu_gain_sq: float = 2.0,
    linear_gain_sq: float = 1.0,
) -> tuple[np.ndarray, np.ndarray, dict]:
    """Variance-preserving head for a linear hypernetwork.

    A head row generating a base weight with fan-in f and a following relu
    gets variance relu_gain_sq / (e_dim * m2 * f), where m2 is the
    embedding's per-coordinate second moment; rows without a following relu
    use linear_gain_sq instead.  Rows generating base biases are zero, as is
    the head bias.  The governing contract is behavioral: the generated base
    network preserves forward activation variance under embeddings with the
    declared second moment.
    """
    if e_dim < 1:
        raise ValueError("e_dim must be positive")
    if embedding_second_moment <= 0:
        raise ValueError("embedding second moment must be positive")
    head_w = np.zeros((layout.total_len, e_dim), dtype=np.float64)
    constants = {}
    for entry in layout.entries:
        if entry.kind == "bias":
            constants[entry.name] = 0.0
            continue
        if entry.kind != "weight":
            raise ValueError(f"unknown layout entry kind {entry.kind!r}")
        gain_sq = relu_gain_sq if entry.nonlinearity == "relu" else linear_gain_sq
        var = gain_sq / (e_dim * embedding_second_moment * entry.fan_in)
        constants[entry.name] = var
        rows = slice(entry.offset, entry.offset + entry.size)
        head_w[rows, :] = rng.standard_normal((entry.size, e_dim)) * math.sqrt(var)
    head_b = np.zeros(layout.total_len, dtype=np.float64)
    return head_w, head_b, constants


def weight_hyperinit(
    layout: ParamLayout, f: BaseInit, n_columns: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, list[np.ndarray]]:
    """Each head column is an independent base-parameter draw; bias zero.

    Returns (head_w, head_b, column draws); feeding the i-th one-hot
    embedding through the resulting linear head reproduces draw i exactly.
    """
    if n_columns < 1:
        raise ValueError("n_columns must be positive")
    columns = [sample_base_flat(layout, f, rng) for _ in range(n_columns)]
    head_w = np.stack(columns, axis=1)
    head_b = np.zeros(layout.total_len, dtype=np.float64)
    return head_w, head_b, columns


def bias_hyperinit(
    layout: ParamLayout, f: BaseInit, e_dim: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Zero head weights, one shared base-parameter draw as the head bias.

    Every embedding then generates the identical base network, with no
    assumptions on the embedding distribution.
    """
    shared = sample_base_flat(layout, f, rng)
    head_w = np.zeros((layout.total_len, e_dim), dtype=np.float64)
    return head_w, shared.copy(), shared


def film_bias_hyperinit(
    film_layout: FilmLayout, f: BaseInit, e_dim: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, dict[str, np.ndarray]]:
    """FiLM variant: weights from one draw go to the base network, bias
    slices of the head carry the draw's biases, scale slices are ones.

    Returns (head_w, head_b, base weight matrices by name).
    """
    if film_layout.spec is None:
        raise ValueError("film layout must carry its base spec")
    mlp_layout = layout_for(film_layout.spec)
    draw = sample_base_flat(mlp_layout, f, rng)
    head_w = np.zeros((film_layout.total_len, e_dim), dtype=np.float64)
    head_b = np.zeros(film_layout.total_len, dtype=np.float64)
    base_weights: dict[str, np.ndarray] = {}
    for entry in film_layout.entries:
        if entry.kind == "film_scale":
            head_b[entry.offset : entry.offset + entry.size] = 1.0
        elif entry.kind == "film_bias":
            head, idx = entry.name.split("/")
            src = mlp_layout.slice_of(f"{head}/b{idx[1:]}")
            head_b[entry.offset : entry.offset + entry.size] = draw[
                src.offset : src.offset + src.size
            ]
        else:
            raise ValueError(f"non-FiLM layout entry {entry.name!r}")
    for entry in mlp_layout.entries:
        if entry.kind == "weight":
            base_weights[entry.name] = mlp_layout.view(draw, entry).copy()
    return head_w, head_b, base_weights


# ---------------------------------------------------------------------------
# scheme descriptor and head dispatch


@dataclass(frozen=True)
class InitScheme:
    """Named head-initialization rule with its options.

    The two HyperInit kinds (and the FiLM variant) require a base scheme f;
    the direct kinds must not carry one.
    """

    kind: str
    gain: float = SQRT2
    distribution: str = "normal"
    base: BaseInit | None = None
    embedding_second_moment: float = 1.0  # hfi only

    def __post_init__(self):
        known = DIRECT_SCHEMES + HYPER_SCHEMES
        if self.kind not in known:
            raise ValueError(f"unknown init scheme {self.kind!r}; known: {known}")
        needs_base = self.kind in ("weight_hyperinit", "bias_hyperinit", "film_bias_hyperinit")
        if needs_base and self.base is None:
            raise ValueError(f"{self.kind} requires a base scheme f")
        if not needs_base and self.base is not None:
            raise ValueError(f"{self.kind} must not carry a base scheme")
        if self.gain < 0:
            raise ValueError("gain must be non-negative")


def init_hypernet_head(
    scheme: InitScheme, layout: ParamLayout, e_dim: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, dict]:
    """Initialize (head_w, head_b) for a linear hypernetwork head.

    Returns the arrays plus a manifest fragment describing what was done
    (scheme, gains, and any recorded draws for the HyperInit kinds).
    """
    record: dict = {"scheme": scheme.kind}
    is_film_layout = any(e.kind.startswith("film") for e in layout.entries)
    if is_film_layout and scheme.kind not in DIRECT_SCHEMES:
        raise ValueError(f"{scheme.kind} does not apply to a FiLM layout; use film_bias_hyperinit")
    if scheme.kind in DIRECT_SCHEMES:
        shape = (layout.total_len, e_dim)
        if scheme.kind == "kaiming":
            head_w = kaiming_init(shape, scheme.gain, scheme.distribution, rng)
            record.update(gain=scheme.gain, distribution=scheme.distribution)
        elif scheme.kind == "normc":
            head_w = normc_init(shape, scheme.gain, rng)
            record.update(gain=scheme.gain)
        else:
            head_w = orthogonal_init(shape, scheme.gain, rng)
            record.update(gain=scheme.gain)
        head_b = np.zeros(layout.total_len, dtype=np.float64)
        return head_w, head_b, record
    if scheme.kind == "hfi":
        head_w, head_b, constants = hfi_init(
            layout, e_dim, rng, embedding_second_moment=scheme.embedding_second_moment
        )
        record.update(
            embedding_second_moment=scheme.embedding_second_moment,
            row_variances=constants,
            bias_rows="zeroed",
        )
        return head_w, head_b, record
    if scheme.kind == "weight_hyperinit":
        head_w, head_b, _cols = weight_hyperinit(layout, scheme.base, e_dim, rng)
        record.update(base=_base_record(scheme.base), n_columns=e_dim)
        return head_w, head_b, record
    if scheme.kind == "bias_hyperinit":
        head_w, head_b, _shared = bias_hyperinit(layout, scheme.base, e_dim, rng)
        record.update(base=_base_record(scheme.base))
        return head_w, head_b, record
    raise ValueError(f"{scheme.kind} does not initialize a plain hypernetwork head")


def _base_record(f: BaseInit) -> dict:
    return {
        "kind": f.kind,
        "hidden_gain": f.hidden_gain,
        "actor_head_gain": f.actor_head_gain,
        "critic_head_gain": f.critic_head_gain,
        "distribution": f.distribution,
    }
