"""Base-network descriptions and the flat parameter-vector layout.

A hypernetwork emits one flat vector holding every actor and critic parameter
of the base policy; `ParamLayout` records where each weight matrix and bias
vector lives inside it, together with the metadata (fan-in, role, following
nonlinearity) that the initialization schemes need.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SIZE_TABLE",
    "BaseNetSpec",
    "LayoutEntry",
    "ParamLayout",
    "layout_for",
    "film_layout_for",
    "FilmLayout",
]

# Named base-network sizes (three hidden layers each).
SIZE_TABLE = {
    "XS": (64, 64, 32),
    "S": (128, 64, 64),
    "M": (128, 128, 64),
    "L": (256, 128, 128),
    "XL": (256, 256, 128),
    "XXL": (1024, 512, 512),
}


@dataclass(frozen=True)
class BaseNetSpec:
    """Shape of the base policy MLP: shared trunk sizes, separate heads."""

    input_dim: int
    hidden: tuple[int, ...]
    action_dim: int
    activation: str = "relu"
    heads: tuple[str, ...] = ("actor", "critic")

    def __post_init__(self):
        if self.input_dim < 1 or self.action_dim < 1:
            raise ValueError("input_dim and action_dim must be positive")
        if not self.hidden:
            raise ValueError("hidden layer list must be non-empty")
        if any(w < 1 for w in self.hidden):
            raise ValueError(f"zero-width layer in {self.hidden}")
        if self.activation not in ("relu", "tanh"):
            raise ValueError(f"unsupported activation {self.activation!r}")
        for h in self.heads:
            if h not in ("actor", "critic"):
                raise ValueError(f"unknown head {h!r}")

    @classmethod
    def from_size(cls, size_name: str, input_dim: int, action_dim: int, **kw) -> "BaseNetSpec":
        if size_name not in SIZE_TABLE:
            raise ValueError(f"unknown base size {size_name!r}; known: {sorted(SIZE_TABLE)}")
        return cls(input_dim=input_dim, hidden=SIZE_TABLE[size_name], action_dim=action_dim, **kw)

    def head_dims(self, head: str) -> list[int]:
        out = self.action_dim if head == "actor" else 1
        return [self.input_dim, *self.hidden, out]


@dataclass(frozen=True)
class LayoutEntry:
    name: str
    shape: tuple[int, ...]
    offset: int
    kind: str  # "weight" | "bias" | "film_scale" | "film_bias"
    fan_in: int
    head: str  # "actor" | "critic"
    is_output: bool
    nonlinearity: str  # activation applied after this layer: "relu"/"tanh"/"linear"

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))


@dataclass
class ParamLayout:
    entries: list[LayoutEntry]
    total_len: int
    spec: BaseNetSpec | None = field(default=None, repr=False)

    def slice_of(self, name: str) -> LayoutEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def view(self, flat: np.ndarray, entry: LayoutEntry) -> np.ndarray:
        return flat[..., entry.offset : entry.offset + entry.size].reshape(
            flat.shape[:-1] + entry.shape
        )

    def flatten(self, named: dict[str, np.ndarray]) -> np.ndarray:
        """Inverse of per-entry `view`; round-trips bitwise."""
        flat = np.zeros(self.total_len, dtype=np.float64)
        for e in self.entries:
            flat[e.offset : e.offset + e.size] = np.asarray(named[e.name], dtype=np.float64).reshape(-1)
        return flat

    def unflatten(self, flat: np.ndarray) -> dict[str, np.ndarray]:
        return {e.name: self.view(flat, e).copy() for e in self.entries}


def layout_for(spec: BaseNetSpec) -> ParamLayout:
    """Deterministic flat layout: per head, alternating (weight, bias) per layer."""
    entries: list[LayoutEntry] = []
    offset = 0
    for head in spec.heads:
        dims = spec.head_dims(head)
        n_layers = len(dims) - 1
        for li in range(n_layers):
            fan_in, fan_out = dims[li], dims[li + 1]
            is_output = li == n_layers - 1
            nonlin = "linear" if is_output else spec.activation
            for kind, shape in (("weight", (fan_out, fan_in)), ("bias", (fan_out,))):
                entry = LayoutEntry(
                    name=f"{head}/{'w' if kind == 'weight' else 'b'}{li}",
                    shape=shape,
                    offset=offset,
                    kind=kind,
                    fan_in=fan_in,
                    head=head,
                    is_output=is_output,
                    nonlinearity=nonlin,
                )
                entries.append(entry)
                offset += entry.size
    return ParamLayout(entries=entries, total_len=offset, spec=spec)


@dataclass
class FilmLayout:
    """Layout of the modulation vector: per layer, a scale and a bias slice.

    The base network owns its weight matrices; the generated vector only
    carries per-layer elementwise scales and biases.
    """

    entries: list[LayoutEntry]
    total_len: int
    spec: BaseNetSpec | None = field(default=None, repr=False)

    view = ParamLayout.view
    slice_of = ParamLayout.slice_of


def film_layout_for(spec: BaseNetSpec) -> FilmLayout:
    entries: list[LayoutEntry] = []
    offset = 0
    for head in spec.heads:
        dims = spec.head_dims(head)
        n_layers = len(dims) - 1
        for li in range(n_layers):
            fan_in, width = dims[li], dims[li + 1]
            is_output = li == n_layers - 1
            nonlin = "linear" if is_output else spec.activation
            for kind, tag in (("film_scale", "s"), ("film_bias", "b")):
                entry = LayoutEntry(
                    name=f"{head}/{tag}{li}",
                    shape=(width,),
                    offset=offset,
                    kind=kind,
                    fan_in=fan_in,
                    head=head,
                    is_output=is_output,
                    nonlinearity=nonlin,
                )
                entries.append(entry)
                offset += entry.size
    return FilmLayout(entries=entries, total_len=offset, spec=spec)
