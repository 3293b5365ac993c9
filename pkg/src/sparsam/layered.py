"""Layered parameter vectors and active-set arithmetic.

A LayeredVector is an ordered list of float64 blocks, one per layer. All
optimizer math runs block-wise so that a frozen layer is provably
untouched: no operation below ever reads or writes a block outside the
active set it was given.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np


@dataclass
class LayeredVector:
    blocks: list[np.ndarray]

    def __post_init__(self) -> None:
        if len(self.blocks) == 0:
            raise ValueError("LayeredVector needs at least one layer")
        converted = []
        for i, b in enumerate(self.blocks):
            arr = np.ascontiguousarray(b, dtype=np.float64).reshape(-1)
            if arr.size == 0:
                raise ValueError(f"layer {i} is empty")
            converted.append(arr)
        self.blocks = converted

    @classmethod
    def zeros(cls, dims: Sequence[int]) -> "LayeredVector":
        return cls([np.zeros(int(d)) for d in dims])

    @classmethod
    def zeros_like(cls, other: "LayeredVector") -> "LayeredVector":
        return cls.zeros(other.dims)

    @classmethod
    def from_flat(cls, flat: np.ndarray, dims: Sequence[int]) -> "LayeredVector":
        flat = np.asarray(flat, dtype=np.float64).reshape(-1)
        if flat.size != sum(dims):
            raise ValueError(f"flat vector of size {flat.size} does not split into {list(dims)}")
        out, ofs = [], 0
        for d in dims:
            out.append(flat[ofs : ofs + d].copy())
            ofs += d
        return cls(out)

    def to_flat(self) -> np.ndarray:
        return np.concatenate(self.blocks)

    def copy(self) -> "LayeredVector":
        return LayeredVector([b.copy() for b in self.blocks])

    @property
    def n_layers(self) -> int:
        return len(self.blocks)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(b.size for b in self.blocks)

    @property
    def dim(self) -> int:
        return sum(b.size for b in self.blocks)

    def __len__(self) -> int:
        return len(self.blocks)

    def __getitem__(self, l: int) -> np.ndarray:
        return self.blocks[l]

    def __setitem__(self, l: int, value: np.ndarray) -> None:
        arr = np.ascontiguousarray(value, dtype=np.float64).reshape(-1)
        if arr.size != self.blocks[l].size:
            raise ValueError(f"layer {l} has {self.blocks[l].size} entries, got {arr.size}")
        self.blocks[l] = arr

    def __iter__(self) -> Iterator[np.ndarray]:
        return iter(self.blocks)

    def all_finite(self) -> bool:
        return all(np.isfinite(b).all() for b in self.blocks)

    def same_shape(self, other: "LayeredVector") -> bool:
        return self.dims == other.dims


@dataclass(frozen=True)
class ActiveSet:
    """An immutable subset of layer indices. Iteration order is sorted."""

    members: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        object.__setattr__(self, "members", frozenset(int(i) for i in self.members))
        if any(i < 0 for i in self.members):
            raise ValueError("layer indices must be non-negative")

    @classmethod
    def full(cls, n_layers: int) -> "ActiveSet":
        return cls(frozenset(range(n_layers)))

    @classmethod
    def of(cls, *indices: int) -> "ActiveSet":
        return cls(frozenset(indices))

    @classmethod
    def from_iterable(cls, indices: Iterable[int]) -> "ActiveSet":
        return cls(frozenset(indices))

    def validate(self, n_layers: int) -> None:
        bad = [i for i in self.members if i >= n_layers]
        if bad:
            raise ValueError(f"layer indices {sorted(bad)} out of range for {n_layers} layers")

    def __contains__(self, l: int) -> bool:
        return l in self.members

    def __iter__(self) -> Iterator[int]:
        return iter(sorted(self.members))

    def __len__(self) -> int:
        return len(self.members)

    def indices(self) -> list[int]:
        return sorted(self.members)


def _check_layer(v: LayeredVector, l: int) -> None:
    if not 0 <= l < v.n_layers:
        raise ValueError(f"layer index {l} out of range for {v.n_layers} layers")


def layer_l2_norm(v: LayeredVector, l: int) -> float:
    _check_layer(v, l)
    return float(np.linalg.norm(v[l]))


def total_l1_norm(v: LayeredVector) -> float:
    return float(sum(np.abs(b).sum() for b in v.blocks))


def active_param_count(v: LayeredVector, active: ActiveSet) -> int:
    active.validate(v.n_layers)
    return sum(v[l].size for l in active)


def masked_axpy(y: LayeredVector, a: float, x: LayeredVector, active: ActiveSet) -> LayeredVector:
    """In place y_l += a * x_l for l in the active set. Inactive blocks of y
    are not touched, so they stay bit-identical."""
    if not y.same_shape(x):
        raise ValueError(f"shape mismatch: {y.dims} vs {x.dims}")
    active.validate(y.n_layers)
    a = float(a)
    for l in active:
        y[l] += a * x[l]
    return y
