"""Named parameter storage shared by every learned model."""

from __future__ import annotations

import numpy as np

from ..errors import DataError
from .tensor import Tensor


class ParamStore:
    """Ordered map of named Tensors plus an optimizer step counter.

    Entries added with trainable=False are buffers: saved and loaded with the
    checkpoint but never touched by the optimizer. Training is single-writer;
    concurrent readers of the underlying arrays are safe as long as no step
    is in flight.
    """

    def __init__(self):
        self._entries: dict[str, Tensor] = {}
        self._trainable: set[str] = set()
        self.step = 0

    def add(self, name: str, value, trainable: bool = True) -> Tensor:
        if name in self._entries:
            raise DataError(f"duplicate parameter name: {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=trainable)
        self._entries[name] = t
        if trainable:
            self._trainable.add(name)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> list[str]:
        return list(self._entries)

    def items(self):
        return self._entries.items()

    def trainable(self) -> list[tuple[str, Tensor]]:
        return [(n, t) for n, t in self._entries.items() if n in self._trainable]

    def zero_grad(self) -> None:
        for t in self._entries.values():
            t.grad = None

    def num_values(self) -> int:
        return sum(t.size for _, t in self.trainable())
