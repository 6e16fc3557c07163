"""Named parameter collections with trainable flags and group checksums."""

from __future__ import annotations

import hashlib

import numpy as np


class ParamSet:
    """Mapping name -> (array, trainable). Iteration order is lexicographic."""

    def __init__(self):
        self._data: dict[str, np.ndarray] = {}
        self._trainable: dict[str, bool] = {}

    def add(self, name: str, value: np.ndarray, trainable: bool = True) -> None:
        if name in self._data:
            raise ValueError(f"duplicate parameter name {name!r}")
        self._data[name] = np.asarray(value)
        self._trainable[name] = bool(trainable)

    def __iter__(self):
        return iter(sorted(self._data))

    def __len__(self) -> int:
        return len(self._data)

    def __contains__(self, name: str) -> bool:
        return name in self._data

    def get(self, name: str) -> np.ndarray:
        return self._data[name]

    def set_data(self, name: str, value: np.ndarray) -> None:
        arr = np.asarray(value)
        if arr.shape != self._data[name].shape:
            raise ValueError(
                f"shape mismatch for {name!r}: {arr.shape} vs {self._data[name].shape}")
        self._data[name] = arr

    def is_trainable(self, name: str) -> bool:
        return self._trainable[name]

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self if n.startswith(prefix)]

    def trainable_names(self) -> list[str]:
        return [n for n in self if self._trainable[n]]

    def set_trainable(self, prefix: str, flag: bool) -> None:
        for n in self.names(prefix):
            self._trainable[n] = flag

    def count(self, prefix: str = "") -> int:
        return sum(self._data[n].size for n in self.names(prefix))

    def checksum(self, prefix: str = "") -> str:
        """SHA-256 over names, shapes and raw bytes of a parameter group."""
        h = hashlib.sha256()
        for n in self.names(prefix):
            arr = self._data[n]
            h.update(n.encode())
            h.update(str(arr.shape).encode())
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def copy(self) -> "ParamSet":
        out = ParamSet()
        for n in self:
            out.add(n, self._data[n].copy(), self._trainable[n])
        return out

    def astype(self, dtype) -> "ParamSet":
        out = ParamSet()
        for n in self:
            out.add(n, self._data[n].astype(dtype), self._trainable[n])
        return out

    def merge(self, other: "ParamSet", prefix: str = "") -> None:
        """Copy entries with the given prefix from another set into this one."""
        for n in other.names(prefix):
            if n in self._data:
                self.set_data(n, other.get(n).copy())
                self._trainable[n] = other.is_trainable(n)
            else:
                self.add(n, other.get(n).copy(), other.is_trainable(n))
