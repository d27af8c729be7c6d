"""Named parameter storage and its on-disk format.

On disk a store is ``params.json`` (path -> shape, dtype, byte offset) plus
``params.bin``, the concatenated little-endian IEEE-754 payload.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np

from .tensor import Tensor

MANIFEST = "params.json"
BLOB = "params.bin"


class ParamStore(Mapping[str, Tensor]):
    """Mapping from stable path strings to trainable tensors, iterated in sorted order."""

    def __init__(self, entries: Mapping[str, np.ndarray | Tensor] | None = None):
        self._entries: dict[str, Tensor] = {}
        for path, value in (entries or {}).items():
            self.add(path, value)

    def add(self, path: str, value) -> Tensor:
        if path in self._entries:
            raise KeyError(f"duplicate parameter path {path!r}")
        data = value.data if isinstance(value, Tensor) else np.asarray(value)
        t = Tensor(np.array(data, copy=True), requires_grad=True, name=path)
        self._entries[path] = t
        return t

    def __getitem__(self, path: str) -> Tensor:
        return self._entries[path]

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self._entries))

    def __len__(self) -> int:
        return len(self._entries)

    def scope(self, prefix: str) -> "Scope":
        return Scope(self, prefix)

    def num_values(self) -> int:
        return int(np.sum([t.data.size for t in self._entries.values()], dtype=np.int64))

    def zero_grad(self) -> None:
        for t in self._entries.values():
            t.grad = None

    def astype(self, dtype) -> "ParamStore":
        return ParamStore({p: self[p].data.astype(dtype) for p in self})

    def copy(self) -> "ParamStore":
        return ParamStore({p: self[p].data for p in self})

    def equal(self, other: "ParamStore") -> bool:
        """Bit-exact comparison of paths, dtypes and values."""
        if list(self) != list(other):
            return False
        for p in self:
            a, b = self[p].data, other[p].data
            if a.dtype != b.dtype or a.shape != b.shape or a.tobytes() != b.tobytes():
                return False
        return True

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        manifest = {}
        offset = 0
        with open(directory / BLOB, "wb") as fh:
            for path in self:
                arr = self[path].data
                le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
                raw = np.ascontiguousarray(le).tobytes()
                manifest[path] = {"shape": list(arr.shape), "dtype": arr.dtype.name, "offset": offset}
                fh.write(raw)
                offset += len(raw)
        with open(directory / MANIFEST, "w") as fh:
            json.dump(manifest, fh, indent=1, sort_keys=True)

    @classmethod
    def load(cls, directory: str | Path) -> "ParamStore":
        directory = Path(directory)
        with open(directory / MANIFEST) as fh:
            manifest = json.load(fh)
        blob = (directory / BLOB).read_bytes()
        store = cls()
        for path in sorted(manifest):
            meta = manifest[path]
            dt = np.dtype(meta["dtype"]).newbyteorder("<")
            count = int(np.prod(meta["shape"], dtype=np.int64))
            arr = np.frombuffer(blob, dtype=dt, count=count, offset=meta["offset"])
            store.add(path, arr.astype(dt.newbyteorder("="), copy=True).reshape(meta["shape"]))
        return store


class Scope:
    """Prefix view used by layers to read their own parameters."""

    def __init__(self, store: ParamStore, prefix: str):
        self.store = store
        self.prefix = prefix

    def __getitem__(self, name: str) -> Tensor:
        return self.store[f"{self.prefix}.{name}"]

    def __contains__(self, name: str) -> bool:
        return f"{self.prefix}.{name}" in self.store

    def scope(self, name: str) -> "Scope":
        return Scope(self.store, f"{self.prefix}.{name}")
