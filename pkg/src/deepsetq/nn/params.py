"""Flat parameter storage with named views and a binary checkpoint format."""

from __future__ import annotations

import io
import json
import struct
from collections.abc import Iterator, Mapping
from pathlib import Path

import numpy as np

MAGIC = b"DSQCKPT\x00"
FORMAT_VERSION = 1


class ParameterSet:
    """Ordered named tensors backed by one contiguous buffer.

    Every named tensor is a view into ``flat`` so optimizers and Polyak
    updates operate on a single vector.
    """

    def __init__(self, shapes: Mapping[str, tuple[int, ...]] | list[tuple[str, tuple[int, ...]]],
                 dtype=np.float32, flat: np.ndarray | None = None):
        items = list(shapes.items()) if isinstance(shapes, Mapping) else list(shapes)
        names = [name for name, _ in items]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate parameter names in {names}")
        self._shapes = {name: tuple(int(d) for d in shape) for name, shape in items}
        total = sum(int(np.prod(s)) for s in self._shapes.values())
        if flat is None:
            flat = np.zeros(total, dtype=dtype)
        elif flat.shape != (total,):
            raise ValueError(f"flat buffer has shape {flat.shape}, expected ({total},)")
        self.flat = flat
        self._views: dict[str, np.ndarray] = {}
        offset = 0
        for name, shape in self._shapes.items():
            size = int(np.prod(shape))
            self._views[name] = flat[offset:offset + size].reshape(shape)
            offset += size

    @property
    def dtype(self):
        return self.flat.dtype

    @property
    def shapes(self) -> dict[str, tuple[int, ...]]:
        return dict(self._shapes)

    def names(self) -> list[str]:
        return list(self._shapes)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._views[name]

    def __contains__(self, name: str) -> bool:
        return name in self._views

    def __iter__(self) -> Iterator[str]:
        return iter(self._shapes)

    def __len__(self) -> int:
        return len(self._shapes)

    def items(self):
        return self._views.items()

    def size(self) -> int:
        return self.flat.size

    def copy(self) -> ParameterSet:
        return ParameterSet(self._shapes, flat=self.flat.copy())

    def astype(self, dtype) -> ParameterSet:
        return ParameterSet(self._shapes, flat=self.flat.astype(dtype))

    def zeros_like(self) -> ParameterSet:
        return ParameterSet(self._shapes, dtype=self.flat.dtype)

    def same_layout(self, other: ParameterSet) -> bool:
        return self._shapes == other._shapes and list(self._shapes) == list(other._shapes)

    def check_aligned(self, other: ParameterSet) -> None:
        if list(self._shapes) != list(other._shapes):
            raise ValueError(f"parameter names differ: {list(self._shapes)} vs {list(other._shapes)}")
        for name, shape in self._shapes.items():
            if other._shapes[name] != shape:
                raise ValueError(f"shape mismatch for {name!r}: {shape} vs {other._shapes[name]}")

    def assign(self, other: ParameterSet) -> None:
        self.check_aligned(other)
        self.flat[...] = other.flat

    def __repr__(self) -> str:
        return f"ParameterSet({len(self)} tensors, {self.size()} values, {self.dtype})"


def _write_tensors(buf: io.BufferedIOBase, tensors: list[tuple[str, np.ndarray]]) -> None:
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors:
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_exact(buf, n: int) -> bytes:
    data = buf.read(n)
    if len(data) != n:
        raise ValueError("truncated checkpoint")
    return data


def save_checkpoint(path: str | Path, groups: Mapping[str, ParameterSet], descriptor: Mapping) -> None:
    """Write parameter groups and an architecture descriptor to ``path``.

    Layout: magic, format version, length-prefixed JSON descriptor (sorted
    keys), then every tensor as (name, shape, little-endian float32 data).
    Tensor names are ``<group>/<parameter>`` in insertion order.
    """
    header = json.dumps(descriptor, sort_keys=True, separators=(",", ":")).encode("utf-8")
    tensors = []
    for group, params in groups.items():
        for name, arr in params.items():
            tensors.append((f"{group}/{name}", arr))
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<I", FORMAT_VERSION))
    out.write(struct.pack("<I", len(header)))
    out.write(header)
    _write_tensors(out, tensors)
    Path(path).write_bytes(out.getvalue())


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, ParameterSet]]:
    """Read a checkpoint; returns ``(descriptor, groups)`` with float32 tensors."""
    with open(path, "rb") as fh:
        if _read_exact(fh, len(MAGIC)) != MAGIC:
            raise ValueError(f"{path} is not a checkpoint file")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<I", _read_exact(fh, 4))
        descriptor = json.loads(_read_exact(fh, hlen).decode("utf-8"))
        (count,) = struct.unpack("<I", _read_exact(fh, 4))
        grouped: dict[str, list[tuple[str, np.ndarray]]] = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", _read_exact(fh, 2))
            full = _read_exact(fh, nlen).decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(fh, 1))
            shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim))
            size = int(np.prod(shape))
            arr = np.frombuffer(_read_exact(fh, 4 * size), dtype="<f4").reshape(shape)
            group, _, name = full.partition("/")
            grouped.setdefault(group, []).append((name, arr))
    groups = {}
    for group, tensors in grouped.items():
        ps = ParameterSet([(n, a.shape) for n, a in tensors], dtype=np.float32)
        for n, a in tensors:
            ps[n][...] = a
        groups[group] = ps
    return descriptor, groups
