"""Named parameter store with seeded init and a little-endian checkpoint format."""

from __future__ import annotations

import struct

import numpy as np

from ..errors import StructuralError
from .tensor import Tensor

MAGIC = b"SVOD"
FORMAT_VERSION = 1


class ParamStore:
    """Uniquely named parameter tensors plus the seed they were drawn from.

    Parameters are created on first request with uniform fan-in scaling
    U(-1/sqrt(fan_in), 1/sqrt(fan_in)); later requests return the existing
    tensor, so rebuilding a network over a loaded store reuses its weights.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self.rng = np.random.default_rng(np.random.PCG64(self.seed))
        self.params: dict[str, Tensor] = {}

    def param(self, name: str, shape: tuple[int, ...], fan_in: int | None = None) -> Tensor:
        shape = tuple(int(s) for s in shape)
        if name in self.params:
            existing = self.params[name]
            if existing.shape != shape:
                raise StructuralError(
                    f"parameter {name!r} exists with shape {existing.shape}, requested {shape}"
                )
            return existing
        fan = int(fan_in) if fan_in else shape[0]
        bound = 1.0 / np.sqrt(max(fan, 1))
        t = Tensor(self.rng.uniform(-bound, bound, size=shape), requires_grad=True)
        self.params[name] = t
        return t

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        """Gradient per parameter; unreached parameters contribute zeros."""
        return {
            name: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for name, t in self.params.items()
        }

    def n_values(self) -> int:
        return sum(t.size for t in self.params.values())

    def copy(self) -> "ParamStore":
        clone = ParamStore(self.seed)
        for name, t in self.params.items():
            nt = Tensor(t.data.copy(), requires_grad=True)
            clone.params[name] = nt
        return clone

    def load_values(self, other: "ParamStore") -> None:
        for name, t in self.params.items():
            t.data = other.params[name].data.copy()

    def check_finite(self) -> None:
        for name, t in self.params.items():
            if not np.all(np.isfinite(t.data)):
                raise StructuralError(f"parameter {name!r} contains non-finite values")

    # -- checkpoint io ---------------------------------------------------

    def save(self, path) -> None:
        with open(path, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<IIQ", FORMAT_VERSION, len(self.params), self.seed & (2**64 - 1)))
            for name in sorted(self.params):
                t = self.params[name]
                encoded = name.encode("utf-8")
                f.write(struct.pack("<I", len(encoded)))
                f.write(encoded)
                f.write(struct.pack("<I", t.data.ndim))
                f.write(struct.pack(f"<{t.data.ndim}I", *t.data.shape))
                f.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path) -> ParamStore:
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise StructuralError(f"{path}: not a svodrive checkpoint")
        version, count, seed = struct.unpack("<IIQ", f.read(16))
        if version != FORMAT_VERSION:
            raise StructuralError(f"{path}: unsupported checkpoint version {version}")
        store = ParamStore(seed)
        for _ in range(count):
            (name_len,) = struct.unpack("<I", f.read(4))
            name = f.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<I", f.read(4))
            shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
            n = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(f.read(8 * n), dtype="<f8").reshape(shape).astype(np.float64)
            store.params[name] = Tensor(data, requires_grad=True)
    store.check_finite()
    return store
