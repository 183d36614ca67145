"""Parameter registry and checkpoint serialization.

A checkpoint is two files: `<path>` holds one raw little-endian float32
blob, `<path>.manifest` is a text file with one `name<TAB>shape<TAB>offset`
line per tensor (shape as `x`-joined dims, offset in bytes into the blob).
Loading validates every shape against the model that asked for it.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class CheckpointError(ValueError):
    """Checkpoint file is malformed or inconsistent with the model."""


class ParamStore:
    """Ordered registry of named parameter tensors with seeded init.

    Construction order is fixed by the model architecture, so the manifest
    (names and shapes) is identical across runs for a given config.
    """

    def __init__(self, seed=0, dtype=np.float64):
        self.rng = np.random.default_rng(seed)
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}

    def _register(self, name, arr):
        if name in self.params:
            raise ValueError(f"duplicate parameter name: {name}")
        t = Tensor(arr.astype(self.dtype), requires_grad=True)
        self.params[name] = t
        return t

    def weight(self, name, shape, fan_in):
        """He-style uniform init: U(-sqrt(6/fan_in), sqrt(6/fan_in))."""
        limit = np.sqrt(6.0 / fan_in)
        return self._register(name, self.rng.uniform(-limit, limit, size=shape))

    def zeros(self, name, shape):
        return self._register(name, np.zeros(shape))

    def conv(self, name, c_out, c_in, k):
        """3x3/1x1 conv weight+bias pair, both fan-in-scaled uniform.

        Nonzero bias init keeps zero-input segments (empty event windows)
        from producing all-dead relu features.
        """
        fan_in = c_in * k * k
        w = self.weight(f"{name}.w", (c_out, c_in, k, k), fan_in=fan_in)
        limit = 1.0 / np.sqrt(fan_in)
        b = self._register(f"{name}.b", self.rng.uniform(-limit, limit, size=(c_out,)))
        return w, b

    def manifest(self):
        return [(name, t.data.shape) for name, t in self.params.items()]

    def state_arrays(self):
        return {name: t.data for name, t in self.params.items()}

    def load_arrays(self, arrays):
        missing = set(self.params) - set(arrays)
        extra = set(arrays) - set(self.params)
        if missing or extra:
            raise CheckpointError(
                f"parameter names do not match model (missing={sorted(missing)}, "
                f"unexpected={sorted(extra)})"
            )
        for name, t in self.params.items():
            arr = arrays[name]
            if tuple(arr.shape) != tuple(t.data.shape):
                raise CheckpointError(
                    f"shape mismatch for {name}: checkpoint {arr.shape}, "
                    f"model {t.data.shape}"
                )
            t.data = arr.astype(self.dtype)
            t.grad = None


def save_checkpoint(path, named_arrays):
    """Write a float32 blob plus its text manifest."""
    path = str(path)
    offset = 0
    lines = []
    with open(path, "wb") as blob:
        for name, arr in named_arrays.items():
            data = np.ascontiguousarray(arr, dtype="<f4")
            shape = "x".join(str(d) for d in data.shape) if data.ndim else "scalar"
            lines.append(f"{name}\t{shape}\t{offset}\n")
            blob.write(data.tobytes())
            offset += data.nbytes
    with open(path + ".manifest", "w") as mf:
        mf.writelines(lines)


def load_checkpoint(path):
    """Read blob+manifest back into a name -> float32 array dict."""
    path = str(path)
    with open(path, "rb") as blob:
        raw = blob.read()
    arrays = {}
    with open(path + ".manifest") as mf:
        for lineno, line in enumerate(mf, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise CheckpointError(f"manifest line {lineno}: expected 3 fields")
            name, shape_s, offset_s = parts
            shape = () if shape_s == "scalar" else tuple(int(d) for d in shape_s.split("x"))
            offset = int(offset_s)
            count = int(np.prod(shape)) if shape else 1
            end = offset + 4 * count
            if end > len(raw):
                raise CheckpointError(f"manifest line {lineno}: blob too short for {name}")
            arrays[name] = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(shape).copy()
    return arrays
