"""Minimal parameter-container base class.

Assigning a Tensor attribute registers it as a parameter; assigning a
Module registers a child. Registration order is attribute-assignment
order, which makes parameter iteration (and therefore checkpoints and
optimizer state) deterministic.
"""

import numpy as np

from .errors import FormatError
from .tensor import Tensor


class Module:
    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def add_buffer(self, name, arr):
        self._buffers[name] = arr
        object.__setattr__(self, name, arr)

    def named_parameters(self, prefix=""):
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(prefix + cname + ".")

    def named_buffers(self, prefix=""):
        for name, b in self._buffers.items():
            yield prefix + name, b
        for cname, child in self._children.items():
            yield from child.named_buffers(prefix + cname + ".")

    def state_arrays(self):
        """Ordered name -> array view of all parameters and buffers."""
        out = {}
        for name, p in self.named_parameters():
            out[name] = p.data
        for name, b in self.named_buffers():
            out[name + ".__buffer__"] = b
        return out

    def state_dict(self):
        return {k: v.copy() for k, v in self.state_arrays().items()}

    def load_state_dict(self, state):
        current = self.state_arrays()
        unknown = set(state) - set(current)
        if unknown:
            raise FormatError(f"unknown parameter names: {sorted(unknown)[:3]}")
        missing = set(current) - set(state)
        if missing:
            raise FormatError(f"missing parameter names: {sorted(missing)[:3]}")
        for name, arr in state.items():
            dst = current[name]
            if dst.shape != arr.shape:
                raise FormatError(f"shape mismatch for '{name}'")
            np.copyto(dst, arr.astype(dst.dtype, copy=False))
