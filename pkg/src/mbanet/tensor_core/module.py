"""Parameter containers: :class:`Module`, :class:`Parameter` and :class:`BatchNorm`."""

from __future__ import annotations

import zlib
from typing import Iterator

import numpy as np

from mbanet.tensor_core import functional as F
from mbanet.tensor_core.tensor import DEFAULT_DTYPE, Tensor


class Parameter(Tensor):
    """Learnable leaf tensor carrying its initialization rule.

    ``init`` is one of ``"fan_in"`` (He-normal over fan-in), ``"zeros"``,
    ``"ones"``, ``"keep"`` or a float giving the std of a zero-mean normal.
    """

    def __init__(self, data, init="keep", dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.init = init

    def reinitialize(self, rng: np.random.Generator) -> None:
        if self.init == "keep":
            return
        if self.init == "zeros":
            values = np.zeros(self.shape)
        elif self.init == "ones":
            values = np.ones(self.shape)
        elif self.init == "fan_in":
            fan_in = int(np.prod(self.shape[1:])) if self.ndim > 1 else self.shape[0]
            values = rng.normal(0.0, np.sqrt(2.0 / fan_in), self.shape)
        else:
            values = rng.normal(0.0, float(self.init), self.shape)
        self.data = values.astype(self.dtype)


class Module:
    """Base class; parameters, buffers and submodules are discovered from attributes."""

    _buffer_names: tuple = ()

    def __init__(self):
        self.training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def _children(self) -> Iterator[tuple[str, object]]:
        for key, value in vars(self).items():
            if isinstance(value, (Parameter, Module)):
                yield key, value
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for i, v in enumerate(value):
                    yield f"{key}.{i}", v

    def named_modules(self, prefix: str = "", _seen=None) -> Iterator[tuple[str, "Module"]]:
        _seen = set() if _seen is None else _seen
        if id(self) in _seen:
            return
        _seen.add(id(self))
        yield prefix, self
        for key, value in self._children():
            if isinstance(value, Module):
                yield from value.named_modules(f"{prefix}.{key}" if prefix else key, _seen)

    def named_parameters(self) -> Iterator[tuple[str, Parameter]]:
        seen: set[int] = set()
        for mod_name, mod in self.named_modules():
            for key, value in vars(mod).items():
                if isinstance(value, Parameter) and id(value) not in seen:
                    seen.add(id(value))
                    yield (f"{mod_name}.{key}" if mod_name else key), value

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self) -> Iterator[tuple[str, np.ndarray]]:
        for mod_name, mod in self.named_modules():
            for key in mod._buffer_names:
                yield (f"{mod_name}.{key}" if mod_name else key), getattr(mod, key)

    def train(self, mode: bool = True) -> "Module":
        for _, mod in self.named_modules():
            mod.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def initialize(self, seed: int) -> "Module":
        """Re-draw every parameter from a generator keyed on (seed, parameter name).

        Keying on the name makes two networks that share a parameter name start
        from identical values regardless of what else they contain.
        """
        for name, p in self.named_parameters():
            p.reinitialize(np.random.default_rng([seed, zlib.crc32(name.encode())]))
        return self

    def astype(self, dtype) -> "Module":
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        for _, mod in self.named_modules():
            for key in mod._buffer_names:
                setattr(mod, key, getattr(mod, key).astype(dtype))
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update(dict(self.named_buffers()))
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        """Assign arrays by name; caller validates names and shapes first."""
        params = dict(self.named_parameters())
        modules = dict(self.named_modules())
        for name, value in state.items():
            if name in params:
                params[name].data = np.array(value, dtype=params[name].dtype)
                continue
            mod_name, _, key = name.rpartition(".")
            mod = modules[mod_name]
            current = getattr(mod, key)
            setattr(mod, key, np.array(value, dtype=current.dtype))

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


class Sequential(Module):
    def __init__(self, *layers: Module):
        super().__init__()
        self.layers = list(layers)

    def _children(self):
        for i, layer in enumerate(self.layers):
            yield str(i), layer

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x

    def __iter__(self):
        return iter(self.layers)

    def __len__(self):
        return len(self.layers)


class BatchNorm(Module):
    """Batch-norm state: per-channel scale/shift and running statistics.

    Works for [B, C] and [B, C, H, W] inputs. ``momentum`` weights the newest
    batch in the running estimates.
    """

    _buffer_names = ("running_mean", "running_var")

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, dtype=DEFAULT_DTYPE):
        super().__init__()
        if not 0.0 < momentum < 1.0:
            raise ValueError(f"momentum must lie in (0, 1), got {momentum}")
        if eps <= 0:
            raise ValueError("eps must be positive")
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.scale = Parameter(np.ones(channels), init="ones", dtype=dtype)
        self.shift = Parameter(np.zeros(channels), init="zeros", dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def forward(self, x: Tensor, training: bool | None = None) -> Tensor:
        training = self.training if training is None else training
        return F.batch_norm(
            x, self.scale, self.shift, self.running_mean, self.running_var,
            training=training, momentum=self.momentum, eps=self.eps,
        )


BatchNormState = BatchNorm
