"""Light container for parameters, buffers and submodules."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .functional import BatchNormState
from .tensor import Parameter


class IncompatibleStateError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("incompatible checkpoint: " + "; ".join(problems))


class Module:
    """Base class; attributes that are Parameters, BatchNormStates or Modules are discovered by name."""

    training: bool = True

    def children(self) -> Iterator[tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix, self
        for name, child in self.children():
            yield from child.modules(f"{prefix}.{name}" if prefix else name)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for mod_name, mod in self.modules(prefix):
            for name, value in vars(mod).items():
                if isinstance(value, Parameter):
                    yield (f"{mod_name}.{name}" if mod_name else name), value

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, BatchNormState]]:
        for mod_name, mod in self.modules(prefix):
            for name, value in vars(mod).items():
                if isinstance(value, BatchNormState):
                    yield (f"{mod_name}.{name}" if mod_name else name), value

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def train(self, mode: bool = True) -> "Module":
        for _, mod in self.modules():
            mod.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        state: dict[str, np.ndarray] = {}
        for name, p in self.named_parameters():
            state[name] = p.data.astype(np.float32)
        for name, buf in self.named_buffers():
            state[f"{name}.running_mean"] = buf.running_mean.astype(np.float32)
            state[f"{name}.running_var"] = buf.running_var.astype(np.float32)
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = self.state_dict()
        problems = []
        for name, arr in own.items():
            if name not in state:
                problems.append(f"missing {name}")
            elif tuple(state[name].shape) != arr.shape:
                problems.append(f"{name}: checkpoint {tuple(state[name].shape)} vs model {arr.shape}")
        problems += [f"unexpected {name}" for name in state if name not in own]
        if problems:
            raise IncompatibleStateError(problems)
        for name, p in self.named_parameters():
            p.data = state[name].astype(p.data.dtype).copy()
            p.zero_grad()
        for name, buf in self.named_buffers():
            buf.running_mean = state[f"{name}.running_mean"].astype(buf.running_mean.dtype).copy()
            buf.running_var = state[f"{name}.running_var"].astype(buf.running_var.dtype).copy()
