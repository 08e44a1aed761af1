"""Parameter containers: ``Module``, ``Linear`` and one-hidden-layer ``MLP``."""

from typing import Dict, Iterator, List, Tuple

import numpy as np

from core.tensor import Tensor, matmul, silu

INIT_SCHEMES = ("xavier", "zeros")


def init_weight(rng: np.random.Generator, fan_in: int, fan_out: int, init: str = "xavier") -> np.ndarray:
    """Xavier-uniform (or all-zero) weight matrix ``[fan_in, fan_out]``."""
    if init == "zeros":
        return np.zeros((fan_in, fan_out), dtype=np.float32)
    if init != "xavier":
        raise ValueError(f"unknown init scheme '{init}'")
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(np.float32)


class Module:
    """Base class; every ``Tensor`` attribute is a trainable parameter.

    Sub-modules may be stored as attributes, or in lists/tuples, or in dicts
    keyed by string. Iteration follows attribute insertion order, so parameter
    names and order are stable for a given construction sequence.
    """

    def _children(self) -> Iterator[Tuple[str, object]]:
        for name, value in vars(self).items():
            if isinstance(value, (Tensor, Module)):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for index, item in enumerate(value):
                    if isinstance(item, (Tensor, Module)):
                        yield f"{name}.{index}", item
            elif isinstance(value, dict):
                for key, item in value.items():
                    if isinstance(item, (Tensor, Module)):
                        yield f"{name}.{key}", item

    def named_parameters(self, prefix: str = "") -> Dict[str, Tensor]:
        params: Dict[str, Tensor] = {}
        for name, value in self._children():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                params[full] = value
            else:
                params.update(value.named_parameters(prefix=f"{full}."))
        return params

    def parameters(self) -> List[Tensor]:
        return list(self.named_parameters().values())

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: param.values.copy() for name, param in self.named_parameters().items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = sorted(set(params) - set(state))
        unexpected = sorted(set(state) - set(params))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing {missing}, unexpected {unexpected}")
        for name, param in params.items():
            values = np.asarray(state[name], dtype=param.values.dtype)
            if values.shape != param.shape:
                raise ValueError(f"{name}: expected shape {param.shape}, got {values.shape}")
            param.values = values.copy()


class Linear(Module):
    """Affine map ``x @ W + b`` on the last axis."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 init: str = "xavier"):
        self.weight = Tensor(init_weight(rng, in_features, out_features, init))
        self.bias = Tensor(np.zeros(out_features, dtype=np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        return matmul(x, self.weight) + self.bias


class MLP(Module):
    """One hidden layer with SiLU activation."""

    def __init__(self, in_features: int, hidden: int, out_features: int,
                 rng: np.random.Generator, init: str = "xavier"):
        self.hidden = Linear(in_features, hidden, rng, init)
        self.output = Linear(hidden, out_features, rng, init)

    def __call__(self, x: Tensor) -> Tensor:
        return self.output(silu(self.hidden(x)))
