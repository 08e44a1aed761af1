"""AdamW with decoupled weight decay."""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, Mapping, Tuple, Union

import numpy as np

from core.tensor import GradientMap, ShapeMismatchError, Tensor

logger = logging.getLogger(__name__)


@dataclass
class AdamWState:
    """Per-parameter optimizer state.

    ``m`` and ``v`` always have the parameter's shape; ``step`` counts the
    updates applied so far.
    """

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01

    @classmethod
    def for_parameter(cls, param: Tensor, **hyper) -> "AdamWState":
        zeros = np.zeros(param.shape, dtype=np.float64)
        return cls(m=zeros, v=zeros.copy(), **hyper)


def adamw_step(
    state: AdamWState,
    param: Tensor,
    grad: Union[Tensor, np.ndarray],
) -> Tuple[Tensor, AdamWState]:
    """Apply one AdamW update.

    ``m <- b1*m + (1-b1)*g``, ``v <- b2*v + (1-b2)*g^2``, bias-corrected, then
    ``param <- param - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * param)``.

    Args:
        state: Optimizer state for this parameter
        param: Current parameter value
        grad: Gradient of the loss with respect to ``param``

    Returns:
        Tuple of (updated parameter, updated state); inputs are not modified
    """
    g = np.asarray(grad.values if isinstance(grad, Tensor) else grad, dtype=np.float64)
    if not (g.shape == param.shape == state.m.shape == state.v.shape):
        raise ShapeMismatchError(
            f"adamw_step: param {param.shape}, grad {g.shape}, m {state.m.shape}, v {state.v.shape}"
        )
    step = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1 ** step)
    v_hat = v / (1.0 - state.beta2 ** step)

    if state.lr == 0.0:
        new_values = param.values.copy()
    else:
        p = param.values.astype(np.float64)
        update = m_hat / (np.sqrt(v_hat) + state.eps) + state.weight_decay * p
        new_values = (p - state.lr * update).astype(param.values.dtype)
    return Tensor(new_values), replace(state, m=m, v=v, step=step)


@dataclass
class AdamW:
    """Optimizer over a named parameter map.

    Parameters are updated in place (their ``values`` array is replaced) so the
    modules holding them see the new values.
    """

    params: Mapping[str, Tensor]
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    states: Dict[str, AdamWState] = field(default_factory=dict)

    def __post_init__(self):
        hyper = dict(lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps,
                     weight_decay=self.weight_decay)
        for name, param in self.params.items():
            self.states[name] = AdamWState.for_parameter(param, **hyper)

    def step(self, grads: GradientMap) -> None:
        """Update every parameter from its gradient in ``grads``."""
        for name, param in self.params.items():
            updated, self.states[name] = adamw_step(self.states[name], param, grads[param])
            param.values = updated.values
