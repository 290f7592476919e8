"""Adam with bias correction."""
from dataclasses import dataclass, field

import numpy as np

from core.exceptions import ShapeError
from core.utils import decode_array, encode_array


@dataclass
class AdamState:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first: dict = field(default_factory=dict)
    second: dict = field(default_factory=dict)

    def to_document(self) -> dict:
        return {
            'learning_rate': self.learning_rate,
            'beta1': self.beta1,
            'beta2': self.beta2,
            'eps': self.eps,
            'step': self.step,
            'first': {name: encode_array(value) for name, value in sorted(self.first.items())},
            'second': {name: encode_array(value) for name, value in sorted(self.second.items())},
        }

    @classmethod
    def from_document(cls, document: dict) -> 'AdamState':
        return cls(
            learning_rate=document['learning_rate'],
            beta1=document['beta1'],
            beta2=document['beta2'],
            eps=document['eps'],
            step=document['step'],
            first={name: decode_array(value) for name, value in document['first'].items()},
            second={name: decode_array(value) for name, value in document['second'].items()},
        )


def adam_step(params: dict, grads: dict, state: AdamState):
    """One in-place update of every parameter that has a gradient."""
    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            continue
        if grad.shape != param.shape:
            raise ShapeError('adam_step', param.shape, grad.shape)
        first = state.first.get(name)
        if first is None:
            first = state.first[name] = np.zeros_like(param.data)
            state.second[name] = np.zeros_like(param.data)
        second = state.second[name]
        first *= state.beta1
        first += (1.0 - state.beta1) * grad
        second *= state.beta2
        second += (1.0 - state.beta2) * grad * grad
        update = state.learning_rate * (first / correction1) / (np.sqrt(second / correction2) + state.eps)
        param.data -= update.astype(param.dtype, copy=False)
    return params, state
