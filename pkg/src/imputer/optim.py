from dataclasses import dataclass, field

import numpy as np

from imputer.errors import ConfigurationError
from imputer.model import ModelParams


@dataclass
class OptimizerState:
    kind: str
    step: int = 0
    slots: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)


class MomentumSGD:
    kind = "momentum"

    def __init__(self, learning_rate: float, momentum: float = 0.9):
        self.learning_rate = learning_rate
        self.momentum = momentum

    def init_state(self, params: ModelParams) -> OptimizerState:
        return OptimizerState(self.kind, 0, {"velocity": params.zeros_like()})

    def update(self, params: ModelParams, grads: dict[str, np.ndarray], state: OptimizerState):
        velocity = state.slots["velocity"]
        for name in params:
            velocity[name] *= self.momentum
            velocity[name] += grads[name]
            params.tensors[name] -= self.learning_rate * velocity[name]
        state.step += 1


class Adam:
    kind = "adam"

    def __init__(
        self,
        learning_rate: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon

    def init_state(self, params: ModelParams) -> OptimizerState:
        return OptimizerState(
            self.kind, 0, {"m": params.zeros_like(), "v": params.zeros_like()}
        )

    def update(self, params: ModelParams, grads: dict[str, np.ndarray], state: OptimizerState):
        state.step += 1
        m, v = state.slots["m"], state.slots["v"]
        correction1 = 1.0 - self.beta1**state.step
        correction2 = 1.0 - self.beta2**state.step
        for name in params:
            g = grads[name]
            m[name] = self.beta1 * m[name] + (1.0 - self.beta1) * g
            v[name] = self.beta2 * v[name] + (1.0 - self.beta2) * g * g
            step = self.learning_rate * (m[name] / correction1) / (
                np.sqrt(v[name] / correction2) + self.epsilon
            )
            params.tensors[name] -= step.astype(params.tensors[name].dtype)


def make_optimizer(kind: str, learning_rate: float, momentum: float = 0.9):
    if learning_rate <= 0:
        raise ConfigurationError(f"Learning rate must be positive, got {learning_rate}")
    if kind == "momentum":
        return MomentumSGD(learning_rate, momentum)
    if kind == "adam":
        return Adam(learning_rate)
    raise ConfigurationError(f"Unknown optimizer: {kind}")
