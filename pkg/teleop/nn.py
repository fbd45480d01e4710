"""
Small numpy multilayer perceptrons with hand-written backprop.
"""
import logging
from dataclasses import dataclass
from typing import Callable, List, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)


def elu(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0.0, x, np.expm1(np.minimum(x, 0.0)))


def elu_grad(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0.0, 1.0, np.exp(np.minimum(x, 0.0)))


@dataclass
class MLP:
    """
    Fully connected network: ELU on hidden layers, linear output.

    params alternates weight (in, out) and bias (out,) arrays so the list
    can be handed to the optimizer as is.
    """
    params: List[np.ndarray]

    @classmethod
    def create(cls, sizes: Sequence[int], rng: np.random.Generator, output_gain: float = 1.0) -> "MLP":
        params = []
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            gain = output_gain if i == len(sizes) - 2 else np.sqrt(2.0)
            params.append(rng.normal(0.0, gain / np.sqrt(fan_in), size=(fan_in, fan_out)))
            params.append(np.zeros(fan_out))
        return cls(params)

    @property
    def sizes(self) -> List[int]:
        return [self.params[0].shape[0]] + [w.shape[1] for w in self.params[0::2]]

    @property
    def num_layers(self) -> int:
        return len(self.params) // 2

    def copy(self) -> "MLP":
        return MLP([p.copy() for p in self.params])

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, list]:
        """
        Args:
            x: (N, in) batch

        Returns:
            (output (N, out), cache for backward)
        """
        cache = []
        h = x
        for layer in range(self.num_layers):
            w, b = self.params[2 * layer], self.params[2 * layer + 1]
            z = h @ w + b
            cache.append((h, z))
            h = elu(z) if layer < self.num_layers - 1 else z
        return h, cache

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache: list, grad_out: np.ndarray) -> Tuple[List[np.ndarray], np.ndarray]:
        """Gradients of sum(grad_out * output) wrt params and input"""
        grads = [np.zeros_like(p) for p in self.params]
        g = grad_out
        for layer in reversed(range(self.num_layers)):
            h, z = cache[layer]
            if layer < self.num_layers - 1:
                g = g * elu_grad(z)
            grads[2 * layer] = h.T @ g
            grads[2 * layer + 1] = np.sum(g, axis=0)
            g = g @ self.params[2 * layer].T
        return grads, g


def numerical_gradient(loss_fn: Callable[[], float], params: List[np.ndarray], eps: float = 1e-6) -> List[np.ndarray]:
    """Central finite differences of loss_fn wrt every entry of params (perturbed in place)"""
    grads = []
    for p in params:
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_fn()
            flat[i] = orig - eps
            down = loss_fn()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * eps)
        grads.append(g)
    return grads


def relative_error(a: List[np.ndarray], b: List[np.ndarray]) -> float:
    """Worst per-array ||a - b|| / (||a|| + ||b||)"""
    worst = 0.0
    for x, y in zip(a, b):
        denom = max(float(np.linalg.norm(x) + np.linalg.norm(y)), 1e-12)
        worst = max(worst, float(np.linalg.norm(x - y)) / denom)
    return worst
