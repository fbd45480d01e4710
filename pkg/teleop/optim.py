from typing import List, Optional, Tuple

import numpy as np


class AdamOptimizer:
    """
    Adam with bias-corrected first and second moments over a list of arrays.

    `propose` computes the update for the current gradients without touching
    the parameters or the moments; `commit` keeps the moments of the last
    proposal. Callers that reject a proposal retry with a smaller scale and
    the optimizer state is as if the rejected step never happened. `step` is
    the plain in-place update.
    """

    def __init__(self, shapes: List[Tuple[int, ...]], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self._pending: Optional[Tuple[int, List[np.ndarray], List[np.ndarray]]] = None

    @classmethod
    def for_params(cls, params: List[np.ndarray], **kwargs) -> "AdamOptimizer":
        return cls([p.shape for p in params], **kwargs)

    def propose(self, grads: List[np.ndarray], scale: float = 1.0,
                lr: Optional[float] = None) -> List[np.ndarray]:
        """Return the parameter deltas for grads; the moments advance only on commit()"""
        lr = self.lr if lr is None else lr
        t = self.t + 1
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        m_new, v_new, deltas = [], [], []
        for m, v, g in zip(self.m, self.v, grads):
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * g * g
            m_new.append(m)
            v_new.append(v)
            deltas.append(-scale * lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps))
        self._pending = (t, m_new, v_new)
        return deltas

    def commit(self) -> None:
        if self._pending is None:
            return
        self.t, self.m, self.v = self._pending
        self._pending = None

    def step(self, params: List[np.ndarray], grads: List[np.ndarray]) -> None:
        for p, d in zip(params, self.propose(grads)):
            p += d
        self.commit()


def clip_grad_norm(grads: List[np.ndarray], max_norm: float) -> float:
    """Scale grads in place so their global L2 norm is at most max_norm; returns the pre-clip norm"""
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if total > max_norm and total > 0.0:
        factor = max_norm / total
        for g in grads:
            g *= factor
    return total
