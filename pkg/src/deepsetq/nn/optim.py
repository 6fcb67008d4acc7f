"""Adam and Polyak averaging over :class:`ParameterSet` buffers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .params import ParameterSet


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)


class Adam:
    """Bias-corrected Adam operating on a parameter set's flat buffer."""

    def __init__(self, params: ParameterSet, lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.state = AdamState(lr, beta1, beta2, eps, 0,
                               np.zeros_like(params.flat), np.zeros_like(params.flat))

    def step(self, grads: ParameterSet) -> None:
        adam_step(self.params, grads, self.state)


def adam_step(params: ParameterSet, grads: ParameterSet, state: AdamState) -> None:
    """Apply one Adam update in place; ``state.m``/``state.v`` start at zero."""
    params.check_aligned(grads)
    if state.m is None:
        state.m = np.zeros_like(params.flat)
        state.v = np.zeros_like(params.flat)
    g = grads.flat
    tmp = np.empty_like(state.m)
    state.t += 1
    np.multiply(g, 1.0 - state.beta1, out=tmp)
    state.m *= state.beta1
    state.m += tmp
    np.multiply(g, g, out=tmp)
    tmp *= 1.0 - state.beta2
    state.v *= state.beta2
    state.v += tmp
    # lr * m_hat / (sqrt(v_hat) + eps), computed in one scratch buffer.
    np.divide(state.v, 1.0 - state.beta2 ** state.t, out=tmp)
    np.sqrt(tmp, out=tmp)
    tmp += state.eps
    np.divide(state.m, tmp, out=tmp)
    tmp *= state.lr / (1.0 - state.beta1 ** state.t)
    params.flat -= tmp


def soft_update(target: ParameterSet, online: ParameterSet, tau: float) -> None:
    """Polyak update ``target <- tau * online + (1 - tau) * target`` in place."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    target.check_aligned(online)
    if tau == 1.0:
        target.flat[...] = online.flat
        return
    if tau == 0.0:
        return
    target.flat *= (1.0 - tau)
    target.flat += tau * online.flat
