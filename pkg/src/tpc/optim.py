"""Global-norm gradient clipping and Adam."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import NonFiniteError

DEFAULT_CLIP_NORM = 100.0
WORLD_MODEL_LR = 6e-4
BEHAVIOR_LR = 8e-5


def clip_global_norm(grads, max_norm=DEFAULT_CLIP_NORM):
    """Rescale ``grads`` jointly so their global L2 norm is at most ``max_norm``.

    Returns ``(clipped_grads, global_norm)`` where ``global_norm`` is the
    norm before clipping.
    """
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = float(np.sqrt(sum(float(np.vdot(g, g)) for g in grads)))
    if norm > max_norm:
        scale = max_norm / norm
        return [g * scale for g in grads], norm
    return list(grads), norm


@dataclass
class OptimizerState:
    learning_rate: float
    clip_norm: float = DEFAULT_CLIP_NORM
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)


def adam_step(params, grads, state: OptimizerState):
    """Apply one bias-corrected Adam update in place and return the pre-clip grad norm."""
    if state.learning_rate <= 0:
        raise ValueError("learning_rate must be positive")
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"grad shape {g.shape} does not match param shape {p.shape}")
        if not np.isfinite(g).all():
            raise NonFiniteError("adam_step refused: non-finite gradient")
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p.data) for p in params]
        state.second_moment = [np.zeros_like(p.data) for p in params]

    grads, norm = clip_global_norm(grads, state.clip_norm)
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data = p.data - state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return norm


class Adam:
    """Adam over a fixed list of parameter tensors, with global-norm clipping."""

    def __init__(self, params, lr, clip_norm=DEFAULT_CLIP_NORM):
        self.params = list(params)
        self.state = OptimizerState(learning_rate=lr, clip_norm=clip_norm)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in self.params]
        return adam_step(self.params, grads, self.state)

    def state_arrays(self):
        st = self.state
        out = {"step_count": np.array([st.step_count], dtype=float)}
        for i, (m, v) in enumerate(zip(st.first_moment, st.second_moment)):
            out[f"m/{i}"] = m
            out[f"v/{i}"] = v
        return out

    def load_state_arrays(self, arrays):
        self.state.step_count = int(arrays["step_count"][0])
        if "m/0" in arrays:
            self.state.first_moment = [np.array(arrays[f"m/{i}"], dtype=p.data.dtype) for i, p in enumerate(self.params)]
            self.state.second_moment = [np.array(arrays[f"v/{i}"], dtype=p.data.dtype) for i, p in enumerate(self.params)]
