"""Adam and a central-difference gradient checker."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .tensor import ContractError, NumericError, Tensor, backward, no_grad


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: np.ndarray | None = None
    second_moment: np.ndarray | None = None
    # flat storage that the optimized tensors' data/grad are views into
    flat_data: np.ndarray | None = field(default=None, repr=False)
    flat_grad: np.ndarray | None = field(default=None, repr=False)
    data_views: list[np.ndarray] = field(default_factory=list, repr=False)
    grad_views: list[np.ndarray] = field(default_factory=list, repr=False)


def _bind(params: Sequence[Tensor], state: AdamState) -> None:
    """Make every param's data and grad views into the state's flat buffers."""
    if state.flat_data is None:
        sizes = [p.size for p in params]
        total = int(np.sum(sizes)) if sizes else 0
        state.flat_data = np.empty(total)
        state.flat_grad = np.zeros(total)
        state.first_moment = np.zeros(total)
        state.second_moment = np.zeros(total)
        offset = 0
        for p, n in zip(params, sizes):
            state.data_views.append(state.flat_data[offset:offset + n].reshape(p.shape))
            state.grad_views.append(state.flat_grad[offset:offset + n].reshape(p.shape))
            offset += n
    elif len(state.data_views) != len(params) or any(
            v.shape != p.shape for v, p in zip(state.data_views, params)):
        raise ContractError("Adam state shapes do not match the parameter list")
    for p, dv, gv in zip(params, state.data_views, state.grad_views):
        if p.data is not dv:
            dv[...] = p.data
            p.data = dv
        if p.grad is not gv:
            gv[...] = p.grad
            p.grad = gv


def adam_step(params: Sequence[Tensor], state: AdamState) -> None:
    """One bias-corrected Adam update over ``params``; grads are zeroed after.

    The same param list (same order) must be passed on every call with a
    given state.
    """
    for p in params:
        if p.grad is None:
            raise ContractError(f"parameter {p.name or p.shape} has no gradient")
    _bind(params, state)
    g = state.flat_grad
    state.step_count += 1
    t = state.step_count
    m, v = state.first_moment, state.second_moment
    m *= state.beta1
    m += (1.0 - state.beta1) * g
    v *= state.beta2
    g *= g
    g *= 1.0 - state.beta2
    v += g
    denom = np.sqrt(v / (1.0 - state.beta2 ** t))
    denom += state.epsilon
    update = m / denom
    update *= state.learning_rate / (1.0 - state.beta1 ** t)
    state.flat_data -= update
    g[...] = 0.0


def grad_check_report(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    h: float = 1e-5,
) -> dict[str, float]:
    """Max relative error per named parameter between backprop and central differences.

    The error of one coordinate is ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.
    """
    if not 0 < h <= 1e-3:
        raise ContractError("step h must lie in (0, 1e-3]")
    for p in params.values():
        p.grad = None
    loss = f()
    if not np.isfinite(loss.data).all():
        raise NumericError("objective is not finite")
    backward(loss)
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for k, p in params.items()}

    def evaluate() -> float:
        with no_grad():
            val = float(f().data.reshape(-1)[0])
        if not np.isfinite(val):
            raise NumericError("objective is not finite")
        return val

    report = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        ana = analytic[name].reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = evaluate()
            flat[i] = orig - h
            down = evaluate()
            flat[i] = orig
            num = (up - down) / (2 * h)
            err = abs(ana[i] - num) / max(1.0, abs(ana[i]), abs(num))
            worst = max(worst, err)
        report[name] = worst
    for p in params.values():
        p.grad = None
    return report


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor] | Mapping[str, Tensor],
               h: float = 1e-5) -> float:
    if not isinstance(params, Mapping):
        params = {str(i): p for i, p in enumerate(params)}
    report = grad_check_report(f, params, h)
    return max(report.values(), default=0.0)
