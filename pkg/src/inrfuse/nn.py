"""Dense primitives, per-layer reverse-mode rules and the Adam optimizer.

Matrices are plain 2-D float64 numpy arrays. Batched inputs are stored
column-wise: a layer with ``M`` inputs evaluated at ``K`` points receives an
``M x K`` matrix.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NumericError, ShapeError

__all__ = [
    "AdamState",
    "adam_step",
    "affine_forward",
    "affine_backward",
    "affine_sine_forward",
    "affine_sine_backward",
    "as_matrix",
    "grad_check",
    "matmul",
]


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def matmul(a, b) -> np.ndarray:
    """Matrix product ``a @ b`` with a shape check naming both operands."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    return a @ b


def _check_affine(w: np.ndarray, b: np.ndarray, x: np.ndarray) -> None:
    if w.ndim != 2 or x.ndim != 2:
        raise ShapeError(f"weight and input must be 2-D, got {w.shape} and {x.shape}")
    if w.shape[1] != x.shape[0]:
        raise ShapeError(f"weight {w.shape[0]}x{w.shape[1]} does not accept input {x.shape[0]}x{x.shape[1]}")
    if b.shape != (w.shape[0],):
        raise ShapeError(f"bias of shape {b.shape} does not match weight rows {w.shape[0]}")


def affine_forward(w: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray:
    _check_affine(w, b, x)
    z = w @ x
    z += b[:, None]
    return z


def affine_backward(upstream: np.ndarray, w: np.ndarray, x: np.ndarray, need_input_grad: bool = True):
    """Gradients of an affine map ``Wx + b`` given ``dL/d(Wx+b)``."""
    if upstream.shape != (w.shape[0], x.shape[1]):
        raise ShapeError(f"upstream {upstream.shape} does not match layer output {(w.shape[0], x.shape[1])}")
    grad_w = upstream @ x.T
    grad_b = upstream.sum(axis=1)
    grad_x = w.T @ upstream if need_input_grad else None
    return grad_w, grad_b, grad_x


def affine_sine_forward(w, b, x, omega: float):
    """Evaluate ``sin(omega * (Wx + b))``.

    Returns ``(pre_activation, activation)``; the pre-activation is ``Wx + b``
    and is what :func:`affine_sine_backward` expects as its cache.
    """
    w = np.asarray(w, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    z = affine_forward(w, b, x)
    act = np.multiply(z, omega)
    np.sin(act, out=act)
    return z, act


def affine_sine_backward(upstream, pre_activation, w, x, omega: float, need_input_grad: bool = True):
    """Reverse-mode rule for :func:`affine_sine_forward`.

    The local derivative is ``omega * cos(omega * pre_activation)``.
    """
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != pre_activation.shape:
        raise ShapeError(f"upstream {upstream.shape} does not match cached pre-activation {pre_activation.shape}")
    delta = np.multiply(pre_activation, omega)
    np.cos(delta, out=delta)
    delta *= omega
    delta *= upstream
    return affine_backward(delta, w, x, need_input_grad)


@dataclass
class AdamState:
    """Moment estimates and hyperparameters for :func:`adam_step`."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    amsgrad: bool = False
    step_count: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)
    # running maximum of the bias-corrected second moment, used only with amsgrad
    max_second_moment: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], **hyper) -> "AdamState":
        state = cls(**hyper)
        state.first_moment = [np.zeros_like(p) for p in params]
        state.second_moment = [np.zeros_like(p) for p in params]
        if state.amsgrad:
            state.max_second_moment = [np.zeros_like(p) for p in params]
        return state


def adam_step(params: list, grads: Sequence[np.ndarray], state: AdamState, names: Sequence[str] | None = None) -> list:
    """One Adam update with bias correction. ``params`` is updated in place and returned.

    With ``state.amsgrad`` the denominator uses the running maximum of the
    bias-corrected second moment, so per-parameter step sizes never grow back
    once gradients shrink.
    """
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameter blocks but {len(grads)} gradient blocks")
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p) for p in params]
        state.second_moment = [np.zeros_like(p) for p in params]
    if state.amsgrad and not state.max_second_moment:
        state.max_second_moment = [np.zeros_like(p) for p in params]
    if len(state.first_moment) != len(params):
        raise ShapeError(f"optimizer state holds {len(state.first_moment)} blocks, parameters have {len(params)}")
    for i, (p, g, m) in enumerate(zip(params, grads, state.first_moment)):
        label = names[i] if names is not None else f"block {i}"
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"{label}: parameter {p.shape}, gradient {g.shape}, moment {m.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in {label}")

    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for i, (p, g, m, v) in enumerate(zip(params, grads, state.first_moment, state.second_moment)):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        v_hat = v / bc2
        if state.amsgrad:
            np.maximum(state.max_second_moment[i], v_hat, out=state.max_second_moment[i])
            v_hat = state.max_second_moment[i]
        denom = np.sqrt(v_hat)
        denom += state.epsilon
        p -= state.lr * (m / bc1) / denom
    return params


def grad_check(loss_and_grad: Callable, params: list, h: float = 1e-5) -> float:
    """Largest relative error between analytic and central-difference gradients.

    ``loss_and_grad(params)`` must return ``(loss, grads)`` with ``grads``
    shaped like ``params``. Parameters are perturbed in place and restored.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    loss, analytic = loss_and_grad(params)
    if not np.isfinite(loss):
        raise NumericError("loss is not finite at the base point")
    analytic = [np.array(g, dtype=np.float64, copy=True) for g in analytic]
    worst = 0.0
    for p, g in zip(params, analytic):
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            up = loss_and_grad(params)[0]
            flat[k] = orig - h
            down = loss_and_grad(params)[0]
            flat[k] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError("loss is not finite at a perturbed point")
            central = (up - down) / (2.0 * h)
            denom = max(abs(gflat[k]), abs(central), 1e-12)
            worst = max(worst, abs(gflat[k] - central) / denom)
    return worst
