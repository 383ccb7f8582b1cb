"""Deterministic numerics: schedulers, optimizer, losses, and gradient checking.

Everything here operates on torch tensors on CPU. Training runs in float32;
gradient verification requires float64 (see :func:`grad_check`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import torch


class ShapeError(ValueError):
    """Tensor shapes violate a structural contract."""


def linear_decay_lr(base_lr: float, step: int, total_steps: int) -> float:
    """Learning rate decayed linearly from ``base_lr`` to exactly zero.

    ``step`` counts optimization steps in [0, total_steps].
    """
    if total_steps <= 0:
        raise ValueError(f"total_steps must be positive, got {total_steps}")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return base_lr * (1.0 - step / total_steps)


@dataclass
class PlateauState:
    """Reduce-on-plateau bookkeeping: halve the lr after `patience`
    consecutive epochs without validation-metric improvement."""

    current_lr: float
    best_metric: float = -math.inf
    epochs_since_improvement: int = 0
    factor: float = 0.5
    patience: int = 2

    def __post_init__(self) -> None:
        if self.current_lr <= 0:
            raise ValueError("current_lr must be positive")


def plateau_update(state: PlateauState, val_metric: float) -> PlateauState:
    """One epoch of the plateau rule; returns a new state.

    Improvement is a strict increase over the best metric seen. The cut fires
    when the stale counter reaches `patience`, then the counter resets.
    """
    if not math.isfinite(val_metric):
        raise ValueError(f"validation metric must be finite, got {val_metric}")
    if val_metric > state.best_metric:
        return replace(state, best_metric=val_metric, epochs_since_improvement=0)
    stale = state.epochs_since_improvement + 1
    if stale >= state.patience:
        return replace(
            state,
            epochs_since_improvement=0,
            current_lr=state.current_lr * state.factor,
        )
    return replace(state, epochs_since_improvement=stale)


@dataclass
class OptimHyper:
    base_lr: float
    weight_decay: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self) -> None:
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")


@dataclass
class ParamSet:
    """Named parameter tensors plus adaptive-moment optimizer state.

    The moment tensors always mirror the parameter shapes; the step counter
    is shared by every parameter of one optimizer instance.
    """

    params: dict[str, torch.Tensor]
    exp_avg: dict[str, torch.Tensor] = field(default_factory=dict)
    exp_avg_sq: dict[str, torch.Tensor] = field(default_factory=dict)
    step: int = 0

    def __post_init__(self) -> None:
        for name, p in self.params.items():
            if name not in self.exp_avg:
                self.exp_avg[name] = torch.zeros_like(p.detach())
            if name not in self.exp_avg_sq:
                self.exp_avg_sq[name] = torch.zeros_like(p.detach())

    @classmethod
    def from_module(cls, module: torch.nn.Module) -> "ParamSet":
        return cls(params=dict(module.named_parameters()))


def optimizer_step(
    params: ParamSet,
    grads: dict[str, torch.Tensor],
    hyper: OptimHyper,
    lr_now: float,
) -> ParamSet:
    """Adaptive-moment update with bias correction and decoupled weight decay.

    Decay shrinks each parameter by ``lr_now * weight_decay * param`` directly;
    it is never folded into the gradients. Parameters are updated in place and
    the same ParamSet is returned.
    """
    if lr_now < 0:
        raise ValueError(f"lr_now must be non-negative, got {lr_now}")
    params.step += 1
    t = params.step
    bc1 = 1.0 - hyper.beta1**t
    bc2 = 1.0 - hyper.beta2**t
    with torch.no_grad():
        for name, p in params.params.items():
            g = grads.get(name)
            if g is None:
                g = torch.zeros_like(p)
            if g.shape != p.shape:
                raise ShapeError(
                    f"gradient shape {tuple(g.shape)} does not match "
                    f"parameter '{name}' shape {tuple(p.shape)}"
                )
            if not torch.isfinite(g).all():
                raise ValueError(f"non-finite gradient for parameter '{name}'")
            if hyper.weight_decay > 0:
                p.mul_(1.0 - lr_now * hyper.weight_decay)
            m = params.exp_avg[name]
            v = params.exp_avg_sq[name]
            m.mul_(hyper.beta1).add_(g, alpha=1.0 - hyper.beta1)
            v.mul_(hyper.beta2).addcmul_(g, g, value=1.0 - hyper.beta2)
            m_hat = m / bc1
            v_hat = v / bc2
            p.addcdiv_(m_hat, v_hat.sqrt().add_(hyper.epsilon), value=-lr_now)
    return params


def cross_entropy(logits: torch.Tensor, labels) -> torch.Tensor:
    """Mean negative log softmax probability of the true class.

    ``logits`` is [batch, 2]; labels are 0/1. Stabilized by max subtraction
    (log-softmax). Returns a 0-dim tensor so gradients flow.
    """
    if logits.ndim != 2 or logits.shape[0] < 1:
        raise ShapeError(f"expected [batch, n_classes] logits, got {tuple(logits.shape)}")
    labels_t = torch.as_tensor(labels, dtype=torch.long)
    if labels_t.ndim != 1 or labels_t.shape[0] != logits.shape[0]:
        raise ShapeError("labels must be a flat list matching the batch size")
    if ((labels_t < 0) | (labels_t >= logits.shape[1])).any():
        raise ValueError("labels must lie in {0, 1}")
    logp = torch.log_softmax(logits, dim=1)
    return -logp[torch.arange(logits.shape[0]), labels_t].mean()


def masked_mse(pred: torch.Tensor, target: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean squared error over masked positions only.

    ``mask`` is boolean and must match the leading dimensions of ``pred``;
    unmasked positions contribute nothing.
    """
    if pred.shape != target.shape:
        raise ShapeError(f"pred {tuple(pred.shape)} vs target {tuple(target.shape)}")
    if mask.dtype != torch.bool:
        raise ShapeError("mask must be boolean")
    if mask.shape != pred.shape[: mask.ndim]:
        raise ShapeError(
            f"mask shape {tuple(mask.shape)} does not prefix pred shape {tuple(pred.shape)}"
        )
    if not mask.any():
        raise ValueError("mask selects no positions")
    diff = pred[mask] - target[mask]
    return (diff * diff).mean()


def grad_check(
    fn,
    params: dict[str, torch.Tensor],
    eps: float = 1e-5,
    max_elements_per_param: int | None = None,
    seed: int = 0,
) -> float:
    """Maximum relative error between reverse-mode and central-difference grads.

    ``fn`` is a zero-argument closure returning a scalar loss built from the
    float64 leaf tensors in ``params``. Central differences use
    (f(x+eps) - f(x-eps)) / (2 eps); relative error uses the denominator
    max(|analytic|, |numeric|, 1e-8). When ``max_elements_per_param`` is set,
    a deterministic random subset of each tensor's elements is probed.
    """
    for name, p in params.items():
        if p.dtype != torch.float64:
            raise ValueError(f"parameter '{name}' must be float64 for gradient checking")
        if not p.requires_grad:
            raise ValueError(f"parameter '{name}' does not require grad")
        p.grad = None

    loss = fn()
    if not torch.isfinite(loss):
        raise ValueError("loss is non-finite")
    loss.backward()

    rng = torch.Generator().manual_seed(seed)
    max_rel = 0.0
    for name, p in params.items():
        analytic = (p.grad if p.grad is not None else torch.zeros_like(p)).reshape(-1)
        flat = p.detach().reshape(-1)
        n = flat.numel()
        if max_elements_per_param is not None and n > max_elements_per_param:
            idx = torch.randperm(n, generator=rng)[:max_elements_per_param]
        else:
            idx = torch.arange(n)
        for i in idx.tolist():
            orig = flat[i].item()
            with torch.no_grad():
                flat[i] = orig + eps
                f_plus = fn().item()
                flat[i] = orig - eps
                f_minus = fn().item()
                flat[i] = orig
            if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                raise ValueError(f"non-finite evaluation while probing '{name}'")
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = analytic[i].item()
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            max_rel = max(max_rel, rel)
    return max_rel
