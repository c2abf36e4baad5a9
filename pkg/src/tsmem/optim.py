"""AdamW with decoupled weight decay, cosine learning-rate decay, and
global-norm gradient clipping."""

from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


class AdamW:
    """Decoupled-weight-decay Adam over named parameter groups.

    Each group carries its own learning rate and weight decay; ``step`` may
    override the rates (the cosine schedule drives that during fine-tuning).
    """

    def __init__(self, groups: list[dict]):
        # groups: [{"name": str, "params": [(name, Tensor)], "lr": float, "weight_decay": float}]
        self.groups = []
        seen: set[int] = set()
        for g in groups:
            params = list(g["params"])
            for _, p in params:
                if id(p) in seen:
                    raise ValueError("parameter appears in more than one optimizer group")
                seen.add(id(p))
            self.groups.append(
                {
                    "name": g.get("name", "default"),
                    "params": params,
                    "lr": float(g["lr"]),
                    "weight_decay": float(g.get("weight_decay", 0.0)),
                }
            )
        self.t = 0
        self.m = {}
        self.v = {}

    def zero_grad(self):
        for g in self.groups:
            for _, p in g["params"]:
                p.zero_grad()

    def trainable(self):
        for g in self.groups:
            yield from g["params"]

    def step(self, lr_overrides: dict[str, float] | None = None):
        self.t += 1
        bc1 = 1.0 - BETA1**self.t
        bc2 = 1.0 - BETA2**self.t
        for g in self.groups:
            lr = lr_overrides.get(g["name"], g["lr"]) if lr_overrides else g["lr"]
            wd = g["weight_decay"]
            for name, p in g["params"]:
                if p.grad is None:
                    raise ValueError(f"adamw_step: parameter {name!r} has no gradient")
                key = id(p)
                grad = p.grad
                m = self.m.get(key)
                v = self.v.get(key)
                if m is None:
                    m = np.zeros_like(p.data)
                    v = np.zeros_like(p.data)
                m = BETA1 * m + (1.0 - BETA1) * grad
                v = BETA2 * v + (1.0 - BETA2) * grad * grad
                self.m[key] = m
                self.v[key] = v
                mhat = m / bc1
                vhat = v / bc2
                p.data -= lr * (mhat / (np.sqrt(vhat) + EPS)) + lr * wd * p.data


def cosine_lr(step: int, total_steps: int, lr_max: float, eta_min: float) -> float:
    """Cosine decay from lr_max (step 0) to eta_min (step total_steps)."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    w = 0.5 * (1.0 + math.cos(math.pi * step / total_steps))
    return eta_min * (1.0 - w) + lr_max * w


def clip_grad_norm(params, max_norm: float) -> float:
    """Scale all gradients so their global l2 norm is at most ``max_norm``."""
    total = 0.0
    tensors: list[Tensor] = []
    for _, p in params:
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
            tensors.append(p)
    norm = math.sqrt(total)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for p in tensors:
            p.grad = p.grad * scale
    return norm
