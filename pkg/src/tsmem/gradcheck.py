"""Central finite-difference checking of analytic gradients.

This is the independent oracle for every differentiable operation in the
package: perturb one parameter element at a time, evaluate the loss twice,
and compare the central-difference slope against the recorded gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, no_grad

ABS_FLOOR = 1e-8


@dataclass
class ParamReport:
    name: str
    max_rel_error: float
    worst_index: tuple
    analytic: float
    numeric: float
    n_checked: int
    passed: bool


@dataclass
class GradCheckReport:
    tol: float
    h: float
    params: list[ParamReport] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(p.passed for p in self.params)

    @property
    def max_rel_error(self) -> float:
        return max((p.max_rel_error for p in self.params), default=0.0)

    def summary_lines(self) -> list[str]:
        lines = []
        for p in self.params:
            status = "ok" if p.passed else "FAIL"
            lines.append(
                f"{status:4s} {p.name:40s} max_rel={p.max_rel_error:.3e} "
                f"(analytic={p.analytic:+.6e} numeric={p.numeric:+.6e} at {p.worst_index})"
            )
        return lines


def _rel_error(analytic: float, numeric: float) -> float:
    diff = abs(analytic - numeric)
    if diff <= ABS_FLOOR:
        return 0.0
    return diff / max(abs(analytic), abs(numeric), ABS_FLOOR)


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Sequence[tuple[str, Tensor]],
    h: float = 1e-5,
    tol: float = 1e-4,
    max_elements: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare analytic gradients of ``f()`` against central differences.

    ``f`` must be deterministic: it is re-evaluated many times with single
    parameter elements perturbed in place. When ``max_elements`` is set, a
    random subset of that many elements per parameter is checked (``rng``
    seeds the subset choice); otherwise every element is.
    """
    if h <= 0:
        raise ValueError("finite_diff_check: h must be positive")

    for _, p in params:
        p.zero_grad()
    loss = f()
    backward(loss)
    analytic = {name: (np.zeros(p.shape) if p.grad is None else p.grad.copy()) for name, p in params}

    report = GradCheckReport(tol=tol, h=h)
    for name, p in params:
        flat = p.data.reshape(-1)
        n = flat.size
        if max_elements is not None and n > max_elements:
            picker = rng if rng is not None else np.random.default_rng(0)
            idxs = picker.choice(n, size=max_elements, replace=False)
        else:
            idxs = np.arange(n)
        worst = (0.0, (0,), 0.0, 0.0)
        a_flat = analytic[name].reshape(-1)
        for i in idxs:
            orig = flat[i]
            with no_grad():
                flat[i] = orig + h
                up = f().item()
                flat[i] = orig - h
                down = f().item()
                flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            rel = _rel_error(a_flat[i], numeric)
            if rel >= worst[0]:
                worst = (rel, np.unravel_index(i, p.shape), a_flat[i], numeric)
        report.params.append(
            ParamReport(
                name=name,
                max_rel_error=worst[0],
                worst_index=worst[1],
                analytic=worst[2],
                numeric=worst[3],
                n_checked=len(idxs),
                passed=worst[0] <= tol,
            )
        )
    return report
