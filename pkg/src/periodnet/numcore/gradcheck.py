"""Central finite-difference verification of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .tensor import Tensor, backward, record_relu_patterns


class NondeterminismError(RuntimeError):
    pass


@dataclass
class GradCheckReport:
    tol: float
    h: float
    errors: dict[str, float] = field(default_factory=dict)
    # entries whose +-h stencil crossed a ReLU kink and were re-measured with a smaller step
    refined: dict[str, int] = field(default_factory=dict)
    # entries that straddled a kink at every step tried; excluded from ``errors``
    unresolved: dict[str, int] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return not self.unresolved and all(e < self.tol for e in self.errors.values())

    @property
    def worst(self) -> tuple[str, float]:
        name = max(self.errors, key=self.errors.get)
        return name, self.errors[name]

    def lines(self) -> list[str]:
        out = []
        for name, err in self.errors.items():
            tag = "PASS" if err < self.tol else "FAIL"
            extra = f" refined={self.refined[name]}" if self.refined.get(name) else ""
            if self.unresolved.get(name):
                tag, extra = "FAIL", extra + f" unresolved_kinks={self.unresolved[name]}"
            out.append(f"{tag} {name} max_rel_err={err:.3e}{extra}")
        return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Largest elementwise ``|a - n| / max(|a|, |n|, floor)``.

    The floor keeps entries whose true gradient is ~0 from being judged on
    finite-difference round-off alone.
    """
    if not analytic.size:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def _same_branch(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def finite_diff_check(
    closure: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    h: float = 1e-5,
    tol: float = 1e-4,
    grad_hook: Callable[[str, np.ndarray], np.ndarray] | None = None,
    floor: float = 1e-6,
    refinements: int = 3,
) -> GradCheckReport:
    """Compare tape gradients of ``closure()`` with central differences.

    ``closure`` must rebuild the graph on every call and return a scalar.
    When the ``+-h`` evaluations land on a different ReLU branch than the
    unperturbed point, the entry is re-measured with ``h/10``, ``h/100``, ...
    ``grad_hook`` lets tests corrupt analytic gradients (negative controls).
    """
    with record_relu_patterns() as base_pattern:
        first = closure()
    second = closure()
    if first.data.tobytes() != second.data.tobytes():
        raise NondeterminismError("closure returned different values on repeated evaluation")

    for p in params.values():
        p.grad = None
    backward(second)
    analytic = {}
    for name, p in params.items():
        g = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        analytic[name] = grad_hook(name, g) if grad_hook is not None else g

    def probe(p: Tensor, idx, value: float) -> tuple[float, list[np.ndarray]]:
        p.data[idx] = value
        with record_relu_patterns() as pattern:
            out = closure().item()
        return out, pattern

    report = GradCheckReport(tol=tol, h=h)
    for name, p in params.items():
        numeric = np.zeros_like(p.data)
        valid = np.ones(p.shape, dtype=bool)
        for idx in np.ndindex(*p.shape):
            orig = p.data[idx]
            step = h
            for attempt in range(refinements + 1):
                up, pat_up = probe(p, idx, orig + step)
                down, pat_down = probe(p, idx, orig - step)
                if _same_branch(pat_up, base_pattern) and _same_branch(pat_down, base_pattern):
                    break
                if attempt == refinements:
                    valid[idx] = False
                    report.unresolved[name] = report.unresolved.get(name, 0) + 1
                else:
                    report.refined[name] = report.refined.get(name, 0) + (attempt == 0)
                    step /= 10.0
            p.data[idx] = orig
            numeric[idx] = (up - down) / (2 * step)
        report.errors[name] = relative_error(analytic[name][valid], numeric[valid], floor)
    for p in params.values():
        p.grad = None
    return report
