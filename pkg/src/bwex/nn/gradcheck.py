"""Finite-difference audit of hand-written backward passes.

The scalar probed is ``sum(forward(x) * R)`` for a fixed random ``R``, so the
analytic gradient is simply ``backward(R)``. Numerical gradients use central
differences in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from bwex.nn.tensor import Tensor


SCALE_FLOOR = 1e-5


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = SCALE_FLOOR) -> float:
    """Max absolute deviation divided by the largest magnitude in either array.

    The denominator is floored so gradients that are identically zero (a conv
    bias feeding batch norm) are judged by absolute finite-difference noise.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), floor)
    return float(np.abs(analytic - numeric).max() / scale)


@dataclass
class GradCheckReport:
    name: str
    tolerance: float
    errors: dict[str, float] = field(default_factory=dict)
    cases: int = 0
    skipped_probes: int = 0

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return bool(self.errors) and all(np.isfinite(e) and e <= self.tolerance for e in self.errors.values())

    def merge(self, other: "GradCheckReport") -> None:
        for k, e in other.errors.items():
            prev = self.errors.get(k, 0.0)
            self.errors[k] = e if not np.isfinite(e) else max(prev, e)
        self.cases += other.cases
        self.skipped_probes += other.skipped_probes

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        worst = max(self.errors, key=lambda k: self.errors[k]) if self.errors else "-"
        return (f"{status} {self.name}: max rel err {self.max_error:.3e} ({worst}) "
                f"tol {self.tolerance:.0e}, {self.cases} cases, {self.skipped_probes} kink-skipped probes")


def _probe_indices(rng, size: int, max_probes: int | None) -> np.ndarray:
    if max_probes is None or size <= max_probes:
        return np.arange(size)
    return np.sort(rng.choice(size, size=max_probes, replace=False))


def grad_check(
    module,
    input_shape: tuple[int, ...],
    params: dict[str, Tensor],
    *,
    name: str = "module",
    seed: int = 0,
    h: float = 1e-4,
    tol: float = 1e-4,
    max_probes: int | None = None,
    check_input: bool = True,
    signature: Callable[[], np.ndarray] | None = None,
    make_input: Callable[[np.random.Generator, tuple], np.ndarray] | None = None,
) -> GradCheckReport:
    """Compare ``module.backward`` against central differences.

    ``params`` maps names to the float64 tensors the module reads. When
    ``signature`` is given (e.g. the concatenated ReLU masks), probes whose
    +h/-h evaluations change the signature straddle a kink and are skipped.
    """
    rng = np.random.default_rng(seed)
    x = make_input(rng, input_shape) if make_input else rng.standard_normal(input_shape)
    out = module.forward(x.copy())
    proj = rng.standard_normal(out.shape)
    base_sig = signature().copy() if signature else None

    for t in params.values():
        t.grad = None
    dx = module.backward(proj.copy())
    analytic = {k: np.array(t.grad, dtype=np.float64) for k, t in params.items()}

    def objective(xv) -> tuple[float, np.ndarray | None]:
        val = float(np.sum(module.forward(xv) * proj))
        return val, (signature().copy() if signature else None)

    report = GradCheckReport(name, tol, cases=1)

    def audit(label: str, array: np.ndarray, grad: np.ndarray):
        flat = array.reshape(-1)
        idx = _probe_indices(rng, flat.size, max_probes)
        kept, numeric = [], []
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            lp, sp = objective(x)
            flat[i] = orig - h
            lm, sm = objective(x)
            flat[i] = orig
            if base_sig is not None and (not np.array_equal(sp, base_sig) or not np.array_equal(sm, base_sig)):
                report.skipped_probes += 1
                continue
            kept.append(i)
            numeric.append((lp - lm) / (2.0 * h))
        if not kept:
            report.errors[label] = float("nan")
            return
        report.errors[label] = relative_error(grad.reshape(-1)[kept], np.array(numeric))

    for k, t in params.items():
        audit(k, t.data, analytic[k])
    if check_input and dx is not None:
        audit("input", x, np.asarray(dx, dtype=np.float64))
    return report


def grad_check_cases(build: Callable[[int], tuple], n_cases: int = 20, *, name: str, tol: float = 1e-4,
                     **kwargs) -> GradCheckReport:
    """Run :func:`grad_check` on ``n_cases`` seeded configurations.

    ``build(seed)`` returns ``(module, input_shape, params)``; per-parameter
    errors are reduced by max over cases, so builders should reuse names.
    """
    total = GradCheckReport(name, tol)
    for seed in range(n_cases):
        module, shape, params = build(seed)
        r = grad_check(module, shape, params, name=name, seed=seed, tol=tol, **kwargs)
        total.merge(r)
    return total
