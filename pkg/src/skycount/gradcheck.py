"""Compare tape gradients against central finite differences."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ContractError, GradCheckError
from .tensor import Tensor, no_grad

_MACHINE_EPS = np.finfo(np.float64).eps


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    checked: int
    excluded: List[Tuple[int, Tuple[int, ...]]] = field(default_factory=list)
    worst: Optional[Tuple[int, Tuple[int, ...]]] = None

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status}: max rel error {self.max_rel_error:.3e} (tol {self.tol:.0e}) over "
                f"{self.checked} entries, {len(self.excluded)} non-smooth excluded")


def _value(f, point) -> float:
    with no_grad():
        out = f(point)
    if out.size != 1:
        raise ContractError(f"grad_check needs a scalar function, got shape {out.shape}")
    return out.item()


def grad_check(
    f: Callable,
    point: Union[Tensor, Sequence[Tensor]],
    eps: float = 1e-6,
    tol: float = 1e-4,
    *,
    atol: float = 1e-8,
    max_entries: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    kink_tol: float = 1e-3,
) -> GradCheckReport:
    """Check ``f(point)``'s tape gradient entry by entry.

    ``point`` is one tensor or a sequence of tensors; ``f`` receives it
    unchanged and must return a single-element tensor. The per-entry error
    is ``|tape - central| / max(|tape|, |central|, atol)``.

    Entries where the forward and backward one-sided differences disagree
    (a kink such as ReLU at zero) are reported in ``excluded`` and left out
    of the error. With ``max_entries`` set, at most that many entries per
    tensor are drawn with ``rng``.
    """
    tensors = [point] if isinstance(point, Tensor) else list(point)
    saved_flags = [t.requires_grad for t in tensors]
    for t in tensors:
        t.requires_grad = True
        t.grad = None
    try:
        out = f(point)
        if out.size != 1:
            raise ContractError(f"grad_check needs a scalar function, got shape {out.shape}")
        out.backward()
        tape = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]
    finally:
        for t, flag in zip(tensors, saved_flags):
            t.requires_grad = flag
            t.grad = None

    f0 = _value(f, point)
    if _value(f, point) != f0:
        raise GradCheckError("function returned different values for the same input")
    noise = 64 * _MACHINE_EPS * max(1.0, abs(f0)) / eps

    rng = rng if rng is not None else np.random.default_rng(0)
    worst_err, worst, checked, excluded = 0.0, None, 0, []
    for k, t in enumerate(tensors):
        t.data = np.ascontiguousarray(t.data)
        flat = t.data.reshape(-1)
        if max_entries is not None and flat.size > max_entries:
            entries = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        else:
            entries = range(flat.size)
        for e in entries:
            orig = flat[e]
            flat[e] = orig + eps
            fp = _value(f, point)
            flat[e] = orig - eps
            fm = _value(f, point)
            flat[e] = orig
            idx = np.unravel_index(int(e), t.shape)
            fwd, bwd = (fp - f0) / eps, (f0 - fm) / eps
            if abs(fwd - bwd) > kink_tol * max(abs(fwd), abs(bwd)) + noise:
                excluded.append((k, tuple(int(i) for i in idx)))
                continue
            central = (fp - fm) / (2 * eps)
            a = tape[k][idx]
            err = abs(a - central) / max(abs(a), abs(central), atol)
            checked += 1
            if err > worst_err or worst is None:
                worst_err, worst = err, (k, tuple(int(i) for i in idx))
    return GradCheckReport(max_rel_error=worst_err, tol=tol, checked=checked,
                           excluded=excluded, worst=worst)
