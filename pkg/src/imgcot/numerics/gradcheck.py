"""Central finite-difference checks against the reverse sweep."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from imgcot.errors import ContractError, NumericError
from imgcot.numerics.tensor import (
    Tensor,
    backward,
    default_dtype,
    no_grad,
    recording_frozen,
    replaying_frozen,
)


def _scalar(value: Tensor) -> float:
    if value.size != 1:
        raise ContractError("finite_diff_check needs a scalar-valued function")
    out = float(np.asarray(value.data).reshape(-1)[0])
    if not np.isfinite(out):
        raise NumericError("function is not finite at a probe point", primitive=value.op)
    return out


def finite_diff_check(
    fn: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    eps: float = 1e-4,
    coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between the analytic and central-difference gradient.

    ``fn`` receives one Tensor per entry of ``inputs`` and returns a scalar
    Tensor.  The error per coordinate is ``|g_a - g_n| / max(1, |g_n|)``.
    Stop-gradient values seen at the base point are replayed as constants
    while probing, so a path like ``h + sg(z - h)`` is checked as the affine
    map it defines.  ``coords`` limits probing to a random subset per input.
    """
    if eps <= 0:
        raise ContractError("eps must be positive")
    with default_dtype(np.float64):
        points = [np.array(x, dtype=np.float64, copy=True) for x in inputs]
        frozen: list = []
        leaves = [Tensor(p, requires_grad=True) for p in points]
        with recording_frozen(frozen):
            out = fn(*leaves)
        _scalar(out)
        backward(out)
        analytic = [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves]

        def evaluate() -> float:
            with no_grad(), replaying_frozen(frozen):
                return _scalar(fn(*[Tensor(p) for p in points]))

        worst = 0.0
        for k, p in enumerate(points):
            flat = p.reshape(-1)
            idx = np.arange(flat.size)
            if coords is not None and coords < flat.size:
                rng = rng or np.random.default_rng(0)
                idx = rng.choice(flat.size, size=coords, replace=False)
            ga = analytic[k].reshape(-1)
            for i in idx:
                orig = flat[i]
                flat[i] = orig + eps
                fp = evaluate()
                flat[i] = orig - eps
                fm = evaluate()
                flat[i] = orig
                gn = (fp - fm) / (2 * eps)
                worst = max(worst, abs(ga[i] - gn) / max(1.0, abs(gn)))
        return worst


def finite_diff_check_params(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-4,
    coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Same check for a closure over existing parameter tensors (edited in place)."""
    params = list(params)
    originals = [p.data for p in params]
    for p in params:
        p.data = np.array(p.data, dtype=np.float64, copy=True)
        p.grad = None
        p.requires_grad = True
    try:
        with default_dtype(np.float64):
            frozen: list = []
            with recording_frozen(frozen):
                out = loss_fn()
            _scalar(out)
            backward(out)
            analytic = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]

            def evaluate() -> float:
                with no_grad(), replaying_frozen(frozen):
                    return _scalar(loss_fn())

            worst = 0.0
            for p, ga in zip(params, analytic):
                flat = p.data.reshape(-1)
                ga = ga.reshape(-1)
                idx = np.arange(flat.size)
                if coords is not None and coords < flat.size:
                    rng = rng or np.random.default_rng(0)
                    idx = rng.choice(flat.size, size=coords, replace=False)
                for i in idx:
                    orig = flat[i]
                    flat[i] = orig + eps
                    fp = evaluate()
                    flat[i] = orig - eps
                    fm = evaluate()
                    flat[i] = orig
                    gn = (fp - fm) / (2 * eps)
                    worst = max(worst, abs(ga[i] - gn) / max(1.0, abs(gn)))
            return worst
    finally:
        for p, orig in zip(params, originals):
            p.data = orig
            p.grad = None
