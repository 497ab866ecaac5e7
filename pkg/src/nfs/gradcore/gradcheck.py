"""Finite-difference validation of taped gradients."""

from __future__ import annotations

import numpy as np

from ..errors import ContractViolation, NonDeterminismError
from .tape import Tape, Tensor, recording


def grad_check(
    fn,
    leaves: dict[str, Tensor],
    epsilon: float = 1e-5,
    samples_per_leaf: int | None = None,
    rng: np.random.Generator | None = None,
    floor: float = 1e-6,
) -> tuple[float, dict[str, float]]:
    """Max relative error between taped gradients and central differences.

    ``fn`` must build a scalar Tensor from the current values of ``leaves``
    and be deterministic (two tape-free evaluations must agree bitwise).
    ``samples_per_leaf`` limits how many entries of each leaf are perturbed
    (all of them when None). The per-entry error is

        |analytic - central| / max(|analytic|, |central|, floor)

    where ``floor`` absorbs the cancellation noise of the difference quotient
    around zero gradients. Returns (max error, per-leaf max errors).
    """
    if not (1e-7 <= epsilon <= 1e-3):
        raise ContractViolation(f"epsilon {epsilon} outside [1e-7, 1e-3]")
    rng = rng or np.random.default_rng(0)

    ref = fn()
    ref_val = float(ref.data if isinstance(ref, Tensor) else ref)
    again = fn()
    again_val = float(again.data if isinstance(again, Tensor) else again)
    if ref_val != again_val:
        raise NonDeterminismError(
            f"function under check is not deterministic: {ref_val!r} vs {again_val!r}"
        )

    for leaf in leaves.values():
        leaf.zero_grad()
    tape = Tape()
    with recording(tape):
        out = fn()
    grads = {name: g.copy() for name, g in
             zip(leaves, tape.backward(out, list(leaves.values())))}
    for leaf in leaves.values():
        leaf.zero_grad()

    per_leaf: dict[str, float] = {}
    worst = 0.0
    for name, leaf in leaves.items():
        flat = leaf.data.reshape(-1)
        n = flat.size
        if samples_per_leaf is None or samples_per_leaf >= n:
            picks = np.arange(n)
        else:
            picks = rng.choice(n, size=samples_per_leaf, replace=False)
        gflat = grads[name].reshape(-1)
        err = 0.0
        for i in picks:
            keep = flat[i]
            flat[i] = keep + epsilon
            hi = fn()
            flat[i] = keep - epsilon
            lo = fn()
            flat[i] = keep
            hi = float(hi.data if isinstance(hi, Tensor) else hi)
            lo = float(lo.data if isinstance(lo, Tensor) else lo)
            central = (hi - lo) / (2.0 * epsilon)
            analytic = gflat[i]
            denom = max(abs(analytic), abs(central), floor)
            err = max(err, abs(analytic - central) / denom)
        per_leaf[name] = err
        worst = max(worst, err)
    return worst, per_leaf
