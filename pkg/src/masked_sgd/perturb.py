"""Parameter perturbations applied before gradient evaluation.

The optimizer evaluates gradients at ``x + delta`` but applies updates
at ``x``. Three strategies: no perturbation, zeroing the coordinates
outside the mask (so the gradient is the masked subnetwork's), and an
extragradient-style step along the current gradient.

``check_perturbation_bound`` verifies the bounded-perturbation condition

    ||delta|| / max(||p * grad(x)||, ||p * grad(x~)||) < 1 / (2 L)

under which the sim/align gradient ratios stay below ``SIM_RATIO_BOUND``
and ``ALIGN_RATIO_BOUND`` for the strategies shipped here.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ContractError, DegenerateGradientError
from .graphs import Array, as_f64
from .masks import Mask

SIM_RATIO_BOUND = math.sqrt(10.0) / 2.0
ALIGN_RATIO_BOUND = math.sqrt(10.0)


class PerturbationStrategy:
    needs_grad = False

    def delta(self, x: Array, mask: Mask, grad_at_x: Array | None = None) -> Array:
        raise NotImplementedError

    def describe(self) -> dict:
        return {"kind": type(self).__name__}


class NoPerturbation(PerturbationStrategy):
    def delta(self, x, mask, grad_at_x=None):
        return np.zeros_like(x)


class ZeroComplement(PerturbationStrategy):
    """Evaluate the gradient at ``p * x``: masked-out weights read as zero."""

    def delta(self, x, mask, grad_at_x=None):
        return mask.apply(x) - x


class Extragradient(PerturbationStrategy):
    """Step of size eta along the current gradient before evaluating.

    ``sign=+1`` moves in the gradient direction (ascent side); flip to
    -1 for the classical descent-side variant. Only ``|eta|`` matters
    for the bounded-perturbation check.
    """

    needs_grad = True

    def __init__(self, eta: float, sign: float = 1.0):
        if eta <= 0:
            raise ContractError("extragradient step size must be positive")
        if sign not in (1.0, -1.0):
            raise ContractError("sign must be +1 or -1")
        self.eta = float(eta)
        self.sign = float(sign)

    def delta(self, x, mask, grad_at_x=None):
        if grad_at_x is None:
            raise ContractError("extragradient perturbation requires the current gradient")
        return self.sign * self.eta * as_f64(grad_at_x)

    def describe(self):
        return {"kind": "Extragradient", "eta": self.eta, "sign": self.sign}


def perturb(strategy: PerturbationStrategy, x: Array, mask: Mask,
            grad_at_x: Array | None = None) -> tuple[Array, Array]:
    """Returns ``(x_tilde, delta)`` with ``x_tilde = x + delta``."""
    if strategy.needs_grad and grad_at_x is None:
        raise ContractError(f"{type(strategy).__name__} requires the current gradient")
    x = as_f64(x)
    delta = strategy.delta(x, mask, grad_at_x=grad_at_x)
    return x + delta, delta


def perturbation_ratio(delta: Array, mask: Mask, grad_x: Array, grad_xt: Array) -> float:
    """``||delta|| / max(||p * grad_x||, ||p * grad_xt||)``."""
    delta = as_f64(delta)
    denom = max(
        float(np.linalg.norm(mask.apply(as_f64(grad_x)))),
        float(np.linalg.norm(mask.apply(as_f64(grad_xt)))),
    )
    if denom == 0.0:
        raise DegenerateGradientError("both masked gradients are zero")
    return float(np.linalg.norm(delta)) / denom


def check_perturbation_bound(delta: Array, mask: Mask, grad_x: Array, grad_xt: Array,
                             smoothness: float) -> tuple[float, bool]:
    """Ratio and whether it is strictly below ``1 / (2 L)``."""
    if smoothness <= 0:
        raise ContractError("smoothness constant must be positive")
    ratio = perturbation_ratio(delta, mask, grad_x, grad_xt)
    return ratio, ratio < 1.0 / (2.0 * smoothness)
