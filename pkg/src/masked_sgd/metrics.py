"""Convergence-criteria ratios, iteration bounds, and plot-ready series.

Three per-step ratios quantify how much a masked, perturbed step can
lose relative to plain SGD:

* ``norm_ratio``   = ||g(x)|| / ||p * g(x)||          (masking loss, >= 1)
* ``sim_ratio``    = ||p * g(x)|| / ||p * g(x~)||     (perturbation norm loss)
* ``align_ratio``  = ||p*g(x)|| ||p*g(x~)|| / <p*g(x), p*g(x~)>

All three are 1 for vanilla SGD. Ratios with zero denominators are
reported as nan sentinels rather than raised, so measurement runs never
abort; callers count sentinels separately.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .graphs import Array, as_f64
from .masks import Mask
from .trace import NAN, Trajectory


@dataclass(frozen=True)
class GradientRatios:
    norm_ratio: float
    sim_ratio: float
    align_ratio: float


def gradient_ratios(mask: Mask, grad_x: Array, grad_xt: Array) -> GradientRatios:
    """The three criteria ratios at one step; nan where undefined."""
    grad_x = as_f64(grad_x)
    grad_xt = as_f64(grad_xt)
    px = mask.apply(grad_x)
    pt = mask.apply(grad_xt)
    norm_full = float(np.linalg.norm(grad_x))
    norm_px = float(np.linalg.norm(px))
    norm_pt = float(np.linalg.norm(pt))
    inner = float(np.dot(px, pt))
    norm_ratio = norm_full / norm_px if norm_px > 0 else NAN
    sim_ratio = norm_px / norm_pt if norm_pt > 0 else NAN
    align_ratio = norm_px * norm_pt / inner if inner > 0 else NAN
    return GradientRatios(norm_ratio, sim_ratio, align_ratio)


def iteration_bound(smoothness: float, gap0: float, eps: float,
                    m: float = 0.0, sigma2: float = 0.0,
                    alignment_factor: float | None = None) -> int:
    """Steps sufficient to push the averaged step quantity below eps.

    ``ceil(4 (sigma2/eps^2 + (m+1)/eps) * L * gap0)``. With an alignment
    factor q the same bound is evaluated at target ``eps / q^2``, which
    is what full-gradient convergence costs.
    """
    if smoothness <= 0 or gap0 <= 0 or eps <= 0:
        raise ContractError("smoothness, initial gap, and eps must be positive")
    if m < 0 or sigma2 < 0:
        raise ContractError("noise parameters must be nonnegative")
    if alignment_factor is not None:
        if alignment_factor < 1.0:
            raise ContractError("alignment factor must be >= 1")
        eps = eps / alignment_factor**2
    return int(math.ceil(4.0 * (sigma2 / eps**2 + (m + 1.0) / eps) * smoothness * gap0))


_SERIES_KEYS = (
    "t",
    "overlap_sq",      # ||g(x)||^2 / ||p * g(x)||^2
    "sim_sq",          # ||p * g(x)||^2 / ||p * g(x~)||^2
    "align_sq",        # (||p*g(x)|| ||p*g(x~)|| / <.,.>)^2
    "norm_ratio",
    "sim_ratio",
    "align_ratio",
)


def trace_series(trajectory: Trajectory) -> dict[str, Array]:
    """Per-step measurement series for plotting.

    Requires a trajectory recorded with gradient measurement on (exact
    or mini-batch); raises if the ratio fields were never filled.
    """
    traces = trajectory.traces
    if not traces:
        raise ContractError("trajectory has no step traces")
    if all(math.isnan(tr.norm_ratio) and math.isnan(tr.sim_ratio) for tr in traces):
        raise ContractError("trajectory was recorded without gradient measurements")
    out = {k: np.full(len(traces), NAN) for k in _SERIES_KEYS}
    for i, tr in enumerate(traces):
        out["t"][i] = tr.t
        out["norm_ratio"][i] = tr.norm_ratio
        out["sim_ratio"][i] = tr.sim_ratio
        out["align_ratio"][i] = tr.align_ratio
        out["overlap_sq"][i] = tr.norm_ratio**2
        out["sim_sq"][i] = tr.sim_ratio**2
        out["align_sq"][i] = tr.align_ratio**2
    return out


def descent_bound(loss_before: float, base_stepsize: float, step_scale: float,
                  masked_pert_grad_norm: float, smoothness: float, sigma2: float) -> float:
    """Upper bound on the expected next loss for one step.

    ``f(x) - (gamma_base/2) a^2 ||p*g(x~)||^2 + (gamma_base^2 L / 2) sigma2``
    with ``a`` the step scale; valid under the smoothness and noise
    assumptions when the stepsize is ``a * gamma_base`` and
    ``gamma_base <= 1/(L(m+1))``.
    """
    return (
        loss_before
        - 0.5 * base_stepsize * step_scale**2 * masked_pert_grad_norm**2
        + 0.5 * base_stepsize**2 * smoothness * sigma2
    )
