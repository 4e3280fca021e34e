"""Masked SGD with perturbed gradient evaluation, and its stepsize theory.

The template per step t:

1. choose a binary mask ``p_t`` (strategy) and perturbation ``delta_t``,
2. evaluate a stochastic gradient ``g_t`` at ``x_t + delta_t``,
3. update ``x_{t+1} = x_t - gamma_t * p_t * g_t``.

The all-ones mask with zero perturbation is vanilla SGD. The stepsize is
``gamma_t = a_t * gamma_base`` where the scale ``a_t`` is either a
constant or the theoretical value

    a_t = min(1, <p*g(x), p*g(x~)> / ||p*g(x~)||^2)

computed from exact gradients. ``theoretical_stepsize`` gives the base
value ``min(1/(L(m+1)), eps/(2 L sigma2))`` under which the per-step
descent bound and the iteration bounds of :mod:`masked_sgd.metrics`
hold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DegenerateGradientError, NumericError, TrainingAborted
from .graphs import Array, as_f64
from .masks import Alternating, Mask, MaskStrategy, next_mask
from .metrics import descent_bound, gradient_ratios
from .perturb import PerturbationStrategy, ZeroComplement, perturb, perturbation_ratio
from .trace import NAN, StepTrace, Trajectory

ALPHA_MODES = ("theoretical", "constant")
MEASURE_MODES = ("exact", "minibatch", "off")
TRACE_MODES = ("full", "summary")


@dataclass
class TrainConfig:
    steps: int
    base_stepsize: float
    alpha_mode: str = "constant"
    alpha_const: float = 1.0
    seed: int = 0
    measure: str = "exact"
    record_loss: bool = False
    trace: str = "full"

    def __post_init__(self):
        if self.steps < 1:
            raise ContractError("steps must be >= 1")
        if self.base_stepsize <= 0:
            raise ContractError("base stepsize must be positive")
        if self.alpha_mode not in ALPHA_MODES:
            raise ContractError(f"alpha_mode must be one of {ALPHA_MODES}")
        if not 0.0 < self.alpha_const <= 1.0:
            raise ContractError("constant stepsize scale must be in (0, 1]")
        if self.measure not in MEASURE_MODES:
            raise ContractError(f"measure must be one of {MEASURE_MODES}")
        if self.trace not in TRACE_MODES:
            raise ContractError(f"trace must be one of {TRACE_MODES}")


def theoretical_stepsize(smoothness: float, eps: float, m: float = 0.0,
                         sigma2: float = 0.0) -> float:
    """Base stepsize ``min(1/(L(m+1)), eps/(2 L sigma2))``.

    The noise branch drops out for exact gradients (sigma2 = 0).
    """
    if smoothness <= 0 or eps <= 0:
        raise ContractError("smoothness and eps must be positive")
    if m < 0 or sigma2 < 0:
        raise ContractError("noise parameters must be nonnegative")
    base = 1.0 / (smoothness * (m + 1.0))
    if sigma2 > 0:
        base = min(base, eps / (2.0 * smoothness * sigma2))
    return base


def step_scale(mask: Mask, grad_x: Array, grad_xt: Array) -> float:
    """Stepsize scale in [0, 1]; 0 when the step would be vacuous or ascending."""
    px = mask.apply(as_f64(grad_x))
    pt = mask.apply(as_f64(grad_xt))
    denom = float(np.dot(pt, pt))
    if denom == 0.0:
        return 0.0
    inner = float(np.dot(px, pt))
    if inner <= 0.0:
        return 0.0
    return min(1.0, inner / denom)


def alignment_factor(mask: Mask, grad_x: Array, grad_xt: Array) -> float:
    """Per-step factor relating the full gradient to the scaled update.

    Equals ``||g(x)|| / (a_t ||p * g(x~)||)`` whenever the masked inner
    product is positive; nan when any denominator degenerates.
    """
    grad_x = as_f64(grad_x)
    px = mask.apply(grad_x)
    pt = mask.apply(as_f64(grad_xt))
    norm_px = float(np.linalg.norm(px))
    norm_pt = float(np.linalg.norm(pt))
    inner = float(np.dot(px, pt))
    if norm_px == 0.0 or norm_pt == 0.0 or inner <= 0.0:
        return NAN
    norm_full = float(np.linalg.norm(grad_x))
    return (norm_full / norm_px) * max(norm_px / norm_pt, norm_px * norm_pt / inner)


def _paired_measurement(problem, x, xt, same_point, rng):
    """Mini-batch gradients at x and x~ sharing one noise/batch draw."""
    if hasattr(problem, "paired_stochastic_grad"):
        return problem.paired_stochastic_grad(x, xt, rng)
    gx = problem.stochastic_grad(x, rng)
    gxt = gx if same_point else problem.stochastic_grad(xt, rng)
    return gx, gxt


def sgd_step(x: Array, t: int, problem, mask_strategy: MaskStrategy,
             perturbation: PerturbationStrategy, cfg: TrainConfig, rng,
             measure_rng=None) -> tuple[Array, StepTrace]:
    """One masked-SGD step; returns the new iterate and its trace.

    Draw order on ``rng`` is fixed (mask, then stochastic gradient);
    mini-batch measurements draw from the separate ``measure_rng`` so
    enabling them never changes the training path.
    """
    x = as_f64(x)
    needs_exact = (
        cfg.alpha_mode == "theoretical"
        or cfg.measure == "exact"
        or mask_strategy.needs_grad
        or perturbation.needs_grad
    )
    exact_gx = problem.grad(x) if needs_exact else None

    mask = next_mask(mask_strategy, t, grad=exact_gx if mask_strategy.needs_grad else None,
                     rng=rng)
    xt, delta = perturb(perturbation, x, mask,
                        grad_at_x=exact_gx if perturbation.needs_grad else None)
    unperturbed = not np.any(delta)

    g_stoch = problem.stochastic_grad(xt, rng)
    if not np.all(np.isfinite(g_stoch)):
        raise NumericError(f"non-finite stochastic gradient at step {t}")

    exact_gxt = None
    if cfg.alpha_mode == "theoretical" or cfg.measure == "exact":
        exact_gxt = exact_gx if unperturbed else problem.grad(xt)

    if cfg.alpha_mode == "theoretical":
        alpha = step_scale(mask, exact_gx, exact_gxt)
    else:
        alpha = cfg.alpha_const
    gamma = alpha * cfg.base_stepsize

    x_next = x - gamma * mask.apply(g_stoch)
    if not np.all(np.isfinite(x_next)):
        raise NumericError(f"non-finite iterate at step {t}")

    trace = StepTrace(t=t, stepsize=gamma, step_scale=alpha, mask_active=mask.active)

    if cfg.measure == "exact":
        gx_m, gxt_m = exact_gx, exact_gxt
    elif cfg.measure == "minibatch":
        gx_m, gxt_m = _paired_measurement(problem, x, xt, unperturbed, measure_rng)
    else:
        gx_m = gxt_m = None

    if gx_m is not None:
        px = mask.apply(gx_m)
        pt = mask.apply(gxt_m)
        trace.grad_norm = float(np.linalg.norm(gx_m))
        trace.masked_grad_norm = float(np.linalg.norm(px))
        trace.masked_pert_grad_norm = float(np.linalg.norm(pt))
        trace.inner = float(np.dot(px, pt))
        ratios = gradient_ratios(mask, gx_m, gxt_m)
        trace.norm_ratio = ratios.norm_ratio
        trace.sim_ratio = ratios.sim_ratio
        trace.align_ratio = ratios.align_ratio
        trace.alignment_factor = alignment_factor(mask, gx_m, gxt_m)
        if not unperturbed:
            try:
                trace.perturbation_ratio = perturbation_ratio(delta, mask, gx_m, gxt_m)
            except DegenerateGradientError:
                trace.perturbation_ratio = NAN

    if cfg.record_loss:
        trace.loss_before = problem.loss(x)
        trace.loss_after = problem.loss(x_next)
        if (
            cfg.alpha_mode == "theoretical"
            and exact_gxt is not None
            and getattr(problem, "smoothness", None)
        ):
            bound = descent_bound(
                trace.loss_before, cfg.base_stepsize, alpha,
                float(np.linalg.norm(mask.apply(exact_gxt))),
                problem.smoothness, problem.noise.sigma2,
            )
            trace.descent_residual = trace.loss_after - bound

    return x_next, trace


class _Accumulator:
    """Running sums for one phase of a run."""

    def __init__(self):
        self.steps = 0
        self.sum_scaled_masked_sq = 0.0
        self.sum_grad_sq = 0.0
        self.max_alignment = NAN
        self.undefined = 0

    def add(self, tr: StepTrace):
        self.steps += 1
        self.sum_scaled_masked_sq += tr.step_scale**2 * tr.masked_pert_grad_norm**2
        self.sum_grad_sq += tr.grad_norm**2
        if math.isnan(tr.alignment_factor):
            self.undefined += 1
        elif math.isnan(self.max_alignment) or tr.alignment_factor > self.max_alignment:
            self.max_alignment = tr.alignment_factor

    def summary(self, prefix=""):
        n = max(self.steps, 1)
        return {
            f"{prefix}steps": self.steps,
            f"{prefix}mean_scaled_masked_grad_sq": self.sum_scaled_masked_sq / n,
            f"{prefix}mean_grad_sq": self.sum_grad_sq / n,
            f"{prefix}max_alignment_factor": self.max_alignment,
            f"{prefix}alignment_undefined": self.undefined,
        }


def run_masked_sgd(problem, mask_strategy: MaskStrategy,
                   perturbation: PerturbationStrategy, cfg: TrainConfig,
                   x0: Array, phase_period: int | None = None) -> Trajectory:
    """Run the full loop from ``x0``; deterministic given ``cfg.seed``.

    A numeric failure raises :class:`TrainingAborted` carrying the
    partial trajectory.
    """
    x = as_f64(x0).copy()
    if x.shape != (problem.dim,):
        raise ContractError(f"x0 has shape {x.shape}, problem dimension is {problem.dim}")
    if not np.all(np.isfinite(x)):
        raise ContractError("x0 must be finite")
    rng = np.random.default_rng(cfg.seed)
    measure_rng = np.random.default_rng([cfg.seed, 1]) if cfg.measure == "minibatch" else None

    traces: list[StepTrace] = []
    total = _Accumulator()
    phases = [_Accumulator() for _ in range(phase_period)] if phase_period else None

    def finish(xf, aborted=False):
        summary = total.summary()
        if phases:
            for i, acc in enumerate(phases):
                summary.update(acc.summary(prefix=f"phase{i}_"))
        summary["final_grad_norm"] = float(np.linalg.norm(problem.grad(xf)))
        summary["final_loss"] = problem.loss(xf)
        summary["aborted"] = aborted
        meta = {
            "mask_strategy": mask_strategy.describe(),
            "perturbation": perturbation.describe(),
            "alpha_mode": cfg.alpha_mode,
            "alpha_const": cfg.alpha_const,
            "base_stepsize": cfg.base_stepsize,
            "seed": cfg.seed,
            "steps": cfg.steps,
            "measure": cfg.measure,
        }
        return Trajectory(traces, summary, xf, meta)

    for t in range(cfg.steps):
        try:
            x_next, tr = sgd_step(x, t, problem, mask_strategy, perturbation, cfg,
                                  rng, measure_rng)
        except NumericError as err:
            raise TrainingAborted(str(err), finish(x, aborted=True), node=err.node) from err
        total.add(tr)
        if phases:
            phases[t % phase_period].add(tr)
        if cfg.trace == "full":
            traces.append(tr)
        x = x_next

    return finish(x)


def run_alternating(problem, core: Mask, cfg: TrainConfig, x0: Array) -> Trajectory:
    """Joint training: even steps update everything, odd steps update the
    core with the complement zeroed for gradient evaluation.

    Summary carries ``full_``/``core_`` prefixed per-phase metrics.
    """
    if core.active == 0:
        raise ContractError("core mask must be non-empty")
    strategy = Alternating([Mask.ones(core.dim), core])
    traj = run_masked_sgd(problem, strategy, ZeroComplement(), cfg, x0, phase_period=2)
    for key in list(traj.summary):
        if key.startswith("phase0_"):
            traj.summary["full_" + key[len("phase0_"):]] = traj.summary.pop(key)
        elif key.startswith("phase1_"):
            traj.summary["core_" + key[len("phase1_"):]] = traj.summary.pop(key)
    traj.meta["algorithm"] = "alternating"
    return traj
