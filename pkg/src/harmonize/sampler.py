"""Deterministic DDIM sampling, the dual-process swap runner and the ablation driver.

Executed steps are counted from ``z_T``: step ``k`` (1-based) denoises
timestep ``t = T - k + 1``. A swap window starting at step 21 therefore
covers the final 80 of 100 steps.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .attention import SwapBuffer
from .denoiser import LatentState
from .embedding import ContextMode, TokenRole, compose_context
from .exceptions import ConfigurationError, DualShapeError, StepError, SwapSkippedWarning
from .masking import SubjectMask, subject_mask_from_records
from .numerics import SeededRng, mix
from .orchestration import DEFAULT_EXCLUDED_ROLES, build_basis, orchestrate

__all__ = [
    "VARIANTS",
    "DualResult",
    "NoiseSchedule",
    "SingleResult",
    "SwapWindow",
    "VariantResult",
    "ddim_step",
    "initial_noise",
    "run_ablation",
    "run_dual",
    "run_single",
]

# (key, label) in the row order of the ablation table
VARIANTS = (
    ("baseline", "Baseline"),
    ("orchestration", "w/Orchestration"),
    ("swap", "w/SA Swap"),
    ("ours", "Ours"),
)


class NoiseSchedule:
    """Linear beta schedule with cumulative products ``abar_t``; ``abar_0 = 1``."""

    def __init__(self, steps=100, beta_start=1e-4, beta_end=0.02):
        if steps < 1:
            raise ConfigurationError("steps must be >= 1")
        if not 0.0 < beta_start <= beta_end < 1.0:
            raise ConfigurationError("need 0 < beta_start <= beta_end < 1")
        self.steps = steps
        self.beta_start = beta_start
        self.beta_end = beta_end
        if steps == 1:
            betas = [beta_start]
        else:
            span = beta_end - beta_start
            betas = [beta_start + span * k / (steps - 1) for k in range(steps)]
        self.betas = np.array(betas)
        abar = [1.0]
        for beta in betas:
            abar.append(abar[-1] * (1.0 - beta))
        self.alpha_bars = np.array(abar)

    def alpha_bar(self, step):
        return float(self.alpha_bars[step])

    def check_step(self, step):
        if not 1 <= step <= self.steps:
            raise StepError(f"timestep {step} outside [1, {self.steps}]")

    def timestep(self, executed):
        """Timestep denoised by the ``executed``-th step (1-based)."""
        return self.steps - executed + 1

    def add_noise(self, z0, noise, step):
        abar = self.alpha_bar(step)
        return math.sqrt(abar) * np.asarray(z0) + math.sqrt(1.0 - abar) * np.asarray(noise)


def ddim_step(z, eps, step, schedule):
    """One deterministic DDIM update from ``t`` to ``t - 1``."""
    schedule.check_step(step)
    features = np.asarray(getattr(z, "features", z), dtype=np.float64)
    eps = np.asarray(getattr(eps, "features", eps), dtype=np.float64)
    a_t = schedule.alpha_bar(step)
    a_prev = schedule.alpha_bar(step - 1)
    x0 = (features - math.sqrt(1.0 - a_t) * eps) / math.sqrt(a_t)
    out = math.sqrt(a_prev) * x0 + math.sqrt(1.0 - a_prev) * eps
    return z.replace(out) if isinstance(z, LatentState) else out


def initial_noise(seed, grid, channels):
    """``z_T`` drawn from ``SeededRng(mix(seed, 0))``."""
    l = grid[0] * grid[1]
    return LatentState(tuple(grid), SeededRng(mix(seed, 0)).normal_matrix(l, channels))


@dataclass(frozen=True)
class SwapWindow:
    start_step: int = 21
    layers: tuple = ()

    def validate(self, model, schedule):
        if not 1 <= self.start_step <= schedule.steps + 1:
            raise ConfigurationError(
                f"swap start step {self.start_step} outside [1, {schedule.steps + 1}]"
            )
        bad = set(self.layers) - set(model.layer_ids("decoder"))
        if bad:
            raise ConfigurationError(f"swap layers {sorted(bad)} are not decoder blocks")

    def active(self, executed):
        return executed >= self.start_step


@dataclass
class SingleResult:
    z0: LatentState
    records: list = field(repr=False)
    z_T: LatentState = field(repr=False, default=None)


@dataclass
class DualResult:
    z0: LatentState
    records: list = field(repr=False)
    donor_records: list = field(repr=False)
    masks: dict = field(repr=False)
    donor_z0: LatentState = field(repr=False, default=None)
    buffer_steps: list = field(repr=False, default_factory=list)
    z_T: LatentState = field(repr=False, default=None)


def run_single(model, context, schedule, z_T, *, keep_self_maps=False):
    """Denoise ``z_T`` for ``schedule.steps`` steps under one context."""
    z = z_T
    records = []
    for k in range(1, schedule.steps + 1):
        t = schedule.timestep(k)
        eps, recs = model.forward(z, t, context, keep_self_maps=keep_self_maps)
        records.append(recs)
        z = ddim_step(z, eps, t, schedule)
    return SingleResult(z, records, z_T)


def run_dual(model, main_context, donor_context, schedule, window, z_T, *,
             mask_slots, threshold=0.5, swap_enabled=True, mask_fn=None,
             keep_self_maps=False, donor_z_T=None):
    """Main and visual-only donor passes in lockstep with masked self-attention swap.

    Per step: the donor pass runs first and its K/V at the swap layers are
    captured; inside the window a subject mask is derived from the main
    pass's cross-attention at the previous step; then the main pass runs
    with the swap hook; finally both latents take their own DDIM step.

    ``mask_fn(executed_step, mask) -> mask`` may replace the derived mask
    (used to force degenerate masks in tests).
    """
    window.validate(model, schedule)
    if main_context.dim != donor_context.dim:
        raise DualShapeError("main and donor contexts differ in feature dimension")
    z_main = z_T
    z_donor = z_T if donor_z_T is None else donor_z_T
    if z_main.grid != z_donor.grid or z_main.features.shape != z_donor.features.shape:
        raise DualShapeError(f"main latent {z_main.grid} and donor latent {z_donor.grid} differ")

    layers = tuple(window.layers) if swap_enabled else ()
    records, donor_records, masks, buffer_steps = [], [], {}, []
    prev_main = None
    for k in range(1, schedule.steps + 1):
        t = schedule.timestep(k)
        eps_d, recs_d = model.forward(z_donor, t, donor_context, capture_layers=layers,
                                      keep_self_maps=keep_self_maps)
        donor_records.append(recs_d)

        buffer = None
        if layers and window.active(k):
            if prev_main is None:
                warnings.warn(
                    f"no cross-attention history before step {k}; swap skipped",
                    SwapSkippedWarning,
                    stacklevel=2,
                )
            else:
                mask = subject_mask_from_records(
                    prev_main, mask_slots, *z_main.grid, threshold=threshold, step=k
                )
                if mask_fn is not None:
                    mask = mask_fn(k, mask)
                masks[k] = mask
                captured = {r.layer: r for r in recs_d if r.kind == "self" and r.keys is not None}
                buffer = SwapBuffer(
                    step=t,
                    keys={i: captured[i].keys for i in layers},
                    values={i: captured[i].values for i in layers},
                    masks={i: mask.resample(*captured[i].grid) for i in layers},
                )
        if buffer is not None:
            if buffer.step != t:
                raise StepError(f"swap buffer from timestep {buffer.step} used at {t}")
            buffer_steps.append((t, buffer.step))

        eps_m, recs_m = model.forward(z_main, t, main_context, swap=buffer,
                                      keep_self_maps=keep_self_maps)
        records.append(recs_m)
        prev_main = recs_m

        z_main = ddim_step(z_main, eps_m, t, schedule)
        z_donor = ddim_step(z_donor, eps_d, t, schedule)

    return DualResult(z_main, records, donor_records, masks, z_donor, buffer_steps, z_T)


@dataclass
class VariantResult:
    key: str
    label: str
    result: object = field(repr=False)
    final_mask: SubjectMask = field(repr=False, default=None)
    context: object = field(repr=False, default=None)

    @property
    def z0(self):
        return self.result.z0

    @property
    def masks(self):
        return getattr(self.result, "masks", {})


def subject_slots(context, roles=(TokenRole.SUBJECT,)):
    slots = context.role_indices(roles)
    if not slots:
        raise ConfigurationError(
            f"context has no tokens with roles {sorted(TokenRole(r).value for r in roles)}"
        )
    return slots


def _final_mask(result, slots, grid, threshold, steps):
    if getattr(result, "masks", None):
        return result.masks[max(result.masks)]
    return subject_mask_from_records(result.records[-1], slots, *grid,
                                     threshold=threshold, step=steps)


def run_ablation(model, text, visual, schedule, window, seed, *, variants=None,
                 excluded_roles=DEFAULT_EXCLUDED_ROLES, eps_drop=1e-10,
                 mask_roles=(TokenRole.SUBJECT,), threshold=0.5, keep_self_maps=False,
                 shared_noise=True, orchestration_enabled=True, swap_enabled=True):
    """Run the four ablation variants from one shared ``z_T``.

    1. baseline: single pass on ``[v; t]``
    2. orchestration: single pass on ``[v_perp; t]``
    3. swap: dual pass, main context ``[v; t]``
    4. ours: dual pass, main context ``[v_perp; t]``

    ``orchestration_enabled=False`` replaces ``v_perp`` by ``v`` and
    ``swap_enabled=False`` turns the dual passes into plain runs with an
    idle donor, in every variant.
    """
    keys = [k for k, _ in VARIANTS] if variants is None else list(variants)
    unknown = set(keys) - {k for k, _ in VARIANTS}
    if unknown:
        raise ConfigurationError(f"unknown variants {sorted(unknown)}")
    window.validate(model, schedule)

    full = compose_context(visual, text, ContextMode.FULL)
    basis = build_basis(text, excluded_roles, eps_drop)
    orchestrated = orchestrate(full, basis) if orchestration_enabled else full
    donor = compose_context(visual, None, ContextMode.VISUAL_ONLY)
    slots = subject_slots(full, mask_roles)

    z_T = initial_noise(seed, model.grid, model.h)
    donor_z_T = None
    if not shared_noise:
        donor_z_T = LatentState(model.grid, SeededRng(mix(seed, 5)).normal_matrix(
            z_T.length, model.h))

    out = []
    for key, label in VARIANTS:  # each variant gets its own copy of z_T
        if key not in keys:
            continue
        context = orchestrated if key in ("orchestration", "ours") else full
        if key in ("baseline", "orchestration"):
            result = run_single(model, context, schedule, z_T.replace(z_T.features.copy()),
                                keep_self_maps=keep_self_maps)
        else:
            result = run_dual(model, context, donor, schedule, window,
                              z_T.replace(z_T.features.copy()), mask_slots=slots,
                              threshold=threshold, keep_self_maps=keep_self_maps,
                              donor_z_T=donor_z_T, swap_enabled=swap_enabled)
        mask = _final_mask(result, slots, model.grid, threshold, schedule.steps)
        out.append(VariantResult(key, label, result, mask, context))
    return out
