"""Finite-difference verification of every hand-derived backward pass.

The joint rollout's discrete selections are pinned and the REINFORCE
rewards frozen at their nominal values, which turns the training objective
into a deterministic scalar function of the parameters that central
differences can probe directly.
"""

from __future__ import annotations

import numpy as np

from .agent import ModelDims, PilotModel
from .diffcore import GradCheckResult, ParamTensor, gradient_check
from .errors import InvalidInput
from .observation import SceneConfig, episode_arrays, synth_scene
from .regressor import trajectory_loss, trajectory_loss_grad
from .training import WindowBatch, backward_window, rollout_window, surrogate_loss

CHECK_DIMS = ModelDims(
    appearance_dim=8, motion_bins=12, slots=4, selector_hidden=16, regressor_hidden=8
)
CHECK_FRAMES = 10
MODES = ("selector", "regressor", "joint")

_MODE_WEIGHTS = {
    "selector": (0.0, 1.0),  # (supervised weight, policy-gradient weight)
    "regressor": (1.0, 0.0),
    "joint": (1.0, 1.0),
}


def make_check_batch(
    dims: ModelDims, frames: int, seed: int
) -> tuple[WindowBatch, np.ndarray]:
    """A single-window batch from a small synthetic scene, plus a random
    forced-selection index per frame."""
    cfg = SceneConfig(
        frames=frames,
        objects=dims.slots - 1,
        slots=dims.slots,
        appearance_dim=dims.appearance_dim,
        motion_bins=dims.motion_bins,
        elevation_limit=40.0,
    )
    arrays = episode_arrays(synth_scene(cfg, [seed, 101]))
    batch = WindowBatch(
        arrays.flat[None], arrays.positions[None], arrays.motions[None], arrays.gt[None]
    )
    forced = np.random.default_rng([seed, 102]).integers(dims.slots, size=(1, frames))
    return batch, forced


def check_model(
    mode: str,
    seed: int,
    dims: ModelDims = CHECK_DIMS,
    frames: int = CHECK_FRAMES,
    lam: float = 10.0,
    tolerance: float = 1e-4,
    step: float = 1e-5,
    corrupt: str | None = None,
) -> GradCheckResult:
    """Gradient-check one training path ("selector", "regressor", or "joint").

    ``corrupt`` names a parameter whose analytic gradient is perturbed
    before comparison; the check must then fail (negative control).
    """
    if mode not in _MODE_WEIGHTS:
        raise InvalidInput(f"unknown gradcheck mode {mode!r}; expected one of {MODES}")
    sup_w, pg_w = _MODE_WEIGHTS[mode]
    model = PilotModel(dims, np.random.default_rng([seed, 100]))
    batch, forced = make_check_batch(dims, frames, seed)

    tape = rollout_window(model, batch, forced_indices=forced)
    frozen = tape.rewards.copy()
    for p in model.params():
        p.zero_grad()
    backward_window(model, tape, lam, pg_weight=pg_w, sup_weight=sup_w)

    if mode == "selector":
        params = model.selector.params()
    elif mode == "regressor":
        params = model.regressor.params()
    else:
        params = model.params()
    if corrupt is not None:
        chosen = [p for p in params if p.name == corrupt]
        if not chosen:
            raise InvalidInput(f"no parameter named {corrupt!r} in mode {mode!r}")
        chosen[0].grad += 0.5 * (1.0 + np.abs(chosen[0].grad))

    def loss_fn():
        return surrogate_loss(model, batch, forced, frozen, lam, pg_weight=pg_w, sup_weight=sup_w)

    return gradient_check(loss_fn, params, tolerance=tolerance, step=step)


def check_trajectory_loss(
    seed: int, frames: int = 12, lam: float = 10.0, tolerance: float = 1e-4, step: float = 1e-5
) -> GradCheckResult:
    """Finite-difference check of the trajectory-loss gradient itself."""
    rng = np.random.default_rng([seed, 103])
    pred = np.column_stack([rng.uniform(0, 360, frames), rng.uniform(-50, 50, frames)])
    gt = pred + rng.normal(scale=5.0, size=(frames, 2))
    tensor = ParamTensor("trajectory.pred", pred)
    tensor.grad[...] = trajectory_loss_grad(tensor.values, gt, lam)

    def loss_fn():
        return trajectory_loss(tensor.values, gt, lam).total

    return gradient_check(loss_fn, [tensor], tolerance=tolerance, step=step)


def run_all(
    seeds, dims: ModelDims = CHECK_DIMS, frames: int = CHECK_FRAMES,
    tolerance: float = 1e-4, corrupt: str | None = None,
) -> dict[str, GradCheckResult]:
    """Run every check for every seed; keys are '<mode>@seed<k>'."""
    results: dict[str, GradCheckResult] = {}
    for seed in seeds:
        for mode in MODES:
            results[f"{mode}@seed{seed}"] = check_model(
                mode, seed, dims=dims, frames=frames, tolerance=tolerance, corrupt=corrupt
            )
        results[f"trajectory_loss@seed{seed}"] = check_trajectory_loss(
            seed, tolerance=tolerance
        )
    return results
