"""Steering-action refinement and the regression + smoothness training loss.

The regressor consumes the selected object's motion histogram concatenated
with the naive follow-the-object offset, runs one tanh RNN step, and maps the
hidden state linearly to a 2-D steering action. The loss over a predicted
trajectory is the summed wrap-aware distance to ground truth plus lambda
times the summed change in viewing-angle velocity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import Linear, TanhRnnCell
from .errors import InvalidInput
from .geometry import Action, ViewingAngle, angular_offset, signed_azimuth_delta_array


def naive_action(main_pos: ViewingAngle, prev: ViewingAngle) -> Action:
    """Offset that lands exactly on the main object (absent elevation clamping)."""
    return angular_offset(prev, main_pos)


ACTION_GAIN = 8.0  # init scale of the steering head; outputs are degrees/frame


class RegressorNetwork:
    """tanh RNN over (motion, naive offset) with a bias-free 2-D linear head."""

    def __init__(
        self, motion_bins: int, hidden_dim: int, rng: np.random.Generator,
        action_gain: float = ACTION_GAIN,
    ):
        self.motion_bins = motion_bins
        self.hidden_dim = hidden_dim
        self.cell = TanhRnnCell("regressor.cell", motion_bins + 2, hidden_dim, rng)
        self.head = Linear("regressor.head", hidden_dim, 2, rng, gain=action_gain)

    def params(self):
        return self.cell.params() + self.head.params()

    def initial_state(self, batch: int | None = None) -> np.ndarray:
        if batch is None:
            return np.zeros(self.hidden_dim)
        return np.zeros((batch, self.hidden_dim))

    def forward(self, motion: np.ndarray, naive: np.ndarray, mu_prev: np.ndarray):
        """One refinement step; returns (new hidden state, steering delta)."""
        if motion.shape[-1] != self.motion_bins:
            raise InvalidInput(f"expected motion dim {self.motion_bins}, got {motion.shape[-1]}")
        x = np.concatenate([motion, naive], axis=-1)
        mu = self.cell.step(x, mu_prev)
        return mu, self.head.apply(mu)


def regressor_forward(net: RegressorNetwork, motion: np.ndarray, naive, mu_prev: np.ndarray):
    naive_arr = (
        np.array([naive.d_azimuth, naive.d_elevation]) if isinstance(naive, Action) else np.asarray(naive)
    )
    mu, delta = net.forward(motion, naive_arr, mu_prev)
    return mu, Action(float(delta[0]), float(delta[1])) if delta.ndim == 1 else delta


@dataclass(frozen=True)
class LossBreakdown:
    """Regression and smoothness terms in degrees; total = regression + lambda * smoothness."""

    regression: float
    smoothness: float
    lam: float

    @property
    def total(self) -> float:
        return self.regression + self.lam * self.smoothness


def _offsets(pred: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Wrap-aware (pred - ref) offsets for (..., 2) angle arrays."""
    out = pred - ref
    return np.stack([signed_azimuth_delta_array(out[..., 0]), out[..., 1]], axis=-1)


def _unit(vec: np.ndarray) -> np.ndarray:
    """vec / ||vec|| rows, with zero rows kept zero (subgradient choice)."""
    norm = np.linalg.norm(vec, axis=-1, keepdims=True)
    return np.divide(vec, norm, out=np.zeros_like(vec), where=norm > 0.0)


def velocity_array(pred: np.ndarray) -> np.ndarray:
    """Per-frame viewing-angle velocities with the v_1 = (0, 0) convention.

    pred is (..., T, 2); the first velocity is defined as zero because no
    angle precedes the first frame.
    """
    v = np.zeros_like(pred)
    v[..., 1:, :] = _offsets(pred[..., 1:, :], pred[..., :-1, :])
    return v


def loss_terms(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(regression, smoothness) sums for (B, T, 2) batches; returns (B,) arrays."""
    reg = np.linalg.norm(_offsets(pred, gt), axis=-1).sum(axis=-1)
    v = velocity_array(pred)
    smo = np.linalg.norm(np.diff(v, axis=-2), axis=-1).sum(axis=-1)
    return reg, smo


def loss_grad(pred: np.ndarray, gt: np.ndarray, lam: float) -> np.ndarray:
    """Analytic d(regression + lam * smoothness)/d pred for (B, T, 2) batches.

    Uses the zero subgradient at the norms' kinks. Wrapping reduces
    offsets by constants, so its derivative is 1 almost everywhere.
    """
    grad = _unit(_offsets(pred, gt))
    w_hat = _unit(np.diff(velocity_array(pred), axis=-2))  # (B, T-1, 2)
    dv = np.zeros_like(pred)  # dLoss/dv_t
    dv[..., 1:, :] += w_hat
    dv[..., :-1, :] -= w_hat
    # v_t = pred_t - pred_{t-1} for t >= 1; v_0 is a constant
    dsmooth = np.zeros_like(pred)
    dsmooth[..., 1:, :] += dv[..., 1:, :]
    dsmooth[..., :-1, :] -= dv[..., 1:, :]
    return grad + lam * dsmooth


def _as_array(trajectory) -> np.ndarray:
    if isinstance(trajectory, np.ndarray):
        return np.asarray(trajectory, dtype=np.float64)
    return np.array([[p.azimuth, p.elevation] for p in trajectory], dtype=np.float64)


def trajectory_loss(pred, gt, lam: float) -> LossBreakdown:
    """Loss of a predicted trajectory against ground truth.

    Both arguments are sequences of ViewingAngle (or (T, 2) arrays) of equal
    length T >= 2; lam >= 0 weights the smoothness term.
    """
    pred_arr, gt_arr = _as_array(pred), _as_array(gt)
    if pred_arr.shape != gt_arr.shape:
        raise InvalidInput(f"trajectory lengths differ: {pred_arr.shape} vs {gt_arr.shape}")
    if pred_arr.shape[0] < 2:
        raise InvalidInput("trajectory loss needs at least 2 frames")
    if lam < 0:
        raise InvalidInput(f"lambda must be >= 0, got {lam}")
    reg, smo = loss_terms(pred_arr[None], gt_arr[None])
    return LossBreakdown(float(reg[0]), float(smo[0]), lam)


def trajectory_loss_grad(pred, gt, lam: float) -> np.ndarray:
    """Gradient of :func:`trajectory_loss` total w.r.t. the predicted angles."""
    pred_arr, gt_arr = _as_array(pred), _as_array(gt)
    if pred_arr.shape != gt_arr.shape:
        raise InvalidInput(f"trajectory lengths differ: {pred_arr.shape} vs {gt_arr.shape}")
    return loss_grad(pred_arr[None], gt_arr[None], lam)[0]
