"""The composed online pilot: per-frame selection, naive follow offset,
recurrent refinement, and viewing-angle update. Strictly causal — each step
sees only the current observation and the carried state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .diffcore import Checkpoint, LrSchedule, ParamTensor, load_checkpoint, params_digest, save_checkpoint
from .errors import ConfigError, InvalidInput
from .geometry import Action, ViewingAngle, apply_action
from .observation import ANGLE_SCALE, OFFSET_SCALE, Episode, FrameObservation
from .regressor import RegressorNetwork, naive_action
from .selector import SelectorNetwork, select_greedy


@dataclass(frozen=True)
class ModelDims:
    """Architecture hyperparameters shared by checkpoints and data files."""

    appearance_dim: int = 16
    motion_bins: int = 12
    slots: int = 8
    selector_hidden: int = 256
    regressor_hidden: int = 8

    @property
    def flat_dim(self) -> int:
        return (self.appearance_dim + 2 + self.motion_bins) * self.slots

    def as_dict(self) -> dict:
        return {
            "appearance_dim": self.appearance_dim,
            "motion_bins": self.motion_bins,
            "slots": self.slots,
            "selector_hidden": self.selector_hidden,
            "regressor_hidden": self.regressor_hidden,
        }


class PilotModel:
    """All trainable weights of the selector and regressor networks."""

    def __init__(self, dims: ModelDims, rng: np.random.Generator):
        self.dims = dims
        self.selector = SelectorNetwork(dims.flat_dim, dims.selector_hidden, dims.slots, rng)
        self.regressor = RegressorNetwork(dims.motion_bins, dims.regressor_hidden, rng)

    def params(self) -> list[ParamTensor]:
        return self.selector.params() + self.regressor.params()

    def param_map(self) -> dict[str, ParamTensor]:
        return {p.name: p for p in self.params()}

    def digest(self) -> str:
        return params_digest(self.params())

    def snapshot(self) -> dict[str, np.ndarray]:
        return {p.name: p.values.copy() for p in self.params()}

    def restore(self, snapshot: dict[str, np.ndarray]) -> None:
        for p in self.params():
            p.values[...] = snapshot[p.name]
            p.zero_grad()

    def load_param_values(self, values: dict[str, np.ndarray]) -> None:
        own = self.param_map()
        if set(values) != set(own):
            raise ConfigError(
                f"parameter names {sorted(values)} do not match model {sorted(own)}"
            )
        for name, arr in values.items():
            if arr.shape != own[name].shape:
                raise ConfigError(f"parameter {name} shape {arr.shape} != {own[name].shape}")
            own[name].values[...] = arr

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "PilotModel":
        dims = ModelDims(**ckpt.arch)
        model = cls(dims, np.random.default_rng(0))
        model.load_param_values(ckpt.params)
        return model


def save_model_checkpoint(
    path, model: PilotModel, epoch: int, schedule: LrSchedule, rng_record: dict
) -> None:
    save_checkpoint(path, model.dims.as_dict(), epoch, schedule, rng_record, model.params())


def load_model_checkpoint(path, expect_dims: ModelDims | None = None):
    """Returns (model, checkpoint); validates dims when ``expect_dims`` given."""
    ckpt = load_checkpoint(path, expect_arch=expect_dims.as_dict() if expect_dims else None)
    return PilotModel.from_checkpoint(ckpt), ckpt


@dataclass(frozen=True)
class AgentState:
    """Recurrent state the pilot carries between frames."""

    selector_h: np.ndarray
    regressor_mu: np.ndarray
    angle: ViewingAngle


def initial_state(model: PilotModel, init: ViewingAngle) -> AgentState:
    return AgentState(model.selector.initial_state(), model.regressor.initial_state(), init)


def pilot_step(
    obs: FrameObservation,
    state: AgentState,
    model: PilotModel,
    bypass_regressor: bool = False,
    forced_index: int | None = None,
) -> tuple[ViewingAngle, int, AgentState]:
    """One online step: select a main object, refine the follow offset into a
    steering action, and move the viewing angle.

    ``bypass_regressor`` emits the naive offset unrefined and
    ``forced_index`` overrides the greedy selection; both are diagnostic
    hooks, not part of the deployed policy.
    """
    if obs.flat.shape[-1] != model.dims.flat_dim:
        raise InvalidInput(
            f"observation dim {obs.flat.shape[-1]} != model dim {model.dims.flat_dim}"
        )
    h, probs = model.selector.forward(obs.flat, state.selector_h)
    index = select_greedy(probs) if forced_index is None else int(forced_index)
    if not 0 <= index < len(obs.objects):
        raise InvalidInput(f"selection index {index} out of range")
    chosen = obs.objects[index]
    naive = naive_action(chosen.position, state.angle)
    if bypass_regressor:
        mu, delta = state.regressor_mu, naive
    else:
        # regressor inputs use the flat encoding's half-turn angle units
        naive_vec = np.array([naive.d_azimuth, naive.d_elevation]) / OFFSET_SCALE
        mu, out = model.regressor.forward(chosen.motion, naive_vec, state.regressor_mu)
        delta = Action(float(out[0]), float(out[1]))
    angle = apply_action(state.angle, delta)
    return angle, index, AgentState(h, mu, angle)


def pilot_episode(
    episode: Episode,
    model: PilotModel,
    init: ViewingAngle | None = None,
    bypass_regressor: bool = False,
    forced_indices=None,
) -> tuple[list[ViewingAngle], list[int]]:
    """Fold :func:`pilot_step` over an episode.

    ``init`` defaults to the episode's first ground-truth angle, the
    convention used uniformly by training and every benchmark method.
    """
    if init is None:
        init = episode.gt[0]
    state = initial_state(model, init)
    trajectory: list[ViewingAngle] = []
    selections: list[int] = []
    for t, frame in enumerate(episode.frames):
        forced = None if forced_indices is None else forced_indices[t]
        angle, index, state = pilot_step(
            frame, state, model, bypass_regressor=bypass_regressor, forced_index=forced
        )
        trajectory.append(angle)
        selections.append(index)
    return trajectory, selections


def write_trajectory(path, records, checkpoint_id: str, episode_index: int = 0, fh=None) -> None:
    """Write one episode's piloted trajectory as JSON lines.

    ``records`` yields (frame_index, ViewingAngle, selected_index). A header
    line carrying the checkpoint identifier precedes the frame records.
    """
    own = fh is None
    if own:
        fh = open(path, "w", encoding="utf-8")
    try:
        fh.write(json.dumps({"checkpoint": checkpoint_id, "episode": episode_index}) + "\n")
        for frame_index, angle, selected in records:
            fh.write(
                json.dumps(
                    {
                        "frame": frame_index,
                        "azimuth": angle.azimuth,
                        "elevation": angle.elevation,
                        "selected": selected,
                    },
                    separators=(",", ":"),
                )
                + "\n"
            )
    finally:
        if own:
            fh.close()


def read_trajectories(path) -> list[tuple[dict, list[ViewingAngle], list[int]]]:
    """Read a trajectory file back as (header, angles, selections) per episode."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            if "checkpoint" in rec:
                out.append((rec, [], []))
            else:
                out[-1][1].append(ViewingAngle(rec["azimuth"], rec["elevation"]))
                out[-1][2].append(rec["selected"])
    return out
