"""Tests for the composed online pilot."""

import dataclasses

import numpy as np
import pytest

from viewpilot.agent import (
    AgentState,
    ModelDims,
    PilotModel,
    initial_state,
    load_model_checkpoint,
    pilot_episode,
    pilot_step,
    read_trajectories,
    save_model_checkpoint,
    write_trajectory,
)
from viewpilot.diffcore import LrSchedule
from viewpilot.errors import ConfigError, InvalidInput
from viewpilot.geometry import ViewingAngle, angular_distance
from viewpilot.observation import Episode, SceneConfig, synth_scene

DIMS = ModelDims(appearance_dim=6, motion_bins=5, slots=4, selector_hidden=8, regressor_hidden=4)
SCENE = SceneConfig(frames=30, objects=3, slots=4, appearance_dim=6, motion_bins=5)


def _model(seed=0):
    return PilotModel(DIMS, np.random.default_rng(seed))


def _episode(seed=0):
    return synth_scene(SCENE, seed)


class TestPilotStep:
    def test_zero_weights_hold_position(self):
        model = _model()
        for p in model.params():
            p.values[...] = 0.0
        ep = _episode()
        state = initial_state(model, ViewingAngle(123, 7))
        for frame in ep.frames:
            angle, _, state = pilot_step(frame, state, model)
            assert angle == ViewingAngle(123, 7)

    def test_deterministic(self):
        model = _model(1)
        ep = _episode(1)
        state = initial_state(model, ep.gt[0])
        out1 = pilot_step(ep.frames[0], state, model)
        out2 = pilot_step(ep.frames[0], state, model)
        assert out1[0] == out2[0] and out1[1] == out2[1]

    def test_dimension_mismatch_rejected(self):
        other = synth_scene(dataclasses.replace(SCENE, slots=5), 0)
        model = _model()
        with pytest.raises(InvalidInput):
            pilot_step(other.frames[0], initial_state(model, ViewingAngle(0, 0)), model)

    def test_causality_under_future_mutation(self):
        # outputs through frame t are unchanged no matter what later frames hold
        model = _model(2)
        ep = _episode(2)
        cut = 13
        full, _ = pilot_episode(ep, model)
        mutated = Episode(
            ep.frames[:cut] + list(reversed(ep.frames[cut:])),
            ep.gt[:cut] + list(reversed(ep.gt[cut:])),
        )
        partial, _ = pilot_episode(mutated, model, init=ep.gt[0])
        assert full[:cut] == partial[:cut]


class TestPilotEpisode:
    def test_trajectory_covers_every_frame(self):
        model = _model(3)
        ep = _episode(3)
        traj, picks = pilot_episode(ep, model)
        assert len(traj) == len(ep) and len(picks) == len(ep)
        for angle in traj:
            assert 0 <= angle.azimuth < 360 and -90 <= angle.elevation <= 90
        assert all(0 <= i < DIMS.slots for i in picks)

    def test_default_init_is_first_gt(self):
        model = _model(4)
        for p in model.params():
            p.values[...] = 0.0
        ep = _episode(4)
        traj, _ = pilot_episode(ep, model)
        assert all(a == ep.gt[0] for a in traj)

    def test_forced_selection_with_bypass_tracks_main_object(self):
        # with the selector pinned to the generator's main-object slot and
        # the regressor bypassed, the pilot reproduces the observed main
        # object track exactly
        model = _model(5)
        ep = _episode(5)
        traj, picks = pilot_episode(
            ep, model, bypass_regressor=True, forced_indices=ep.gt_object_index
        )
        assert picks == ep.gt_object_index
        for t, angle in enumerate(traj):
            expected = ep.frames[t].objects[ep.gt_object_index[t]].position
            assert angular_distance(angle, expected) < 1e-9

    def test_streaming_equals_batch(self):
        model = _model(6)
        ep = _episode(6)
        traj, picks = pilot_episode(ep, model)
        state = initial_state(model, ep.gt[0])
        for t, frame in enumerate(ep.frames):
            angle, idx, state = pilot_step(frame, state, model)
            assert angle == traj[t] and idx == picks[t]


class TestCheckpointGlue:
    def test_round_trip_preserves_behavior(self, tmp_path):
        model = _model(7)
        ep = _episode(7)
        path = tmp_path / "model.json"
        save_model_checkpoint(path, model, 3, LrSchedule(), {"seed": 0})
        loaded, ckpt = load_model_checkpoint(path, expect_dims=DIMS)
        assert ckpt.epoch == 3
        assert pilot_episode(ep, loaded)[0] == pilot_episode(ep, model)[0]

    def test_dims_mismatch_rejected(self, tmp_path):
        model = _model(8)
        path = tmp_path / "model.json"
        save_model_checkpoint(path, model, 0, LrSchedule(), {})
        with pytest.raises(ConfigError):
            load_model_checkpoint(path, expect_dims=dataclasses.replace(DIMS, slots=9))


class TestTrajectoryFiles:
    def test_round_trip(self, tmp_path):
        model = _model(9)
        ep = _episode(9)
        traj, picks = pilot_episode(ep, model)
        path = tmp_path / "traj.jsonl"
        write_trajectory(path, zip(range(len(traj)), traj, picks), "abc123")
        loaded = read_trajectories(path)
        assert len(loaded) == 1
        header, angles, selections = loaded[0]
        assert header["checkpoint"] == "abc123"
        assert angles == traj and selections == picks
