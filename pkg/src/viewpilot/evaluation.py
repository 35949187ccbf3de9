"""Metrics (mean overlap, mean velocity difference), baseline pilots, the
offline dynamic-programming view-path optimizer, benchmark tables, and the
slot-count sensitivity sweep.

MVD is reported in degrees per frame. Benchmark rows carry, per method, the
MO/MVD means over episodes plus per-episode detail records, including how
many frames contained no real detections.
"""

from __future__ import annotations

import dataclasses
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .agent import ModelDims, PilotModel, pilot_episode
from .errors import InvalidInput
from .geometry import DEFAULT_H_SPAN, NFoV, ViewingAngle, nfov_iou
from .observation import Episode, SceneConfig, episode_arrays, generate_dataset, synth_scene
from .regressor import velocity_array
from .selector import select_greedy
from .training import DEFAULT_ETA, TrainConfig, reward_array, train

Trajectory = Sequence[ViewingAngle]


def _as_array(trajectory) -> np.ndarray:
    if isinstance(trajectory, np.ndarray):
        return np.asarray(trajectory, dtype=np.float64)
    return np.array([[p.azimuth, p.elevation] for p in trajectory], dtype=np.float64)


def mean_overlap(pred: Trajectory, gt: Trajectory, h_span: float = DEFAULT_H_SPAN) -> float:
    """Mean per-frame IoU between the predicted and ground-truth view windows."""
    pred_arr, gt_arr = _as_array(pred), _as_array(gt)
    if pred_arr.shape != gt_arr.shape:
        raise InvalidInput(f"trajectory lengths differ: {pred_arr.shape} vs {gt_arr.shape}")
    total = 0.0
    for (pa, pe), (ga, ge) in zip(pred_arr, gt_arr):
        total += nfov_iou(
            NFoV(ViewingAngle(pa, pe), h_span=h_span), NFoV(ViewingAngle(ga, ge), h_span=h_span)
        )
    return total / pred_arr.shape[0]


def mean_velocity_difference(pred: Trajectory) -> float:
    """Mean norm of consecutive viewing-angle velocity changes, deg/frame.

    Averages over the T-2 well-defined velocity differences, so it needs at
    least 3 frames.
    """
    pred_arr = _as_array(pred)
    if pred_arr.shape[0] < 3:
        raise InvalidInput(f"MVD needs at least 3 frames, got {pred_arr.shape[0]}")
    v = velocity_array(pred_arr[None])[0][1:]  # real velocities, t >= 1
    return float(np.linalg.norm(np.diff(v, axis=0), axis=1).mean())


# ---------------------------------------------------------------------------
# Baseline pilots. All return a trajectory the same length as the episode.
# ---------------------------------------------------------------------------


def center_hold(episode: Episode, init: ViewingAngle | None = None) -> list[ViewingAngle]:
    """Never steer: hold the initial angle (the first frame's ground truth)."""
    if init is None:
        init = episode.gt[0]
    return [init] * len(episode)


def greedy_salient(episode: Episode) -> list[ViewingAngle]:
    """Jump to the highest-scoring detection every frame (slot 0 by the
    score ordering)."""
    return [frame.objects[0].position for frame in episode.frames]


def selector_only(episode: Episode, model: PilotModel) -> list[ViewingAngle]:
    """Run the trained selector greedily and emit the chosen object's
    position directly, skipping the refinement network."""
    h = model.selector.initial_state()
    out = []
    for frame in episode.frames:
        h, probs = model.selector.forward(frame.flat, h)
        out.append(frame.objects[select_greedy(probs)].position)
    return out


def gt_replay(episode: Episode) -> list[ViewingAngle]:
    """Replay the ground-truth track (upper bound / metric sanity method)."""
    return list(episode.gt)


def agent_pilot(episode: Episode, model: PilotModel) -> list[ViewingAngle]:
    """The full online agent (greedy selection plus refinement)."""
    trajectory, _ = pilot_episode(episode, model)
    return trajectory


def default_view_grid(step: float = 30.0) -> list[ViewingAngle]:
    """Cell centers of a step x step angle grid covering the sphere."""
    if step <= 0 or step > 180:
        raise InvalidInput(f"grid step must be in (0, 180], got {step}")
    azimuths = np.arange(step / 2.0, 360.0, step)
    elevations = np.arange(-90.0 + step / 2.0, 90.0, step)
    return [ViewingAngle(a, e) for a in azimuths for e in elevations]


def _dp_unaries(episode: Episode, grid_arr: np.ndarray, eta: float) -> np.ndarray:
    """unary[t, g]: score-weighted reward of grid view g against the nearest
    real detection at frame t (zero when the frame has no detections)."""
    arrays = episode_arrays(episode)
    t_total, g_total = len(episode), grid_arr.shape[0]
    unary = np.zeros((t_total, g_total))
    for t in range(t_total):
        real = arrays.scores[t] > 0.0
        if not real.any():
            continue
        pos = arrays.positions[t, real]  # (R, 2)
        scores = arrays.scores[t, real]
        rewards = reward_array(grid_arr[:, None, :], pos[None, :, :], eta)  # (G, R)
        daz = np.abs(
            (grid_arr[:, None, 0] - pos[None, :, 0] + 180.0) % 360.0 - 180.0
        )
        dist = np.hypot(daz, grid_arr[:, None, 1] - pos[None, :, 1])
        nearest = np.argmin(dist, axis=1)
        unary[t] = scores[nearest] * rewards[np.arange(g_total), nearest]
    return unary


def offline_dp(
    episode: Episode,
    grid: Sequence[ViewingAngle] | None = None,
    smooth_weight: float = 1.0,
    grid_step: float = 30.0,
    eta: float = DEFAULT_ETA,
) -> list[ViewingAngle]:
    """Whole-episode view-path optimization over a discrete grid.

    Maximizes sum_t unary(view_t) - smooth_weight * dist(view_t, view_{t-1})
    by dynamic programming. Consumes the entire episode before emitting any
    angle, so it is an explicitly offline reference method, not an online
    policy.
    """
    views = list(grid) if grid is not None else default_view_grid(grid_step)
    if not views:
        raise InvalidInput("empty view grid")
    grid_arr = np.array([[v.azimuth, v.elevation] for v in views])
    unary = _dp_unaries(episode, grid_arr, eta)
    daz = np.abs(
        (grid_arr[:, None, 0] - grid_arr[None, :, 0] + 180.0) % 360.0 - 180.0
    )
    trans = smooth_weight * np.hypot(daz, grid_arr[:, None, 1] - grid_arr[None, :, 1])

    t_total, g_total = unary.shape
    best = unary[0].copy()
    back = np.zeros((t_total, g_total), dtype=np.int64)
    for t in range(1, t_total):
        scores = best[:, None] - trans  # (from, to)
        back[t] = np.argmax(scores, axis=0)
        best = scores[back[t], np.arange(g_total)] + unary[t]
    path = np.empty(t_total, dtype=np.int64)
    path[-1] = int(np.argmax(best))
    for t in range(t_total - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return [views[g] for g in path]


def dp_path_value(
    episode: Episode,
    path: Sequence[ViewingAngle],
    grid: Sequence[ViewingAngle],
    smooth_weight: float = 1.0,
    eta: float = DEFAULT_ETA,
) -> float:
    """Objective value of a grid path, folded in the same order as the DP."""
    grid_arr = np.array([[v.azimuth, v.elevation] for v in grid])
    unary = _dp_unaries(episode, grid_arr, eta)
    index = {(v.azimuth, v.elevation): g for g, v in enumerate(grid)}
    ids = [index[(p.azimuth, p.elevation)] for p in path]
    daz = np.abs(
        (grid_arr[:, None, 0] - grid_arr[None, :, 0] + 180.0) % 360.0 - 180.0
    )
    trans = smooth_weight * np.hypot(daz, grid_arr[:, None, 1] - grid_arr[None, :, 1])
    value = unary[0, ids[0]]
    for t in range(1, len(ids)):
        value = (value - trans[ids[t - 1], ids[t]]) + unary[t, ids[t]]
    return float(value)


# ---------------------------------------------------------------------------
# Benchmarks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BenchmarkRow:
    method: str
    mo: float
    mvd: float
    episodes: int

    def __post_init__(self):
        if not (0.0 <= self.mo <= 1.0) or self.mvd < 0.0:
            raise InvalidInput(f"benchmark row out of range: {self}")


METHOD_NAMES = ("agent", "selector_only", "center_hold", "greedy_salient", "offline_dp", "gt_replay")


def build_methods(
    names: Sequence[str],
    model: PilotModel | None = None,
    grid_step: float = 30.0,
    dp_smooth_weight: float = 1.0,
    eta: float = DEFAULT_ETA,
) -> dict[str, Callable[[Episode], list[ViewingAngle]]]:
    """Resolve method names to episode -> trajectory callables."""
    unknown = [n for n in names if n not in METHOD_NAMES]
    if unknown:
        raise InvalidInput(f"unknown methods {unknown}; valid: {list(METHOD_NAMES)}")
    needs_model = {"agent", "selector_only"}
    if needs_model & set(names) and model is None:
        raise InvalidInput("agent and selector_only methods need a model checkpoint")
    table: dict[str, Callable] = {}
    for name in names:
        if name == "agent":
            table[name] = lambda ep: agent_pilot(ep, model)
        elif name == "selector_only":
            table[name] = lambda ep: selector_only(ep, model)
        elif name == "center_hold":
            table[name] = center_hold
        elif name == "greedy_salient":
            table[name] = greedy_salient
        elif name == "offline_dp":
            table[name] = lambda ep: offline_dp(
                ep, grid_step=grid_step, smooth_weight=dp_smooth_weight, eta=eta
            )
        elif name == "gt_replay":
            table[name] = gt_replay
    return table


def empty_frame_count(episode: Episode) -> int:
    """Frames whose slots are all zero-padding (no real detections)."""
    return sum(1 for f in episode.frames if all(o.score == 0.0 for o in f.objects))


def benchmark(
    methods: dict[str, Callable[[Episode], list[ViewingAngle]]],
    episodes: Sequence[Episode],
    h_span: float = DEFAULT_H_SPAN,
    jobs: int = 1,
) -> tuple[list[BenchmarkRow], list[dict]]:
    """Evaluate each method on each episode.

    Returns aggregate rows plus per-episode detail records (method, episode
    index, mo, mvd, empty_frames). MVD units are degrees per frame.
    """
    if not episodes:
        raise InvalidInput("benchmark needs at least one episode")
    rows, details = [], []
    empties = [empty_frame_count(ep) for ep in episodes]
    for name, fn in methods.items():
        def run(pair):
            i, ep = pair
            traj = fn(ep)
            return i, mean_overlap(traj, ep.gt, h_span=h_span), mean_velocity_difference(traj)

        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(run, enumerate(episodes)))
        else:
            results = [run(pair) for pair in enumerate(episodes)]
        results.sort()
        mos = np.array([r[1] for r in results])
        mvds = np.array([r[2] for r in results])
        rows.append(BenchmarkRow(name, float(mos.mean()), float(mvds.mean()), len(episodes)))
        details.extend(
            {
                "method": name,
                "episode": i,
                "mo": float(mo),
                "mvd": float(mvd),
                "empty_frames": empties[i],
            }
            for i, mo, mvd in results
        )
    return rows, details


def write_benchmark(path, rows: list[BenchmarkRow], details: list[dict]) -> None:
    """JSON-lines benchmark output: aggregate rows then detail records."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(
                json.dumps(
                    {
                        "record": "method",
                        "method": row.method,
                        "mo": row.mo,
                        "mvd": row.mvd,
                        "mvd_units": "degrees/frame",
                        "episodes": row.episodes,
                    }
                )
                + "\n"
            )
        for rec in details:
            fh.write(json.dumps({"record": "episode", **rec}) + "\n")


def format_benchmark(rows: list[BenchmarkRow]) -> str:
    lines = [f"{'method':<16} {'MO':>7} {'MVD (deg/frame)':>16} {'episodes':>9}"]
    for row in rows:
        lines.append(f"{row.method:<16} {row.mo:>7.3f} {row.mvd:>16.3f} {row.episodes:>9}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Sensitivity to the slot count N
# ---------------------------------------------------------------------------


def sensitivity_sweep(
    scene: SceneConfig,
    train_config: TrainConfig,
    dims: ModelDims,
    n_values: Sequence[int],
    data_seed: int,
    train_count: int,
    test_count: int,
    out_dir,
    log=None,
) -> list[dict]:
    """Train and evaluate one agent per slot count on the same scenes.

    The generator's random draws do not depend on the slot count, so every
    N sees identical scene content under different padding. Returns one
    record per N with the trained agent's test MO/MVD.
    """
    if any(n < scene.objects for n in n_values):
        raise InvalidInput("every swept N must be >= the scene's object count")
    results = []
    for n in n_values:
        scene_n = dataclasses.replace(scene, slots=n)
        dims_n = dataclasses.replace(dims, slots=n)
        train_eps = generate_dataset(scene_n, data_seed, train_count)
        test_eps = generate_dataset_offset(scene_n, data_seed, train_count, test_count)
        model, _ = train(train_eps, train_config, dims_n, f"{out_dir}/n{n}", log=log)
        rows, _ = benchmark({"agent": lambda ep: agent_pilot(ep, model)}, test_eps)
        results.append({"n": n, "mo": rows[0].mo, "mvd": rows[0].mvd})
        if log is not None:
            log(results[-1])
    return results


def generate_dataset_offset(
    scene: SceneConfig, seed: int, offset: int, count: int
) -> list[Episode]:
    """Episodes (seed, offset) .. (seed, offset+count-1): a disjoint split."""
    return [synth_scene(scene, [seed, offset + i]) for i in range(count)]
