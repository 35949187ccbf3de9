"""Object-level observations, synthetic scene generation, and episode files.

A frame observation packs the top-N detected objects, ordered by score
descending, into one flat feature vector: all appearance vectors first,
then all (azimuth, elevation) positions, then all motion histograms.
The synthetic generator stands in for a detector/tracker pipeline: it
moves K objects on the angle plane, designates one as the main object,
and emits noisy per-frame detections plus a smoothed ground-truth
viewing-angle track.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from typing import Iterator, Sequence

import numpy as np

from .errors import InvalidInput, ParseError, VersionError
from .geometry import ViewingAngle, clamp_elevation, signed_azimuth_delta_array, wrap_azimuth

EPISODE_FORMAT_VERSION = 1

# Angle-valued entries of the flat network input are stored in half-turn
# units so every feature block is O(1); raw tanh units saturate on degree
#-scale inputs. Positions in object tuples, episode files, and geometry
# stay in degrees.
ANGLE_SCALE = 180.0
OFFSET_SCALE = 30.0

# Fixed appearance signature of the main object. Constant across episodes
# and seeds so that a selector trained on some scenes can recognize the
# main object in unseen ones; distractor signatures are drawn per episode.
_MAIN_PROTO_SEED = 360


def main_appearance_prototype(dim: int, scale: float = 2.0) -> np.ndarray:
    rng = np.random.default_rng(_MAIN_PROTO_SEED)
    v = rng.normal(size=dim)
    return scale * v / np.linalg.norm(v)


@dataclass(frozen=True)
class ObjectObservation:
    """One detected object: appearance vector, position, motion histogram, score."""

    appearance: np.ndarray
    position: ViewingAngle
    motion: np.ndarray
    score: float

    def __post_init__(self):
        object.__setattr__(self, "appearance", np.asarray(self.appearance, dtype=np.float64))
        object.__setattr__(self, "motion", np.asarray(self.motion, dtype=np.float64))
        if not (np.all(np.isfinite(self.appearance)) and np.all(np.isfinite(self.motion))):
            raise InvalidInput("object feature vectors must be finite")
        if not 0.0 <= self.score <= 1.0:
            raise InvalidInput(f"score must be in [0, 1], got {self.score}")

    def __eq__(self, other):
        if not isinstance(other, ObjectObservation):
            return NotImplemented
        return (
            np.array_equal(self.appearance, other.appearance)
            and self.position == other.position
            and np.array_equal(self.motion, other.motion)
            and self.score == other.score
        )


def zero_object(appearance_dim: int, motion_bins: int) -> ObjectObservation:
    """Padding object used to fill frames with fewer than N detections."""
    return ObjectObservation(
        np.zeros(appearance_dim), ViewingAngle(0.0, 0.0), np.zeros(motion_bins), 0.0
    )


def encode_position(position: ViewingAngle) -> np.ndarray:
    """Half-turn-unit position entries of the flat vector."""
    return np.array(
        [(position.azimuth - 180.0) / ANGLE_SCALE, position.elevation / ANGLE_SCALE]
    )


@dataclass(frozen=True)
class FrameObservation:
    """Exactly N score-ordered objects plus their flat concatenated vector."""

    objects: tuple[ObjectObservation, ...]
    flat: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, FrameObservation):
            return NotImplemented
        return self.objects == other.objects and np.array_equal(self.flat, other.flat)

    @property
    def n_slots(self) -> int:
        return len(self.objects)


def make_frame_observation(
    objects: Sequence[ObjectObservation],
    n: int,
    appearance_dim: int | None = None,
    motion_bins: int | None = None,
) -> FrameObservation:
    """Pack ``objects`` into an N-slot frame observation.

    Objects are sorted by score descending (ties by azimuth then elevation
    ascending), truncated or zero-padded to exactly ``n`` slots, and
    concatenated appearance-block / position-block / motion-block. The
    result does not depend on the input ordering.
    """
    if n < 1:
        raise InvalidInput(f"slot count must be >= 1, got {n}")
    if appearance_dim is None or motion_bins is None:
        if not objects:
            raise InvalidInput("feature dimensions are required when the object list is empty")
        appearance_dim = len(objects[0].appearance)
        motion_bins = len(objects[0].motion)
    for obj in objects:
        if len(obj.appearance) != appearance_dim or len(obj.motion) != motion_bins:
            raise InvalidInput(
                f"object feature dims ({len(obj.appearance)}, {len(obj.motion)}) "
                f"do not match configured ({appearance_dim}, {motion_bins})"
            )
    ranked = sorted(
        objects, key=lambda o: (-o.score, o.position.azimuth, o.position.elevation)
    )[:n]
    while len(ranked) < n:
        ranked.append(zero_object(appearance_dim, motion_bins))
    flat = np.concatenate(
        [o.appearance for o in ranked]
        + [encode_position(o.position) for o in ranked]
        + [o.motion for o in ranked]
    )
    return FrameObservation(tuple(ranked), flat)


@dataclass
class Episode:
    """A sequence of frame observations with a ground-truth viewing-angle track.

    ``gt_object_index`` records which slot holds the designated main object
    per frame; it is generator metadata for diagnostics only and is never
    read by training.
    """

    frames: list[FrameObservation]
    gt: list[ViewingAngle]
    gt_object_index: list[int] | None = None

    def __post_init__(self):
        if len(self.frames) != len(self.gt) or len(self.frames) < 2:
            raise InvalidInput(
                f"episode needs equal frame/gt counts >= 2, got {len(self.frames)}/{len(self.gt)}"
            )

    def __len__(self) -> int:
        return len(self.frames)

    def __eq__(self, other):
        if not isinstance(other, Episode):
            return NotImplemented
        return (
            self.frames == other.frames
            and self.gt == other.gt
            and self.gt_object_index == other.gt_object_index
        )


@dataclass
class EpisodeArrays:
    """Packed per-episode arrays for the numeric hot paths."""

    flat: np.ndarray  # (T, (d+2+k)*N)
    positions: np.ndarray  # (T, N, 2) as (azimuth, elevation)
    motions: np.ndarray  # (T, N, k)
    scores: np.ndarray  # (T, N)
    gt: np.ndarray  # (T, 2)


def episode_arrays(episode: Episode) -> EpisodeArrays:
    frames = episode.frames
    flat = np.stack([f.flat for f in frames])
    positions = np.array(
        [[[o.position.azimuth, o.position.elevation] for o in f.objects] for f in frames]
    )
    motions = np.array([[o.motion for o in f.objects] for f in frames])
    scores = np.array([[o.score for o in f.objects] for f in frames])
    gt = np.array([[g.azimuth, g.elevation] for g in episode.gt])
    return EpisodeArrays(flat, positions, motions, scores, gt)


@dataclass(frozen=True)
class SceneConfig:
    """Parameters of the synthetic scene generator.

    Speeds are degrees per frame. A scene "action center" follows a
    piecewise-constant velocity whose heading changes by at most
    ``turn_limit`` degrees between segments and whose elevation reflects
    off ``+-elevation_limit``. Each object rides a bounded offset around
    that center (reflected inside ``+-cluster_radius`` per axis), the way
    foreground objects cluster around the action in sports footage.
    Observed positions carry Gaussian jitter of ``position_noise``
    degrees, emulating detector box noise, while the ground-truth track
    smooths the true main-object path with a centered moving average.
    """

    frames: int = 200
    objects: int = 4
    slots: int = 8
    appearance_dim: int = 16
    motion_bins: int = 12
    center_speed_min: float = 0.5
    center_speed_max: float = 2.0
    speed_min: float = 0.3
    speed_max: float = 1.5
    turn_limit: float = 60.0
    segment_min: int = 20
    segment_max: int = 40
    elevation_limit: float = 45.0
    cluster_radius: float = 50.0
    position_noise: float = 1.5
    appearance_noise: float = 0.3
    appearance_scale: float = 2.0
    score_shape: float = 2.0
    main_score_bias: float = 1.0
    gt_smooth_window: int = 5

    @property
    def flat_dim(self) -> int:
        return (self.appearance_dim + 2 + self.motion_bins) * self.slots

    @property
    def speed_bound(self) -> float:
        """Upper bound on any object's per-frame step."""
        return self.center_speed_max + 2.0 * self.speed_max


def _center_path(config: SceneConfig, rng: np.random.Generator) -> np.ndarray:
    """Action-center positions (T, 2): piecewise-constant velocity, azimuth
    free-running, elevation reflected off the band edge."""
    t_total = config.frames
    pos = np.empty((t_total, 2))
    az = rng.uniform(0.0, 360.0)
    el = rng.uniform(-config.elevation_limit / 2.0, config.elevation_limit / 2.0)
    speed = rng.uniform(config.center_speed_min, config.center_speed_max)
    heading = rng.uniform(0.0, 360.0)
    remaining = 0
    for t in range(t_total):
        if remaining == 0:
            remaining = int(rng.integers(config.segment_min, config.segment_max + 1))
            if t > 0:
                heading += rng.uniform(-config.turn_limit, config.turn_limit)
                speed = rng.uniform(config.center_speed_min, config.center_speed_max)
        rad = np.deg2rad(heading)
        pos[t] = (az, el)
        az = wrap_azimuth(az + speed * np.cos(rad))
        el_next = el + speed * np.sin(rad)
        if abs(el_next) > config.elevation_limit:
            heading = -heading
            el_next = np.sign(el_next) * (2.0 * config.elevation_limit) - el_next
        el = clamp_elevation(el_next)
        remaining -= 1
    return pos


def _offset_path(config: SceneConfig, rng: np.random.Generator) -> np.ndarray:
    """One object's offsets (T, 2) from the action center: piecewise-constant
    velocity reflected inside the +-cluster_radius box."""
    t_total, radius = config.frames, config.cluster_radius
    out = np.empty((t_total, 2))
    offset = rng.uniform(-radius / 2.0, radius / 2.0, size=2)
    speed = rng.uniform(config.speed_min, config.speed_max)
    heading = rng.uniform(0.0, 360.0)
    remaining = 0
    for t in range(t_total):
        if remaining == 0:
            remaining = int(rng.integers(config.segment_min, config.segment_max + 1))
            if t > 0:
                heading += rng.uniform(-config.turn_limit, config.turn_limit)
                speed = rng.uniform(config.speed_min, config.speed_max)
        rad = np.deg2rad(heading)
        out[t] = offset
        step = np.array([speed * np.cos(rad), speed * np.sin(rad)])
        nxt = offset + step
        for axis in (0, 1):
            if abs(nxt[axis]) > radius:
                nxt[axis] = np.sign(nxt[axis]) * (2.0 * radius) - nxt[axis]
                heading = (-heading if axis == 1 else 180.0 - heading) % 360.0
        offset = nxt
        remaining -= 1
    return out


def _object_paths(config: SceneConfig, center: np.ndarray, rng: np.random.Generator):
    """True per-frame positions (T, 2) and velocities (T, 2) for one object
    riding a bounded offset around the action center."""
    offsets = _offset_path(config, rng)
    pos = np.empty_like(offsets)
    pos[:, 0] = np.mod(center[:, 0] + offsets[:, 0], 360.0)
    pos[:, 0][pos[:, 0] == 360.0] = 0.0
    pos[:, 1] = np.clip(center[:, 1] + offsets[:, 1], -90.0, 90.0)
    vel = np.empty_like(pos)
    vel[1:, 0] = signed_azimuth_delta_array(np.diff(pos[:, 0]))
    vel[1:, 1] = np.diff(pos[:, 1])
    vel[0] = vel[1]
    return pos, vel


def _motion_histogram(vel: np.ndarray, bins: int) -> np.ndarray:
    """Speed-weighted direction histogram, linearly smeared over the two
    nearest of ``bins`` orientation bins (a synthetic optical-flow-histogram
    stand-in)."""
    t_total = vel.shape[0]
    speed = np.linalg.norm(vel, axis=1)
    direction = np.degrees(np.arctan2(vel[:, 1], vel[:, 0])) % 360.0
    hist = np.zeros((t_total, bins))
    width = 360.0 / bins
    idx = direction / width
    lo = np.floor(idx).astype(int) % bins
    hi = (lo + 1) % bins
    frac = idx - np.floor(idx)
    rows = np.arange(t_total)
    hist[rows, lo] += speed * (1.0 - frac)
    hist[rows, hi] += speed * frac
    return hist


def _smooth_track(pos: np.ndarray, window: int) -> np.ndarray:
    """Centered moving average of an angle track; azimuth is unwrapped
    before averaging so the smoothing never crosses the 0/360 seam."""
    t_total = pos.shape[0]
    az = np.concatenate([[pos[0, 0]], pos[0, 0] + np.cumsum(signed_azimuth_delta_array(np.diff(pos[:, 0])))])
    el = pos[:, 1]
    half = window // 2
    out = np.empty_like(pos)
    for t in range(t_total):
        lo, hi = max(0, t - half), min(t_total, t + half + 1)
        out[t, 0] = wrap_azimuth(float(np.mean(az[lo:hi])))
        out[t, 1] = clamp_elevation(float(np.mean(el[lo:hi])))
    return out


def synth_scene(config: SceneConfig, seed) -> Episode:
    """Generate one deterministic synthetic episode.

    Exactly one object is the main object: it carries a fixed appearance
    signature (shared across all episodes) and its per-frame score is
    Beta-distributed with a higher mean than the distractors' but not
    deterministically highest. All random draws are independent of the
    slot count, so regenerating with a different ``slots`` value yields
    the same scene content under different padding.
    """
    if config.objects > config.slots:
        raise InvalidInput(f"object count {config.objects} exceeds slot count {config.slots}")
    if config.frames < 2:
        raise InvalidInput(f"need at least 2 frames, got {config.frames}")
    if config.gt_smooth_window < 1:
        raise InvalidInput("gt_smooth_window must be >= 1")
    rng = np.random.default_rng(seed)
    k_objects, t_total = config.objects, config.frames

    main = int(rng.integers(k_objects))
    main_proto = main_appearance_prototype(config.appearance_dim, config.appearance_scale)
    protos = np.empty((k_objects, config.appearance_dim))
    for j in range(k_objects):
        v = rng.normal(size=config.appearance_dim)
        protos[j] = config.appearance_scale * v / np.linalg.norm(v)
    protos[main] = main_proto

    center = _center_path(config, rng)
    true_pos = np.empty((k_objects, t_total, 2))
    motion = np.empty((k_objects, t_total, config.motion_bins))
    for j in range(k_objects):
        pos, vel = _object_paths(config, center, rng)
        true_pos[j] = pos
        motion[j] = _motion_histogram(vel, config.motion_bins)

    a0 = config.score_shape
    scores = rng.beta(a0, a0, size=(t_total, k_objects))
    if config.main_score_bias != 0.0:
        scores[:, main] = rng.beta(a0 + config.main_score_bias, a0, size=t_total)

    appearance = protos[None, :, :] + config.appearance_noise * rng.normal(
        size=(t_total, k_objects, config.appearance_dim)
    )
    jitter = config.position_noise * rng.normal(size=(t_total, k_objects, 2))

    gt_track = _smooth_track(true_pos[main], config.gt_smooth_window)

    frames: list[FrameObservation] = []
    gt: list[ViewingAngle] = []
    main_slot: list[int] = []
    for t in range(t_total):
        objs = []
        for j in range(k_objects):
            pos = ViewingAngle(
                true_pos[j, t, 0] + jitter[t, j, 0], true_pos[j, t, 1] + jitter[t, j, 1]
            )
            objs.append(
                ObjectObservation(appearance[t, j], pos, motion[j, t], float(scores[t, j]))
            )
        frame = make_frame_observation(
            objs, config.slots, config.appearance_dim, config.motion_bins
        )
        frames.append(frame)
        main_slot.append(frame.objects.index(objs[main]))
        gt.append(ViewingAngle(gt_track[t, 0], gt_track[t, 1]))
    return Episode(frames, gt, main_slot)


def generate_dataset(config: SceneConfig, seed: int, count: int) -> list[Episode]:
    """Generate ``count`` independent episodes; episode i uses seed (seed, i)."""
    return [synth_scene(config, [seed, i]) for i in range(count)]


# ---------------------------------------------------------------------------
# Episode files: UTF-8 JSON lines. Each episode block starts with a header
# record {format_version, d, k, n, t} followed by t frame records. json
# serializes floats with repr, so round-trips are bit-exact.
# ---------------------------------------------------------------------------


def _frame_record(frame: FrameObservation, gt: ViewingAngle, main_idx) -> dict:
    rec = {
        "objects": [
            [o.score, o.position.azimuth, o.position.elevation, o.appearance.tolist(), o.motion.tolist()]
            for o in frame.objects
        ],
        "gt": [gt.azimuth, gt.elevation],
    }
    if main_idx is not None:
        rec["gt_object_index"] = main_idx
    return rec


def save_episodes(episodes: Sequence[Episode], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ep in episodes:
            first = ep.frames[0].objects[0]
            header = {
                "format_version": EPISODE_FORMAT_VERSION,
                "d": len(first.appearance),
                "k": len(first.motion),
                "n": ep.frames[0].n_slots,
                "t": len(ep),
            }
            fh.write(json.dumps(header, separators=(",", ":")) + "\n")
            for t, frame in enumerate(ep.frames):
                idx = ep.gt_object_index[t] if ep.gt_object_index is not None else None
                fh.write(json.dumps(_frame_record(frame, ep.gt[t], idx), separators=(",", ":")) + "\n")


def _parse_json_line(line: str, lineno: int) -> dict:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed record: {exc.msg}", line=lineno) from exc
    if not isinstance(rec, dict):
        raise ParseError("record is not a JSON object", line=lineno)
    return rec


def _parse_header(rec: dict, lineno: int) -> dict:
    missing = {"format_version", "d", "k", "n", "t"} - rec.keys()
    if missing:
        raise ParseError(f"header missing fields {sorted(missing)}", line=lineno)
    if rec["format_version"] != EPISODE_FORMAT_VERSION:
        raise VersionError(
            f"unsupported episode format version {rec['format_version']} "
            f"(expected {EPISODE_FORMAT_VERSION})",
            line=lineno,
        )
    return rec


def _parse_frame(rec: dict, header: dict, lineno: int):
    try:
        objs = [
            ObjectObservation(np.array(app), ViewingAngle(az, el), np.array(mot), score)
            for score, az, el, app, mot in rec["objects"]
        ]
        gt = ViewingAngle(rec["gt"][0], rec["gt"][1])
        main_idx = rec.get("gt_object_index")
    except (KeyError, TypeError, ValueError, InvalidInput) as exc:
        raise ParseError(f"bad frame record: {exc}", line=lineno) from exc
    if len(objs) != header["n"]:
        raise ParseError(f"expected {header['n']} objects, found {len(objs)}", line=lineno)
    for o in objs:
        if len(o.appearance) != header["d"] or len(o.motion) != header["k"]:
            raise ParseError("object feature dims do not match header", line=lineno)
    flat = np.concatenate(
        [o.appearance for o in objs]
        + [encode_position(o.position) for o in objs]
        + [o.motion for o in objs]
    )
    return FrameObservation(tuple(objs), flat), gt, main_idx


def stream_episodes(path) -> Iterator[tuple[dict, Iterator]]:
    """Yield (header, frame_iterator) per episode block, reading lazily.

    Each frame iterator yields (FrameObservation, gt ViewingAngle,
    gt_object_index or None) and must be consumed before advancing to the
    next episode. Peak memory stays independent of episode length.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lineno = 0
        while True:
            line = fh.readline()
            if not line:
                return
            lineno += 1
            if not line.strip():
                raise ParseError("unexpected blank line", line=lineno)
            header = _parse_header(_parse_json_line(line, lineno), lineno)

            def frames(header=header, start=lineno):
                nonlocal lineno
                for i in range(header["t"]):
                    row = fh.readline()
                    lineno = start + 1 + i
                    if not row:
                        raise ParseError("expected frame record, found end of file", line=lineno)
                    yield _parse_frame(_parse_json_line(row, lineno), header, lineno)

            it = frames()
            yield header, it
            # Drain any frames the caller skipped so block boundaries stay aligned.
            for _ in it:
                pass


def load_episodes(path) -> list[Episode]:
    """Load every episode in the file; inverse of :func:`save_episodes`."""
    episodes = []
    for _, frame_iter in stream_episodes(path):
        frames, gts, idxs = [], [], []
        for frame, gt, main_idx in frame_iter:
            frames.append(frame)
            gts.append(gt)
            idxs.append(main_idx)
        has_idx = [i for i in idxs if i is not None]
        episodes.append(Episode(frames, gts, idxs if len(has_idx) == len(idxs) else None))
    return episodes
