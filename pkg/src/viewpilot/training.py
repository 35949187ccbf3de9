"""Joint training: per-frame rewards, sampled rollouts, the hybrid of
supervised trajectory-loss gradients (through the regressor) and REINFORCE
policy gradients (through the selector softmax), SGD epochs over shuffled
sequence windows, checkpoints, and a metrics log.

The rollout is batched over windows: every array carries a leading window
dimension B. Hidden states reset to zero at window boundaries and each
window's viewing angle starts at its first frame's ground truth.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .agent import ModelDims, PilotModel, save_model_checkpoint, load_model_checkpoint
from .diffcore import LrSchedule
from .errors import InvalidInput, NumericsError
from .geometry import ViewingAngle, angular_distance, signed_azimuth_delta_array
from .observation import ANGLE_SCALE, OFFSET_SCALE, Episode, episode_arrays
from .regressor import loss_grad, loss_terms
from .selector import sample_indices, softmax

DEFAULT_ETA = 40.9


def reward(pred: ViewingAngle, gt: ViewingAngle, eta: float = DEFAULT_ETA) -> float:
    """Piecewise-linear focus reward in [-1, 1].

    1 at zero distance, falling linearly to 0 at ``eta`` degrees, and -1
    beyond ``eta`` (the predicted view no longer covers the target).
    """
    if eta <= 0:
        raise InvalidInput(f"eta must be positive, got {eta}")
    dist = angular_distance(pred, gt)
    return 1.0 - dist / eta if dist <= eta else -1.0


def reward_array(pred: np.ndarray, gt: np.ndarray, eta: float) -> np.ndarray:
    """Vectorized reward for (..., 2) angle arrays."""
    daz = signed_azimuth_delta_array(pred[..., 0] - gt[..., 0])
    dist = np.hypot(daz, pred[..., 1] - gt[..., 1])
    return np.where(dist <= eta, 1.0 - dist / eta, -1.0)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 10
    max_epochs: int = 400
    seq_len: int = 50
    smooth_lambda: float = 10.0
    lr_initial: float = 1e-5
    lr_decay: float = 0.9
    lr_period: int = 50
    q_samples: int = 1
    eta: float = DEFAULT_ETA
    seed: int = 0
    baseline: bool = False
    grad_clip: float = 5.0  # 0 disables clipping
    pg_weight: float = 1.0
    # With slot scaling on, the policy-gradient weight is pg_weight * N:
    # the chance of sampling any fixed slot falls as 1/N, so the scaling
    # keeps the selector's expected early learning speed independent of
    # the slot count. Off by default (flat hybrid sum).
    pg_slot_scaling: bool = False
    checkpoint_interval: int = 50

    def __post_init__(self):
        if min(self.batch_size, self.seq_len, self.q_samples, self.checkpoint_interval) < 1:
            raise InvalidInput("batch_size, seq_len, q_samples, checkpoint_interval must be >= 1")
        if self.max_epochs < 0 or self.smooth_lambda < 0 or self.eta <= 0 or self.grad_clip < 0:
            raise InvalidInput("bad training config: check max_epochs, lambda, eta, grad_clip")

    def schedule(self) -> LrSchedule:
        return LrSchedule(self.lr_initial, self.lr_decay, self.lr_period)


# ---------------------------------------------------------------------------
# Batched rollout
# ---------------------------------------------------------------------------


@dataclass
class WindowBatch:
    """A batch of same-length episode windows packed into arrays."""

    flat: np.ndarray  # (B, T, D)
    positions: np.ndarray  # (B, T, N, 2)
    motions: np.ndarray  # (B, T, N, k)
    gt: np.ndarray  # (B, T, 2)

    @property
    def size(self) -> int:
        return self.flat.shape[0]

    @property
    def frames(self) -> int:
        return self.flat.shape[1]


def _wrap_az_inplace(angles: np.ndarray) -> None:
    angles[:, 0] %= 360.0
    angles[:, 0][angles[:, 0] == 360.0] = 0.0


def _offset_to(target: np.ndarray, start: np.ndarray) -> np.ndarray:
    """Wrap-aware (target - start) for (B, 2) angle arrays."""
    return np.stack(
        [signed_azimuth_delta_array(target[:, 0] - start[:, 0]), target[:, 1] - start[:, 1]],
        axis=1,
    )


@dataclass
class RolloutTape:
    """Everything the backward pass needs from one batched forward rollout."""

    batch: WindowBatch
    xs: list  # selector inputs per t, views into batch.flat
    hs: list  # selector hidden states, hs[0] is the initial state
    probs: list  # selection distributions per t
    indices: np.ndarray  # (B, T, Q) sampled/forced slot indices; q=0 drives the rollout
    rewards: np.ndarray  # (B, T, Q) per-sample rewards
    dhats: list  # naive offsets per t
    xrs: list  # regressor inputs per t
    mus: list  # regressor hidden states, mus[0] initial
    el_free: list  # (B,) bool per t: elevation not clamped at this step
    pred: np.ndarray  # (B, T, 2) rolled-out viewing angles
    consumed: bool = False


def rollout_window(
    model: PilotModel,
    batch: WindowBatch,
    rng: np.random.Generator | None = None,
    greedy: bool = False,
    forced_indices: np.ndarray | None = None,
    q_samples: int = 1,
    eta: float = DEFAULT_ETA,
) -> RolloutTape:
    """Run the full agent over a window batch with sampled (default),
    greedy, or forced selection, recording a tape for the backward pass.

    The viewing angle starts at each window's first ground-truth angle.
    Sample q=0 drives the rollout; extra samples (q >= 1) branch off the
    current state for their reward and are then discarded.
    """
    b, t_total = batch.size, batch.frames
    n = batch.positions.shape[2]
    k = batch.motions.shape[3]
    rows = np.arange(b)
    w_r = model.regressor.head.w.values

    h = model.selector.initial_state(b)
    mu = model.regressor.initial_state(b)
    angle = batch.gt[:, 0].copy()

    xs, hs, probs_list, dhats, xrs, mus, el_free = [], [h], [], [], [], [mu], []
    indices = np.empty((b, t_total, q_samples), dtype=np.int64)
    rewards = np.empty((b, t_total, q_samples))
    pred = np.empty((b, t_total, 2))

    for t in range(t_total):
        x = batch.flat[:, t]
        h = model.selector.cell.step(x, h)
        probs = softmax(model.selector.head.apply(h))
        if forced_indices is not None:
            idx = np.asarray(forced_indices[:, t], dtype=np.int64)
        elif greedy:
            idx = np.argmax(probs, axis=1)
        else:
            if rng is None:
                raise InvalidInput("sampled rollout requires an rng")
            idx = sample_indices(probs, rng)
        if np.any(idx < 0) or np.any(idx >= n):
            raise InvalidInput("selection index out of range")

        p_sel = batch.positions[rows, t, idx]
        m_sel = batch.motions[rows, t, idx]
        dhat = _offset_to(p_sel, angle)
        xr = np.concatenate([m_sel, dhat / OFFSET_SCALE], axis=1)
        mu = model.regressor.cell.step(xr, mus[-1])
        delta = mu @ w_r.T

        raw_el = angle[:, 1] + delta[:, 1]
        free = np.abs(raw_el) < 90.0
        nxt = np.empty_like(angle)
        nxt[:, 0] = angle[:, 0] + delta[:, 0]
        nxt[:, 1] = np.clip(raw_el, -90.0, 90.0)
        _wrap_az_inplace(nxt)

        indices[:, t, 0] = idx
        rewards[:, t, 0] = reward_array(nxt, batch.gt[:, t], eta)
        for q in range(1, q_samples):
            if rng is None:
                raise InvalidInput("extra reward samples require an rng")
            idx_q = sample_indices(probs, rng)
            p_q = batch.positions[rows, t, idx_q]
            m_q = batch.motions[rows, t, idx_q]
            dhat_q = _offset_to(p_q, angle)
            mu_q = model.regressor.cell.step(
                np.concatenate([m_q, dhat_q / OFFSET_SCALE], axis=1), mus[-1]
            )
            l_q = np.empty_like(angle)
            delta_q = mu_q @ w_r.T
            l_q[:, 0] = angle[:, 0] + delta_q[:, 0]
            l_q[:, 1] = np.clip(angle[:, 1] + delta_q[:, 1], -90.0, 90.0)
            _wrap_az_inplace(l_q)
            indices[:, t, q] = idx_q
            rewards[:, t, q] = reward_array(l_q, batch.gt[:, t], eta)

        xs.append(x)
        hs.append(h)
        probs_list.append(probs)
        dhats.append(dhat)
        xrs.append(xr)
        mus.append(mu)
        el_free.append(free)
        pred[:, t] = nxt
        angle = nxt

    return RolloutTape(
        batch, xs, hs, probs_list, indices, rewards, dhats, xrs, mus, el_free, pred
    )


def rollout_loss(tape: RolloutTape, lam: float) -> tuple[float, float]:
    """Mean-over-windows (regression, smoothness) sums for a tape."""
    reg, smo = loss_terms(tape.pred, tape.batch.gt)
    return float(reg.mean()), float(smo.mean())


def policy_upstream(tape: RolloutTape, pg_weight: float, baseline: bool) -> list[np.ndarray]:
    """Descent-direction upstream gradients at the selector logits per frame.

    REINFORCE ascends the expected reward, so the loss-gradient upstream is
    the negated average of r_q * (onehot(i_q) - S) over the Q samples,
    scaled by pg_weight and the 1/B batch mean.
    """
    b, t_total, q = tape.rewards.shape
    n = tape.probs[0].shape[1]
    rows = np.arange(b)
    scale = -pg_weight / (q * b)
    out = []
    for t in range(t_total):
        r = tape.rewards[:, t, :]
        if baseline:
            r = r - r.mean(axis=1, keepdims=True)
        u = np.zeros((b, n))
        for j in range(q):
            onehot = np.zeros((b, n))
            onehot[rows, tape.indices[:, t, j]] = 1.0
            u += r[:, j : j + 1] * (onehot - tape.probs[t])
        out.append(scale * u)
    return out


def backward_window(
    model: PilotModel,
    tape: RolloutTape,
    lam: float,
    pg_weight: float = 1.0,
    sup_weight: float = 1.0,
    baseline: bool = False,
) -> None:
    """Accumulate hybrid parameter gradients for one recorded rollout.

    The supervised trajectory loss backpropagates through the regressor
    recurrence and the viewing-angle chain; the policy-gradient term enters
    at the selector softmax and backpropagates through the selector
    recurrence. Gradients are for the batch-mean objective.
    """
    if tape.consumed:
        raise NumericsError("rollout tape already consumed")
    tape.consumed = True
    b, t_total = tape.batch.size, tape.batch.frames
    k = tape.batch.motions.shape[3]
    sel, reg = model.selector, model.regressor
    w_r = reg.head.w

    dl_loss = loss_grad(tape.pred, tape.batch.gt, lam) * (sup_weight / b)
    upstream = policy_upstream(tape, pg_weight, baseline)

    carry_l = np.zeros((b, 2))
    carry_mu = np.zeros((b, reg.hidden_dim))
    carry_h = np.zeros((b, sel.hidden_dim))
    for t in reversed(range(t_total)):
        # regressor / viewing-angle chain
        g_l = dl_loss[:, t] + carry_l
        gate = np.column_stack([np.ones(b), tape.el_free[t].astype(np.float64)])
        ddelta = g_l * gate
        mu_t = tape.mus[t + 1]
        w_r.grad += ddelta.T @ mu_t
        dmu = ddelta @ w_r.values + carry_mu
        dxr, carry_mu = reg.cell.backward_step(dmu, tape.xrs[t], tape.mus[t], mu_t)
        ddhat = dxr[:, k:] / OFFSET_SCALE  # chain through the half-turn input scaling
        carry_l = g_l * gate - ddhat

        # selector chain (policy gradient only; selection itself is discrete)
        u = upstream[t]
        sel.head.w.grad += u.T @ tape.hs[t + 1]
        dh = u @ sel.head.w.values + carry_h
        _, carry_h = sel.cell.backward_step(dh, tape.xs[t], tape.hs[t], tape.hs[t + 1])


def surrogate_loss(
    model: PilotModel,
    batch: WindowBatch,
    forced_indices: np.ndarray,
    frozen_rewards: np.ndarray,
    lam: float,
    pg_weight: float = 1.0,
    sup_weight: float = 1.0,
    eta: float = DEFAULT_ETA,
) -> float:
    """Deterministic scalar objective used for gradient checking.

    The discrete selections are pinned to ``forced_indices`` and the
    REINFORCE rewards to ``frozen_rewards`` (REINFORCE treats rewards as
    constants), leaving exactly the differentiable paths the training step
    backpropagates: sup_weight * (regression + lam * smoothness) minus
    pg_weight * mean_q(r * log S(i_q)), both averaged over the batch.
    """
    if frozen_rewards.ndim != 3 or frozen_rewards.shape[2] != 1:
        raise InvalidInput("surrogate_loss covers the single-sample (Q=1) estimator")
    b, t_total = batch.size, batch.frames
    rows = np.arange(b)
    need_pg, need_sup = pg_weight != 0.0, sup_weight != 0.0
    sel_cell, sel_head = model.selector.cell, model.selector.head
    reg_cell, w_r = model.regressor.cell, model.regressor.head.w.values
    pg = 0.0
    h = model.selector.initial_state(b)
    mu = model.regressor.initial_state(b)
    angle = batch.gt[:, 0].copy()
    pred = np.empty((b, t_total, 2))
    for t in range(t_total):
        idx = forced_indices[:, t]
        if need_pg:
            h = np.tanh(
                batch.flat[:, t] @ sel_cell.w_xh.values.T
                + h @ sel_cell.w_hh.values.T
                + sel_cell.b.values
            )
            logp = np.log(softmax(h @ sel_head.w.values.T))
            pg += float((frozen_rewards[:, t, 0] * logp[rows, idx]).sum())
        if need_sup:
            dhat = _offset_to(batch.positions[rows, t, idx], angle)
            xr = np.concatenate([batch.motions[rows, t, idx], dhat / OFFSET_SCALE], axis=1)
            mu = np.tanh(
                xr @ reg_cell.w_xh.values.T + mu @ reg_cell.w_hh.values.T + reg_cell.b.values
            )
            delta = mu @ w_r.T
            nxt = np.empty_like(angle)
            nxt[:, 0] = angle[:, 0] + delta[:, 0]
            nxt[:, 1] = np.clip(angle[:, 1] + delta[:, 1], -90.0, 90.0)
            _wrap_az_inplace(nxt)
            pred[:, t] = nxt
            angle = nxt
    total = -pg_weight * pg / b
    if need_sup:
        reg_term, smo_term = loss_terms(pred, batch.gt)
        total += sup_weight * float(reg_term.mean() + lam * smo_term.mean())
    return total


# ---------------------------------------------------------------------------
# Steps and epochs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StepStats:
    """Per-frame means over one step (or one epoch) of training."""

    regression: float
    smoothness: float
    mean_reward: float
    frames: int

    def total(self, lam: float) -> float:
        return self.regression + lam * self.smoothness


@dataclass(frozen=True)
class Window:
    episode: int
    start: int
    stop: int


def slice_windows(lengths, seq_len: int) -> list[Window]:
    """Cut episodes into consecutive windows of at most seq_len frames.

    A trailing single-frame remainder is folded into the previous window
    (the trajectory loss needs at least two frames).
    """
    out = []
    for i, t_total in enumerate(lengths):
        starts = list(range(0, t_total, seq_len))
        for s in starts:
            stop = min(s + seq_len, t_total)
            if stop - s == 1 and out and out[-1].episode == i:
                out[-1] = Window(i, out[-1].start, stop)
            elif stop - s >= 2:
                out.append(Window(i, s, stop))
    return out


def pack_windows(arrays, windows: list[Window]) -> WindowBatch:
    """Stack same-length windows from per-episode arrays into one batch."""
    spans = {w.stop - w.start for w in windows}
    if len(spans) != 1:
        raise InvalidInput(f"windows in one batch must share a length, got {sorted(spans)}")
    flat = np.stack([arrays[w.episode].flat[w.start : w.stop] for w in windows])
    pos = np.stack([arrays[w.episode].positions[w.start : w.stop] for w in windows])
    mot = np.stack([arrays[w.episode].motions[w.start : w.stop] for w in windows])
    gt = np.stack([arrays[w.episode].gt[w.start : w.stop] for w in windows])
    return WindowBatch(flat, pos, mot, gt)


def train_step(
    model: PilotModel,
    arrays,
    windows: list[Window],
    config: TrainConfig,
    lr: float,
    rng: np.random.Generator,
) -> StepStats:
    """One SGD step over a batch of windows.

    Windows of different lengths are grouped and rolled out separately but
    contribute to a single parameter update. On a non-finite loss or
    gradient the step aborts with NumericsError and parameters stay
    exactly as they were.
    """
    from .diffcore import clip_gradients, sgd_step

    by_len: dict[int, list[Window]] = {}
    for w in windows:
        by_len.setdefault(w.stop - w.start, []).append(w)

    total_windows = len(windows)
    reg_sum = smo_sum = rew_sum = 0.0
    frames = 0
    for group in by_len.values():
        batch = pack_windows(arrays, group)
        tape = rollout_window(
            model, batch, rng=rng, q_samples=config.q_samples, eta=config.eta
        )
        group_share = len(group) / total_windows
        reg_term, smo_term = rollout_loss(tape, config.smooth_lambda)
        if not (np.isfinite(reg_term) and np.isfinite(smo_term)):
            for p in model.params():
                p.zero_grad()
            raise NumericsError("non-finite rollout loss; step aborted")
        pg_weight = config.pg_weight
        if config.pg_slot_scaling:
            pg_weight *= batch.positions.shape[2]
        backward_window(
            model,
            tape,
            config.smooth_lambda,
            pg_weight=pg_weight * group_share,
            sup_weight=group_share,
            baseline=config.baseline,
        )
        reg_sum += reg_term * len(group)
        smo_sum += smo_term * len(group)
        rew_sum += float(tape.rewards[:, :, 0].sum())
        frames += batch.size * batch.frames

    for p in model.params():
        if not np.all(np.isfinite(p.grad)):
            for q in model.params():
                q.zero_grad()
            raise NumericsError(f"non-finite gradient in {p.name}; step aborted")
    if lr > 0.0:
        if config.grad_clip > 0:
            # Clip per network: the supervised signal's norm is orders of
            # magnitude above the policy gradient's early on, and a single
            # global clip would scale the selector's update to nothing.
            clip_gradients(model.selector.params(), config.grad_clip)
            clip_gradients(model.regressor.params(), config.grad_clip)
        sgd_step(model.params(), lr, None)
    else:
        for p in model.params():
            p.zero_grad()
    return StepStats(
        regression=reg_sum / frames,
        smoothness=smo_sum / frames,
        mean_reward=rew_sum / frames,
        frames=frames,
    )


def _rng_record(seed: int, next_epoch: int) -> dict:
    # Epoch rngs derive from (seed, stream, epoch [, batch]) so training is
    # resumable bit-exactly from any checkpoint.
    return {"scheme": "per-epoch-derived", "seed": seed, "next_epoch": next_epoch}


def checkpoint_name(epoch: int) -> str:
    return f"checkpoint_epoch{epoch:05d}.json"


def latest_checkpoint(out_dir) -> Path | None:
    paths = sorted(Path(out_dir).glob("checkpoint_epoch*.json"))
    best, best_epoch = None, -1
    for p in paths:
        m = re.match(r"checkpoint_epoch(\d+)\.json$", p.name)
        if m and int(m.group(1)) > best_epoch:
            best, best_epoch = p, int(m.group(1))
    return best


def train(
    episodes: list[Episode],
    config: TrainConfig,
    dims: ModelDims,
    out_dir,
    resume: bool = False,
    log=None,
) -> tuple[PilotModel, list[dict]]:
    """Train a pilot model, writing checkpoints and a metrics log.

    Epoch e shuffles windows with rng (seed, 1, e) and batch j samples with
    rng (seed, 2, e, j); parameters initialize from (seed, 0). Resuming from
    the latest checkpoint therefore reproduces an uninterrupted run
    bit-exactly.
    """
    if not episodes:
        raise InvalidInput("training set is empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    schedule = config.schedule()
    arrays = [episode_arrays(ep) for ep in episodes]
    windows = slice_windows([len(ep) for ep in episodes], config.seq_len)

    start_epoch = 0
    if resume:
        path = latest_checkpoint(out_dir)
        if path is None:
            raise InvalidInput(f"no checkpoint to resume from in {out_dir}")
        model, ckpt = load_model_checkpoint(path, expect_dims=dims)
        start_epoch = ckpt.epoch
    else:
        model = PilotModel(dims, np.random.default_rng([config.seed, 0]))
        save_model_checkpoint(
            out_dir / checkpoint_name(0), model, 0, schedule, _rng_record(config.seed, 0)
        )

    history: list[dict] = []
    metrics_path = out_dir / "metrics.jsonl"
    with open(metrics_path, "a" if resume else "w", encoding="utf-8") as metrics:
        for epoch in range(start_epoch, config.max_epochs):
            lr = schedule.lr(epoch)
            order = np.random.default_rng([config.seed, 1, epoch]).permutation(len(windows))
            reg = smo = rew = 0.0
            frames = 0
            n_steps = 0
            for j, lo in enumerate(range(0, len(order), config.batch_size)):
                chunk = [windows[i] for i in order[lo : lo + config.batch_size]]
                rng = np.random.default_rng([config.seed, 2, epoch, j])
                stats = train_step(model, arrays, chunk, config, lr, rng)
                reg += stats.regression
                smo += stats.smoothness
                rew += stats.mean_reward * stats.frames
                frames += stats.frames
                n_steps += 1
            record = {
                "epoch": epoch + 1,
                "lr": lr,
                "regression": reg / n_steps,
                "smoothness": smo / n_steps,
                "total": reg / n_steps + config.smooth_lambda * (smo / n_steps),
                "mean_reward": rew / frames,
            }
            history.append(record)
            metrics.write(json.dumps(record) + "\n")
            metrics.flush()
            if log is not None:
                log(record)
            done = epoch + 1
            if done % config.checkpoint_interval == 0 or done == config.max_epochs:
                save_model_checkpoint(
                    out_dir / checkpoint_name(done),
                    model,
                    done,
                    schedule,
                    _rng_record(config.seed, done),
                )
    return model, history


# ---------------------------------------------------------------------------
# Candidate rewards (diagnostics / oracle surface)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StepContext:
    """Frozen rollout context entering frame t: l_{t-1} and the regressor state."""

    angle: ViewingAngle
    regressor_mu: np.ndarray


def candidate_reward(
    model: PilotModel,
    frame,
    gt: ViewingAngle,
    index: int,
    context: StepContext,
    eta: float = DEFAULT_ETA,
    bypass_regressor: bool = False,
) -> float:
    """Reward the regressor path would earn for steering toward candidate
    ``index`` at this frame, branching off ``context`` without mutating it."""
    from .geometry import apply_action
    from .regressor import naive_action

    if not 0 <= index < len(frame.objects):
        raise InvalidInput(f"candidate index {index} out of range")
    obj = frame.objects[index]
    naive = naive_action(obj.position, context.angle)
    if bypass_regressor:
        landed = apply_action(context.angle, naive)
    else:
        naive_vec = np.array([naive.d_azimuth, naive.d_elevation]) / OFFSET_SCALE
        _, delta = model.regressor.forward(obj.motion, naive_vec, context.regressor_mu)
        from .geometry import Action

        landed = apply_action(context.angle, Action(float(delta[0]), float(delta[1])))
    return reward(landed, gt, eta)
