"""Training loop for the sequence sampler.

The objective is a squared balance residual per trajectory:

    (log_z + sum of forward log-probs - log floored_reward)^2

averaged over a batch. Construction paths are unique here (slots are filled
in a fixed order), so the backward-policy term that a general balance loss
carries is identically zero and is omitted.

Determinism contract: each episode consumes exactly one uniform draw per
slot from the run's generator, and nothing else touches that generator, so
restoring the serialized RNG state resumes the sample stream bit-exactly.
Parameter updates happen only on full batches.
"""

from __future__ import annotations

import csv
import json
import math
from collections import deque
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, backward, no_grad
from .checkpoint import (load_checkpoint, restore_optimizer, restore_rng,
                         save_checkpoint)
from .env import Environment, Trajectory
from .errors import ConfigurationError, TrainingAbort, ValidationError
from .model import FlowModel
from .optim import Adam
from .reward import RewardModel, loss_reward

METRICS_HEADER = ["episode", "loss", "smoothedLoss", "logZ", "reward", "bestReward"]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate_model: float = 5e-3
    learning_rate_logz: float = 5e-3
    max_episodes: int = 100_000
    batch_size: int = 16
    stop_window: int = 10_000
    stop_threshold: float = 1.8
    smooth_window: int = 1_000
    exploration_epsilon: float = 0.0
    checkpoint_every: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate_model <= 0 or self.learning_rate_logz <= 0:
            raise ConfigurationError("learning rates must be positive")
        for name in ("max_episodes", "batch_size", "stop_window", "smooth_window"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"TrainConfig.{name} must be >= 1")
        if self.stop_threshold < 0:
            raise ConfigurationError("stop threshold must be non-negative")
        if not (0.0 <= self.exploration_epsilon <= 1.0):
            raise ConfigurationError("exploration epsilon must be in [0, 1]")
        if self.checkpoint_every < 0:
            raise ConfigurationError("checkpoint_every must be >= 0 (0 disables)")
        if self.seed < 0:
            raise ConfigurationError("seed must be non-negative")


def moving_average(series, window: int) -> np.ndarray:
    """Windowed mean; returns only the fully covered part (len n - w + 1)."""
    series = np.asarray(series, dtype=np.float64)
    if window < 1 or window > series.shape[0]:
        raise ConfigurationError("window must be in [1, len(series)]")
    return np.convolve(series, np.full(window, 1.0 / window), mode="valid")


def tb_residual(log_z_value: float, log_probs, floored_reward: float) -> float:
    """Scalar balance residual from plain floats (no gradient graph)."""
    return float(log_z_value + sum(log_probs) - math.log(floored_reward))


def sample_trajectory(model, env: Environment, rng: np.random.Generator,
                      epsilon: float = 0.0) -> Trajectory:
    """Sample one episode. Exactly one rng.random() per slot.

    With epsilon > 0 the behavior policy is mixed with uniform over the
    slot's valid tokens; recorded log-probs are always the pure policy's.
    """
    stepper = model.stepper(env)
    actions: list[int] = []
    log_probs: list[float] = []
    for _ in range(env.n_slots):
        out = stepper.policy_output()
        valid = np.flatnonzero(out.mask)
        probs = np.exp(out.log_probs[valid])
        if epsilon > 0.0:
            probs = (1.0 - epsilon) * probs + epsilon / valid.shape[0]
        cdf = np.cumsum(probs / probs.sum())
        u = rng.random()
        pick = min(int(np.searchsorted(cdf, u, side="right")), valid.shape[0] - 1)
        action = int(valid[pick])
        actions.append(action)
        log_probs.append(float(out.log_probs[action]))
        stepper.advance(action)
    return Trajectory(tuple(actions), tuple(log_probs))


def batch_rollout(model, env: Environment, n: int, rng: np.random.Generator) -> list[tuple[int, ...]]:
    """Draw n terminal sequences from the policy (no exploration noise)."""
    if n < 1:
        raise ConfigurationError("rollout size must be >= 1")
    if not isinstance(model, FlowModel):
        return [sample_trajectory(model, env, rng).actions for _ in range(n)]
    with no_grad():
        sequences = np.empty((n, env.n_slots), dtype=np.intp)
        tokens = np.full(n, model.start_token, dtype=np.intp)
        state = None
        for t in range(env.n_slots):
            logits, state = model.step(tokens, state)
            valid = np.flatnonzero(env.slot_masks[t])
            sub = logits.data[:, valid]
            sub = sub - sub.max(axis=1, keepdims=True)
            p = np.exp(sub)
            p /= p.sum(axis=1, keepdims=True)
            cdf = np.cumsum(p, axis=1)
            u = rng.random(n)
            pick = np.minimum((u[:, None] >= cdf).sum(axis=1), valid.shape[0] - 1)
            tokens = valid[pick]
            sequences[:, t] = tokens
    return [tuple(int(x) for x in row) for row in sequences]


def uniform_rollout(env: Environment, n: int, rng: np.random.Generator) -> list[tuple[int, ...]]:
    """Draw n sequences uniformly over each slot's valid tokens."""
    if n < 1:
        raise ConfigurationError("rollout size must be >= 1")
    sequences = np.empty((n, env.n_slots), dtype=np.intp)
    for t in range(env.n_slots):
        valid = np.flatnonzero(env.slot_masks[t])
        sequences[:, t] = valid[rng.integers(0, valid.shape[0], size=n)]
    return [tuple(int(x) for x in row) for row in sequences]


def tb_loss(model: FlowModel, env: Environment, trajectories: list[Trajectory],
            floored_rewards: list[float]) -> Tensor:
    """Batched balance loss with gradients, replaying the recorded actions."""
    if len(trajectories) != len(floored_rewards) or not trajectories:
        raise ConfigurationError("trajectories and rewards must align and be non-empty")
    b = len(trajectories)
    length = env.n_slots
    actions = np.array([t.actions for t in trajectories], dtype=np.intp)
    if actions.shape != (b, length):
        raise ConfigurationError("trajectory length does not match the topology")
    acc = Tensor(np.zeros(b))
    state = None
    tokens = np.full(b, model.start_token, dtype=np.intp)
    for t in range(length):
        logits, state = model.step(tokens, state)
        logp = ad.masked_log_softmax(logits, env.slot_masks[t])
        acc = acc + ad.take_per_row(logp, actions[:, t])
        tokens = actions[:, t]
    with np.errstate(divide="ignore"):  # a zero target is caught just below
        target = Tensor(np.log(np.asarray(floored_rewards, dtype=np.float64)))
    diff = model.log_z + acc - target
    loss = (diff * diff).mean()
    if not np.isfinite(loss.data):
        worst = int(np.argmax(~np.isfinite(diff.data)))
        raise TrainingAbort(
            f"non-finite balance loss; trajectory {trajectories[worst].actions} "
            f"log_probs {trajectories[worst].log_probs} reward {floored_rewards[worst]}")
    return loss


@dataclass
class TrainResult:
    episodes_run: int
    stopped_early: bool
    best_reward: float
    best_record: str | None
    log_z: float
    final_loss_mean: float | None
    metrics_path: Path | None
    checkpoint_path: Path | None


def _format_row(episode: int, loss: float, smoothed: float | None,
                log_z: float, rwd: float, best: float) -> list[str]:
    return [
        str(episode),
        repr(float(loss)),
        "" if smoothed is None else repr(float(smoothed)),
        repr(float(log_z)),
        repr(float(rwd)),
        repr(float(best)),
    ]


def _trim_metrics(path: Path, last_episode: int) -> None:
    """Drop metric rows past a checkpoint so a resumed run appends cleanly."""
    if not path.exists():
        return
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return
    kept = [rows[0]] + [r for r in rows[1:] if r and int(r[0]) <= last_episode]
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(kept)


def train(config: TrainConfig, model: FlowModel, env: Environment,
          reward_model: RewardModel, out_dir: str | Path | None = None,
          resume_from: str | Path | None = None) -> TrainResult:
    """Run the training loop; optionally resume from a checkpoint.

    Stopping and checkpointing both happen only at batch boundaries, so a
    resumed run replays the uninterrupted run bit for bit.
    """
    tail_len = max(config.stop_window, config.smooth_window)
    start_episode = 0
    best_reward = 0.0
    best_record: str | None = None
    loss_tail: deque[float] = deque(maxlen=tail_len)

    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        if ckpt.env_hash != env.env_hash:
            raise ValidationError("checkpoint was produced for a different topology or vocabulary")
        expected = {"vocab_size": model.config.vocab_size,
                    "embed_dim": model.config.embed_dim,
                    "hidden_dim": model.config.hidden_dim}
        if ckpt.model_config != expected:
            raise ValidationError(f"checkpoint model dims {ckpt.model_config} != {expected}")
        for name, tensor in model.parameters().items():
            arr = ckpt.params[name]
            tensor.data = arr if arr.shape != () else np.float64(arr)
        optimizer = restore_optimizer(ckpt, model)
        rng = restore_rng(ckpt)
        start_episode = ckpt.episode
        best_reward = ckpt.best_reward
        best_record = ckpt.config.get("best_record")
        loss_tail.extend(ckpt.loss_tail)
    else:
        optimizer = Adam(model.parameters(), lr=config.learning_rate_model,
                         lr_overrides={"log_z": config.learning_rate_logz})
        rng = np.random.Generator(np.random.PCG64(config.seed))

    metrics_path: Path | None = None
    checkpoint_path: Path | None = None
    metrics_file = None
    writer = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        manifest = {
            "schema": "blockflow-run-manifest/1",
            "command": "train",
            "seed": config.seed,
            "env_hash": env.env_hash,
            "topology": env.topology.name,
            "config": asdict(config),
            "resume_from": None if resume_from is None else str(resume_from),
        }
        (out_dir / "run_manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1))
        metrics_path = out_dir / "metrics.csv"
        checkpoint_path = out_dir / "checkpoint.json"
        _trim_metrics(metrics_path, start_episode)
        fresh = not metrics_path.exists() or metrics_path.stat().st_size == 0
        metrics_file = open(metrics_path, "a", newline="")
        writer = csv.writer(metrics_file)
        if fresh:
            writer.writerow(METRICS_HEADER)

    def snapshot(episode: int) -> None:
        if checkpoint_path is None:
            return
        if metrics_file is not None:
            metrics_file.flush()
        echo = {
            "train": asdict(config),
            "reward": {
                "cutoff": reward_model.spec.cutoff,
                "reward_floor": reward_model.spec.reward_floor,
                "surrogate_scale": reward_model.spec.surrogate_scale,
                "evaluator": reward_model.spec.evaluator,
            },
            "topology": env.topology.name,
            "best_record": best_record,
        }
        save_checkpoint(checkpoint_path, model, optimizer, rng, episode,
                        best_reward, list(loss_tail), env.env_hash, echo)

    batch: list[tuple[Trajectory, float]] = []
    episode = start_episode
    stopped_early = False
    last_snapshot = start_episode
    try:
        while episode < config.max_episodes:
            episode += 1
            traj = sample_trajectory(model, env, rng, config.exploration_epsilon)
            rwd, _ = reward_model.score(traj.actions)
            floored = loss_reward(reward_model.spec, rwd)
            residual = tb_residual(model.log_z_value, traj.log_probs, floored)
            if not np.isfinite(residual):
                raise TrainingAbort(
                    f"non-finite residual at episode {episode}; trajectory {traj.actions} "
                    f"log_probs {traj.log_probs} reward {floored}")
            loss_val = residual * residual
            loss_tail.append(loss_val)
            if rwd > best_reward:
                best_reward = rwd
                best_record = env.format_assembly_record(traj.actions)
            if writer is not None:
                smoothed = None
                if len(loss_tail) >= config.smooth_window:
                    recent = list(loss_tail)[-config.smooth_window:]
                    smoothed = float(np.mean(recent))
                writer.writerow(_format_row(episode, loss_val, smoothed,
                                            model.log_z_value, rwd, best_reward))
            batch.append((traj, floored))
            if len(batch) == config.batch_size:
                optimizer.zero_grad()
                loss_t = tb_loss(model, env, [t for t, _ in batch], [f for _, f in batch])
                backward(loss_t)
                optimizer.step()
                batch.clear()
                if (config.checkpoint_every > 0
                        and episode - last_snapshot >= config.checkpoint_every):
                    snapshot(episode)
                    last_snapshot = episode
                if len(loss_tail) >= config.stop_window:
                    recent = list(loss_tail)[-config.stop_window:]
                    if float(np.mean(recent)) < config.stop_threshold:
                        stopped_early = True
                        break
        snapshot(episode)
    finally:
        if metrics_file is not None:
            metrics_file.close()

    final_mean = None
    if len(loss_tail) >= config.stop_window:
        final_mean = float(np.mean(list(loss_tail)[-config.stop_window:]))
    return TrainResult(
        episodes_run=episode,
        stopped_early=stopped_early,
        best_reward=best_reward,
        best_record=best_record,
        log_z=model.log_z_value,
        final_loss_mean=final_mean,
        metrics_path=metrics_path,
        checkpoint_path=checkpoint_path,
    )
