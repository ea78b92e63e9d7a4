"""Single-file JSON checkpoints with integrity checking.

Arrays are stored as base64 little-endian float64 with explicit shapes, so a
checkpoint restores bit-exactly on any platform. The checksum is a sha256
over the canonical JSON of everything except the checksum itself.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .errors import ValidationError
from .model import FlowModel, ModelConfig
from .optim import Adam

CHECKPOINT_SCHEMA = "blockflow-checkpoint/1"


def _encode_array(arr: np.ndarray) -> dict:
    arr = np.asarray(arr, dtype=np.float64)
    return {
        "shape": list(arr.shape),
        "data": base64.b64encode(arr.astype("<f8").tobytes()).decode("ascii"),
    }


def _decode_array(doc: dict) -> np.ndarray:
    try:
        raw = base64.b64decode(doc["data"].encode("ascii"), validate=True)
        arr = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(doc["shape"])
    except (KeyError, ValueError, TypeError) as exc:
        raise ValidationError(f"malformed array record in checkpoint: {exc}") from None
    return arr


def _canonical(payload: dict) -> bytes:
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()


def file_sha256(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class Checkpoint:
    model_config: dict
    params: dict[str, np.ndarray]
    optimizer: dict
    rng_state: dict
    episode: int
    best_reward: float
    loss_tail: list[float]
    env_hash: str
    config: dict


def save_checkpoint(path: str | Path, model: FlowModel, optimizer: Adam,
                    rng: np.random.Generator, episode: int, best_reward: float,
                    loss_tail: list[float], env_hash: str, config: dict | None = None) -> None:
    opt_state = optimizer.state_dict()
    payload = {
        "schema": CHECKPOINT_SCHEMA,
        "model_config": {
            "vocab_size": model.config.vocab_size,
            "embed_dim": model.config.embed_dim,
            "hidden_dim": model.config.hidden_dim,
        },
        "params": {name: _encode_array(p.data) for name, p in model.parameters().items()},
        "optimizer": {
            "step_count": opt_state["step_count"],
            "lr": optimizer.lr,
            "beta1": optimizer.beta1,
            "beta2": optimizer.beta2,
            "eps": optimizer.eps,
            "m": {name: _encode_array(arr) for name, arr in opt_state["m"].items()},
            "v": {name: _encode_array(arr) for name, arr in opt_state["v"].items()},
        },
        "rng_state": rng.bit_generator.state,
        "episode": int(episode),
        "best_reward": float(best_reward),
        "loss_tail": [float(x) for x in loss_tail],
        "env_hash": env_hash,
        "config": config or {},
    }
    payload["checksum"] = hashlib.sha256(_canonical(payload)).hexdigest()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(payload, sort_keys=True, indent=1))
    os.replace(tmp, path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read checkpoint {path}: {exc}") from None
    if not isinstance(payload, dict) or payload.get("schema") != CHECKPOINT_SCHEMA:
        raise ValidationError(f"{path}: expected schema {CHECKPOINT_SCHEMA!r}")
    claimed = payload.pop("checksum", None)
    if claimed is None:
        raise ValidationError(f"{path}: checkpoint has no checksum")
    actual = hashlib.sha256(_canonical(payload)).hexdigest()
    if actual != claimed:
        raise ValidationError(f"{path}: checksum mismatch, checkpoint is corrupted")
    try:
        return Checkpoint(
            model_config=payload["model_config"],
            params={name: _decode_array(doc) for name, doc in payload["params"].items()},
            optimizer=payload["optimizer"],
            rng_state=payload["rng_state"],
            episode=int(payload["episode"]),
            best_reward=float(payload["best_reward"]),
            loss_tail=[float(x) for x in payload["loss_tail"]],
            env_hash=str(payload["env_hash"]),
            config=payload.get("config", {}),
        )
    except KeyError as exc:
        raise ValidationError(f"{path}: checkpoint missing field {exc}") from None


def restore_model(ckpt: Checkpoint) -> FlowModel:
    config = ModelConfig(**{k: int(v) for k, v in ckpt.model_config.items()})
    params = {}
    for name, arr in ckpt.params.items():
        data = arr if arr.shape != () else np.float64(arr)
        params[name] = Tensor(data, requires_grad=True)
    return FlowModel(config, params)


def restore_optimizer(ckpt: Checkpoint, model: FlowModel) -> Adam:
    doc = ckpt.optimizer
    lr_map = {name: float(v) for name, v in doc["lr"].items()}
    base_lr = lr_map.get("w_x", next(iter(lr_map.values())))
    opt = Adam(model.parameters(), lr=base_lr, lr_overrides=lr_map,
               beta1=float(doc["beta1"]), beta2=float(doc["beta2"]), eps=float(doc["eps"]))
    opt.load_state_dict({
        "step_count": int(doc["step_count"]),
        "m": {name: _decode_array(d) for name, d in doc["m"].items()},
        "v": {name: _decode_array(d) for name, d in doc["v"].items()},
    })
    return opt


def restore_rng(ckpt: Checkpoint) -> np.random.Generator:
    rng = np.random.Generator(np.random.PCG64())
    state = dict(ckpt.rng_state)
    if "state" in state and isinstance(state["state"], dict):
        state["state"] = {k: int(v) for k, v in state["state"].items()}
    try:
        rng.bit_generator.state = state
    except (KeyError, ValueError, TypeError) as exc:
        raise ValidationError(f"invalid RNG state in checkpoint: {exc}") from None
    return rng
