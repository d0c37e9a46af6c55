"""Training loop: encode, attack, decode, weighted loss, Adam step."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from robusthide import codecs
from robusthide import networks as N
from robusthide import tensor as T
from robusthide.attacks import AttackError, apply_attack, sample_attack
from robusthide.checkpoint import save_checkpoint
from robusthide.config import TrainConfig
from robusthide.data import ImageSet, load_dataset, synthetic_dataset
from robusthide.evaluate import ber
from robusthide.optim import Adam
from robusthide.tensor import NonFiniteError, Tensor


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class LogEntry:
    step: int
    loss: float
    image_loss: float
    message_loss: float
    train_ber: float
    lambda_image: float


@dataclass
class TrainResult:
    params: dict
    descriptor: N.Descriptor
    losses: list = field(default_factory=list)      # total loss at every step
    snapshots: list = field(default_factory=list)   # LogEntry every log_every steps
    checkpoints: list = field(default_factory=list)


def image_weight(cfg: TrainConfig, step: int) -> float:
    """Image-loss weight: held at the start value, then ramped linearly to the final value."""
    t = cfg.train
    if step < t.image_warmup_steps:
        return t.lambda_image_start
    if t.image_ramp_steps == 0:
        return t.lambda_image
    frac = min(1.0, (step - t.image_warmup_steps) / t.image_ramp_steps)
    return t.lambda_image_start + (t.lambda_image - t.lambda_image_start) * frac


def training_images(cfg: TrainConfig) -> ImageSet:
    d = cfg.data
    if d.dataset == "synthetic":
        return synthetic_dataset(d.synthetic_count, d.image_size, d.synthetic_seed)
    return load_dataset(d.dataset, d.image_size)


def evaluation_images(cfg: TrainConfig) -> np.ndarray:
    """Held-out covers: a separate synthetic draw, or the first ``samples`` files of a folder."""
    d = cfg.data
    if d.dataset == "synthetic":
        return synthetic_dataset(cfg.eval.samples, d.image_size, cfg.eval.seed).images
    return load_dataset(d.dataset, d.image_size).images[:cfg.eval.samples]


def _meta(cfg: TrainConfig, step: int) -> dict:
    return {"config": cfg.to_dict(), "fingerprint": cfg.fingerprint(), "step": step}


def train(cfg: TrainConfig, images: Optional[np.ndarray] = None,
          on_log: Optional[Callable[[LogEntry], None]] = None) -> TrainResult:
    """Run ``cfg.train.steps`` optimization steps. Fully determined by ``cfg`` and the images."""
    d = cfg.descriptor()
    t = cfg.train
    if images is None:
        images = training_images(cfg).images
    if len(images) == 0:
        raise TrainingError("empty dataset")
    if images.shape[1:] != (d.image_size, d.image_size, 3):
        raise TrainingError(f"images are {images.shape[1:]}, model expects {(d.image_size, d.image_size, 3)}")
    schedule = cfg.schedule()
    init_ss, batch_ss, attack_ss = np.random.SeedSequence(t.seed).spawn(3)
    params = N.init_params(d, int(init_ss.generate_state(1)[0]))
    opt = Adam(params, lr=t.lr, beta1=t.beta1, beta2=t.beta2, eps=t.eps)
    batch_rng = np.random.default_rng(batch_ss)
    attack_rng = np.random.default_rng(attack_ss)
    ckpt_dir = Path(t.checkpoint_dir) if t.checkpoint_dir else None
    result = TrainResult(params, d)

    for step in range(t.steps):
        idx = batch_rng.integers(0, len(images), t.batch_size)
        msg = batch_rng.integers(0, 2, (t.batch_size, d.message_length))
        cover = Tensor(codecs.to_real(images[idx]))
        enc = N.encode(params, d, cover, msg)
        spec = sample_attack(schedule, attack_rng)
        try:
            attacked = apply_attack(enc, spec, attack_rng)
        except (AttackError, ValueError) as e:
            raise TrainingError(f"attack {spec.label} failed at step {step}: {e}") from e
        logits = N.decode(params, d, attacked)
        lam = image_weight(cfg, step)
        img_loss = T.mse_loss(enc, cover)
        msg_loss = T.bce_with_logits(logits, msg)
        loss = T.scale(img_loss, lam) + T.scale(msg_loss, t.lambda_message)
        try:
            T.check_finite(loss, "loss")
            opt.zero_grad()
            loss.backward()
            opt.step()
        except NonFiniteError as e:
            raise TrainingError(f"non-finite value at step {step}: {e}") from e
        result.losses.append(loss.item())

        last = step == t.steps - 1
        if t.log_every and (step % t.log_every == 0 or last):
            entry = LogEntry(step, loss.item(), img_loss.item(), msg_loss.item(),
                             ber(N.decode_bits(logits.data), msg), lam)
            result.snapshots.append(entry)
            if on_log:
                on_log(entry)
        if ckpt_dir and t.checkpoint_every and (step + 1) % t.checkpoint_every == 0 and not last:
            result.checkpoints.append(save_checkpoint(ckpt_dir / f"step_{step + 1:07d}.rhck", params, d,
                                                      _meta(cfg, step + 1)))
    if ckpt_dir:
        result.checkpoints.append(save_checkpoint(ckpt_dir / "final.rhck", params, d, _meta(cfg, t.steps)))
    return result


def save_result(result: TrainResult, cfg: TrainConfig, path) -> Path:
    return save_checkpoint(path, result.params, result.descriptor, _meta(cfg, cfg.train.steps))
