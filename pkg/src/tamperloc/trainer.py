"""Joint training of both branches, toy MAE pretraining, scheduling, early
stopping and checkpointing.

Per step each branch backpropagates separately (the reconstruction loss
pre-scaled by lambda) so the encoder gradients accumulate before a single
optimizer update; this is equivalent to one backward pass of
``L = L_seg + lambda * L_rec``.
"""

import math
from dataclasses import dataclass, field, asdict

import numpy as np
import torch

from . import data as data_mod
from .encoder import DESK_ENCODER, PAPER_ENCODER, EncoderConfig, random_mask
from .model import TamperLocModel, batch_from_samples
from .recon import ReconLossBreakdown, patchify

CHECKPOINT_VERSION = 1


class NumericalDivergence(RuntimeError):
    """Loss or parameters became non-finite."""


@dataclass
class TrainConfig:
    lam: float = 0.01
    base_lr: float = 1e-4
    epochs: int = 200
    batch_size: int = 1
    mask_ratio: float = 0.75
    early_stop_patience: int = 10
    seed: int = 0
    scale_preset: str = "desk"  # desk | paper
    warmup_frac: float = 0.05
    weight_decay: float = 0.05
    betas: tuple = (0.9, 0.95)
    grad_clip: float = 1.0
    augment: bool = True

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.base_lr <= 0:
            raise ValueError("learning rate must be > 0")
        if not 0.0 < self.mask_ratio < 1.0:
            raise ValueError("mask ratio must be in (0, 1)")

    def encoder_config(self) -> EncoderConfig:
        return {"desk": DESK_ENCODER, "paper": PAPER_ENCODER}[self.scale_preset]


@dataclass(frozen=True)
class StepReport:
    step: int
    l_seg: float
    l_rec: ReconLossBreakdown
    combined: float
    lr: float


def combined_loss(l_seg: float, l_rec: float, lam: float) -> float:
    if not (math.isfinite(l_seg) and math.isfinite(l_rec)):
        raise NumericalDivergence(f"non-finite loss: seg={l_seg} rec={l_rec}")
    return l_seg + lam * l_rec


def lr_schedule(step: int, total_steps: int, base_lr: float,
                warmup_steps: int) -> float:
    """Linear warmup to base_lr, then cosine decay to zero."""
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * step / warmup_steps
    span = max(1, total_steps - warmup_steps)
    progress = min(1.0, (step - warmup_steps) / span)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def early_stop(history, patience: int) -> bool:
    """True iff the best score has not improved in the last `patience`
    evaluations."""
    if not history:
        raise ValueError("history must be nonempty")
    best = int(np.argmax(history))
    return len(history) - 1 - best >= patience


def _derived_seed(seed: int, tag: int, step: int) -> int:
    # stateless per-step seeds so resume needs no RNG state
    return (seed * 1_000_003 + tag * 7919 + step) % (2 ** 31 - 1)


class Trainer:
    """Owns parameter mutation for the composite model."""

    def __init__(self, model: TamperLocModel, cfg: TrainConfig,
                 total_steps: int, device="cpu"):
        self.model = model.to(device)
        self.cfg = cfg
        self.device = device
        self.total_steps = total_steps
        self.warmup_steps = int(round(cfg.warmup_frac * total_steps))
        self.step = 0
        self.optimizer = torch.optim.AdamW(
            model.trainable_parameters(), lr=cfg.base_lr, betas=cfg.betas,
            weight_decay=cfg.weight_decay)

    def _set_lr(self):
        # ramp from step+1 so the very first update is not a no-op
        lr = lr_schedule(min(self.step + 1, self.total_steps),
                         self.total_steps, self.cfg.base_lr,
                         self.warmup_steps)
        for group in self.optimizer.param_groups:
            group["lr"] = lr
        return lr

    def train_step(self, images, gt_masks) -> StepReport:
        """One sequential two-branch update.

        Segmentation backward first, then the lambda-scaled reconstruction
        backward; encoder gradients accumulate, then a single clipped
        AdamW step over all trainable parameters.
        """
        cfg = self.cfg
        lr = self._set_lr()
        self.optimizer.zero_grad(set_to_none=True)

        l_seg, _ = self.model.seg_step_loss(images, gt_masks)
        l_seg.backward()

        rec_seed = _derived_seed(cfg.seed, 1, self.step)
        breakdown, _ = self.model.recon_step_loss(
            images, gt_masks, cfg.mask_ratio, rec_seed)
        rec_total = breakdown.total
        # lam == 0: leave reconstruction grads as None so the optimizer
        # skips those tensors entirely (no decoupled weight decay either)
        if cfg.lam != 0 and rec_total.requires_grad:
            (cfg.lam * rec_total).backward()

        combined = combined_loss(float(l_seg.detach()),
                                 float(rec_total.detach()), cfg.lam)
        if cfg.grad_clip:
            torch.nn.utils.clip_grad_norm_(self.model.trainable_parameters(),
                                           cfg.grad_clip)
        self.optimizer.step()
        report = StepReport(self.step, float(l_seg.detach()), breakdown.detach(),
                            combined, lr)
        self.step += 1
        return report

    def epoch_order(self, n: int, epoch: int):
        rng = np.random.default_rng(_derived_seed(self.cfg.seed, 2, epoch))
        return rng.permutation(n)

    def run(self, samples, max_steps, callback=None, augment=None):
        """Loop over padded training samples for up to `max_steps` steps.

        `samples` are RawSamples; padding (and optional augmentation) happens
        per step so geometry stays seed-reproducible. `callback(report)` may
        return True to stop early.
        """
        cfg = self.cfg
        H = self.model.cfg.img_size
        do_aug = cfg.augment if augment is None else augment
        reports = []
        while self.step < max_steps:
            epoch = self.step // max(1, len(samples))
            order = self.epoch_order(len(samples), epoch)
            for idx in order:
                if self.step >= max_steps:
                    break
                s = samples[int(idx)]
                if do_aug:
                    s = data_mod.augment(
                        s, _derived_seed(cfg.seed, 3, self.step))
                    s = data_mod.resize_oversized(s, H)
                padded = data_mod.pad_to_canvas(s, H, H)
                images, gts = batch_from_samples(
                    [padded], dtype=next(self.model.parameters()).dtype,
                    device=self.device)
                report = self.train_step(images, gts)
                _check_finite(self.model)
                reports.append(report)
                if callback is not None and callback(report):
                    return reports
        return reports

    def state_dict(self):
        return {
            "version": CHECKPOINT_VERSION,
            "config": asdict(self.cfg),
            "encoder_config": self.model.cfg.to_dict(),
            "model_hparams": dict(self.model.hparams),
            "step": self.step,
            "tensors": self.model.state_dict(),
            "optimizer": self.optimizer.state_dict(),
        }

    def load_state_dict(self, state):
        if state.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version: {state.get('version')}")
        self.model.load_state_dict(state["tensors"])
        self.optimizer.load_state_dict(state["optimizer"])
        self.step = state["step"]


def _check_finite(model):
    for name, p in model.named_parameters():
        if not torch.isfinite(p).all():
            raise NumericalDivergence(f"non-finite parameter tensor: {name}")


def save_checkpoint(path, trainer: Trainer):
    torch.save(trainer.state_dict(), path)


def load_checkpoint(path):
    return torch.load(path, map_location="cpu", weights_only=False)


def model_from_checkpoint(path) -> TamperLocModel:
    state = load_checkpoint(path)
    cfg = EncoderConfig(**state["encoder_config"])
    model = TamperLocModel(cfg, **state.get("model_hparams", {}))
    model.load_state_dict(state["tensors"])
    return model


def toy_mae_pretrain(images, enc_cfg: EncoderConfig, cfg: TrainConfig,
                     steps: int, device="cpu", callback=None):
    """Standard MAE pretraining on a small unlabeled corpus.

    Pixel MSE on masked patches only, with a throwaway decoder; returns a
    checkpoint state holding the encoder weights.
    """
    if not images:
        raise ValueError("pretraining corpus is empty")
    torch.manual_seed(cfg.seed)
    model = TamperLocModel(enc_cfg).to(device)
    params = model.trainable_parameters()
    opt = torch.optim.AdamW(params, lr=cfg.base_lr, betas=cfg.betas,
                            weight_decay=cfg.weight_decay)
    warmup = int(round(cfg.warmup_frac * steps))
    losses = []
    H = enc_cfg.img_size
    for step in range(steps):
        rng = np.random.default_rng(_derived_seed(cfg.seed, 4, step))
        raw = images[int(rng.integers(len(images)))]
        padded = data_mod.pad_to_canvas(
            data_mod.resize_oversized(raw, H), H, H)
        x, _ = batch_from_samples([padded], device=device)
        lr = lr_schedule(step, steps, cfg.base_lr, warmup)
        for g in opt.param_groups:
            g["lr"] = lr
        opt.zero_grad(set_to_none=True)
        loss = mae_pretrain_loss(model, x, cfg.mask_ratio,
                                 _derived_seed(cfg.seed, 5, step))
        loss.backward()
        if cfg.grad_clip:
            torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip)
        opt.step()
        losses.append(float(loss))
        if callback is not None:
            callback(step, float(loss))
    return {
        "version": CHECKPOINT_VERSION,
        "config": asdict(cfg),
        "encoder_config": enc_cfg.to_dict(),
        "model_hparams": dict(model.hparams),
        "step": steps,
        "tensors": model.state_dict(),
        "losses": losses,
    }


def mae_loss_from_recon(recon, target, plan, patch_size):
    """Per-patch pixel MSE restricted to masked patches; visible patches do
    not enter the objective."""
    pred = patchify(recon, patch_size)
    tgt = patchify(target, patch_size)
    masked = plan.masked_indices.to(recon.device)
    return torch.nn.functional.mse_loss(pred[:, masked], tgt[:, masked])


def mae_pretrain_loss(model: TamperLocModel, x, mask_ratio, seed):
    recon, plan = model.forward_recon(x, mask_ratio, seed)
    return mae_loss_from_recon(recon, x, plan, model.cfg.patch_size)
