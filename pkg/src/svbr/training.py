"""Two-phase training loop.

Phase A fits the network on ground-truth blur fields; phase B continues
on the augmented (matting / domain-transform) fields so the network
tolerates estimator-style artifacts. Adam with the step-decay learning
rate schedule, SSIM loss, seeded shuffling, and a best-validation
checkpoint. Everything is deterministic given (dataset, seed, config).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .common import SvbrError
from .metrics import ssim_loss_torch
from .network import SVBRNet, checkpoint_bytes, normalize_blur_map


class TrainingDivergedError(SvbrError):
    """Raised when the loss goes non-finite; carries the log so far."""

    def __init__(self, message: str, log: "TrainLog"):
        super().__init__(message)
        self.log = log


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8
    lr0: float = 1e-3
    lr_drop_every: int = 20
    lr_drop_factor: float = 10.0
    phase_a_epochs: int = 32
    phase_b_epochs: int = 32
    seed: int = 0
    split_ratio: float = 0.8

    def __post_init__(self) -> None:
        if min(self.batch_size, self.lr0, self.lr_drop_every, self.lr_drop_factor) <= 0:
            raise ValueError("batch size, lr and schedule parameters must be positive")
        if not 0 < self.split_ratio < 1:
            raise ValueError("split_ratio must be in (0, 1)")
        if self.phase_a_epochs < 0 or self.phase_b_epochs < 0:
            raise ValueError("epoch counts must be >= 0")


def lr_schedule(cfg: TrainConfig, epoch: int) -> float:
    """Step decay: lr0 / drop_factor ** floor(epoch / drop_every)."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return cfg.lr0 / cfg.lr_drop_factor ** (epoch // cfg.lr_drop_every)


class AdamState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(self) -> None:
        self.step = 0
        self.m: list[torch.Tensor] | None = None
        self.v: list[torch.Tensor] | None = None


def adam_step(
    params: Sequence[torch.Tensor],
    grads: Sequence[torch.Tensor | None],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update, in place on ``params``."""
    if len(params) != len(grads):
        raise ValueError("params and grads length mismatch")
    if state.m is None:
        state.m = [torch.zeros_like(p) for p in params]
        state.v = [torch.zeros_like(p) for p in params]
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    with torch.no_grad():
        for p, g, m, v in zip(params, grads, state.m, state.v):
            if g is None:
                continue
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {tuple(g.shape)} != param {tuple(p.shape)}")
            m.mul_(beta1).add_(g, alpha=1.0 - beta1)
            v.mul_(beta2).addcmul_(g, g, value=1.0 - beta2)
            p.addcdiv_(m / bc1, (v / bc2).sqrt().add_(eps), value=-lr)


@dataclass
class StepRecord:
    step: int
    epoch: int
    phase: str
    lr: float
    loss: float


@dataclass
class ValRecord:
    epoch: int
    phase: str
    val_loss: float


@dataclass
class TrainLog:
    step_records: list[StepRecord] = dc_field(default_factory=list)
    val_records: list[ValRecord] = dc_field(default_factory=list)
    permutations: list[list[str]] = dc_field(default_factory=list)
    variant_choices: list[dict[str, str]] = dc_field(default_factory=list)
    abort_reason: str | None = None

    def to_jsonl(self) -> str:
        lines = []
        for epoch, (perm, variants) in enumerate(zip(self.permutations, self.variant_choices)):
            lines.append(json.dumps(
                {"kind": "epoch", "epoch": epoch, "order": perm, "variants": variants},
                sort_keys=True,
            ))
        for r in self.step_records:
            lines.append(json.dumps(
                {"kind": "step", "step": r.step, "epoch": r.epoch, "phase": r.phase,
                 "lr": r.lr, "loss": r.loss},
                sort_keys=True,
            ))
        for v in self.val_records:
            lines.append(json.dumps(
                {"kind": "val", "epoch": v.epoch, "phase": v.phase, "val_loss": v.val_loss},
                sort_keys=True,
            ))
        if self.abort_reason is not None:
            lines.append(json.dumps({"kind": "abort", "reason": self.abort_reason}))
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_jsonl())

    def final_epoch_mean_loss(self) -> float:
        if not self.step_records:
            return math.nan
        last = self.step_records[-1].epoch
        losses = [r.loss for r in self.step_records if r.epoch == last]
        return float(np.mean(losses))


class _Prepared:
    """Sample tensors staged for the training loop."""

    def __init__(self, sample, dtype: torch.dtype):
        self.id = sample.id
        self.sharp = torch.from_numpy(sample.sharp.transpose(2, 0, 1)[None]).to(dtype)
        self.blurry = torch.from_numpy(sample.blurry.transpose(2, 0, 1)[None]).to(dtype)
        self.maps = {
            "true": torch.from_numpy(normalize_blur_map(sample.field_true)[None, None]).to(dtype),
            "matting": torch.from_numpy(
                normalize_blur_map(sample.field_matting)[None, None]
            ).to(dtype),
            "dt": torch.from_numpy(normalize_blur_map(sample.field_dt)[None, None]).to(dtype),
        }


def recalibrate_batchnorm(net: SVBRNet, prepared: list[_Prepared], batch_size: int = 8) -> None:
    """Re-estimate batch-norm running statistics over the given samples.

    Small-batch training leaves running statistics far from the batch
    statistics the network was optimized under; before evaluating, the
    stats are recomputed as a cumulative average over train-mode
    forward passes (deterministic batch order).
    """
    bns = [m for m in net.modules() if isinstance(m, nn.BatchNorm2d)]
    momenta = [m.momentum for m in bns]
    for m in bns:
        m.momentum = None  # cumulative averaging
        m.reset_running_stats()
    was_training = net.training
    net.train()
    with torch.no_grad():
        for start in range(0, len(prepared), batch_size):
            chunk = prepared[start : start + batch_size]
            net(
                torch.cat([s.blurry for s in chunk]),
                torch.cat([s.maps["true"] for s in chunk]),
            )
    for m, momentum in zip(bns, momenta):
        m.momentum = momentum
    net.train(was_training)


def _validate(net: SVBRNet, prepared: list[_Prepared]) -> float:
    net.eval()
    losses = []
    with torch.no_grad():
        for s in prepared:
            pred = net(s.blurry, s.maps["true"])
            losses.append(float(ssim_loss_torch(pred, s.sharp)))
    return float(np.mean(losses))


def train(samples: Sequence, net: SVBRNet, cfg: TrainConfig) -> tuple[bytes, TrainLog]:
    """Run the two-phase schedule; returns (best checkpoint bytes, log).

    Samples must carry ``split`` labels; when the validation split is
    empty (smoke/overfit runs) the training split doubles as validation.
    Phase A uses only the true fields; phase B picks matting or DT
    uniformly per example per epoch, with a fresh optimizer state at the
    phase boundary. Batch-norm running statistics are re-estimated on
    the training set before every validation, so checkpoints are ready
    for eval-mode inference. Aborts with TrainingDivergedError on
    non-finite loss.
    """
    if not samples:
        raise ValueError("empty dataset")
    dtype = next(net.parameters()).dtype
    train_s = [_Prepared(s, dtype) for s in samples if s.split == "train"]
    val_s = [_Prepared(s, dtype) for s in samples if s.split == "val"]
    if not train_s:
        raise ValueError("no training samples in dataset")
    if not val_s:
        val_s = train_s

    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    params = list(net.parameters())
    state = AdamState()
    log = TrainLog()
    best_val = math.inf
    best_ckpt = checkpoint_bytes(net)
    step = 0
    total_epochs = cfg.phase_a_epochs + cfg.phase_b_epochs

    for epoch in range(total_epochs):
        phase = "a" if epoch < cfg.phase_a_epochs else "b"
        if epoch == cfg.phase_a_epochs and cfg.phase_a_epochs > 0:
            state = AdamState()
        lr = lr_schedule(cfg, epoch)
        order = rng.permutation(len(train_s))
        variants = {}
        for i in order:
            s = train_s[i]
            variants[s.id] = "true" if phase == "a" else ("matting", "dt")[int(rng.integers(2))]
        log.permutations.append([train_s[i].id for i in order])
        log.variant_choices.append(variants)

        net.train()
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_s[i] for i in order[start : start + cfg.batch_size]]
            x = torch.cat([s.blurry for s in batch])
            m = torch.cat([s.maps[variants[s.id]] for s in batch])
            y = torch.cat([s.sharp for s in batch])
            pred = net(x, m)
            loss = ssim_loss_torch(pred, y)
            if not torch.isfinite(loss):
                log.abort_reason = f"non-finite loss at step {step} (epoch {epoch})"
                raise TrainingDivergedError(log.abort_reason, log)
            net.zero_grad(set_to_none=True)
            loss.backward()
            adam_step(params, [p.grad for p in params], state, lr)
            log.step_records.append(StepRecord(step, epoch, phase, lr, float(loss.detach())))
            step += 1

        recalibrate_batchnorm(net, train_s)
        val_loss = _validate(net, val_s)
        log.val_records.append(ValRecord(epoch, phase, val_loss))
        if val_loss < best_val:
            best_val = val_loss
            best_ckpt = checkpoint_bytes(net)

    return best_ckpt, log
