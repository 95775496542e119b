"""Two-phase training: reconstruction pretraining and detection training.

Batch order and crop offsets are derived statelessly from ``(seed, epoch,
index)``, so a run resumed from any checkpoint replays the same batches.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .checkpoint import (Checkpoint, load_checkpoint, model_tensors, optimizer_tensors,
                         restore_model, restore_optimizer, save_checkpoint)
from .config import Config, TrainConfig
from .data import SamplePair, augment, load_dataset, stack_batch, standardize
from .errors import CheckpointError, ConfigurationError
from .losses import LossValue, pretrain_loss, train_loss
from .metrics import EvalReport, evaluate_dataset
from .network import DGSPNet, ReconstructionNet, set_phase

log = logging.getLogger(__name__)


def poly_lr(step: int, total: int, base: float, power: float) -> float:
    if total <= 0:
        raise ConfigurationError("poly_lr: total steps must be positive")
    if not 0 <= step <= total:
        raise ConfigurationError(f"poly_lr: step {step} outside [0, {total}]")
    return base * (1.0 - step / total) ** power


def configure_determinism(deterministic: bool) -> None:
    if deterministic:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True, warn_only=True)


def build_model(cfg: Config) -> nn.Module:
    """Construct the phase's network under the run seed and freeze per the phase matrix."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.train.seed)
        cls = ReconstructionNet if cfg.train.phase == "pretrain" else DGSPNet
        model = cls(cfg.model)
    set_phase(model, cfg.train.phase)
    return model


def build_optimizer(model: nn.Module, tcfg: TrainConfig) -> torch.optim.Optimizer:
    groups = model.param_groups()
    if tcfg.phase == "pretrain":
        inv = [p for _, p in groups.get("inversion", []) if p.requires_grad]
        rest = [p for g, ps in groups.items() if g not in ("inversion", "text")
                for _, p in ps if p.requires_grad]
        return torch.optim.AdamW(
            [{"params": inv, "lr": tcfg.pretrain_lr_inversion, "base_lr": tcfg.pretrain_lr_inversion,
              "name": "inversion"},
             {"params": rest, "lr": tcfg.pretrain_lr, "base_lr": tcfg.pretrain_lr, "name": "rest"}],
            betas=(0.9, 0.999), weight_decay=tcfg.weight_decay)
    trainable = [p for p in model.parameters() if p.requires_grad]
    return torch.optim.Adam([{"params": trainable, "lr": tcfg.lr, "base_lr": tcfg.lr, "name": "main"}],
                            betas=(0.9, 0.999))


def set_lr(opt: torch.optim.Optimizer, step: int, total: int, tcfg: TrainConfig) -> float:
    """Polynomial decay in the detection phase; constant rates during pretraining."""
    for g in opt.param_groups:
        if tcfg.phase == "train":
            g["lr"] = poly_lr(step, total, g["base_lr"], tcfg.poly_power)
        else:
            g["lr"] = g["base_lr"]
    return opt.param_groups[-1]["lr"]


def pretrain_step(model: ReconstructionNet, images: torch.Tensor, opt: torch.optim.Optimizer,
                  tcfg: TrainConfig) -> LossValue:
    if tcfg.phase != "pretrain" or not isinstance(model, ReconstructionNet):
        raise ConfigurationError("pretrain_step needs phase='pretrain' and a ReconstructionNet")
    model.train()
    recon, f5, text = model(images)
    loss = pretrain_loss(recon, images, f5, text.eot, model.proj, tcfg.tau,
                         tcfg.contra_weight, tcfg.mse_weight)
    opt.zero_grad(set_to_none=True)
    if loss.total.requires_grad:
        loss.total.backward()
        opt.step()
    return loss


def train_step(model: DGSPNet, images: torch.Tensor, masks: torch.Tensor,
               opt: torch.optim.Optimizer, tcfg: TrainConfig) -> LossValue:
    if tcfg.phase != "train" or not isinstance(model, DGSPNet):
        raise ConfigurationError("train_step needs phase='train' and a DGSPNet")
    model.train()
    pred = model(images)
    loss = train_loss(pred, masks, tcfg.lambda1, tcfg.lambda2, tcfg.iou_eps)
    opt.zero_grad(set_to_none=True)
    loss.total.backward()
    opt.step()
    return loss


def _pad16(image: np.ndarray) -> tuple[np.ndarray, tuple[int, int]]:
    h, w = image.shape
    ph, pw = (-h) % 16, (-w) % 16
    if ph or pw:
        image = np.pad(image, ((0, ph), (0, pw)), mode="reflect" if min(h, w) > max(ph, pw) else "edge")
    return image, (h, w)


@torch.no_grad()
def predict_probs(model: DGSPNet, image: np.ndarray, standardize_images: bool = False) -> np.ndarray:
    """Probability map for one (H, W) image of any size (reflect-padded to a multiple of 16)."""
    model.eval()
    x = standardize(image) if standardize_images else image
    x, (h, w) = _pad16(x)
    dtype = next(model.parameters()).dtype
    out = model(torch.from_numpy(np.ascontiguousarray(x))[None, None].to(dtype))
    return out[0, 0, :h, :w].cpu().numpy()


def evaluate_model(model: DGSPNet, pairs: list[SamplePair], threshold: float = 0.5,
                   match_radius: float = 3.0, standardize_images: bool = False) -> EvalReport:
    preds = [predict_probs(model, s.image, standardize_images) for s in pairs]
    return evaluate_dataset(preds, [s.mask for s in pairs], threshold, match_radius,
                            ids=[s.id for s in pairs])


@torch.no_grad()
def reconstruction_error(model: ReconstructionNet, pairs: list[SamplePair]) -> float:
    model.eval()
    errs = []
    for s in pairs:
        x, (h, w) = _pad16(s.image)
        recon, _, _ = model(torch.from_numpy(np.ascontiguousarray(x))[None, None])
        errs.append(float(((recon[0, 0, :h, :w].numpy() - s.image) ** 2).mean()))
    return float(np.mean(errs)) if errs else float("nan")


def epoch_batches(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    order = np.random.default_rng([seed, epoch]).permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def make_batch(pairs: list[SamplePair], idx: np.ndarray, cfg: Config, epoch: int):
    tcfg = cfg.train
    crops = [augment(pairs[i], tcfg.crop, np.random.default_rng([tcfg.seed, epoch, int(i), 1]))
             for i in idx]
    images, masks = stack_batch(crops, cfg.data.standardize)
    return torch.from_numpy(images), torch.from_numpy(masks)


@dataclass
class FitResult:
    model: nn.Module
    log: list[dict] = field(default_factory=list)
    last_checkpoint: Path | None = None
    best_checkpoint: Path | None = None


def init_from_pretrain(model: DGSPNet, path: str | Path) -> list[str]:
    """Load encoder and prompt weights from a pretraining checkpoint; the rest keeps its init."""
    ckpt = load_checkpoint(path)
    if ckpt.phase != "pretrain":
        log.warning("init checkpoint %s has phase %r, expected 'pretrain'", path, ckpt.phase)
    tensors = {k: v for k, v in ckpt.tensors.items() if k.startswith("model.")}
    loaded, _ = restore_model(model, tensors)
    return loaded


class Trainer:
    """Runs one phase; holds model, optimizer and data so tests can drive single steps."""

    def __init__(self, cfg: Config, out_dir: str | Path | None = None,
                 train_pairs: list[SamplePair] | None = None,
                 test_pairs: list[SamplePair] | None = None):
        cfg.validate()
        self.cfg = cfg
        self.tcfg = cfg.train
        configure_determinism(self.tcfg.deterministic)
        self.out_dir = Path(out_dir) if out_dir is not None else None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        self.train_pairs = train_pairs if train_pairs is not None else load_dataset(cfg.data.root, "train")
        self.test_pairs = test_pairs if test_pairs is not None else (
            load_dataset(cfg.data.root, "test") if train_pairs is None else [])
        if not self.train_pairs:
            raise ConfigurationError("training split is empty")
        self.model = build_model(cfg)
        if self.tcfg.phase == "train":
            if self.tcfg.init_checkpoint:
                loaded = init_from_pretrain(self.model, self.tcfg.init_checkpoint)
                log.info("initialized %d tensors from %s", len(loaded), self.tcfg.init_checkpoint)
            else:
                log.warning("cold start: no pretraining checkpoint given, encoder and inversion "
                            "net keep their random initialization")
        self.opt = build_optimizer(self.model, self.tcfg)
        self.steps_per_epoch = math.ceil(len(self.train_pairs) / self.tcfg.batch_size)
        self.total_steps = self.tcfg.max_steps or self.tcfg.epochs * self.steps_per_epoch
        self.step = 0
        self.best_iou = -1.0
        self.log: list[dict] = []

    # persistence -------------------------------------------------------

    def checkpoint(self) -> Checkpoint:
        tensors = model_tensors(self.model)
        tensors.update(optimizer_tensors(self.opt, self.model))
        return Checkpoint(tensors, self.cfg.to_dict(), self.tcfg.phase, self.step,
                          {"best_iou": self.best_iou})

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        save_checkpoint(path, self.checkpoint())
        return path

    def load(self, path: str | Path) -> None:
        ckpt = load_checkpoint(path)
        if ckpt.phase != self.tcfg.phase:
            raise CheckpointError(f"{path}: phase {ckpt.phase!r} does not match run phase {self.tcfg.phase!r}")
        restore_model(self.model, ckpt.tensors)
        restore_optimizer(self.opt, self.model, ckpt.tensors)
        self.step = ckpt.step
        self.best_iou = float(ckpt.extra.get("best_iou", -1.0))

    # loop -------------------------------------------------------------

    def run_step(self) -> dict:
        epoch, b = divmod(self.step, self.steps_per_epoch)
        idx = epoch_batches(len(self.train_pairs), self.tcfg.batch_size, self.tcfg.seed, epoch)[b]
        images, masks = make_batch(self.train_pairs, idx, self.cfg, epoch)
        lr = set_lr(self.opt, self.step, self.total_steps, self.tcfg)
        if self.tcfg.phase == "pretrain":
            loss = pretrain_step(self.model, images, self.opt, self.tcfg)
        else:
            loss = train_step(self.model, images, masks, self.opt, self.tcfg)
        self.step += 1
        row = {"step": self.step, "epoch": epoch, "phase": self.tcfg.phase, "lr": lr,
               **loss.as_floats()}
        self.log.append(row)
        return row

    def evaluate(self) -> dict:
        if not self.test_pairs:
            return {}
        if self.tcfg.phase == "pretrain":
            return {"eval_mse": reconstruction_error(self.model, self.test_pairs)}
        rep = evaluate_model(self.model, self.test_pairs, self.tcfg.threshold,
                             self.tcfg.match_radius, self.cfg.data.standardize)
        return {"eval_iou": rep.iou, "eval_pd": rep.pd, "eval_fa": rep.fa}

    def fit(self, resume: str | Path | None = None) -> FitResult:
        if resume is not None:
            self.load(resume)
            log.info("resumed from %s at step %d", resume, self.step)
        result = FitResult(self.model)
        log_fh = open(self.out_dir / "metrics.jsonl", "a", encoding="utf-8") if self.out_dir else None
        try:
            while self.step < self.total_steps:
                row = self.run_step()
                epoch_done = self.step % self.steps_per_epoch == 0 or self.step == self.total_steps
                if epoch_done:
                    epoch = row["epoch"] + 1
                    last = self.step == self.total_steps
                    if self.tcfg.eval_every and (epoch % self.tcfg.eval_every == 0 or last):
                        row.update(self.evaluate())
                        iou = row.get("eval_iou")
                        if iou is not None and iou > self.best_iou:
                            self.best_iou = iou
                            if self.out_dir:
                                result.best_checkpoint = self.save(self.out_dir / "best.ckpt")
                    if self.out_dir and (last or (self.tcfg.ckpt_every and epoch % self.tcfg.ckpt_every == 0)):
                        result.last_checkpoint = self.save(self.out_dir / "last.ckpt")
                    log.info("step %d/%d epoch %d %s", self.step, self.total_steps, epoch,
                             " ".join(f"{k}={v:.4g}" for k, v in row.items()
                                      if isinstance(v, float)))
                if log_fh:
                    log_fh.write(json.dumps(row) + "\n")
        finally:
            if log_fh:
                log_fh.close()
        result.log = self.log
        return result


def fit(cfg: Config, out_dir: str | Path | None = None, resume: str | Path | None = None) -> FitResult:
    """Run the configured phase end to end; resuming reuses the checkpoint's config snapshot."""
    if resume is not None:
        cfg = Config.from_dict(load_checkpoint(resume).config)
    return Trainer(cfg, out_dir).fit(resume)
