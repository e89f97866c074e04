"""Three-stage training protocol: self-supervised reconstruction pretraining,
topology learning of the attention prior, and frozen-prior U-Net refinement.

AdamW with a linear warmup into cosine annealing drives every stage. All
randomness is derived from the plan seed (torch global RNG for weights,
dropout and stochastic depth; one numpy stream per frame for corruption), so
a repeated run reproduces checkpoints bit-for-bit on one machine.
"""

from __future__ import annotations

import copy
import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .corrupt import CorruptionSpec, corrupt, frame_rng
from .errors import ConfigError, DataError
from .losses import LossWeights, stage1_loss, stage2_loss, stage3_loss
from .metrics import confusion, dice
from .model import HacConfig, HacNet, build_model, fuse, image_tensor, mask_tensor, prob_map
from .raster import BinaryMask, RasterImage
from .skeleton import prune_targets
from .errors import UndefinedMetricError


@dataclass
class TrainPlan:
    """One stage's optimization schedule and loss configuration."""

    stage: int
    epochs: int
    warmup_epochs: int = 10
    base_lr: float = 1e-4
    batch_size: int = 1
    weights: LossWeights | None = None
    seed: int = 42
    weight_decay: float = 0.01
    betas: tuple = (0.9, 0.999)
    patience: int = 50
    min_path_px: float = 100.0
    val_fraction: float = 1.0 / 9.0
    soft_skel_iters: int = 10
    max_steps: int | None = None

    def __post_init__(self):
        if self.stage not in (1, 2, 3):
            raise ConfigError(f"stage must be 1, 2, or 3, got {self.stage}")
        if self.epochs < 1 or self.warmup_epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs >= 1, warmup >= 0, batch size >= 1 required")
        if self.base_lr <= 0:
            raise ConfigError("base_lr must be positive")
        if self.weights is not None:
            if self.stage == 2 and self.weights.lambda_bce <= 0:
                raise ConfigError("stage-2 weights require a positive BCE coefficient")
            if self.stage == 3 and (self.weights.lambda_bce != 0 or self.weights.lambda_d != 0):
                raise ConfigError("stage-3 weights must zero the BCE and Dice coefficients")
            if self.stage == 1:
                raise ConfigError("stage 1 is plain reconstruction MSE and takes no loss weights")

    def effective_weights(self) -> LossWeights | None:
        if self.stage == 2:
            return self.weights or LossWeights.stage2_defaults()
        if self.stage == 3:
            return self.weights or LossWeights.stage3_defaults()
        return None


def learning_rate(plan: TrainPlan, epoch: int) -> float:
    """Linear 0 -> base over [0, warmup), then cosine base -> 0."""
    if plan.warmup_epochs > 0 and epoch < plan.warmup_epochs:
        return plan.base_lr * epoch / plan.warmup_epochs
    span = max(plan.epochs - plan.warmup_epochs, 1)
    t = min(epoch - plan.warmup_epochs, span)
    return plan.base_lr * 0.5 * (1.0 + math.cos(math.pi * t / span))


@dataclass
class SplitManifest:
    """Dataset partition: unlabeled pretraining frames plus labeled
    train/test pairs, disjoint by path."""

    unlabeled: list = field(default_factory=list)
    train: list = field(default_factory=list)
    test: list = field(default_factory=list)

    def __post_init__(self):
        u = {str(p) for p in self.unlabeled}
        t = {str(p[0]) for p in self.train}
        s = {str(p[0]) for p in self.test}
        if (u & t) or (u & s) or (t & s):
            raise ConfigError("split sets must be disjoint by path")


def split_pairs(pairs: list, test_fraction: float = 0.1, seed: int = 42) -> tuple[list, list]:
    """Seeded train/test split of labeled pairs."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pairs))
    n_test = max(1, round(len(pairs) * test_fraction)) if len(pairs) > 1 else 0
    test_idx = set(order[:n_test].tolist())
    train = [pairs[i] for i in range(len(pairs)) if i not in test_idx]
    test = [pairs[i] for i in range(len(pairs)) if i in test_idx]
    return train, test


def hash_paths(items) -> str:
    h = hashlib.sha256()
    for it in items:
        h.update(str(it).encode("utf-8"))
        h.update(b"\0")
    return h.hexdigest()[:16]


def _set_lr(optimizer, lr: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = lr


def _mean_dice(preds: list[np.ndarray], targets: list[np.ndarray], threshold: float = 0.5) -> float:
    vals = []
    for p, t in zip(preds, targets):
        try:
            vals.append(dice(confusion(BinaryMask(p >= threshold), BinaryMask(t >= 0.5))))
        except UndefinedMetricError:
            continue
    return float(np.mean(vals)) if vals else float("nan")


def _holdout(pairs: list, plan: TrainPlan, n_min: int = 4):
    """Seeded validation holdout from the training pairs."""
    if len(pairs) < n_min:
        return pairs, []
    n_val = max(1, round(len(pairs) * plan.val_fraction))
    rng = np.random.default_rng(plan.seed + 1)
    val_idx = set(rng.permutation(len(pairs))[:n_val].tolist())
    train = [pairs[i] for i in range(len(pairs)) if i not in val_idx]
    val = [pairs[i] for i in range(len(pairs)) if i in val_idx]
    return train, val


def run_stage1(plan: TrainPlan, frames: list[RasterImage], spec: CorruptionSpec,
               cfg: HacConfig, model: HacNet | None = None) -> tuple[HacNet, dict]:
    """Denoising pretraining: reconstruct each clean frame from its
    physics-aware corruption; trains the full network end to end."""
    if plan.stage != 1:
        raise ConfigError("plan stage must be 1")
    if not frames:
        raise DataError("empty frame list")
    torch.manual_seed(plan.seed)
    if model is None:
        model = build_model(cfg, seed=plan.seed)
    clean = [image_tensor(f) for f in frames]
    fovs = [mask_tensor(f.fov) for f in frames]
    opt = torch.optim.AdamW(model.parameters(), lr=plan.base_lr,
                            weight_decay=plan.weight_decay, betas=plan.betas)
    order_rng = np.random.default_rng(plan.seed)
    history = {"step_loss": [], "epoch_loss": [], "lr": [], "aborted": False}
    snapshot = copy.deepcopy(model.state_dict())
    n = len(frames)
    step = 0
    model.train()
    for epoch in range(plan.epochs):
        lr = learning_rate(plan, epoch)
        _set_lr(opt, lr)
        history["lr"].append(lr)
        losses = []
        for j, idx in enumerate(order_rng.permutation(n)):
            idx = int(idx)
            degraded, _ = corrupt(frames[idx], spec, frame_rng(plan.seed, epoch * n + idx))
            recon = model.forward_recon(image_tensor(degraded))
            loss = stage1_loss(recon, clean[idx], fovs[idx]) / plan.batch_size
            if not torch.isfinite(loss):
                model.load_state_dict(snapshot)
                history["aborted"] = True
                return model, history
            loss.backward()
            if (j + 1) % plan.batch_size == 0 or j == n - 1:
                opt.step()
                opt.zero_grad()
            history["step_loss"].append(float(loss) * plan.batch_size)
            losses.append(float(loss) * plan.batch_size)
            step += 1
            if plan.max_steps is not None and step >= plan.max_steps:
                history["epoch_loss"].append(float(np.mean(losses)))
                return model, history
        history["epoch_loss"].append(float(np.mean(losses)))
        snapshot = copy.deepcopy(model.state_dict())
    return model, history


def _supervised_stage(plan: TrainPlan, pairs: list, model: HacNet,
                      forward_loss, predict_val, val_pairs) -> dict:
    """Shared epoch/early-stop loop for stages 2 and 3."""
    torch.manual_seed(plan.seed)
    trainable = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.AdamW(trainable, lr=plan.base_lr,
                            weight_decay=plan.weight_decay, betas=plan.betas)
    order_rng = np.random.default_rng(plan.seed)
    history = {"step_loss": [], "epoch_loss": [], "lr": [], "val_dice": [], "aborted": False, "best_epoch": None}
    best_state, best_dice, best_epoch = None, -1.0, -1
    snapshot = copy.deepcopy(model.state_dict())
    n = len(pairs)
    for epoch in range(plan.epochs):
        lr = learning_rate(plan, epoch)
        _set_lr(opt, lr)
        history["lr"].append(lr)
        losses = []
        for j, idx in enumerate(order_rng.permutation(n)):
            loss = forward_loss(int(idx)) / plan.batch_size
            if not torch.isfinite(loss):
                model.load_state_dict(snapshot)
                history["aborted"] = True
                return history
            loss.backward()
            if (j + 1) % plan.batch_size == 0 or j == n - 1:
                opt.step()
                opt.zero_grad()
            history["step_loss"].append(float(loss) * plan.batch_size)
            losses.append(float(loss) * plan.batch_size)
        history["epoch_loss"].append(float(np.mean(losses)))
        snapshot = copy.deepcopy(model.state_dict())
        if val_pairs:
            score = predict_val()
            history["val_dice"].append(score)
            if score > best_dice:
                best_dice, best_epoch, best_state = score, epoch, copy.deepcopy(model.state_dict())
            elif epoch - best_epoch >= plan.patience:
                break
    if best_state is not None:
        model.load_state_dict(best_state)
        history["best_epoch"] = best_epoch
    return history


def make_topology_targets(pairs: list, min_path_px: float) -> list[BinaryMask]:
    """Stage-2 targets: pruned, re-thickened annotations."""
    return [prune_targets(gt, min_path_px) for _, gt in pairs]


def run_stage2(plan: TrainPlan, pairs: list, cfg: HacConfig, model: HacNet,
               val_pairs: list | None = None) -> tuple[HacNet, dict]:
    """Topology learning: optimize the attention backbone against pruned
    targets; the U-Net stays outside the computation graph entirely."""
    if plan.stage != 2:
        raise ConfigError("plan stage must be 2")
    if not pairs:
        raise DataError("empty training set")
    if val_pairs is None:
        pairs, val_pairs = _holdout(pairs, plan)
    w = plan.effective_weights()
    targets = make_topology_targets(pairs, plan.min_path_px)
    xs = [image_tensor(img) for img, _ in pairs]
    ys = [mask_tensor(m) for m in targets]
    val_x = [image_tensor(img) for img, _ in val_pairs]
    val_y = [prune_targets(gt, plan.min_path_px).data for _, gt in val_pairs]

    model.refiner.requires_grad_(False)
    model.backbone.requires_grad_(True)

    def forward_loss(idx: int):
        model.backbone.train()
        pa = model.forward_prior(xs[idx])
        return stage2_loss(pa, ys[idx], w, iters=plan.soft_skel_iters)

    def predict_val() -> float:
        model.eval()
        with torch.no_grad():
            preds = [model.forward_prior(x)[0, 0].numpy() for x in val_x]
        return _mean_dice(preds, [v.astype(np.float32) for v in val_y])

    history = _supervised_stage(plan, pairs, model, forward_loss, predict_val, val_pairs)
    model.refiner.requires_grad_(True)
    history["val_frames"] = len(val_pairs)
    return model, history


def run_stage3(plan: TrainPlan, pairs: list, cfg: HacConfig, model: HacNet,
               val_pairs: list | None = None) -> tuple[HacNet, dict]:
    """Refinement: attention backbone frozen at its previous optimum (in
    evaluation mode, so not even normalization statistics move); the U-Net
    learns the residual against the full annotations."""
    if plan.stage != 3:
        raise ConfigError("plan stage must be 3")
    if not pairs:
        raise DataError("empty training set")
    if val_pairs is None:
        pairs, val_pairs = _holdout(pairs, plan)
    w = plan.effective_weights()
    xs = [image_tensor(img) for img, _ in pairs]
    ys = [mask_tensor(gt) for _, gt in pairs]
    val_x = [image_tensor(img) for img, _ in val_pairs]
    val_y = [gt.data for _, gt in val_pairs]

    model.backbone.requires_grad_(False)
    model.backbone.eval()
    priors = []
    with torch.no_grad():
        for x in xs:
            priors.append(model.forward_prior(x))
        val_priors = [model.forward_prior(x) for x in val_x]

    def forward_loss(idx: int):
        model.refiner.train()
        model.backbone.eval()
        pu = model.refiner(torch.cat([xs[idx], priors[idx]], dim=1))
        return stage3_loss(fuse(priors[idx], pu), ys[idx], w, iters=plan.soft_skel_iters)

    def predict_val() -> float:
        model.refiner.eval()
        preds = []
        with torch.no_grad():
            for x, pa in zip(val_x, val_priors):
                pu = model.refiner(torch.cat([x, pa], dim=1))
                preds.append(fuse(pa, pu)[0, 0].numpy())
        return _mean_dice(preds, [v.astype(np.float32) for v in val_y])

    history = _supervised_stage(plan, pairs, model, forward_loss, predict_val, val_pairs)
    model.backbone.requires_grad_(True)
    history["val_frames"] = len(val_pairs)
    return model, history


def predict(model: HacNet, img: RasterImage):
    """Deterministic inference: (prior, residual, fused) probability maps."""
    model.eval()
    with torch.no_grad():
        pa, pu, phac = model(image_tensor(img))
    return prob_map(pa), prob_map(pu), prob_map(phac)
