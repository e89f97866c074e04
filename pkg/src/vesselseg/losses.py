"""Differentiable training losses and the per-stage composites.

All losses take torch tensors (any matching shapes) or the package's
ProbMap/BinaryMask containers and return scalar tensors; gradients come from
autograd and are verified against central finite differences in the tests.
Probabilities are clamped to [eps, 1-eps] before any log.

Empty-foreground convention: when the target has no foreground, Tversky,
Dice, and soft clDice return 1 when the prediction is nonempty and 0 when it
is empty (a constant, carrying no gradient).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import ConfigError

EPS = 1e-6


@dataclass(frozen=True)
class LossWeights:
    """Composite-loss coefficients and Tversky asymmetry parameters."""

    lambda_t: float
    lambda_cl: float
    lambda_d: float
    lambda_bce: float
    alpha: float
    beta: float

    def __post_init__(self):
        vals = (self.lambda_t, self.lambda_cl, self.lambda_d, self.lambda_bce)
        if any(not math.isfinite(v) or v < 0 for v in vals):
            raise ConfigError("loss weights must be finite and non-negative")
        if not (0.0 <= self.alpha <= 1.0 and 0.0 <= self.beta <= 1.0):
            raise ConfigError("alpha and beta must lie in [0, 1]")
        if abs(self.alpha + self.beta - 1.0) > 1e-9:
            raise ConfigError(f"alpha + beta must equal 1, got {self.alpha + self.beta}")

    @staticmethod
    def stage2_defaults() -> "LossWeights":
        return LossWeights(lambda_t=1.5, lambda_cl=0.4, lambda_d=0.2, lambda_bce=1.0, alpha=0.2, beta=0.8)

    @staticmethod
    def stage3_defaults() -> "LossWeights":
        return LossWeights(lambda_t=2.0, lambda_cl=1.5, lambda_d=0.0, lambda_bce=0.0, alpha=0.1, beta=0.9)


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x if x.is_floating_point() else x.float()
    data = getattr(x, "data", x)
    t = torch.as_tensor(data)
    return t if t.is_floating_point() else t.float()


def bce_loss(p, y) -> torch.Tensor:
    """Mean binary cross entropy between probabilities and binary targets."""
    p = _as_tensor(p).clamp(EPS, 1.0 - EPS)
    y = _as_tensor(y)
    return -(y * torch.log(p) + (1.0 - y) * torch.log(1.0 - p)).mean()


def _empty_target_limit(p: torch.Tensor) -> torch.Tensor:
    return torch.tensor(1.0 if float(p.detach().sum()) > 0 else 0.0)


def dice_loss(p, y) -> torch.Tensor:
    """1 - 2|P.Y| / (|P| + |Y|), smooth-free."""
    p, y = _as_tensor(p), _as_tensor(y)
    if float(y.sum()) == 0.0:
        return _empty_target_limit(p)
    inter = (p * y).sum()
    return 1.0 - 2.0 * inter / (p.sum() + y.sum())


def tversky_loss(p, y, alpha: float, beta: float) -> torch.Tensor:
    """Asymmetric overlap loss: false positives weighted by ``alpha``,
    false negatives by ``beta``. Equals dice_loss at alpha = beta = 0.5."""
    p, y = _as_tensor(p), _as_tensor(y)
    if float(y.sum()) == 0.0:
        return _empty_target_limit(p)
    inter = (p * y).sum()
    denom = inter + alpha * (p * (1.0 - y)).sum() + beta * ((1.0 - p) * y).sum()
    return 1.0 - inter / denom


def _soft_erode(img: torch.Tensor) -> torch.Tensor:
    p1 = -F.max_pool2d(-img, kernel_size=(3, 1), stride=1, padding=(1, 0))
    p2 = -F.max_pool2d(-img, kernel_size=(1, 3), stride=1, padding=(0, 1))
    return torch.min(p1, p2)


def _soft_dilate(img: torch.Tensor) -> torch.Tensor:
    return F.max_pool2d(img, kernel_size=3, stride=1, padding=1)


def _soft_open(img: torch.Tensor) -> torch.Tensor:
    return _soft_dilate(_soft_erode(img))


def soft_skeleton(img: torch.Tensor, iters: int) -> torch.Tensor:
    """Iterative morphological soft skeleton via min/max pooling."""
    if img.dim() == 2:
        return soft_skeleton(img[None, None], iters)[0, 0]
    skel = F.relu(img - _soft_open(img))
    for _ in range(iters):
        img = _soft_erode(img)
        delta = F.relu(img - _soft_open(img))
        skel = skel + F.relu(delta - skel * delta)
    return skel


def soft_cldice_loss(p, y, iters: int = 10, smooth: float = 1.0) -> torch.Tensor:
    """Differentiable centerline Dice loss on soft skeletons.

    ``iters`` erosion rounds must cover the structures' maximum radius;
    the default 10 covers vessels up to 10 px wide.
    """
    p, y = _as_tensor(p), _as_tensor(y)
    if float(y.sum()) == 0.0:
        return _empty_target_limit(p)
    if p.dim() == 2:
        p, y = p[None, None], y[None, None]
    elif p.dim() == 3:
        p, y = p[:, None], y[:, None]
    skel_p = soft_skeleton(p, iters)
    skel_y = soft_skeleton(y, iters)
    tprec = ((skel_p * y).sum() + smooth) / (skel_p.sum() + smooth)
    tsens = ((skel_y * p).sum() + smooth) / (skel_y.sum() + smooth)
    return 1.0 - 2.0 * tprec * tsens / (tprec + tsens)


def stage1_loss(recon, target, fov=None) -> torch.Tensor:
    """Reconstruction objective: mean squared error over FOV pixels."""
    recon, target = _as_tensor(recon), _as_tensor(target)
    err = (recon - target) ** 2
    if fov is None:
        return err.mean()
    sel = _as_tensor(fov).bool()
    sel = sel.expand_as(err) if sel.shape != err.shape else sel
    return err[sel].mean()


def stage2_loss(pa, mstar, w: LossWeights | None = None, iters: int = 10) -> torch.Tensor:
    """Topology-learning composite: BCE + Dice + clDice + Tversky."""
    w = w or LossWeights.stage2_defaults()
    if w.lambda_bce <= 0.0:
        raise ConfigError("stage-2 weights need a positive BCE coefficient")
    return (w.lambda_bce * bce_loss(pa, mstar)
            + w.lambda_d * dice_loss(pa, mstar)
            + w.lambda_cl * soft_cldice_loss(pa, mstar, iters=iters)
            + w.lambda_t * tversky_loss(pa, mstar, w.alpha, w.beta))


def stage3_loss(phac, g, w: LossWeights | None = None, iters: int = 10) -> torch.Tensor:
    """Refinement composite: clDice + Tversky against the full annotation."""
    w = w or LossWeights.stage3_defaults()
    if w.lambda_bce != 0.0 or w.lambda_d != 0.0:
        raise ConfigError("stage-3 weights use only the clDice and Tversky terms")
    return (w.lambda_cl * soft_cldice_loss(phac, g, iters=iters)
            + w.lambda_t * tversky_loss(phac, g, w.alpha, w.beta))


def loss_gradient(loss_fn, p: torch.Tensor, *args, **kwargs) -> tuple[float, torch.Tensor]:
    """Evaluate a loss and its gradient with respect to ``p``."""
    q = p.detach().clone().requires_grad_(True)
    value = loss_fn(q, *args, **kwargs)
    value.backward()
    return float(value.detach()), q.grad.detach().clone()
