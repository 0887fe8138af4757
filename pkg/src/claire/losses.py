"""Class-imbalance losses: (weighted) cross-entropy and focal, Dice, Tversky,
generalized Dice, additive focal + Tversky, and the rare-instance
focal-Tversky (RIFT) loss.

Logits are ``(N, H, W)`` or ``(B, N, H, W)``; the class axis is always ``-3``.
Soft counts for the overlap losses are summed over every pixel of the batch.
All losses are differentiable through autograd; :func:`loss_and_grad` exposes
the value together with the gradient with respect to the logits.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ConfigError, InvalidInputError

CE = "ce"
WEIGHTED_CE = "weighted_ce"
FOCAL = "focal"
WEIGHTED_FOCAL = "weighted_focal"
DICE = "dice"
TVERSKY = "tversky"
GENERALIZED_DICE = "generalized_dice"
FOCAL_PLUS_TVERSKY = "focal_plus_tversky"
RIFT = "rift"
FAMILIES = (CE, WEIGHTED_CE, FOCAL, WEIGHTED_FOCAL, DICE, TVERSKY, GENERALIZED_DICE,
            FOCAL_PLUS_TVERSKY, RIFT)
WEIGHTED_FAMILIES = (WEIGHTED_CE, WEIGHTED_FOCAL, FOCAL_PLUS_TVERSKY)

_ALIASES = {
    "crossentropy": CE, "cross_entropy": CE, "weightedce": WEIGHTED_CE,
    "weightedfocal": WEIGHTED_FOCAL, "generalizeddice": GENERALIZED_DICE,
    "focalplustversky": FOCAL_PLUS_TVERSKY, "focal+tversky": FOCAL_PLUS_TVERSKY,
    "combo": FOCAL_PLUS_TVERSKY,
}


def canonical_family(name: str) -> str:
    key = name.strip().lower().replace("-", "_")
    key = _ALIASES.get(key.replace("_", ""), _ALIASES.get(key, key))
    if key not in FAMILIES:
        raise ConfigError(f"unknown loss family {name!r}; expected one of {FAMILIES}")
    return key


@dataclass
class LossConfig:
    family: str = RIFT
    alpha: float = 0.3
    beta: float = 0.7
    gamma: float | None = None  # None -> 0.75 for RIFT, 2 for the focal family
    eps: float = 1e-6
    class_weights: list[float] | None = None
    allow_gamma_above_one: bool = False

    def __post_init__(self):
        self.family = canonical_family(self.family)
        if self.alpha <= 0 or self.beta <= 0:
            raise ConfigError("alpha and beta must be positive")
        if self.gamma is not None and self.gamma <= 0 and self.family != CE:
            raise ConfigError(f"gamma must be positive, got {self.gamma}")
        if self.eps <= 0:
            raise ConfigError("eps must be positive")
        if self.class_weights is not None:
            self.class_weights = [float(w) for w in self.class_weights]

    @property
    def effective_gamma(self) -> float:
        if self.gamma is not None:
            return float(self.gamma)
        return 0.75 if self.family == RIFT else 2.0

    def to_dict(self) -> dict:
        return asdict(self)


# -- helpers ----------------------------------------------------------------

def class_weights_inverse_frequency(pixel_counts, eps: float = 1e-6) -> np.ndarray:
    """Weights proportional to ``1 / frequency``, normalized to sum to one.

    Classes with zero pixels get the frequency floor ``eps``.
    """
    counts = np.asarray(pixel_counts, dtype=np.float64)
    total = counts.sum()
    if counts.ndim != 1 or total <= 0:
        raise ConfigError("pixel counts must be a 1-D vector with a positive total")
    freq = np.maximum(counts / total, eps)
    inv = 1.0 / freq
    return inv / inv.sum()


def _batched(x: torch.Tensor) -> torch.Tensor:
    return x[None] if x.dim() == 3 else x


def validate_labels(labels: torch.Tensor, num_classes: int) -> None:
    bad = (labels < 0) | (labels >= num_classes)
    if bool(bad.any()):
        flat = int(torch.nonzero(bad.reshape(-1))[0])
        index = np.unravel_index(flat, tuple(labels.shape))
        value = int(labels.reshape(-1)[flat])
        raise InvalidInputError(f"label {value} at pixel {tuple(int(i) for i in index)} "
                                f"is outside [0, {num_classes - 1}]")


def one_hot(labels: torch.Tensor, num_classes: int, dtype=torch.float64) -> torch.Tensor:
    """``(.., H, W)`` integer labels -> ``(.., N, H, W)`` one-hot tensor."""
    validate_labels(labels, num_classes)
    return F.one_hot(labels.long(), num_classes).movedim(-1, -3).to(dtype)


def soft_prediction(logits: torch.Tensor, labels: torch.Tensor):
    """Softmax probabilities and one-hot targets, both ``(B, N, H, W)``."""
    validate_labels(labels, logits.shape[-3])
    logits = _batched(logits)
    labels = labels[None] if labels.dim() == 2 else labels
    return torch.softmax(logits, dim=1), one_hot(labels, logits.shape[1], logits.dtype)


def _pow0(x: torch.Tensor, gamma: float) -> torch.Tensor:
    """``x ** gamma`` for ``x >= 0`` with derivative 0 at ``x == 0`` when ``gamma < 1``."""
    if gamma >= 1:
        return x ** gamma
    zero = x == 0  # NaN stays NaN so the trainer can catch it
    safe = torch.where(zero, torch.ones_like(x), x)
    return torch.where(zero, torch.zeros_like(x), safe ** gamma)


def _soft_counts(probs, target):
    dims = (0, 2, 3)
    probs, target = _batched(probs), _batched(target)
    tp = (probs * target).sum(dims)
    fp = (probs * (1 - target)).sum(dims)
    fn = ((1 - probs) * target).sum(dims)
    return tp, fp, fn


# -- pixel-wise losses --------------------------------------------------------

def weighted_focal_loss(logits, labels, alpha=None, gamma: float = 2.0, eps: float = 1e-6):
    """Mean over pixels of ``-alpha_y (1 - p_y)^gamma log p_y``.

    ``log p`` is clamped below at ``log(eps)``. ``alpha=None`` means weight 1
    for every class; ``gamma=0`` recovers (weighted) cross-entropy.
    """
    if gamma < 0:
        raise ConfigError("focal gamma must be >= 0")
    validate_labels(labels, logits.shape[-3])
    logits = _batched(logits)
    labels = labels[None] if labels.dim() == 2 else labels
    n = logits.shape[1]
    idx = labels.long()[:, None]
    logp = torch.log_softmax(logits, dim=1).gather(1, idx)[:, 0]
    logp = torch.clamp(logp, min=float(np.log(eps)))
    term = -logp
    if gamma > 0:
        term = _pow0(1 - torch.exp(logp), gamma) * term
    if alpha is not None:
        a = torch.as_tensor(alpha, dtype=logits.dtype, device=logits.device)
        if a.numel() != n:
            raise ConfigError(f"{a.numel()} class weights given for {n} classes")
        term = a[labels.long()] * term
    return term.mean()


def cross_entropy_loss(logits, labels, class_weights=None, eps: float = 1e-6):
    return weighted_focal_loss(logits, labels, alpha=class_weights, gamma=0.0, eps=eps)


# -- overlap losses -----------------------------------------------------------

def tversky_index_per_class(probs, target, alpha: float = 0.3, beta: float = 0.7, eps: float = 1e-6):
    """``(TP + eps) / (TP + alpha*FP + beta*FN + eps)`` per class from soft counts."""
    tp, fp, fn = _soft_counts(probs, target)
    return (tp + eps) / (tp + alpha * fp + beta * fn + eps)


def soft_dice_per_class(probs, target, eps: float = 1e-6):
    tp, fp, fn = _soft_counts(probs, target)
    return (2 * tp + eps) / (2 * tp + fp + fn + eps)


def tversky_loss(probs, target, alpha: float = 0.3, beta: float = 0.7, eps: float = 1e-6):
    return 1 - tversky_index_per_class(probs, target, alpha, beta, eps).mean()


def dice_loss(probs, target, eps: float = 1e-6):
    return 1 - soft_dice_per_class(probs, target, eps).mean()


def generalized_dice_loss(probs, target, eps: float = 1e-6):
    probs, target = _batched(probs), _batched(target)
    dims = (0, 2, 3)
    w = 1.0 / (target.sum(dims) ** 2 + eps)
    inter = (w * (probs * target).sum(dims)).sum()
    union = (w * (probs + target).sum(dims)).sum()
    return 1 - (2 * inter + eps) / (union + eps)


def focal_tversky_index_per_class(probs, target, alpha: float = 0.3, beta: float = 0.7,
                                  gamma: float = 0.75, eps: float = 1e-6):
    """``(TP^g + eps) / (TP^g + alpha*FN^g + beta*FP^g + eps)`` where each soft
    count sums pixel terms raised to ``gamma`` individually.

    Note the roles: here ``alpha`` weights false negatives and ``beta`` false
    positives, the reverse of :func:`tversky_index_per_class`.
    """
    probs, target = _batched(probs), _batched(target)
    dims = (0, 2, 3)
    tp = _pow0(probs * target, gamma).sum(dims)
    fn = _pow0((1 - probs) * target, gamma).sum(dims)
    fp = _pow0(probs * (1 - target), gamma).sum(dims)
    return (tp + eps) / (tp + alpha * fn + beta * fp + eps)


def rift_loss(probs, target, alpha: float = 0.3, beta: float = 0.7, gamma: float = 0.75,
              eps: float = 1e-6, allow_gamma_above_one: bool = False):
    """One minus the class-mean focal-Tversky index.

    ``gamma`` must lie in (0, 1]; larger values need ``allow_gamma_above_one``.
    """
    if gamma <= 0:
        raise ConfigError(f"RIFT gamma must be positive, got {gamma}")
    if gamma > 1 and not allow_gamma_above_one:
        raise ConfigError(f"RIFT gamma {gamma} > 1 requires allow_gamma_above_one=True")
    return 1 - focal_tversky_index_per_class(probs, target, alpha, beta, gamma, eps).mean()


def focal_plus_tversky(logits, labels, cfg: LossConfig):
    """Unit-weight sum of the weighted focal and Tversky losses."""
    probs, target = soft_prediction(logits, labels)
    return (weighted_focal_loss(logits, labels, cfg.class_weights, _focal_gamma(cfg), cfg.eps)
            + tversky_loss(probs, target, cfg.alpha, cfg.beta, cfg.eps))


def _focal_gamma(cfg: LossConfig) -> float:
    return 2.0 if cfg.gamma is None else float(cfg.gamma)


# -- dispatch -----------------------------------------------------------------

def compute_loss(logits: torch.Tensor, labels: torch.Tensor, cfg: LossConfig) -> torch.Tensor:
    fam = cfg.family
    if fam in WEIGHTED_FAMILIES and fam != FOCAL_PLUS_TVERSKY and cfg.class_weights is None:
        raise ConfigError(f"loss family {fam!r} needs class_weights")
    if fam == CE:
        return cross_entropy_loss(logits, labels, eps=cfg.eps)
    if fam == WEIGHTED_CE:
        return cross_entropy_loss(logits, labels, cfg.class_weights, cfg.eps)
    if fam == FOCAL:
        return weighted_focal_loss(logits, labels, None, _focal_gamma(cfg), cfg.eps)
    if fam == WEIGHTED_FOCAL:
        return weighted_focal_loss(logits, labels, cfg.class_weights, _focal_gamma(cfg), cfg.eps)
    if fam == FOCAL_PLUS_TVERSKY:
        return focal_plus_tversky(logits, labels, cfg)
    probs, target = soft_prediction(logits, labels)
    if fam == DICE:
        return dice_loss(probs, target, cfg.eps)
    if fam == TVERSKY:
        return tversky_loss(probs, target, cfg.alpha, cfg.beta, cfg.eps)
    if fam == GENERALIZED_DICE:
        return generalized_dice_loss(probs, target, cfg.eps)
    return rift_loss(probs, target, cfg.alpha, cfg.beta, cfg.effective_gamma, cfg.eps,
                     cfg.allow_gamma_above_one)


def loss_and_grad(logits, labels, cfg: LossConfig):
    """Loss value and its gradient with respect to ``logits`` (float64)."""
    x = torch.as_tensor(np.asarray(logits), dtype=torch.float64).clone().requires_grad_(True)
    y = torch.as_tensor(np.asarray(labels), dtype=torch.long)
    loss = compute_loss(x, y, cfg)
    loss.backward()
    return float(loss.detach()), x.grad.numpy()
