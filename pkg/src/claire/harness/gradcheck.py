"""Central finite-difference checks of autograd gradients at float64.

Loss gradients are compared element by element on the logits. Module
parameter gradients are compared along random unit directions per parameter
tensor, which keeps the check cheap while touching every parameter.
Comparisons whose scale is below ``floor`` are skipped. When a directional
check disagrees at the base step, it is repeated at step/10 and step/100:
a ReLU or max-pool kink within one step of the base point corrupts the
difference quotient, while a genuine gradient error persists at every step.
"""

from __future__ import annotations

import numpy as np
import torch

from ..cmaf import CMAF
from ..errors import ConfigError
from ..losses import FAMILIES, LossConfig, class_weights_inverse_frequency, compute_loss
from ..model import ClaireNet, ModelConfig
from ..network import EncoderConfig

STEP = 1e-5
FLOOR = 1e-8
COMPONENTS = ("losses", "cmaf", "network")


def relative_error(analytic: float, numeric: float, floor: float = FLOOR) -> float | None:
    scale = max(abs(analytic), abs(numeric))
    if scale < floor:
        return None
    return abs(analytic - numeric) / scale


def numeric_gradient(f, x: np.ndarray, step: float = STEP) -> np.ndarray:
    """Central differences of scalar ``f`` at every element of ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f(x)
        flat[i] = orig - step
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * step)
    return g


def check_loss(cfg: LossConfig, logits: np.ndarray, labels: np.ndarray, step: float = STEP) -> float:
    y = torch.as_tensor(labels, dtype=torch.long)

    def f(x):
        with torch.no_grad():
            return float(compute_loss(torch.as_tensor(x, dtype=torch.float64), y, cfg))

    x = torch.tensor(logits, dtype=torch.float64, requires_grad=True)
    compute_loss(x, y, cfg).backward()
    analytic = x.grad.numpy().ravel()
    numeric = numeric_gradient(f, logits, step).ravel()
    errs = [relative_error(a, n) for a, n in zip(analytic, numeric)]
    errs = [e for e in errs if e is not None]
    return max(errs) if errs else 0.0


def check_losses(seed: int = 0, shape=(3, 6, 6), families=FAMILIES) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    n = shape[0]
    logits = rng.normal(0, 1.5, shape)
    labels = rng.integers(0, n, shape[1:])
    weights = class_weights_inverse_frequency(np.bincount(labels.ravel(), minlength=n)).tolist()
    return {fam: check_loss(LossConfig(family=fam, class_weights=weights), logits, labels)
            for fam in families}


def check_module(module: torch.nn.Module, objective, seed: int = 0, directions: int = 2,
                 step: float = STEP, retry_tol: float = 1e-5) -> float:
    """Worst relative error of directional derivatives over all parameter tensors.

    ``objective(module)`` must return a scalar tensor and be deterministic.
    """
    gen = torch.Generator().manual_seed(seed)
    module.zero_grad()
    objective(module).backward()
    worst = 0.0
    for p in module.parameters():
        if p.grad is None:
            continue
        grad = p.grad.detach().clone()
        for _ in range(directions):
            v = torch.randn(p.shape, generator=gen, dtype=p.dtype)
            v /= v.norm()
            analytic = float((grad * v).sum())
            for h in (step, step / 10, step / 100):
                err = relative_error(analytic, _directional(module, objective, p, v, h))
                if err is None or err < retry_tol:
                    break
            if err is not None:
                worst = max(worst, err)
    return worst


@torch.no_grad()
def _directional(module, objective, p, v, h):
    saved = p.detach().clone()
    p.add_(h * v)
    fp = float(objective(module))
    p.copy_(saved)
    p.sub_(h * v)
    fm = float(objective(module))
    p.copy_(saved)
    return (fp - fm) / (2 * h)


def _linear_probe(shape, gen):
    return torch.randn(shape, generator=gen, dtype=torch.float64)


def check_cmaf(seed: int = 0, shape=(2, 8, 4, 4)) -> float:
    torch.manual_seed(seed)
    gen = torch.Generator().manual_seed(seed + 1)
    b, c, h, w = shape
    module = CMAF(c).double().train()
    f_o = torch.randn(shape, generator=gen, dtype=torch.float64)
    f_s = torch.randn(shape, generator=gen, dtype=torch.float64)
    wf = _linear_probe(shape, gen)
    wg = _linear_probe((b, 2, h, w), gen)

    def objective(m):
        fused, gates, _ = m(f_o, f_s)
        return (fused * wf).sum() + (gates * wg).sum()

    return check_module(module, objective, seed)


def check_network(seed: int = 0, shape=(2, 4, 8, 8), num_classes: int = 3) -> float:
    """Two-stage miniature network; dropout off, batch-norm in training mode."""
    torch.manual_seed(seed)
    gen = torch.Generator().manual_seed(seed + 1)
    b, _, h, w = shape
    cfg = ModelConfig(num_classes=num_classes,
                      encoder=EncoderConfig(stage_channels=[4, 8], se_reduction=4, dropout_rate=0.0))
    module = ClaireNet(cfg).double().train()
    optical = torch.randn(shape, generator=gen, dtype=torch.float64)
    sar = torch.randn((b, 2, h, w), generator=gen, dtype=torch.float64)
    probe = _linear_probe((b, num_classes, h, w), gen)

    def objective(m):
        return (m(optical, sar) * probe).sum()

    return check_module(module, objective, seed)


def grad_check(component: str, seed: int = 0) -> float:
    """Worst relative error for ``component`` in {"losses", "cmaf", "network"}."""
    if component == "losses":
        return max(check_losses(seed).values())
    if component == "cmaf":
        return check_cmaf(seed)
    if component == "network":
        return check_network(seed)
    raise ConfigError(f"unknown gradcheck component {component!r}; expected one of {COMPONENTS}")
