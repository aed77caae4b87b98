"""Training objectives: weighted masked reconstruction, the adversarial
real/fake log-likelihood pair, and their weighted combination.

All losses return the scalar value together with the analytic gradient with
respect to their direct input, so callers chain them through the networks.
"""

from dataclasses import dataclass

import numpy as np

PROB_CLAMP = 1e-7


@dataclass
class LossValue:
    value: float
    grad: np.ndarray  # d(value) / d(prediction), same shape as the prediction


@dataclass
class DiscriminatorLoss:
    value: float
    grad_real: np.ndarray
    grad_fake: np.ndarray


def reconstruction_loss(pred: np.ndarray, target: np.ndarray, weights: np.ndarray,
                        norm: str = "l2") -> LossValue:
    """Weighted masked distance, normalized by channels times the number of
    weighted pixels so values are comparable across mask sizes.

    ``weights`` is (N or 1, 1, H, W) and broadcasts over channels; pixels with
    zero weight contribute nothing to the value or the gradient.
    """
    if pred.shape != target.shape:
        raise ValueError(f"prediction {pred.shape} vs target {target.shape}")
    if norm not in ("l1", "l2"):
        raise ValueError(f"norm must be 'l1' or 'l2', got {norm!r}")
    n, c = pred.shape[:2]
    w = np.broadcast_to(weights, (n, 1) + pred.shape[2:])
    count = int(np.count_nonzero(w))
    if count == 0:
        raise ValueError("weight map is identically zero")
    normalizer = float(count * c)
    diff = pred - target
    if norm == "l2":
        value = float(np.sum(w * diff * diff) / normalizer)
        grad = 2.0 * w * diff / normalizer
    else:
        value = float(np.sum(w * np.abs(diff)) / normalizer)
        grad = w * np.sign(diff) / normalizer
    return LossValue(value, grad)


def _clamped_log(p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    clamped = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return np.log(clamped), clamped


def discriminator_loss(d_real: np.ndarray, d_fake: np.ndarray) -> DiscriminatorLoss:
    """Negated logistic likelihood for real-vs-predicted classification:
    -mean(log d_real) - mean(log(1 - d_fake)), minimized by the discriminator.

    Gradients are zero where clamping is active (probabilities outside
    [1e-7, 1-1e-7]), which bounds the loss for a saturated discriminator.
    """
    log_r, clamp_r = _clamped_log(d_real)
    log_if, clamp_f = _clamped_log(1.0 - d_fake)
    value = float(-log_r.mean() - log_if.mean())
    grad_real = np.where(d_real == clamp_r, -1.0 / (clamp_r * d_real.size), 0.0)
    grad_fake = np.where(1.0 - d_fake == clamp_f, 1.0 / (clamp_f * d_fake.size), 0.0)
    return DiscriminatorLoss(value, grad_real, grad_fake)


def generator_adv_loss(d_fake: np.ndarray) -> LossValue:
    """Non-saturating generator objective -mean(log d_fake): pushing the
    discriminator's output on predictions toward "real"."""
    log_f, clamp_f = _clamped_log(d_fake)
    value = float(-log_f.mean())
    grad = np.where(d_fake == clamp_f, -1.0 / (clamp_f * d_fake.size), 0.0)
    return LossValue(value, grad)


def joint_loss(rec: LossValue, adv: LossValue, lambda_rec: float, lambda_adv: float) -> LossValue:
    """Linear combination of reconstruction and adversarial terms; both grads
    must already be with respect to the same prediction tensor."""
    if lambda_rec < 0 or lambda_adv < 0:
        raise ValueError("loss weights must be non-negative")
    if rec.grad.shape != adv.grad.shape:
        raise ValueError(f"gradient shapes differ: {rec.grad.shape} vs {adv.grad.shape}")
    return LossValue(lambda_rec * rec.value + lambda_adv * adv.value,
                     lambda_rec * rec.grad + lambda_adv * adv.grad)
