"""Masked reconstruction loss, InfoNCE, their weighted combination, and AWGN positives."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import Tensor
from .patchpipe import MaskPattern, PatchConfig, tokens


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.9
    temperature: float = 0.1
    snr_low: float = 20.0
    snr_high: float = 30.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if self.snr_low > self.snr_high:
            raise ValueError("snr_low must not exceed snr_high")


def masked_token_weights(masks: list[MaskPattern]) -> np.ndarray:
    """(B, 2K) array: 1 on tokens of masked patches, 0 on visible ones."""
    return np.stack([np.concatenate([~m.visible, ~m.visible]) for m in masks]).astype(float)


def masked_mse(p_pred: Tensor, target: np.ndarray, masks: list[MaskPattern]) -> Tensor:
    """Mean squared error over masked real-valued entries, averaged over the batch.

    ``p_pred`` and ``target`` are token tensors of shape (B, 2K, d_p). Each
    sample contributes ``||masked diff||^2 / (2 d_p (K - N_v))``.
    """
    w = masked_token_weights(masks)
    n_masked = w.sum(axis=1)
    if np.any(n_masked == 0):
        raise ValueError("reconstruction loss needs at least one masked patch per sample")
    d_p = target.shape[-1]
    # per-token weight folds the per-sample normalizer and the batch mean
    scale = w / (n_masked[:, None] * d_p * len(masks))
    diff = nx.sub(p_pred, target.astype(p_pred.data.dtype, copy=False))
    return nx.sum(nx.mul(nx.square(diff), scale[:, :, None].astype(p_pred.data.dtype)))


def recon_loss(h_true: np.ndarray, h_pred: np.ndarray, mask: MaskPattern,
               pc: PatchConfig) -> float:
    """Masked-region MSE between two complex channel matrices."""
    if h_true.shape != h_pred.shape:
        raise ValueError(f"shape mismatch {h_true.shape} vs {h_pred.shape}")
    n_masked = mask.K - mask.visible_count
    if n_masked == 0:
        raise ValueError("reconstruction loss needs at least one masked patch")
    d = tokens(h_true, pc) - tokens(h_pred, pc)
    sel = mask.masked_token_index
    return float(np.sum(d[sel] ** 2) / (2 * pc.d_p * n_masked))


def make_positive(h: np.ndarray, snr_range: tuple[float, float],
                  rng: np.random.Generator) -> tuple[np.ndarray, float]:
    """AWGN copy of ``h`` at an SNR drawn uniformly (dB) from ``snr_range``.

    Returns the noisy channel and the per-complex-element noise variance.
    """
    power = float(np.mean(np.abs(h) ** 2))
    if power == 0.0:
        raise ValueError("cannot build a positive pair from an all-zero channel")
    lo, hi = snr_range
    snr_db = lo if lo == hi else rng.uniform(lo, hi)
    if np.isinf(snr_db):
        return h.copy(), 0.0
    sigma2 = power / 10.0 ** (snr_db / 10.0)
    noise = rng.standard_normal(h.shape) + 1j * rng.standard_normal(h.shape)
    return h + np.sqrt(sigma2 / 2.0) * noise, sigma2


def infonce_loss(anchors: Tensor, positives: Tensor, temperature: float) -> Tensor:
    """Contrastive loss with other anchors in the denominator.

    ``mean_i [ -z_i.z_i+ / t + log sum_{j != i} exp(z_i.z_j / t) ]``; the
    positive term is not part of the denominator, so the loss can be negative.
    """
    B = anchors.shape[0]
    if B < 2:
        raise ValueError("InfoNCE needs a batch of at least 2")
    inv_t = 1.0 / temperature
    pos = nx.sum(nx.mul(anchors, positives), axis=1)
    sims = nx.mul(nx.matmul(anchors, nx.swapaxes(anchors, 0, 1)), inv_t)
    neg = nx.logsumexp(sims, exclude=np.eye(B, dtype=bool))
    return nx.mean(nx.sub(neg, nx.mul(pos, inv_t)))


def infonce_reference(anchors: np.ndarray, positives: np.ndarray, temperature: float) -> float:
    """Direct evaluation without stabilization, for cross-checking."""
    B = len(anchors)
    total = 0.0
    for i in range(B):
        num = np.exp(anchors[i] @ positives[i] / temperature)
        den = sum(np.exp(anchors[i] @ anchors[j] / temperature) for j in range(B) if j != i)
        total += -np.log(num / den)
    return total / B


def combined_loss(recon, contra, alpha: float):
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    if isinstance(recon, Tensor) or isinstance(contra, Tensor):
        return nx.add(nx.mul(recon, alpha), nx.mul(contra, 1.0 - alpha))
    return alpha * recon + (1.0 - alpha) * contra
