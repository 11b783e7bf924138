"""Adam + cosine-decay training loops for masked reconstruction and the
contrastive continuation.

Randomness is keyed, never streamed across steps: the epoch shuffle comes from
``(seed, epoch)``, training masks from ``(seed, step)``, positive-pair noise
from a separate ``(seed, step)`` stream, and validation masks/noise from each
record's own seed. Two runs with equal inputs therefore produce identical
parameters, and a contrastive run with ``alpha = 1`` sees exactly the masks a
reconstruction-only continuation would.
"""

from __future__ import annotations

import logging
import math
import os
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, TextIO

import numpy as np

from . import numerics as nx
from .chansynth import ChannelDataset
from .model import Checkpoint, ModelConfig, as_leaves, forward, init_params, save_checkpoint, warm_start
from .objectives import LossConfig, combined_loss, infonce_loss, make_positive, masked_mse
from .patchpipe import MaskPattern, sample_mask, tokens

log = logging.getLogger(__name__)

_MASK_STREAM = 0x6D61736B
_NOISE_STREAM = 0x6E6F6973
_VAL_STREAM = 0x76616C69


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 3000
    batch_size: int = 3072
    lr_max: float = 3e-4
    lr_min: float = 3e-6
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    mask_ratio: float = 0.6
    checkpoint_every: int = 0
    dtype: str = "float64"

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not 0.0 < self.mask_ratio < 1.0:
            raise ValueError(f"training mask ratio must be in (0, 1), got {self.mask_ratio}")
        if self.dtype not in ("float64", "float32"):
            raise ValueError(f"dtype must be float64 or float32, got {self.dtype}")
        if self.lr_max <= 0 or self.lr_min < 0:
            raise ValueError("learning rates must be positive")


def cosine_lr(t: int, T: int, lr_max: float, lr_min: float) -> float:
    if T < 1 or not 0 <= t <= T:
        raise ValueError(f"need 0 <= t <= T and T >= 1, got t={t}, T={T}")
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * t / T))


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros(cls, params: Mapping[str, np.ndarray]) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray],
              state: AdamState, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """Bias-corrected Adam update, in place."""
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise nx.NumericError(f"non-finite gradient for parameter {k}")
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for k, p in params.items():
        g = grads[k]
        m, v = state.m[k], state.v[k]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


# ---------------------------------------------------------------------------
# data preparation
# ---------------------------------------------------------------------------

@dataclass
class TokenSet:
    """Normalized low-band tokens for a dataset, plus record seeds."""

    tok: np.ndarray            # (n, 2K, d_p)
    h: np.ndarray              # (n, Ns, Nf) normalized complex
    seeds: np.ndarray

    def __len__(self) -> int:
        return len(self.seeds)


def prepare(ds: ChannelDataset, cfg: ModelConfig, std: float, dtype=np.float64) -> TokenSet:
    h = ds.h_low / std
    return TokenSet(tokens(h, cfg.patch).astype(dtype), h, np.asarray(ds.seeds))


def batches(n: int, batch_size: int, rng: np.random.Generator | None) -> list[np.ndarray]:
    """Shuffled index batches covering all ``n`` records; the last may be short."""
    order = rng.permutation(n) if rng is not None else np.arange(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _step_masks(seed: int, step: int, count: int, K: int, ratio: float) -> list[MaskPattern]:
    rng = np.random.default_rng([seed, _MASK_STREAM, step])
    return [sample_mask(K, ratio, rng) for _ in range(count)]


def _record_rng(seed: int, record_seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream, int(record_seed)])


def validation_masks(data: TokenSet, K: int, ratio: float, seed: int) -> list[MaskPattern]:
    return [sample_mask(K, ratio, _record_rng(seed, s, _VAL_STREAM)) for s in data.seeds]


def positives_for(h: np.ndarray, snr: tuple[float, float], rngs) -> np.ndarray:
    return np.stack([make_positive(hi, snr, r)[0] for hi, r in zip(h, rngs)])


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def evaluate(params: Mapping[str, np.ndarray], cfg: ModelConfig, data: TokenSet,
             mask_ratio: float, seed: int, batch_size: int = 256,
             loss_cfg: LossConfig | None = None) -> tuple[float, float | None]:
    """Validation reconstruction (and contrastive) loss without parameter updates.

    Masks and noise depend only on ``seed`` and each record's seed.
    """
    if len(data) == 0:
        return float("nan"), None
    P = as_leaves(params, trainable=False)
    masks = validation_masks(data, cfg.K, mask_ratio, seed)
    contrast = loss_cfg is not None and cfg.contrastive and len(data) >= 2
    idx_batches = batches(len(data), batch_size, None)
    if contrast and len(idx_batches) > 1 and len(idx_batches[-1]) < 2:
        idx_batches[-2] = np.concatenate(idx_batches[-2:])
        idx_batches.pop()
    recon_sum, contra_sum = 0.0, 0.0
    for ix in idx_batches:
        bm = [masks[i] for i in ix]
        out = forward(data.tok[ix], bm, P, cfg, contrast=contrast)
        recon_sum += float(masked_mse(out.p_pred, data.tok[ix], bm).data) * len(ix)
        if contrast:
            rngs = [_record_rng(seed, s, _NOISE_STREAM) for s in data.seeds[ix]]
            hp = positives_for(data.h[ix], (loss_cfg.snr_low, loss_cfg.snr_high), rngs)
            tp = tokens(hp, cfg.patch).astype(data.tok.dtype)
            zp = forward(tp, bm, P, cfg, reconstruct=False, contrast=True).z_c
            contra_sum += float(infonce_loss(out.z_c, zp, loss_cfg.temperature).data) * len(ix)
    n = len(data)
    return recon_sum / n, (contra_sum / n if contrast else None)


def pair_similarity(ckpt: Checkpoint, ds: ChannelDataset, mask_ratio: float, seed: int,
                    loss_cfg: LossConfig, batch_size: int = 256) -> tuple[float, float]:
    """Mean cosine similarity of positive pairs and of distinct anchors.

    Each record is masked and noised exactly as in validation, with one mask
    shared by the anchor and its positive.
    """
    if not ckpt.has_head:
        raise ValueError("checkpoint has no contrastive head")
    cfg = ckpt.config
    data = prepare(ds, cfg, ckpt.normalization_std, ckpt.params["embed.w"].dtype)
    if len(data) < 2:
        raise ValueError("need at least two records")
    P = as_leaves(ckpt.params, trainable=False)
    masks = validation_masks(data, cfg.K, mask_ratio, seed)
    za, zp = [], []
    for ix in batches(len(data), batch_size, None):
        bm = [masks[i] for i in ix]
        za.append(forward(data.tok[ix], bm, P, cfg, reconstruct=False, contrast=True).z_c.data)
        rngs = [_record_rng(seed, s, _NOISE_STREAM) for s in data.seeds[ix]]
        hp = positives_for(data.h[ix], (loss_cfg.snr_low, loss_cfg.snr_high), rngs)
        tp = tokens(hp, cfg.patch).astype(data.tok.dtype)
        zp.append(forward(tp, bm, P, cfg, reconstruct=False, contrast=True).z_c.data)
    za, zp = np.concatenate(za).astype(np.float64), np.concatenate(zp).astype(np.float64)
    pos = float(np.mean(np.sum(za * zp, axis=1)))
    gram = za @ za.T
    n = len(za)
    neg = float((gram.sum() - np.trace(gram)) / (n * (n - 1)))
    return pos, neg


# ---------------------------------------------------------------------------
# training loops
# ---------------------------------------------------------------------------

@dataclass
class EpochLog:
    epoch: int
    step: int
    lr: float
    train_recon: float | None
    train_contra: float | None
    val_recon: float | None
    val_contra: float | None
    wall_seconds: float

    def line(self) -> str:
        def f(x):
            return "-" if x is None else repr(float(x))
        return "\t".join([str(self.epoch), str(self.step), repr(float(self.lr)),
                          f(self.train_recon), f(self.train_contra),
                          f(self.val_recon), f(self.val_contra), f"{self.wall_seconds:.3f}"])


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[EpochLog] = field(default_factory=list)


def _run(params: dict[str, np.ndarray], cfg: ModelConfig, std: float,
         train: ChannelDataset, val: ChannelDataset | None, tc: TrainConfig,
         loss_cfg: LossConfig | None, out_path: str | os.PathLike | None,
         log_stream: TextIO | None, extra: dict[str, str],
         callback: Callable[[int, float], None] | None) -> TrainResult:
    dtype = np.dtype(tc.dtype)
    params = {k: v.astype(dtype, copy=True) for k, v in params.items()}
    tr = prepare(train, cfg, std, dtype)
    va = prepare(val, cfg, std, dtype) if val is not None and len(val) else None
    contrastive = loss_cfg is not None
    snr = (loss_cfg.snr_low, loss_cfg.snr_high) if contrastive else None
    steps_per_epoch = math.ceil(len(tr) / tc.batch_size)
    total = tc.epochs * steps_per_epoch
    state = AdamState.zeros(params)
    history: list[EpochLog] = []
    t0 = time.perf_counter()

    def ckpt() -> Checkpoint:
        return Checkpoint(cfg, {k: v.copy() for k, v in params.items()}, std, dict(extra))

    def emit(entry: EpochLog):
        history.append(entry)
        if log_stream is not None:
            log_stream.write(entry.line() + "\n")
            log_stream.flush()
        log.info("epoch %d step %d train %s val %s", entry.epoch, entry.step,
                 entry.train_recon, entry.val_recon)

    def validate():
        if va is None:
            return None, None
        return evaluate(params, cfg, va, tc.mask_ratio, tc.seed, max(tc.batch_size, 2),
                        loss_cfg if contrastive else None)

    vr, vc = validate()
    emit(EpochLog(0, 0, cosine_lr(0, total, tc.lr_max, tc.lr_min), None, None, vr, vc,
                  time.perf_counter() - t0))
    step = 0
    for epoch in range(1, tc.epochs + 1):
        shuffle = np.random.default_rng([tc.seed, epoch])
        rsum, csum, seen = 0.0, 0.0, 0
        for ix in batches(len(tr), tc.batch_size, shuffle):
            lr = cosine_lr(step, total, tc.lr_max, tc.lr_min)
            masks = _step_masks(tc.seed, step, len(ix), cfg.K, tc.mask_ratio)
            P = as_leaves(params)
            use_contra = contrastive and len(ix) >= 2
            out = forward(tr.tok[ix], masks, P, cfg, contrast=use_contra)
            recon = masked_mse(out.p_pred, tr.tok[ix], masks)
            loss = recon
            if use_contra:
                noise = np.random.default_rng([tc.seed, _NOISE_STREAM, step])
                hp = positives_for(tr.h[ix], snr, [noise] * len(ix))
                zp = forward(tokens(hp, cfg.patch).astype(dtype), masks, P, cfg,
                             reconstruct=False, contrast=True).z_c
                contra = infonce_loss(out.z_c, zp, loss_cfg.temperature)
                loss = combined_loss(recon, contra, loss_cfg.alpha)
                csum += float(contra.data) * len(ix)
            if not np.isfinite(loss.data):
                raise nx.NumericError(f"non-finite loss at step {step}")
            grads = nx.backward(loss, P)
            adam_step(params, grads, state, lr, tc.beta1, tc.beta2, tc.eps)
            rsum += float(recon.data) * len(ix)
            seen += len(ix)
            step += 1
            if callback is not None:
                callback(step, float(loss.data))
        vr, vc = validate()
        emit(EpochLog(epoch, step, cosine_lr(step, total, tc.lr_max, tc.lr_min),
                      rsum / seen, csum / seen if contrastive else None, vr, vc,
                      time.perf_counter() - t0))
        if out_path is not None and tc.checkpoint_every and epoch % tc.checkpoint_every == 0:
            save_checkpoint(ckpt(), out_path)
    result = TrainResult(ckpt(), history)
    if out_path is not None:
        save_checkpoint(result.checkpoint, out_path)
    return result


def pretrain_wimae(train: ChannelDataset, val: ChannelDataset | None, cfg: ModelConfig,
                   tc: TrainConfig, out_path=None, log_stream: TextIO | None = None,
                   init: Checkpoint | None = None, callback=None) -> TrainResult:
    """Masked-reconstruction pretraining; ``init`` continues from a checkpoint."""
    if cfg.contrastive:
        cfg = cfg.replace(contrastive=False)
    if init is not None:
        params = {k: v for k, v in init.params.items() if not k.startswith("head.")}
        cfg = init.config.replace(contrastive=False)
        std = init.normalization_std
    else:
        params = init_params(cfg, np.random.default_rng([tc.seed, 0x1417]))
        std = train.normalization_std
    return _run(params, cfg, std, train, val, tc, None, out_path, log_stream,
                {"train.kind": "wimae", "train.seed": str(tc.seed)}, callback)


def pretrain_contra(train: ChannelDataset, val: ChannelDataset | None, init: Checkpoint,
                    tc: TrainConfig, loss_cfg: LossConfig, d_c: int | None = None,
                    out_path=None, log_stream: TextIO | None = None,
                    callback=None) -> TrainResult:
    """Warm-started reconstruction + contrastive continuation."""
    start = warm_start(init, tc.seed, d_c)
    return _run(start.params, start.config, start.normalization_std, train, val, tc,
                loss_cfg, out_path, log_stream,
                {"train.kind": "contrawimae", "train.seed": str(tc.seed),
                 "loss.alpha": repr(loss_cfg.alpha),
                 "loss.temperature": repr(loss_cfg.temperature)}, callback)
