"""Frozen-encoder evaluation: beam-selection labels, LoS detection, linear probes and metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .chansynth import ChannelDataset, split_indices
from .model import Checkpoint, as_leaves, embed, encoder_forward
from .patchpipe import tokens
from .trainer import AdamState, adam_step

CODEBOOK_SIZES = (16, 32, 64, 128, 256)
BUDGETS = (0.01, 0.02, 0.05, 0.10, 0.25, 0.50, 1.00)
PROBE_SPLITS = (0.7, 0.2, 0.1)


@dataclass(frozen=True)
class Codebook:
    beams: np.ndarray  # (CS, Ns) complex, unit-norm rows
    sin_angles: np.ndarray

    @property
    def size(self) -> int:
        return len(self.beams)


def dft_codebook(n_antennas: int, size: int) -> Codebook:
    """Beams on a uniform grid in sine space: ``sin(theta_b) = -1 + (2b + 1) / size``."""
    if size < 2:
        raise ValueError("codebook size must be >= 2")
    u = -1.0 + (2.0 * np.arange(size) + 1.0) / size
    s = np.arange(n_antennas)
    beams = np.exp(1j * np.pi * np.outer(u, s)) / np.sqrt(n_antennas)
    return Codebook(beams, u)


def beam_gains(h: np.ndarray, cb: Codebook) -> np.ndarray:
    """Received energy per beam summed over subcarriers: (..., CS)."""
    y = np.einsum("bs,...sf->...bf", cb.beams.conj(), h)
    return np.sum(y.real ** 2 + y.imag ** 2, axis=-1)


def beam_label(h_high: np.ndarray, cb: Codebook) -> np.ndarray | int:
    """Index of the best beam; ties go to the lowest index (``argmax`` semantics)."""
    if h_high.shape[-2] != cb.beams.shape[1]:
        raise ValueError(f"channel has {h_high.shape[-2]} antennas, codebook {cb.beams.shape[1]}")
    lab = np.argmax(beam_gains(h_high, cb), axis=-1)
    return int(lab) if np.ndim(lab) == 0 else lab


# ---------------------------------------------------------------------------
# features
# ---------------------------------------------------------------------------

def encode(ckpt: Checkpoint, h_low: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Encoder output with every patch visible: (n, 2K, d_e)."""
    cfg = ckpt.config
    P = as_leaves(ckpt.params, trainable=False)
    index = np.arange(2 * cfg.K)
    out = []
    for i in range(0, len(h_low), batch_size):
        tok = tokens(h_low[i:i + batch_size] / ckpt.normalization_std, cfg.patch)
        tok = tok.astype(ckpt.params["embed.w"].dtype)
        idx = np.broadcast_to(index, (len(tok), index.size))
        out.append(encoder_forward(embed(tok, idx, P, cfg), P, cfg).data)
    return np.concatenate(out) if out else np.zeros((0, 2 * cfg.K, cfg.d_e))


def extract_features(ckpt: Checkpoint | None, ds: ChannelDataset, task: str) -> np.ndarray:
    """``beam``: flattened (2K * d_e); ``los``: mean-pooled (d_e); ``raw``: normalized h_low."""
    if task == "raw":
        h = ds.h_low / ds.normalization_std
        return np.concatenate([h.real.reshape(len(h), -1), h.imag.reshape(len(h), -1)], axis=1)
    if ckpt is None:
        raise ValueError(f"task {task!r} needs a checkpoint")
    z = encode(ckpt, ds.h_low)
    if task == "beam":
        return z.reshape(len(z), -1)
    if task == "los":
        return z.mean(axis=1)
    raise ValueError(f"unknown feature task {task!r}")


# ---------------------------------------------------------------------------
# linear probe
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProbeConfig:
    lr: float = 1e-4
    batch_size: int = 512
    gamma: float = 0.995
    patience: int = 20
    max_epochs: int = 1000
    seed: int = 0
    standardize: bool = True


BEAM_PROBE = ProbeConfig()
LOS_PROBE = ProbeConfig(lr=0.01, batch_size=256)


@dataclass
class LinearProbe:
    weight: np.ndarray
    bias: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    epochs: int = 0
    history: list[float] = field(default_factory=list)

    def scores(self, x: np.ndarray) -> np.ndarray:
        return ((x - self.mean) / self.scale) @ self.weight + self.bias

    def probabilities(self, x: np.ndarray) -> np.ndarray:
        return _softmax(self.scores(x))

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.scores(x), axis=1)


def _softmax(s: np.ndarray) -> np.ndarray:
    e = np.exp(s - s.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _xent(params, x, y) -> tuple[float, dict[str, np.ndarray]]:
    p = _softmax(x @ params["w"] + params["b"])
    n = len(y)
    loss = -float(np.mean(np.log(np.maximum(p[np.arange(n), y], 1e-300))))
    p[np.arange(n), y] -= 1.0
    p /= n
    return loss, {"w": x.T @ p, "b": p.sum(axis=0)}


def linear_probe(x_train: np.ndarray, y_train: np.ndarray, n_classes: int,
                 x_val: np.ndarray | None = None, y_val: np.ndarray | None = None,
                 cfg: ProbeConfig = BEAM_PROBE) -> LinearProbe:
    """Softmax regression trained with Adam and per-epoch exponential decay.

    Stops once the validation loss (training loss when no validation set is
    given) has not improved for ``cfg.patience`` epochs, and returns the best
    parameters seen.
    """
    if len(x_train) == 0:
        raise ValueError("linear probe needs at least one training sample")
    y_train = np.asarray(y_train, dtype=np.intp)
    x_train = np.asarray(x_train, dtype=np.float64)
    if cfg.standardize:
        mean = x_train.mean(axis=0)
        scale = x_train.std(axis=0)
        scale[scale < 1e-12] = 1.0
    else:
        mean = np.zeros(x_train.shape[1])
        scale = np.ones(x_train.shape[1])
    xt = (x_train - mean) / scale
    has_val = x_val is not None and len(x_val) > 0
    xv = (np.asarray(x_val, dtype=np.float64) - mean) / scale if has_val else xt
    yv = np.asarray(y_val, dtype=np.intp) if has_val else y_train
    params = {"w": np.zeros((xt.shape[1], n_classes)), "b": np.zeros(n_classes)}
    state = AdamState.zeros(params)
    best = (math.inf, {k: v.copy() for k, v in params.items()}, 0)
    history = []
    stale = 0
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        lr = cfg.lr * cfg.gamma ** (epoch - 1)
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(xt))
        for i in range(0, len(xt), cfg.batch_size):
            ix = order[i:i + cfg.batch_size]
            _, grads = _xent(params, xt[ix], y_train[ix])
            adam_step(params, grads, state, lr)
        vloss, _ = _xent(params, xv, yv)
        history.append(vloss)
        if vloss < best[0] - 1e-12:
            best = (vloss, {k: v.copy() for k, v in params.items()}, epoch)
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return LinearProbe(best[1]["w"], best[1]["b"], mean, scale, epoch, history)


def budget_subset(n: int, fraction: float, seed: int) -> np.ndarray:
    """Deterministic prefix of a seeded shuffle, so smaller budgets nest in larger ones."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"budget fraction must be in (0, 1], got {fraction}")
    order = np.random.default_rng([seed, 0xB0D6]).permutation(n)
    k = max(1, int(round(fraction * n)))
    return order[:k]


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def topk_accuracy(scores: np.ndarray, labels: np.ndarray, k: int) -> float:
    """Fraction of rows whose label is among the ``k`` best scores (ties favor lower index)."""
    order = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    return float(np.mean(np.any(order == np.asarray(labels)[:, None], axis=1)))


def roc_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Trapezoidal area under the ROC curve; tied scores form one threshold step."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    n_pos, n_neg = labels.sum(), (~labels).sum()
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tpr = np.r_[0.0, np.cumsum(y)[last] / n_pos]
    fpr = np.r_[0.0, np.cumsum(~y)[last] / n_neg]
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def binary_metrics(scores: np.ndarray, labels: np.ndarray, threshold: float = 0.5) -> dict[str, float]:
    labels = np.asarray(labels).astype(bool)
    pred = np.asarray(scores) >= threshold
    tp = int(np.sum(pred & labels))
    fp = int(np.sum(pred & ~labels))
    fn = int(np.sum(~pred & labels))
    f1 = 2 * tp / (2 * tp + fp + fn) if tp + fp + fn else 1.0
    return {"accuracy": float(np.mean(pred == labels)), "f1": float(f1),
            "auc": roc_auc(scores, labels)}


@dataclass(frozen=True)
class MetricRow:
    task: str
    model: str
    cs: int | None
    budget: float
    metric: str
    value: float

    def line(self) -> str:
        cs = "-" if self.cs is None else str(self.cs)
        return "\t".join([self.task, self.model, cs, f"{self.budget:g}", self.metric,
                          f"{self.value:.6f}"])


def format_report(rows: Iterable[MetricRow]) -> str:
    return "".join(r.line() + "\n" for r in rows)


# ---------------------------------------------------------------------------
# task runners
# ---------------------------------------------------------------------------

@dataclass
class ProbeSplits:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


def probe_splits(ds: ChannelDataset, ratios: Sequence[float] = PROBE_SPLITS) -> ProbeSplits:
    tr, va, te = split_indices(ds.seeds.tolist(), ratios)
    return ProbeSplits(tr, va, te)


def run_beam_probe(features: np.ndarray, ds: ChannelDataset, model: str, cs: int,
                   budgets: Sequence[float] = (1.0,), cfg: ProbeConfig = BEAM_PROBE,
                   splits: ProbeSplits | None = None) -> list[MetricRow]:
    """Linear probe predicting the best high-band beam from low-band features."""
    splits = splits or probe_splits(ds)
    labels = beam_label(ds.h_high, dft_codebook(ds.n_antennas, cs))
    rows = []
    for b in budgets:
        sub = splits.train[budget_subset(len(splits.train), b, cfg.seed)]
        probe = linear_probe(features[sub], labels[sub], cs, features[splits.val],
                             labels[splits.val], cfg)
        sc = probe.scores(features[splits.test])
        lt = labels[splits.test]
        rows.append(MetricRow("beam", model, cs, b, "top1", topk_accuracy(sc, lt, 1)))
        rows.append(MetricRow("beam", model, cs, b, "top3", topk_accuracy(sc, lt, 3)))
    return rows


def run_los_probe(features: np.ndarray, ds: ChannelDataset, model: str,
                  budgets: Sequence[float] = (1.0,), cfg: ProbeConfig = LOS_PROBE,
                  splits: ProbeSplits | None = None) -> list[MetricRow]:
    splits = splits or probe_splits(ds)
    labels = ds.los.astype(np.intp)
    rows = []
    for b in budgets:
        sub = splits.train[budget_subset(len(splits.train), b, cfg.seed)]
        probe = linear_probe(features[sub], labels[sub], 2, features[splits.val],
                             labels[splits.val], cfg)
        p = probe.probabilities(features[splits.test])[:, 1]
        for name, value in binary_metrics(p, labels[splits.test]).items():
            rows.append(MetricRow("los", model, None, b, name, value))
    return rows


def with_seed(cfg: ProbeConfig, seed: int) -> ProbeConfig:
    return replace(cfg, seed=seed)
