"""Masked-autoencoder encoder/decoder for channel tokens, plus the contrastive head.

Parameters live in a flat ``dict[str, np.ndarray]``; forward functions take a
dict of :class:`~channel_mae.numerics.Tensor` leaves built from it so the
same code serves training (gradients) and inference.

Multi-head layout: the query/key/value matrices are stored as ``d_e x d_e``
with head ``i`` owning columns ``[i * d_e / M, (i + 1) * d_e / M)``.
"""

from __future__ import annotations

import io
import os
import struct
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Mapping

import numpy as np

from . import numerics as nx
from .numerics import Tensor
from .patchpipe import ConfigError, MaskPattern, PatchConfig

LN_EPS = 1e-5
INIT_STD = 0.02


@dataclass(frozen=True)
class ModelConfig:
    d_e: int = 64
    L_enc: int = 12
    L_dec: int = 4
    M_enc: int = 16
    M_dec: int = 8
    d_c: int = 64
    contrastive: bool = False
    patch: PatchConfig = field(default_factory=PatchConfig)

    def __post_init__(self):
        if self.d_e < 1 or self.d_c < 1:
            raise ConfigError("d_e and d_c must be positive")
        if self.L_enc < 1 or self.L_dec < 1:
            raise ConfigError("L_enc and L_dec must be >= 1")
        if self.M_enc < 1 or self.d_e % self.M_enc:
            raise ConfigError(f"d_e={self.d_e} not divisible by M_enc={self.M_enc}")
        if self.M_dec < 1 or self.d_e % self.M_dec:
            raise ConfigError(f"d_e={self.d_e} not divisible by M_dec={self.M_dec}")

    @property
    def K(self) -> int:
        return self.patch.K

    @property
    def d_p(self) -> int:
        return self.patch.d_p

    def to_items(self) -> dict[str, str]:
        items = {f"model.{f.name}": _fmt(getattr(self, f.name))
                 for f in fields(self) if f.name != "patch"}
        items.update({f"patch.{f.name}": _fmt(getattr(self.patch, f.name))
                      for f in fields(self.patch)})
        return items

    @classmethod
    def from_items(cls, items: Mapping[str, str]) -> "ModelConfig":
        patch = PatchConfig(**{f.name: int(items[f"patch.{f.name}"]) for f in fields(PatchConfig)})
        kw = {}
        for f in fields(cls):
            if f.name == "patch":
                continue
            raw = items[f"model.{f.name}"]
            kw[f.name] = raw == "true" if f.name == "contrastive" else int(raw)
        return cls(patch=patch, **kw)

    def replace(self, **kw) -> "ModelConfig":
        cur = {f.name: getattr(self, f.name) for f in fields(self)}
        cur.update(kw)
        return ModelConfig(**cur)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

def _layer_shapes(d: int) -> dict[str, tuple[int, ...]]:
    return {"wq": (d, d), "bq": (d,), "wk": (d, d), "bk": (d,), "wv": (d, d), "bv": (d,),
            "wo": (d, d), "bo": (d,), "ln1.g": (d,), "ln1.b": (d,),
            "w1": (d, 2 * d), "b1": (2 * d,), "w2": (2 * d, d), "b2": (d,),
            "ln2.g": (d,), "ln2.b": (d,)}


def param_shapes(cfg: ModelConfig, head: bool | None = None) -> dict[str, tuple[int, ...]]:
    """Names and shapes of every learnable tensor, in canonical order."""
    d, K, dp = cfg.d_e, cfg.K, cfg.d_p
    shapes: dict[str, tuple[int, ...]] = {
        "embed.w": (dp, d), "embed.b": (d,), "embed.pos": (2 * K, d)}
    for l in range(cfg.L_enc):
        shapes.update({f"enc.{l}.{k}": s for k, s in _layer_shapes(d).items()})
    shapes["dec.mask_token"] = (d,)
    shapes["dec.pos"] = (2 * K, d)
    for l in range(cfg.L_dec):
        shapes.update({f"dec.{l}.{k}": s for k, s in _layer_shapes(d).items()})
    shapes["dec.out.w"] = (d, dp)
    shapes["dec.out.b"] = (dp,)
    if cfg.contrastive if head is None else head:
        dc = cfg.d_c
        shapes.update({"head.w1": (d, 2 * dc), "head.b1": (2 * dc,),
                       "head.w2": (2 * dc, dc), "head.b2": (dc,)})
    return shapes


def _is_weight(name: str) -> bool:
    last = name.rsplit(".", 1)[-1]
    return last.startswith("w") and not name.endswith(".pos")


def init_params(cfg: ModelConfig, rng: np.random.Generator,
                dtype=np.float64, only: set[str] | None = None) -> dict[str, np.ndarray]:
    """Weights ~ N(0, 0.02^2); biases, positional encodings and mask token zero; LN gains one."""
    out = {}
    for name, shape in param_shapes(cfg).items():
        if only is not None and name not in only:
            continue
        if _is_weight(name):
            out[name] = (INIT_STD * rng.standard_normal(shape)).astype(dtype)
        elif name.endswith(".g"):
            out[name] = np.ones(shape, dtype)
        else:
            out[name] = np.zeros(shape, dtype)
    return out


def count_params(shapes: Mapping[str, tuple[int, ...]], prefix: str = "") -> int:
    return int(sum(np.prod(s) for k, s in shapes.items() if k.startswith(prefix)))


def as_leaves(params: Mapping[str, np.ndarray], trainable: bool = True) -> dict[str, Tensor]:
    if trainable:
        return {k: nx.Tensor(v, requires_grad=True, name=k) for k, v in params.items()}
    return {k: nx.Tensor(v, name=k) for k, v in params.items()}


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------

def _batched(x: np.ndarray, ndim: int) -> np.ndarray:
    return x[None] if x.ndim == ndim - 1 else x


def embed(tokens_v: np.ndarray, index: np.ndarray, P: Mapping[str, Tensor],
          cfg: ModelConfig) -> Tensor:
    """``Z = P_v W_0 + b_0 + PE_e[I_v]`` for a batch (B, 2N_v, d_p)."""
    tokens_v = _batched(np.asarray(tokens_v), 3)
    index = _batched(np.asarray(index), 2)
    if index.size and (index.min() < 0 or index.max() >= 2 * cfg.K):
        raise IndexError(f"visible index out of range [0, {2 * cfg.K})")
    x = nx.Tensor(tokens_v.astype(P["embed.w"].data.dtype, copy=False))
    z = nx.add(nx.matmul(x, P["embed.w"]), P["embed.b"])
    return nx.add(z, nx.gather_rows(P["embed.pos"], index))


def attention(z: Tensor, P: Mapping[str, Tensor], prefix: str, heads: int) -> Tensor:
    B, T, d = z.shape
    dh = d // heads

    def split(t):  # (B, T, d) -> (B, M, T, dh)
        return nx.swapaxes(nx.reshape(t, (B, T, heads, dh)), 1, 2)

    q = split(nx.add(nx.matmul(z, P[prefix + "wq"]), P[prefix + "bq"]))
    k = split(nx.add(nx.matmul(z, P[prefix + "wk"]), P[prefix + "bk"]))
    v = split(nx.add(nx.matmul(z, P[prefix + "wv"]), P[prefix + "bv"]))
    scores = nx.mul(nx.matmul(q, nx.swapaxes(k, -1, -2)), 1.0 / np.sqrt(dh))
    a = nx.softmax_rows(scores)
    h = nx.reshape(nx.swapaxes(nx.matmul(a, v), 1, 2), (B, T, d))
    return nx.add(nx.matmul(h, P[prefix + "wo"]), P[prefix + "bo"])


def transformer_layer(z: Tensor, P: Mapping[str, Tensor], prefix: str, heads: int) -> Tensor:
    """Post-norm block: LN(MHSA(z) + z), then LN(MLP(.) + .)."""
    mid = nx.layer_norm(nx.add(attention(z, P, prefix, heads), z),
                        P[prefix + "ln1.g"], P[prefix + "ln1.b"], LN_EPS)
    hid = nx.gelu(nx.add(nx.matmul(mid, P[prefix + "w1"]), P[prefix + "b1"]))
    mlp = nx.add(nx.matmul(hid, P[prefix + "w2"]), P[prefix + "b2"])
    return nx.layer_norm(nx.add(mlp, mid), P[prefix + "ln2.g"], P[prefix + "ln2.b"], LN_EPS)


def _stack(z: Tensor, P, stem: str, layers: int, heads: int) -> Tensor:
    for l in range(layers):
        z = transformer_layer(z, P, f"{stem}.{l}.", heads)
        if not np.all(np.isfinite(z.data)):
            raise nx.NumericError(f"non-finite activation after layer {stem}.{l}")
    return z


def encoder_forward(z: Tensor, P: Mapping[str, Tensor], cfg: ModelConfig) -> Tensor:
    return _stack(z, P, "enc", cfg.L_enc, cfg.M_enc)


def restore_index(index: np.ndarray, K: int) -> np.ndarray:
    """Row map into ``concat(Z_enc, mask_token)``: visible slots point at their
    encoder row, every other slot at the trailing mask-token row."""
    index = _batched(np.asarray(index), 2)
    B, n = index.shape
    out = np.full((B, 2 * K), n, dtype=np.intp)
    out[np.arange(B)[:, None], index] = np.arange(n)[None, :]
    return out


def decoder_restore(z_enc: Tensor, index: np.ndarray, P: Mapping[str, Tensor],
                    cfg: ModelConfig) -> Tensor:
    B, n, d = z_enc.shape
    index = _batched(np.asarray(index), 2)
    if index.shape != (B, n):
        raise nx.DimensionError(f"index shape {index.shape} does not match encoder rows {(B, n)}")
    tok = nx.broadcast_rows(nx.reshape(P["dec.mask_token"], (1, 1, d)), (B, 1, d))
    full = nx.gather_rows(nx.concat([z_enc, tok], axis=1), restore_index(index, cfg.K))
    return nx.add(full, P["dec.pos"])


def decoder_forward(z_d: Tensor, P: Mapping[str, Tensor], cfg: ModelConfig) -> Tensor:
    z = _stack(z_d, P, "dec", cfg.L_dec, cfg.M_dec)
    return nx.add(nx.matmul(z, P["dec.out.w"]), P["dec.out.b"])


def contrastive_embed(z_enc: Tensor, P: Mapping[str, Tensor], cfg: ModelConfig) -> Tensor:
    """Mean-pool encoder rows, two-layer ReLU MLP, L2-normalize: (B, d_c)."""
    if "head.w1" not in P:
        raise ConfigError("model has no contrastive head")
    pooled = nx.mean(z_enc, axis=1)
    u = nx.relu(nx.add(nx.matmul(pooled, P["head.w1"]), P["head.b1"]))
    u = nx.add(nx.matmul(u, P["head.w2"]), P["head.b2"])
    return nx.l2_normalize_rows(u)


@dataclass
class Forward:
    z_enc: Tensor
    p_pred: Tensor | None = None
    z_c: Tensor | None = None


def visible_batch(tok: np.ndarray, masks: list[MaskPattern]) -> tuple[np.ndarray, np.ndarray]:
    """Gather visible tokens for a batch sharing one visible count.

    ``tok`` is (B, 2K, d_p); returns (B, 2N_v, d_p) tokens and (B, 2N_v) indices.
    """
    index = np.stack([m.token_index for m in masks])
    return np.take_along_axis(tok, index[:, :, None], axis=1), index


def forward(tok: np.ndarray, masks: list[MaskPattern], P: Mapping[str, Tensor],
            cfg: ModelConfig, reconstruct: bool = True, contrast: bool = False) -> Forward:
    tv, index = visible_batch(tok, masks)
    z_enc = encoder_forward(embed(tv, index, P, cfg), P, cfg)
    out = Forward(z_enc)
    if reconstruct:
        out.p_pred = decoder_forward(decoder_restore(z_enc, index, P, cfg), P, cfg)
    if contrast:
        out.z_c = contrastive_embed(z_enc, P, cfg)
    return out


# ---------------------------------------------------------------------------
# checkpoint container
# ---------------------------------------------------------------------------

CKPT_MAGIC = b"WMAE"
CKPT_VERSION = 1
FLAG_HEAD = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class FormatError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]
    normalization_std: float
    extra: dict[str, str] = field(default_factory=dict)

    @property
    def has_head(self) -> bool:
        return "head.w1" in self.params


def config_text(items: Mapping[str, str]) -> str:
    return "".join(f"{k}={items[k]}\n" for k in sorted(items))


def parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        k, sep, v = line.partition("=")
        if not sep:
            raise FormatError(f"malformed config line {line!r}")
        out[k.strip()] = v.strip()
    return out


def save_checkpoint(ckpt: Checkpoint, path: str | os.PathLike) -> None:
    items = dict(ckpt.extra)
    items.update(ckpt.config.to_items())
    items["model.contrastive"] = _fmt(ckpt.has_head)
    text = config_text(items).encode("utf-8")
    buf = io.BytesIO()
    buf.write(struct.pack("<4sII", CKPT_MAGIC, CKPT_VERSION, FLAG_HEAD if ckpt.has_head else 0))
    buf.write(struct.pack("<I", len(text)))
    buf.write(text)
    buf.write(struct.pack("<dI", float(ckpt.normalization_std), len(ckpt.params)))
    for name, arr in ckpt.params.items():
        code = 1 if arr.dtype == np.float64 else 0
        data = np.ascontiguousarray(arr, dtype=_DTYPES[code])
        nb = name.encode("utf-8")
        buf.write(struct.pack("<I", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<BI", code, data.ndim))
        buf.write(struct.pack(f"<{data.ndim}Q", *data.shape))
        buf.write(data.tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    raw = Path(path).read_bytes()
    pos = 0

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(raw):
            raise FormatError(f"{path}: truncated checkpoint")
        vals = struct.unpack_from(fmt, raw, pos)
        pos += size
        return vals

    def take_bytes(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(raw):
            raise FormatError(f"{path}: truncated checkpoint")
        out = raw[pos:pos + n]
        pos += n
        return out

    magic, version, flags = take("<4sII")
    if magic != CKPT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    (tlen,) = take("<I")
    items = parse_config_text(take_bytes(tlen).decode("utf-8"))
    std, count = take("<dI")
    params = {}
    for _ in range(count):
        (nlen,) = take("<I")
        name = take_bytes(nlen).decode("utf-8")
        code, rank = take("<BI")
        if code not in _DTYPES:
            raise FormatError(f"{path}: unknown dtype code {code} for {name}")
        shape = take(f"<{rank}Q") if rank else ()
        dt = _DTYPES[code]
        n = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(take_bytes(n * dt.itemsize), dtype=dt).reshape(shape)
        params[name] = data.astype(dt.newbyteorder("="), copy=True)
    if pos != len(raw):
        raise FormatError(f"{path}: trailing bytes after tensors")
    try:
        cfg = ModelConfig.from_items(items)
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: invalid config block ({exc})") from exc
    expected = param_shapes(cfg, head=bool(flags & FLAG_HEAD))
    if set(expected) != set(params):
        missing = sorted(set(expected) ^ set(params))
        raise FormatError(f"{path}: tensor set mismatch: {missing[:4]}")
    for k, s in expected.items():
        if params[k].shape != s:
            raise FormatError(f"{path}: tensor {k} has shape {params[k].shape}, expected {s}")
    extra = {k: v for k, v in items.items() if not k.startswith(("model.", "patch."))}
    params = {k: params[k] for k in expected}
    return Checkpoint(cfg, params, float(std), extra)


def warm_start(ckpt: Checkpoint, seed: int, d_c: int | None = None) -> Checkpoint:
    """Contrastive model initialized from a reconstruction-only checkpoint.

    Shared tensors are copied exactly; the projection head (if absent) is
    freshly initialized from ``seed``.
    """
    cfg = ckpt.config.replace(contrastive=True, d_c=d_c if d_c is not None else ckpt.config.d_c)
    params = {k: v.copy() for k, v in ckpt.params.items()}
    if not ckpt.has_head or (d_c is not None and d_c != ckpt.config.d_c):
        dtype = ckpt.params["embed.w"].dtype
        head = init_params(cfg, np.random.default_rng([int(seed), 0x4EAD]), dtype,
                           only={"head.w1", "head.b1", "head.w2", "head.b2"})
        params.update(head)
    return Checkpoint(cfg, {k: params[k] for k in param_shapes(cfg)},
                      ckpt.normalization_std, dict(ckpt.extra))
