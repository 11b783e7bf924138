"""Patch partitioning, masking and real/imaginary token vectorization.

Token layout (0-based): for ``K`` patches in row-major patch order, token
``k`` holds the real part of patch ``k`` and token ``k + K`` its imaginary
part. Each token is the row-major flattening of the patch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PatchConfig:
    n_antennas: int = 32
    n_subcarriers: int = 32
    patch_rows: int = 1
    patch_cols: int = 16

    def __post_init__(self):
        if self.patch_rows < 1 or self.patch_cols < 1:
            raise ConfigError("patch dimensions must be positive")
        if self.n_antennas % self.patch_rows or self.n_subcarriers % self.patch_cols:
            raise ConfigError(
                f"channel {self.n_antennas}x{self.n_subcarriers} is not divisible "
                f"into {self.patch_rows}x{self.patch_cols} patches")

    @property
    def grid(self) -> tuple[int, int]:
        return self.n_antennas // self.patch_rows, self.n_subcarriers // self.patch_cols

    @property
    def d_p(self) -> int:
        return self.patch_rows * self.patch_cols

    @property
    def K(self) -> int:
        gr, gc = self.grid
        return gr * gc


@dataclass(frozen=True)
class MaskPattern:
    """Per-patch visibility for one sample."""

    visible: np.ndarray  # (K,) bool

    @property
    def K(self) -> int:
        return len(self.visible)

    @property
    def visible_count(self) -> int:
        return int(self.visible.sum())

    @property
    def realized_ratio(self) -> float:
        return 1.0 - self.visible_count / self.K

    @property
    def visible_patches(self) -> np.ndarray:
        return np.flatnonzero(self.visible)

    @property
    def token_index(self) -> np.ndarray:
        """Visible token indices ``I_v``: real tokens then imaginary, ascending."""
        v = self.visible_patches
        return np.concatenate([v, v + self.K])

    @property
    def masked_token_index(self) -> np.ndarray:
        m = np.flatnonzero(~self.visible)
        return np.concatenate([m, m + self.K])


@dataclass
class VisibleSequence:
    tokens: np.ndarray        # (2 N_v, d_p)
    index: np.ndarray         # (2 N_v,)


def partition(h: np.ndarray, pc: PatchConfig) -> np.ndarray:
    """Split ``h`` (..., Ns, Nf) into patches of shape (..., K, rows, cols)."""
    if h.shape[-2:] != (pc.n_antennas, pc.n_subcarriers):
        raise ConfigError(f"channel shape {h.shape[-2:]} does not match patch config "
                          f"{(pc.n_antennas, pc.n_subcarriers)}")
    gr, gc = pc.grid
    lead = h.shape[:-2]
    x = h.reshape(*lead, gr, pc.patch_rows, gc, pc.patch_cols)
    x = np.moveaxis(x, -3, -2)  # (..., gr, gc, rows, cols)
    return x.reshape(*lead, gr * gc, pc.patch_rows, pc.patch_cols)


def unpartition(patches: np.ndarray, pc: PatchConfig) -> np.ndarray:
    gr, gc = pc.grid
    lead = patches.shape[:-3]
    x = patches.reshape(*lead, gr, gc, pc.patch_rows, pc.patch_cols)
    x = np.moveaxis(x, -2, -3)
    return x.reshape(*lead, pc.n_antennas, pc.n_subcarriers)


def tokens(h: np.ndarray, pc: PatchConfig) -> np.ndarray:
    """All 2K tokens of ``h``: shape (..., 2K, d_p)."""
    p = partition(h, pc).reshape(*h.shape[:-2], pc.K, pc.d_p)
    return np.concatenate([p.real, p.imag], axis=-2)


def reassemble(p_pred: np.ndarray, pc: PatchConfig) -> np.ndarray:
    """Inverse of :func:`tokens`: (..., 2K, d_p) real -> (..., Ns, Nf) complex."""
    K = pc.K
    if p_pred.shape[-2:] != (2 * K, pc.d_p):
        raise ConfigError(f"expected (..., {2 * K}, {pc.d_p}) tokens, got {p_pred.shape}")
    c = p_pred[..., :K, :] + 1j * p_pred[..., K:, :]
    c = c.reshape(*p_pred.shape[:-2], K, pc.patch_rows, pc.patch_cols)
    return unpartition(c, pc)


def visible_count(K: int, mask_ratio: float) -> int:
    if not 0.0 <= mask_ratio < 1.0:
        raise ConfigError(f"mask ratio must be in [0, 1), got {mask_ratio}")
    n = int(np.floor((1.0 - mask_ratio) * K + 0.5))
    if mask_ratio > 0.0:
        return int(np.clip(n, 1, max(K - 1, 1)))
    return K


def sample_mask(K: int, mask_ratio: float, rng: np.random.Generator) -> MaskPattern:
    n_v = visible_count(K, mask_ratio)
    vis = np.zeros(K, dtype=bool)
    vis[rng.choice(K, size=n_v, replace=False)] = True
    return MaskPattern(vis)


def full_mask(K: int) -> MaskPattern:
    return MaskPattern(np.ones(K, dtype=bool))


def vectorize_visible(grid: np.ndarray, mask: MaskPattern) -> VisibleSequence:
    """Visible tokens from a patch grid (K, rows, cols) complex."""
    if grid.shape[0] != mask.K:
        raise ConfigError(f"mask has {mask.K} patches, grid has {grid.shape[0]}")
    flat = grid.reshape(grid.shape[0], -1)
    v = mask.visible_patches
    return VisibleSequence(np.concatenate([flat[v].real, flat[v].imag]), mask.token_index)


def normalize(h: np.ndarray, std: float) -> np.ndarray:
    if not std > 0:
        raise ConfigError(f"normalization std must be positive, got {std}")
    return h / std


def denormalize(h: np.ndarray, std: float) -> np.ndarray:
    if not std > 0:
        raise ConfigError(f"normalization std must be positive, got {std}")
    return h * std
