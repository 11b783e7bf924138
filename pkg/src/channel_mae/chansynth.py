"""Synthetic multipath MISO-OFDM channels with paired sub-6 GHz / mmWave renders.

Each sample draws one set of propagation paths (gain, delay, angle, LoS
flag) and renders it at both carriers on a half-wavelength ULA::

    H[s, f] = sum_p g_p(fc) * exp(-j 2 pi (fc + f df) tau_p) * exp(j pi s sin(theta_p))

so the two bands share geometry exactly. Records are stored in a small
little-endian binary container (``.wchd``).
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

MAGIC = b"WCHD"
VERSION = 1
_HEADER = struct.Struct("<4sIIIId")
_RECORD_META = struct.Struct("<QIB")


@dataclass(frozen=True)
class SystemConfig:
    n_antennas: int = 32
    n_subcarriers: int = 32
    subcarrier_spacing: float = 30e3
    carrier_low: float = 3.5e9
    carrier_high: float = 28e9
    max_paths: int = 20
    p_los: float = 0.5
    # delays drawn in [0, delay_spread / subcarrier_spacing]
    delay_spread: float = 0.25
    # LoS power relative to the total NLoS power
    rician_k: float = 4.0

    def __post_init__(self):
        if self.n_antennas < 1 or self.n_subcarriers < 1:
            raise ValueError("n_antennas and n_subcarriers must be >= 1")
        if not 1 <= self.max_paths <= 20:
            raise ValueError(f"max_paths must be in [1, 20], got {self.max_paths}")
        if not 0.0 <= self.p_los <= 1.0:
            raise ValueError(f"p_los must be in [0, 1], got {self.p_los}")
        if self.subcarrier_spacing <= 0 or self.carrier_low <= 0 or self.carrier_high <= 0:
            raise ValueError("frequencies must be positive")
        if self.delay_spread <= 0 or self.rician_k < 0:
            raise ValueError("delay_spread must be positive and rician_k non-negative")


@dataclass
class PathSet:
    gains: np.ndarray    # complex, at carrier_low
    delays: np.ndarray   # seconds
    angles: np.ndarray   # radians in (-pi/2, pi/2)
    los_index: int | None = None

    @property
    def los(self) -> bool:
        return self.los_index is not None

    def __len__(self) -> int:
        return len(self.delays)


@dataclass
class ChannelSample:
    h_low: np.ndarray
    h_high: np.ndarray
    los: bool
    seed: int
    scenario_id: int


@dataclass(frozen=True)
class ScenarioProfile:
    angle_center: float
    angle_halfwidth: float
    delay_scale: float
    decay: float


def scenario_profile(scenario_id: int) -> ScenarioProfile:
    """Per-scenario offsets that make scenarios statistically distinct."""
    rng = np.random.default_rng([0x5CE7A810, int(scenario_id)])
    half = np.pi / 2
    return ScenarioProfile(
        angle_center=float(rng.uniform(-0.3, 0.3) * half),
        angle_halfwidth=float(rng.uniform(0.6, 0.9) * half),
        delay_scale=float(rng.uniform(0.5, 1.0)),
        decay=float(rng.uniform(0.2, 0.5)),
    )


def sample_paths(seed: int, scenario_id: int, config: SystemConfig) -> PathSet:
    rng = np.random.default_rng([int(seed), int(scenario_id)])
    prof = scenario_profile(scenario_id)
    n = int(rng.integers(1, config.max_paths + 1))
    lim = np.pi / 2 - 1e-3
    lo = max(-lim, prof.angle_center - prof.angle_halfwidth)
    hi = min(lim, prof.angle_center + prof.angle_halfwidth)
    angles = rng.uniform(lo, hi, size=n)
    max_delay = config.delay_spread * prof.delay_scale / config.subcarrier_spacing
    delays = np.sort(rng.uniform(0.0, max_delay, size=n))
    # exponential power-delay profile, normalized to unit total NLoS power
    tau_rms = prof.decay * max_delay
    power = np.exp(-delays / tau_rms)
    power /= power.sum()
    gains = np.sqrt(power / 2) * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    is_los = bool(rng.random() < config.p_los)
    los_index = None
    if is_los:
        # deterministic-phase direct path ahead of every scattered path
        los_delay = delays[0] * float(rng.uniform(0.0, 1.0))
        los_angle = float(rng.uniform(lo, hi))
        los_gain = np.sqrt(config.rician_k) * np.exp(-2j * np.pi * config.carrier_low * los_delay)
        gains = np.concatenate([[los_gain], gains])
        delays = np.concatenate([[los_delay], delays])
        angles = np.concatenate([[los_angle], angles])
        if len(gains) > config.max_paths:
            gains, delays, angles = gains[:-1], delays[:-1], angles[:-1]
        los_index = 0
    return PathSet(gains=gains.astype(np.complex128), delays=delays, angles=angles,
                   los_index=los_index)


def steering_vector(n_antennas: int, angle: float) -> np.ndarray:
    return np.exp(1j * np.pi * np.arange(n_antennas) * np.sin(angle))


def render_channel(paths: PathSet, carrier: float, config: SystemConfig) -> np.ndarray:
    """Frequency response ``H[s, f]`` of ``paths`` around ``carrier``."""
    s = np.arange(config.n_antennas)
    f = carrier + np.arange(config.n_subcarriers) * config.subcarrier_spacing
    scale = config.carrier_low / carrier
    steer = np.exp(1j * np.pi * np.outer(s, np.sin(paths.angles)))        # (Ns, P)
    freq = np.exp(-2j * np.pi * np.outer(paths.delays, f))                 # (P, Nf)
    return (steer * (scale * paths.gains)) @ freq


def make_sample(seed: int, scenario_id: int, config: SystemConfig) -> ChannelSample:
    paths = sample_paths(seed, scenario_id, config)
    return ChannelSample(
        h_low=render_channel(paths, config.carrier_low, config),
        h_high=render_channel(paths, config.carrier_high, config),
        los=paths.los, seed=int(seed), scenario_id=int(scenario_id),
    )


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------

def _seed_hash(seed: int) -> bytes:
    return hashlib.sha256(struct.pack("<Q", int(seed) & 0xFFFFFFFFFFFFFFFF)).digest()


def split_counts(count: int, ratios: Sequence[float]) -> list[int]:
    """Largest-remainder apportionment of ``count`` records over ``ratios``."""
    ratios = np.asarray(ratios, dtype=float)
    if np.any(ratios < 0) or abs(ratios.sum() - 1.0) > 1e-9:
        raise ValueError(f"split ratios must be non-negative and sum to 1, got {list(ratios)}")
    raw = ratios * count
    counts = np.floor(raw + 1e-9).astype(int)
    rem = count - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:rem]] += 1
    return counts.tolist()


def split_indices(seeds: Sequence[int], ratios: Sequence[float]) -> list[np.ndarray]:
    """Partition record indices by ranking a hash of each record's seed."""
    counts = split_counts(len(seeds), ratios)
    order = sorted(range(len(seeds)), key=lambda i: (_seed_hash(seeds[i]), i))
    out, start = [], 0
    for c in counts:
        out.append(np.sort(np.asarray(order[start:start + c], dtype=np.int64)))
        start += c
    return out


# ---------------------------------------------------------------------------
# dataset container
# ---------------------------------------------------------------------------

@dataclass
class ChannelDataset:
    h_low: np.ndarray           # (n, Ns, Nf) complex
    h_high: np.ndarray          # (n, Ns, Nf) complex
    los: np.ndarray             # (n,) bool
    seeds: np.ndarray           # (n,) uint64
    scenario_ids: np.ndarray    # (n,) uint32
    normalization_std: float = 1.0
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.seeds)

    @property
    def n_antennas(self) -> int:
        return self.h_low.shape[1]

    @property
    def n_subcarriers(self) -> int:
        return self.h_low.shape[2]

    def subset(self, idx) -> "ChannelDataset":
        idx = np.asarray(idx)
        return ChannelDataset(self.h_low[idx], self.h_high[idx], self.los[idx],
                              self.seeds[idx], self.scenario_ids[idx],
                              self.normalization_std)

    def split(self, ratios: Sequence[float]) -> list["ChannelDataset"]:
        return [self.subset(ix) for ix in split_indices(self.seeds.tolist(), ratios)]


def normalization_std(h: np.ndarray) -> float:
    """Global std over the real and imaginary parts of ``h``."""
    parts = np.concatenate([h.real.reshape(-1), h.imag.reshape(-1)])
    return float(np.std(parts))


def sample_seeds(count: int, seed: int) -> np.ndarray:
    ss = np.random.SeedSequence(int(seed))
    return ss.generate_state(count, dtype=np.uint64)


def build_dataset(count: int, config: SystemConfig, seed: int,
                  scenario_ids: Sequence[int] = (0,)) -> ChannelDataset:
    if count < 1:
        raise ValueError("count must be >= 1")
    seeds = sample_seeds(count, seed)
    scen = np.asarray([scenario_ids[i % len(scenario_ids)] for i in range(count)],
                      dtype=np.uint32)
    shape = (count, config.n_antennas, config.n_subcarriers)
    h_low = np.empty(shape, np.complex128)
    h_high = np.empty(shape, np.complex128)
    los = np.empty(count, bool)
    for i in range(count):
        smp = make_sample(int(seeds[i]), int(scen[i]), config)
        h_low[i], h_high[i], los[i] = smp.h_low, smp.h_high, smp.los
    ds = ChannelDataset(h_low, h_high, los, seeds, scen)
    # stored values are f32, so compute the statistic on what readers will see
    ds.h_low = ds.h_low.astype(np.complex64).astype(np.complex128)
    ds.h_high = ds.h_high.astype(np.complex64).astype(np.complex128)
    return ds


def write_dataset(ds: ChannelDataset, path: str | os.PathLike) -> None:
    path = Path(path)
    n, ns, nf = ds.h_low.shape
    buf = bytearray(_HEADER.pack(MAGIC, VERSION, n, ns, nf, float(ds.normalization_std)))
    lo = _interleave(ds.h_low)
    hi = _interleave(ds.h_high)
    for i in range(n):
        buf += _RECORD_META.pack(int(ds.seeds[i]), int(ds.scenario_ids[i]), int(bool(ds.los[i])))
        buf += lo[i].tobytes()
        buf += hi[i].tobytes()
    try:
        path.write_bytes(bytes(buf))
    except OSError as exc:
        raise OSError(f"cannot write dataset {path}: {exc.strerror or exc}") from exc


def _interleave(h: np.ndarray) -> np.ndarray:
    out = np.empty(h.shape + (2,), dtype="<f4")
    out[..., 0] = h.real
    out[..., 1] = h.imag
    return out.reshape(h.shape[0], -1)


def read_dataset(path: str | os.PathLike) -> ChannelDataset:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read dataset {path}: {exc.strerror or exc}") from exc
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated dataset header")
    magic, version, n, ns, nf, std = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported dataset version {version}")
    mat_bytes = ns * nf * 8
    rec = _RECORD_META.size + 2 * mat_bytes
    if len(raw) != _HEADER.size + n * rec:
        raise ValueError(f"{path}: expected {n} records, file size mismatch")
    dt = np.dtype([("seed", "<u8"), ("scenario", "<u4"), ("los", "u1"),
                   ("low", "<f4", (ns * nf * 2,)), ("high", "<f4", (ns * nf * 2,))])
    arr = np.frombuffer(raw, dtype=dt, count=n, offset=_HEADER.size)

    def cplx(x):
        x = x.reshape(n, ns, nf, 2).astype(np.float64)
        return x[..., 0] + 1j * x[..., 1]

    return ChannelDataset(cplx(arr["low"]), cplx(arr["high"]), arr["los"].astype(bool),
                          arr["seed"].copy(), arr["scenario"].copy(), float(std))


SPLIT_NAMES = {1: ("all",), 2: ("train", "val"), 3: ("train", "val", "test")}


def generate_dataset(count: int, split_ratios: Sequence[float], config: SystemConfig,
                     seed: int, out: str | os.PathLike,
                     scenario_ids: Sequence[int] = (0,)) -> dict[str, Path]:
    """Synthesize ``count`` samples and write one ``.wchd`` file per split.

    With a single ratio the file is written to ``out`` itself; otherwise each
    split goes to ``<stem>-<split><suffix>``. The stored normalization std is
    that of the training (first) split.
    """
    ds = build_dataset(count, config, seed, scenario_ids)
    parts = ds.split(split_ratios) if len(split_ratios) > 1 else [ds]
    std = normalization_std(parts[0].h_low) if len(parts[0]) else normalization_std(ds.h_low)
    if std <= 0:
        raise ValueError("degenerate dataset: zero normalization std")
    out = Path(out)
    names = SPLIT_NAMES.get(len(parts), tuple(f"part{i}" for i in range(len(parts))))
    written = {}
    for name, part in zip(names, parts):
        part.normalization_std = std
        target = out if len(parts) == 1 else out.with_name(f"{out.stem}-{name}{out.suffix}")
        write_dataset(part, target)
        written[name] = target
    return written
