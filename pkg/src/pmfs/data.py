"""Multi-fidelity dataset container and per-channel scalers."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np


class DataError(ValueError):
    pass


@dataclass
class MultiFidelityDataset:
    """Per-level input sequences aligned with high-fidelity targets.

    Arrays are indexed ``(sample, step, channel)``. ``train_mask`` marks the
    (sample, step) pairs whose targets may be used for fitting; it must be a
    prefix of each sample's sequence. ``test_mask`` marks the pairs scored by
    evaluation. Levels whose input was not loaded are ``None``. ``lengths``
    gives the valid prefix of each (padded) sample; ``extras`` carries
    auxiliary arrays such as imputation flags.
    """

    inputs: list[np.ndarray | None]
    targets: np.ndarray | None
    times: np.ndarray
    sample_ids: np.ndarray
    train_mask: np.ndarray
    test_mask: np.ndarray
    meta: dict = field(default_factory=dict)
    lengths: np.ndarray | None = None
    extras: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        n, k = self.times.shape
        if self.lengths is None:
            self.lengths = np.full(n, k, dtype=np.int64)
        for l, x in enumerate(self.inputs):
            if x is not None and x.shape[:2] != (n, k):
                raise DataError(f"level {l} input has shape {x.shape[:2]}, expected {(n, k)}")
        if self.targets is not None and self.targets.shape[:2] != (n, k):
            raise DataError(f"targets have shape {self.targets.shape[:2]}, expected {(n, k)}")
        for name in ("train_mask", "test_mask"):
            if getattr(self, name).shape != (n, k):
                raise DataError(f"{name} must have shape {(n, k)}")
        # training steps must form a prefix so sequences can be truncated
        tm = self.train_mask
        counts = tm.sum(axis=1)
        if np.any(tm != (np.arange(k)[None, :] < counts[:, None])):
            raise DataError("train_mask must be a prefix of each sample sequence")

    @property
    def n_levels(self) -> int:
        return len(self.inputs)

    @property
    def n_samples(self) -> int:
        return self.times.shape[0]

    @property
    def train_samples(self) -> np.ndarray:
        return np.flatnonzero(self.train_mask.any(axis=1))

    @property
    def test_samples(self) -> np.ndarray:
        return np.flatnonzero(self.test_mask.any(axis=1))

    def level_input(self, level: int) -> np.ndarray:
        if level >= len(self.inputs) or self.inputs[level] is None:
            raise LookupError(f"input for level {level} is not available")
        return self.inputs[level]


@dataclass
class ScalerStats:
    lo: np.ndarray
    hi: np.ndarray
    mode: str = "minmax"

    def __post_init__(self):
        if self.mode not in ("minmax", "standard"):
            raise ValueError(f"unknown scaler mode {self.mode!r}")
        if self.mode == "minmax" and np.any(self.hi < self.lo):
            raise ValueError("scaler max below min")

    @property
    def offset(self) -> np.ndarray:
        return self.lo

    @property
    def scale(self) -> np.ndarray:
        # degenerate channels keep unit scale so apply maps them to 0
        span = self.hi - self.lo if self.mode == "minmax" else self.hi
        return np.where(span > 0, span, 1.0)


def fit_scaler(data: np.ndarray, mode: str = "minmax") -> ScalerStats:
    """Per-channel statistics over all leading axes of ``data``."""
    flat = np.asarray(data, dtype=np.float64).reshape(-1, np.shape(data)[-1])
    if flat.shape[0] == 0:
        raise DataError("cannot fit a scaler on empty data")
    if mode == "minmax":
        lo, hi = flat.min(axis=0), flat.max(axis=0)
        degenerate = hi == lo
    elif mode == "standard":
        lo, hi = flat.mean(axis=0), flat.std(axis=0)
        degenerate = hi == 0
    else:
        raise ValueError(f"unknown scaler mode {mode!r}")
    if np.any(degenerate):
        warnings.warn(
            f"constant channel(s) {np.flatnonzero(degenerate).tolist()}: scaler reduces to an offset",
            RuntimeWarning,
            stacklevel=2,
        )
    return ScalerStats(lo=lo, hi=hi, mode=mode)


def apply_scaler(stats: ScalerStats, data: np.ndarray) -> np.ndarray:
    return (data - stats.offset) / stats.scale


def invert_scaler(stats: ScalerStats, data: np.ndarray) -> np.ndarray:
    return data * stats.scale + stats.offset
