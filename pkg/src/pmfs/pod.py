"""Proper orthogonal decomposition of snapshot matrices."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import DataError
from .nn import ShapeError


@dataclass
class PODBasis:
    mean_field: np.ndarray  # (d_space,)
    modes: np.ndarray  # (d_space, n_modes), orthonormal columns
    singular_values: np.ndarray  # all singular values, non-increasing

    @property
    def n_modes(self) -> int:
        return self.modes.shape[1]

    @property
    def d_space(self) -> int:
        return self.modes.shape[0]

    @property
    def energy_captured(self) -> float:
        s2 = self.singular_values**2
        total = s2.sum()
        return 1.0 if total == 0 else float(s2[: self.n_modes].sum() / total)


def _fix_signs(modes: np.ndarray) -> np.ndarray:
    """Flip columns so the first entry that is not negligible is positive."""
    out = modes.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        big = np.abs(col) > 1e-12 * np.abs(col).max()
        if big.any() and col[np.argmax(big)] < 0:
            out[:, j] = -col
    return out


def fit_pod(snapshots: np.ndarray, energy_target: float | None = None, n_modes: int | None = None) -> PODBasis:
    """Mean-centred SVD of an ``(N_snap, d_space)`` snapshot matrix.

    Exactly one of ``energy_target`` (fraction of squared singular values to
    retain) or ``n_modes`` selects the truncation. ``n_modes`` is capped at the
    numerical rank (but at least one mode is kept, so constant data gives a
    single zero-energy mode).
    """
    S = np.asarray(snapshots, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] == 0:
        raise DataError("POD needs a non-empty (N_snap, d_space) snapshot matrix")
    if (energy_target is None) == (n_modes is None):
        raise ValueError("give exactly one of energy_target or n_modes")
    mean = S.mean(axis=0)
    U, s, Vt = np.linalg.svd(S - mean, full_matrices=False)
    tol = s[0] * max(S.shape) * np.finfo(float).eps if s.size and s[0] > 0 else 0.0
    rank = int(np.sum(s > tol))
    if energy_target is not None:
        if not 0 < energy_target <= 1:
            raise ValueError(f"energy target must lie in (0, 1], got {energy_target}")
        r = 1
        if rank > 0:
            frac = np.cumsum(s**2) / np.sum(s**2)
            r = min(int(np.searchsorted(frac, energy_target - 1e-12) + 1), rank)
    else:
        if n_modes < 1:
            raise ValueError("n_modes must be >= 1")
        r = max(1, min(n_modes, rank))
    return PODBasis(mean_field=mean, modes=_fix_signs(Vt[:r].T), singular_values=s)


def pod_project(basis: PODBasis, fields: np.ndarray) -> np.ndarray:
    fields = np.asarray(fields, dtype=np.float64)
    if fields.shape[-1] != basis.d_space:
        raise ShapeError(f"field dimension {fields.shape[-1]} does not match basis ({basis.d_space})")
    return (fields - basis.mean_field) @ basis.modes


def pod_reconstruct(basis: PODBasis, coeffs: np.ndarray) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.shape[-1] != basis.n_modes:
        raise ShapeError(f"got {coeffs.shape[-1]} coefficients for a {basis.n_modes}-mode basis")
    return basis.mean_field + coeffs @ basis.modes.T
