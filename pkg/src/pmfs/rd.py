"""Reaction-diffusion benchmark: pseudo-spectral solver and multi-fidelity data.

The lambda-omega system

    u' = (1 - A) u + mu A v + D lap(u)
    v' = -mu A u + (1 - A) v + D lap(v),      A = u^2 + v^2

is integrated on the periodic square [-L, L)^2. Diffusion is handled exactly
by an integrating factor in Fourier space and the reaction terms by classical
RK4, so the scheme is stable for the stiff diffusion at dt = 0.05.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .data import MultiFidelityDataset

log = logging.getLogger(__name__)

BLOWUP = 1e3
INITIAL_CONDITIONS = ("spiral", "literal")


class StabilityError(RuntimeError):
    pass


@dataclass
class RDConfig:
    n: int = 100
    diffusion: float = 0.05
    mu: float = 1.0
    half_width: float = 10.0
    dt: float = 0.05
    horizon: float = 80.0
    stride: int = 10
    seed: int = 0
    initial: str = "spiral"

    def __post_init__(self):
        if self.initial not in INITIAL_CONDITIONS:
            raise ValueError(f"unknown initial condition {self.initial!r}")
        if self.n < 4 or self.n % 2:
            raise ValueError(f"grid size must be even and >= 4, got {self.n}")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        steps = self.horizon / self.dt
        if abs(steps - round(steps)) > 1e-9 or round(steps) % self.stride:
            raise ValueError(
                f"horizon {self.horizon} is not a whole number of stored strides "
                f"(dt={self.dt}, stride={self.stride})"
            )

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass
class NoiseConfig:
    sigma: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("lognormal scale must be nonnegative")


@dataclass
class RDTrajectory:
    times: np.ndarray  # (K,)
    u: np.ndarray  # (K, n, n)
    v: np.ndarray  # (K, n, n)
    config: RDConfig


def grid(n: int, half_width: float) -> np.ndarray:
    """Equispaced periodic nodes on [-L, L), endpoint excluded."""
    return np.linspace(-half_width, half_width, n, endpoint=False)


def wavenumbers(n: int, half_width: float) -> np.ndarray:
    return 2 * np.pi * np.fft.fftfreq(n, d=2 * half_width / n)


def spectral_laplacian(field_: np.ndarray, half_width: float) -> np.ndarray:
    n = field_.shape[-1]
    k = wavenumbers(n, half_width)
    k2 = k[:, None] ** 2 + k[None, :] ** 2
    return np.real(np.fft.ifft2(-k2 * np.fft.fft2(field_)))


def initial_condition(n: int, half_width: float, kind: str = "spiral") -> tuple[np.ndarray, np.ndarray]:
    """One-armed spiral seed.

    ``spiral``: u = tanh(r) cos(theta - r), v = tanh(r) sin(theta - r), which
    settles into a rigidly rotating spiral. ``literal``: u = v =
    tanh(r cos(theta - r)), a sharper seed that breaks up into multiple waves.
    """
    x = grid(n, half_width)
    X, Y = np.meshgrid(x, x, indexing="ij")
    r = np.sqrt(X**2 + Y**2)
    theta = np.angle(X + 1j * Y)
    if kind == "literal":
        u = np.tanh(r * np.cos(theta - r))
        return u, u.copy()
    return np.tanh(r) * np.cos(theta - r), np.tanh(r) * np.sin(theta - r)


def rd_solve(cfg: RDConfig, u0: np.ndarray | None = None, v0: np.ndarray | None = None) -> RDTrajectory:
    """Integrate the system and store every ``cfg.stride``-th step."""
    if u0 is None or v0 is None:
        u0, v0 = initial_condition(cfg.n, cfg.half_width, cfg.initial)
    u0 = np.asarray(u0, dtype=np.float64)
    v0 = np.asarray(v0, dtype=np.float64)
    n, dt, mu = cfg.n, cfg.dt, cfg.mu

    k = wavenumbers(n, cfg.half_width)
    k2 = k[:, None] ** 2 + k[None, :] ** 2
    # integrating factors exp(-D k^2 s) for s = dt/2 and dt
    e_half = np.exp(-cfg.diffusion * k2 * dt / 2)
    e_full = e_half * e_half

    def reaction(uh, vh):
        u = np.real(np.fft.ifft2(uh))
        v = np.real(np.fft.ifft2(vh))
        a = u * u + v * v
        du = (1 - a) * u + mu * a * v
        dv = -mu * a * u + (1 - a) * v
        return np.fft.fft2(du), np.fft.fft2(dv)

    uh, vh = np.fft.fft2(u0), np.fft.fft2(v0)
    n_out = cfg.n_steps // cfg.stride + 1
    us = np.empty((n_out, n, n))
    vs = np.empty((n_out, n, n))
    us[0], vs[0] = u0, v0
    out = 1
    for step in range(1, cfg.n_steps + 1):
        k1u, k1v = reaction(uh, vh)
        k2u, k2v = reaction(e_half * (uh + dt / 2 * k1u), e_half * (vh + dt / 2 * k1v))
        k3u, k3v = reaction(e_half * uh + dt / 2 * k2u, e_half * vh + dt / 2 * k2v)
        k4u, k4v = reaction(e_full * uh + dt * e_half * k3u, e_full * vh + dt * e_half * k3v)
        uh = e_full * uh + dt / 6 * (e_full * k1u + 2 * e_half * (k2u + k3u) + k4u)
        vh = e_full * vh + dt / 6 * (e_full * k1v + 2 * e_half * (k2v + k3v) + k4v)
        if step % cfg.stride == 0:
            us[out] = np.real(np.fft.ifft2(uh))
            vs[out] = np.real(np.fft.ifft2(vh))
            peak = max(np.abs(us[out]).max(), np.abs(vs[out]).max())
            if not np.isfinite(peak) or peak > BLOWUP:
                raise StabilityError(f"solution blew up at step {step} (t={step * dt:g})")
            out += 1
    times = np.arange(n_out) * cfg.stride * dt
    return RDTrajectory(times=times, u=us, v=vs, config=cfg)


def corrupt_lowfidelity(traj: RDTrajectory, noise: NoiseConfig) -> RDTrajectory:
    """Multiply every stored value of u and v by an i.i.d. lognormal factor."""
    if noise.sigma == 0:
        return replace(traj, u=traj.u.copy(), v=traj.v.copy())
    rng = np.random.default_rng(noise.seed)
    u = traj.u * np.exp(rng.normal(0.0, noise.sigma, size=traj.u.shape))
    v = traj.v * np.exp(rng.normal(0.0, noise.sigma, size=traj.v.shape))
    return replace(traj, u=u, v=v)


def extract_vertex_series(traj: RDTrajectory) -> np.ndarray:
    n = traj.u.shape[-1]
    idx = [(0, 0), (0, n - 1), (n - 1, 0), (n - 1, n - 1)]
    return np.stack([traj.u[:, i, j] for i, j in idx], axis=1)


@dataclass
class RDDatasetConfig:
    mu_train: list[float] = field(default_factory=lambda: np.linspace(0.5, 1.5, 10).tolist())
    mu_test: list[float] = field(default_factory=lambda: [0.875, 1.375])
    n_hf: int = 100
    n_lf: int = 32
    d_hf: float = 0.05
    d_lf: float = 0.1
    dt: float = 0.05
    horizon: float = 80.0
    t_train: float = 40.0
    stride: int = 10
    half_width: float = 10.0
    noise_sigma: float = 0.8
    initial: str = "spiral"
    seed: int = 0


def _check_mu(values):
    for mu in values:
        if not 0.5 <= mu <= 1.5:
            raise ValueError(f"mu={mu} outside the parameter range [0.5, 1.5]")


def build_rd_dataset(cfg: RDDatasetConfig) -> MultiFidelityDataset:
    """Run HF and corrupted LF solves for every mu and assemble the level inputs.

    Level 0 sees (t, mu), level 1 the four HF vertex sensors, level 2 the
    flattened noisy LF field. Training samples carry targets on [0, t_train];
    test samples are scored over the whole horizon.
    """
    _check_mu(cfg.mu_train)
    _check_mu(cfg.mu_test)
    if not 0 < cfg.t_train <= cfg.horizon:
        raise ValueError("t_train must lie in (0, horizon]")

    mus = [*cfg.mu_train, *cfg.mu_test]
    is_train = [True] * len(cfg.mu_train) + [False] * len(cfg.mu_test)
    x0, x1, x2, ys = [], [], [], []
    times = None
    for i, mu in enumerate(mus):
        common = dict(mu=mu, initial=cfg.initial, half_width=cfg.half_width, dt=cfg.dt, horizon=cfg.horizon, stride=cfg.stride)
        hf = rd_solve(RDConfig(n=cfg.n_hf, diffusion=cfg.d_hf, **common))
        lf = rd_solve(RDConfig(n=cfg.n_lf, diffusion=cfg.d_lf, **common))
        lf = corrupt_lowfidelity(lf, NoiseConfig(sigma=cfg.noise_sigma, seed=cfg.seed * 100003 + i))
        log.info("solved mu=%.4f (%s)", mu, "train" if is_train[i] else "test")
        times = hf.times
        x0.append(np.column_stack([hf.times, np.full_like(hf.times, mu)]))
        x1.append(extract_vertex_series(hf))
        x2.append(lf.u.reshape(len(lf.times), -1))
        ys.append(hf.u.reshape(len(hf.times), -1))

    K = len(times)
    train_steps = times <= cfg.t_train + 1e-9
    train_mask = np.array([train_steps if tr else np.zeros(K, bool) for tr in is_train])
    test_mask = np.array([np.zeros(K, bool) if tr else np.ones(K, bool) for tr in is_train])
    return MultiFidelityDataset(
        inputs=[np.stack(x0), np.stack(x1), np.stack(x2)],
        targets=np.stack(ys),
        times=np.tile(times, (len(mus), 1)),
        sample_ids=np.asarray(mus, dtype=np.float64),
        train_mask=train_mask,
        test_mask=test_mask,
        meta={"experiment": "rd", "generator": {k: v for k, v in vars(cfg).items()}},
    )
