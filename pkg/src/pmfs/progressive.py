"""Progressive multi-fidelity model.

Each level ``l`` owns an encoder mapping its input sequence to a latent
sequence ``h_l`` and a decoder reading the per-step concatenation
``[h_0, ..., h_l]``. Level outputs are summed, so level ``l`` only learns a
correction on top of the frozen prediction of levels ``< l``::

    y_0 = dec_0(h_0)
    y_l = y_{l-1} + dec_l([h_0, ..., h_l])

All network outputs live in "model space": the (optionally POD-reduced)
target, min-max scaled with training statistics.
"""
from __future__ import annotations

import logging
import multiprocessing as mp
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .data import DataError, MultiFidelityDataset, ScalerStats, apply_scaler, fit_scaler, invert_scaler
from .nn import (
    AdamState,
    ConfigError,
    LayerSpec,
    LossConfig,
    Net,
    NetSpec,
    ShapeError,
    adam_step,
    add_l2_grads,
    loss_mse_l2,
    mse_grad,
)
from .pod import PODBasis, fit_pod, pod_project, pod_reconstruct

log = logging.getLogger(__name__)

ENCODER_KINDS = ("dense", "lstm", "pod_lstm")


class OrderingError(RuntimeError):
    pass


class AvailabilityError(LookupError):
    pass


class EnsembleError(RuntimeError):
    def __init__(self, failures: dict[int, BaseException]):
        self.failures = failures
        detail = "; ".join(f"seed {s}: {e}" for s, e in sorted(failures.items()))
        super().__init__(f"{len(failures)} ensemble member(s) failed ({detail})")


@dataclass
class LevelSpec:
    """Static description of one level.

    ``d_in`` is the raw input width. For ``pod_lstm`` encoders the input is
    first reduced to ``n_pod`` modes (or to ``pod_energy`` of the variance).
    """

    index: int
    kind: str
    d_in: int
    d_h: int
    d_h_tot: int
    d_out: int
    encoder_hidden: list[int]
    decoder_hidden: list[int]
    decoder_kind: str = "lstm"
    n_pod: int | None = None
    pod_energy: float | None = None
    scaler: str = "minmax"
    name: str = ""

    def __post_init__(self):
        if self.kind not in ENCODER_KINDS:
            raise ConfigError(f"level {self.index}: unknown encoder kind {self.kind!r}")
        if self.decoder_kind not in ("dense", "lstm"):
            raise ConfigError(f"level {self.index}: unknown decoder kind {self.decoder_kind!r}")
        for name in ("d_in", "d_h", "d_h_tot", "d_out"):
            if getattr(self, name) < 1:
                raise ConfigError(f"level {self.index}: {name} must be positive")
        if self.kind == "pod_lstm" and (self.n_pod is None) == (self.pod_energy is None):
            raise ConfigError(f"level {self.index}: pod_lstm needs exactly one of n_pod or pod_energy")
        if self.d_h_tot < self.d_h:
            raise ConfigError(f"level {self.index}: d_h_tot={self.d_h_tot} smaller than d_h={self.d_h}")

    def encoder_spec(self, d_features: int) -> NetSpec:
        kind = "dense" if self.kind == "dense" else "lstm"
        return NetSpec.stack(d_features, kind, self.encoder_hidden, self.d_h)

    def decoder_spec(self) -> NetSpec:
        return NetSpec.stack(self.d_h_tot, self.decoder_kind, self.decoder_hidden, self.d_out)

    def to_dict(self) -> dict:
        return dict(vars(self))

    @classmethod
    def from_dict(cls, d: dict) -> "LevelSpec":
        return cls(**d)


def check_hierarchy(specs: list[LevelSpec]):
    """Validate index contiguity and the latent/output dimension chain."""
    total = 0
    for i, s in enumerate(specs):
        if s.index != i:
            raise ConfigError(f"level indices must be contiguous from 0; found {s.index} at position {i}")
        total += s.d_h
        if s.d_h_tot != total:
            raise ConfigError(
                f"level {i}: decoder input d_h_tot={s.d_h_tot} but latents sum to {total}"
            )
        if s.d_out != specs[0].d_out:
            raise ConfigError(f"level {i}: d_out={s.d_out} differs from level 0 ({specs[0].d_out})")


@dataclass
class TrainConfig:
    lr: float = 1e-3
    loss: LossConfig = field(default_factory=LossConfig)
    epochs: int = 3000
    batch_size: int | None = None
    seed: int = 0
    bptt_window: int | None = None
    window: int | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")


@dataclass
class Level:
    spec: LevelSpec
    encoder: Net
    decoder: Net
    input_scaler: ScalerStats
    input_pod: PODBasis | None = None
    frozen: bool = False
    history: np.ndarray | None = None

    def freeze(self):
        self.encoder.freeze()
        self.decoder.freeze()
        self.frozen = True

    def features(self, x_raw: np.ndarray) -> np.ndarray:
        """Raw level input -> (POD-reduced) scaled encoder features."""
        x = np.asarray(x_raw, dtype=np.float64)
        if x.shape[-1] != self.spec.d_in:
            raise ShapeError(f"level {self.spec.index} expects {self.spec.d_in} input channels, got {x.shape[-1]}")
        if not np.all(np.isfinite(x)):
            raise DataError(f"level {self.spec.index} input contains NaN or Inf")
        if self.input_pod is not None:
            x = pod_project(self.input_pod, x)
        return apply_scaler(self.input_scaler, x)


class ProgressiveModel:
    def __init__(self, d_out: int, output_scaler: ScalerStats, output_pod: PODBasis | None = None):
        self.levels: list[Level] = []
        self.d_out = d_out
        self.output_scaler = output_scaler
        self.output_pod = output_pod

    @classmethod
    def for_targets(cls, targets: np.ndarray, n_pod: int | None = None, pod_energy: float | None = None,
                    scaler: str = "minmax") -> "ProgressiveModel":
        """Fit the output POD (optional) and scaler on training target rows ``(N, d)``."""
        pod = None
        coeffs = targets
        if n_pod is not None or pod_energy is not None:
            pod = fit_pod(targets, energy_target=pod_energy, n_modes=n_pod)
            coeffs = pod_project(pod, targets)
        stats = fit_scaler(coeffs, scaler)
        return cls(d_out=coeffs.shape[-1], output_scaler=stats, output_pod=pod)

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def target_space(self, y_raw: np.ndarray) -> np.ndarray:
        y = pod_project(self.output_pod, y_raw) if self.output_pod is not None else np.asarray(y_raw, float)
        return apply_scaler(self.output_scaler, y)

    def to_output(self, y_model: np.ndarray, field: bool = False) -> np.ndarray:
        """Model-space prediction -> physical coefficients, or full fields if ``field``."""
        y = invert_scaler(self.output_scaler, y_model)
        if field and self.output_pod is not None:
            y = pod_reconstruct(self.output_pod, y)
        return y

    def encode(self, level: int, x_raw: np.ndarray) -> np.ndarray:
        lv = self.levels[level]
        return lv.encoder.forward(lv.features(x_raw))

    def predict_up_to(self, inputs, lbar: int):
        return predict_up_to(self, inputs, lbar)


def _get_input(inputs, j: int):
    try:
        x = inputs[j]
    except (IndexError, KeyError):
        x = None
    if x is None:
        raise AvailabilityError(f"input for level {j} is not available")
    return x


def predict_up_to(model: ProgressiveModel, inputs, lbar: int, with_latents: bool = False):
    """Online prediction using levels ``0..lbar`` only.

    ``inputs`` is indexable by level (list or dict); entries above ``lbar``
    are never read. Returns the list of model-space predictions
    ``[y_0, ..., y_lbar]`` (and the latent concatenation if requested).
    """
    if not 0 <= lbar < model.n_levels:
        raise AvailabilityError(f"level {lbar} requested but the model has levels 0..{model.n_levels - 1}")
    outs = []
    h_tot = None
    y = None
    for l in range(lbar + 1):
        h = model.encode(l, _get_input(inputs, l))
        h_tot = h if h_tot is None else np.concatenate([h_tot, h], axis=-1)
        corr = model.levels[l].decoder.forward(h_tot)
        y = corr if y is None else y + corr
        outs.append(y)
    return (outs, h_tot) if with_latents else outs


def level_loss_and_grads(encoder: Net, decoder: Net, x, context, offset, target, mask, loss_cfg: LossConfig,
                         bptt_window=None):
    """Loss of ``offset + decoder([context, encoder(x)])`` and gradients for the
    encoder and decoder parameters (encoder first)."""
    h, enc_tape = encoder.forward(x, keep=True)
    z = h if context is None else np.concatenate([context, h], axis=-1)
    corr, dec_tape = decoder.forward(z, keep=True)
    pred = corr if offset is None else offset + corr
    loss = loss_mse_l2(pred, target, encoder.weight_params(), decoder.weight_params(), loss_cfg, mask)
    g_dec, dz = decoder.backward(mse_grad(pred, target, mask), dec_tape, bptt_window)
    g_enc, _ = encoder.backward(dz[..., z.shape[-1] - h.shape[-1]:], enc_tape, bptt_window)
    g_enc = add_l2_grads(g_enc, encoder, loss_cfg.lambda_reg * loss_cfg.lambda_enc)
    g_dec = add_l2_grads(g_dec, decoder, loss_cfg.lambda_reg * loss_cfg.lambda_dec)
    return loss, g_enc + g_dec


def _chunk(arr: np.ndarray, lengths: np.ndarray, window: int) -> np.ndarray:
    """Cut each sample's valid prefix into consecutive windows (zero padded)."""
    pieces = []
    for n, L in enumerate(lengths):
        for start in range(0, int(L), window):
            piece = arr[n, start:min(start + window, L)]
            pad = np.zeros((window - piece.shape[0],) + piece.shape[1:], dtype=arr.dtype)
            pieces.append(np.concatenate([piece, pad]))
    return np.stack(pieces)


def training_arrays(model: ProgressiveModel, dataset: MultiFidelityDataset, level: int, cfg: TrainConfig):
    """Raw inputs for levels ``0..level``, model-space targets and the loss mask
    for the training split."""
    idx = dataset.train_samples
    if idx.size == 0:
        raise DataError("dataset has no training samples")
    lengths = dataset.train_mask[idx].sum(axis=1)
    T = int(lengths.max())
    xs = [dataset.level_input(j)[idx, :T] for j in range(level + 1)]
    y = model.target_space(dataset.targets[idx, :T])
    mask = dataset.train_mask[idx, :T]
    if cfg.window:
        xs = [_chunk(x, lengths, cfg.window) for x in xs]
        y = _chunk(y, lengths, cfg.window)
        mask = _chunk(mask, lengths, cfg.window)
    return xs, y, mask


def train_level(model: ProgressiveModel, dataset: MultiFidelityDataset, spec: LevelSpec, cfg: TrainConfig,
                arrays=None) -> ProgressiveModel:
    """Fit encoder and decoder of a new level on top of the frozen ones.

    Lower levels only contribute precomputed latents and the previous
    prediction; their parameters are read-only. The new level is frozen and
    appended to ``model`` on return.
    """
    l = spec.index
    if l != model.n_levels:
        raise OrderingError(f"cannot train level {l}: model has {model.n_levels} trained level(s)")
    if any(not lv.frozen for lv in model.levels):
        raise OrderingError("all lower levels must be frozen before training a new one")
    check_hierarchy([lv.spec for lv in model.levels] + [spec])
    if spec.d_out != model.d_out:
        raise ConfigError(f"level {l}: d_out={spec.d_out} but model output has {model.d_out} components")

    xs, y, mask = arrays if arrays is not None else training_arrays(model, dataset, l, cfg)
    x_raw = xs[l]
    if x_raw.shape[-1] != spec.d_in:
        raise ConfigError(f"level {l} declares d_in={spec.d_in} but its data has {x_raw.shape[-1]} channels")
    rows = x_raw[mask]
    pod = None
    if spec.kind == "pod_lstm":
        pod = fit_pod(rows, energy_target=spec.pod_energy, n_modes=spec.n_pod)
        rows = pod_project(pod, rows)
    scaler = fit_scaler(rows, spec.scaler)

    rng = np.random.default_rng([cfg.seed, l])
    encoder = Net.build(spec.encoder_spec(rows.shape[-1]), rng)
    decoder = Net.build(spec.decoder_spec(), rng)
    level = Level(spec=spec, encoder=encoder, decoder=decoder, input_scaler=scaler, input_pod=pod)
    feats = level.features(x_raw)

    context = offset = None
    if l > 0:
        outs, context = predict_up_to(model, xs, l - 1, with_latents=True)
        offset = outs[-1]

    params = encoder.params() + decoder.params()
    state = AdamState.zeros_like(params)
    n = feats.shape[0]
    bs = cfg.batch_size or n
    order_rng = np.random.default_rng([cfg.seed, l, 1])
    history = np.empty(cfg.epochs)
    t0 = time.perf_counter()
    for epoch in range(cfg.epochs):
        order = np.arange(n) if bs >= n else order_rng.permutation(n)
        total = 0.0
        for start in range(0, n, bs):
            b = order[start:start + bs]
            loss, grads = level_loss_and_grads(
                encoder, decoder, feats[b],
                None if context is None else context[b],
                None if offset is None else offset[b],
                y[b], mask[b], cfg.loss, cfg.bptt_window,
            )
            adam_step(params, grads, state, cfg.lr)
            total += loss * len(b)
        history[epoch] = total / n
        if (epoch + 1) % max(1, cfg.epochs // 10) == 0:
            log.info("level %d epoch %d/%d loss %.3e (%.1fs)", l, epoch + 1, cfg.epochs, history[epoch],
                     time.perf_counter() - t0)
    level.history = history
    level.freeze()
    model.levels.append(level)
    return model


def final_loss(model: ProgressiveModel, arrays, cfg: TrainConfig, level: int | None = None) -> float:
    """Training objective of the given level (default: top) at the current parameters."""
    xs, y, mask = arrays
    l = model.n_levels - 1 if level is None else level
    pred = predict_up_to(model, xs, l)[-1]
    lv = model.levels[l]
    return loss_mse_l2(pred, y, lv.encoder.weight_params(), lv.decoder.weight_params(), cfg.loss, mask)


def train_progressive(dataset: MultiFidelityDataset, specs: list[LevelSpec], cfg: TrainConfig,
                      output_pod: dict | None = None, output_scaler: str = "minmax") -> ProgressiveModel:
    """Train all levels in hierarchy order with a shared training configuration."""
    check_hierarchy(specs)
    idx = dataset.train_samples
    rows = dataset.targets[idx][dataset.train_mask[idx]]
    model = ProgressiveModel.for_targets(rows, scaler=output_scaler, **(output_pod or {}))
    specs = [_with_d_out(s, model.d_out) for s in specs]
    for spec in specs:
        train_level(model, dataset, spec, cfg)
    return model


def _with_d_out(spec: LevelSpec, d_out: int) -> LevelSpec:
    if spec.d_out == d_out:
        return spec
    # POD truncation can cap the declared coefficient count at the data rank
    return LevelSpec(**{**spec.to_dict(), "d_out": d_out})


@dataclass
class Ensemble:
    members: list[ProgressiveModel]
    seeds: list[int]

    def __post_init__(self):
        if not self.members:
            raise ValueError("an ensemble needs at least one member")
        if len(self.members) != len(self.seeds):
            raise ValueError("one seed per member required")

    @property
    def m(self) -> int:
        return len(self.members)

    @property
    def n_levels(self) -> int:
        return self.members[0].n_levels


_BUILDER = None


def _run_member(seed):
    try:
        return seed, _BUILDER(seed), None
    except Exception as exc:  # noqa: BLE001 - collected and re-raised as EnsembleError
        return seed, None, exc


def default_workers(m: int) -> int:
    env = os.environ.get("PMFS_THREADS")
    return max(1, min(m, int(env))) if env else m


def train_ensemble(builder, m: int, base_seed: int = 0, workers: int | None = None) -> Ensemble:
    """Train ``m`` members with seeds ``base_seed + i``.

    ``builder(seed)`` returns a trained ProgressiveModel. With more than one
    worker, members train in forked processes; results are ordered by seed.
    """
    global _BUILDER
    if m < 1:
        raise ValueError("ensemble size must be >= 1")
    seeds = [base_seed + i for i in range(m)]
    workers = default_workers(m) if workers is None else workers
    _BUILDER = builder
    try:
        if workers > 1 and "fork" in mp.get_all_start_methods():
            with mp.get_context("fork").Pool(workers) as pool:
                results = pool.map(_run_member, seeds)
        else:
            results = [_run_member(s) for s in seeds]
    finally:
        _BUILDER = None
    failures = {s: e for s, _, e in results if e is not None}
    if failures:
        raise EnsembleError(failures)
    results.sort(key=lambda r: r[0])
    return Ensemble(members=[r[1] for r in results], seeds=[r[0] for r in results])


def ensemble_predictions(ens: Ensemble, inputs, lbar: int, field: bool = False) -> np.ndarray:
    """Physical-space predictions of every member and level: ``(m, lbar+1, ...)``."""
    return np.stack([
        np.stack([mdl.to_output(y, field=field) for y in predict_up_to(mdl, inputs, lbar)])
        for mdl in ens.members
    ])


def moments(preds: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean and sample standard deviation over the leading (member) axis."""
    mean = preds.mean(axis=0)
    if preds.shape[0] < 2:
        return mean, np.zeros_like(mean)
    return mean, preds.std(axis=0, ddof=1)


def ensemble_stats(ens: Ensemble, inputs, lbar: int, field: bool = False):
    """Pointwise mean and sample std of the members' level-``lbar`` predictions."""
    preds = np.stack([mdl.to_output(predict_up_to(mdl, inputs, lbar)[-1], field=field) for mdl in ens.members])
    return moments(preds)
