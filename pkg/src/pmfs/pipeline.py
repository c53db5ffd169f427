"""Experiment orchestration shared by the CLI and the scripts."""
from __future__ import annotations

import csv
import io
import logging
import time
from pathlib import Path

import numpy as np

from .archive import load_dataset, read_archive, save_dataset
from .config import RunConfig, check_data_dims
from .data import MultiFidelityDataset
from .metrics import MetricsReport, relative_errors
from .progressive import (
    Ensemble,
    ProgressiveModel,
    _with_d_out,
    ensemble_predictions,
    moments,
    train_ensemble,
    train_level,
)

log = logging.getLogger(__name__)


def generate_rd(cfg: RunConfig, out: Path | None = None, seed: int | None = None) -> Path:
    from .rd import RDDatasetConfig, build_rd_dataset

    gen = dict(cfg.generate)
    if seed is not None:
        gen["seed"] = seed
    try:
        rd_cfg = RDDatasetConfig(**gen)
    except TypeError as exc:
        raise ValueError(f"section 'generate': {exc}") from exc
    out = Path(out) if out is not None else cfg.path("dataset")
    if out is None:
        raise ValueError("no output directory: pass --out or set paths.dataset")
    save_dataset(build_rd_dataset(rd_cfg), out)
    return out


def ingest_air(cfg: RunConfig | None, csv_path, out, columns=None, missing_marker=None) -> Path:
    from .air import AirWindow, ColumnMap, ingest_air_quality

    opts = dict(cfg.ingest) if cfg is not None else {}
    window = AirWindow(**{k: opts.pop(k) for k in ("start", "train_end", "test_end", "max_gap") if k in opts})
    cmap = ColumnMap.parse(columns) if columns else ColumnMap(**opts.pop("columns", {}))
    marker = missing_marker if missing_marker is not None else opts.pop("missing_marker", -200.0)
    delimiter = opts.pop("delimiter", None)
    decimal = opts.pop("decimal", None)
    if opts:
        raise ValueError(f"unknown key {sorted(opts)[0]!r} in section 'ingest'")
    ds = ingest_air_quality(csv_path, cmap, marker, window, delimiter=delimiter, decimal=decimal)
    save_dataset(ds, out)
    return Path(out)


def load_inputs(cfg: RunConfig, data_dir: Path, upto: int | None = None, targets: bool = True) -> MultiFidelityDataset:
    """Load the dataset with inputs for levels ``0..upto`` only.

    Level declarations may point at their own input file; other levels read
    ``levelN.pmfs`` from the dataset directory.
    """
    upto = len(cfg.levels) - 1 if upto is None else upto
    overrides = {d.spec.index: d.input for d in cfg.levels if d.input}
    plain = [l for l in range(upto + 1) if l not in overrides]
    ds = load_dataset(data_dir, levels=plain, targets=targets)
    if len(ds.inputs) < len(cfg.levels):
        ds.inputs.extend([None] * (len(cfg.levels) - len(ds.inputs)))
    for l, path in overrides.items():
        if l <= upto:
            p = Path(path)
            if not p.is_absolute() and cfg.source is not None:
                p = cfg.source.parent / p
            ds.inputs[l] = read_archive(p)[1]["x"]
    return ds


def output_model(cfg: RunConfig, ds: MultiFidelityDataset) -> ProgressiveModel:
    """Empty model carrying the output POD and scaler fitted on training targets."""
    idx = ds.train_samples
    rows = ds.targets[idx][ds.train_mask[idx]]
    out = cfg.output
    return ProgressiveModel.for_targets(
        rows, n_pod=out.get("pod_modes"), pod_energy=out.get("pod_energy"), scaler=out.get("scaler", "minmax")
    )


def _blank_copy(template: ProgressiveModel) -> ProgressiveModel:
    return ProgressiveModel(template.d_out, template.output_scaler, template.output_pod)


def train_member(cfg: RunConfig, ds: MultiFidelityDataset, seed: int, template: ProgressiveModel | None = None):
    template = template or output_model(cfg, ds)
    model = _blank_copy(template)
    for l, decl in enumerate(cfg.levels):
        train_level(model, ds, _with_d_out(decl.spec, model.d_out), cfg.level_train(l, seed))
    return model


def train_from_config(cfg: RunConfig, data_dir: Path, m: int | None = None, seed: int | None = None):
    """Train one model (m == 1) or an ensemble; returns (object, seconds)."""
    ds = load_inputs(cfg, data_dir)
    check_data_dims(cfg, [x.shape[-1] for x in ds.inputs[: len(cfg.levels)]])
    m = cfg.ensemble if m is None else m
    base = cfg.seed if seed is None else seed
    template = output_model(cfg, ds)
    t0 = time.perf_counter()
    if m == 1:
        obj = train_member(cfg, ds, base, template)
    else:
        obj = train_ensemble(lambda s: train_member(cfg, ds, s, template), m, base)
    return obj, time.perf_counter() - t0


def members(obj) -> list[ProgressiveModel]:
    return obj.members if isinstance(obj, Ensemble) else [obj]


def as_ensemble(obj) -> Ensemble:
    return obj if isinstance(obj, Ensemble) else Ensemble([obj], [0])


def predict_table(obj, ds: MultiFidelityDataset, lbar: int, field: bool = False, samples: str = "test") -> str:
    """CSV of per-step predictions at level ``lbar`` (mean and std over members)."""
    ens = as_ensemble(obj)
    idx = ds.test_samples if samples == "test" else np.arange(ds.n_samples)
    inputs = [None if x is None else x[idx] for x in ds.inputs]
    preds = ensemble_predictions(ens, inputs, lbar, field=field)[:, -1]
    mean, std = moments(preds)
    if samples == "test":
        keep = ds.test_mask[idx]
    else:
        keep = np.arange(ds.times.shape[1])[None, :] < ds.lengths[idx][:, None]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["time", "sample_id", "channel", "mean", "std"])
    for a, n in enumerate(idx):
        sid = repr(float(ds.sample_ids[n]))
        for k in np.flatnonzero(keep[a]):
            t = repr(float(ds.times[n, k]))
            for c in range(mean.shape[-1]):
                w.writerow([t, sid, c, repr(float(mean[a, k, c])), repr(float(std[a, k, c]))])
    return buf.getvalue()


def evaluate(obj, ds: MultiFidelityDataset, field: bool = True) -> MetricsReport:
    """Per-level relative errors of the (ensemble-mean) prediction on the test mask."""
    ens = as_ensemble(obj)
    idx = ds.test_samples
    mask = ds.test_mask[idx]
    inputs = [None if x is None else x[idx] for x in ds.inputs]
    L = ens.n_levels - 1
    t0 = time.perf_counter()
    preds = ensemble_predictions(ens, inputs, L, field=field)  # (m, levels, N, K, d)
    elapsed = time.perf_counter() - t0
    ref = ds.targets[idx]
    if not field and ens.members[0].output_pod is not None:
        from .pod import pod_project
        ref = pod_project(ens.members[0].output_pod, ref)
    mean, std = moments(preds)
    t_unique, t_index = np.unique(ds.times[idx][mask], return_inverse=True)
    counts = np.bincount(t_index)
    level_err, member_mean, member_std, spread, per_time = [], [], [], [], []
    for l in range(L + 1):
        e = relative_errors(mean[l][mask], ref[mask])
        level_err.append(float(100 * e.mean()))
        per_member = [float(100 * relative_errors(preds[k, l][mask], ref[mask]).mean()) for k in range(ens.m)]
        member_mean.append(float(np.mean(per_member)))
        member_std.append(float(np.std(per_member, ddof=1)) if ens.m > 1 else 0.0)
        spread.append(float(std[l][mask].mean()))
        per_time.append(100 * np.bincount(t_index, weights=e) / counts)
    return MetricsReport(
        level_errors=level_err,
        member_error_mean=member_mean,
        member_error_std=member_std,
        mean_std=spread,
        per_time=np.array(per_time),
        times=t_unique,
        runtime={"predict_seconds": elapsed},
        n_members=ens.m,
        n_test=int(mask.sum()),
    )
