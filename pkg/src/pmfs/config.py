"""Run configuration: YAML file with nested sections, strictly validated."""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import yaml

from .nn import ConfigError, LossConfig
from .progressive import ENCODER_KINDS, LevelSpec, TrainConfig, check_hierarchy

EXPERIMENTS = ("rd", "air", "files")

_TOP = {"experiment", "seed", "ensemble", "paths", "generate", "ingest", "output", "train", "decoder", "levels", "evaluate"}
_PATHS = {"dataset", "archive", "out", "csv"}
_OUTPUT = {"d_out", "pod_modes", "pod_energy", "scaler"}
_TRAIN = {"lr", "epochs", "batch_size", "lambda_reg", "lambda_enc", "lambda_dec", "bptt_window", "window"}
_DECODER = {"kind", "hidden"}
_LEVEL = {"name", "encoder", "d_in", "d_h", "d_h_tot", "hidden", "n_pod", "pod_energy", "scaler", "input", "train"}
_EVAL = {"field"}


@dataclass
class LevelDecl:
    spec: LevelSpec
    input: str | None = None
    train: dict = field(default_factory=dict)


@dataclass
class RunConfig:
    experiment: str
    levels: list[LevelDecl]
    train: TrainConfig
    seed: int = 0
    ensemble: int = 1
    paths: dict = field(default_factory=dict)
    generate: dict = field(default_factory=dict)
    ingest: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    evaluate: dict = field(default_factory=dict)
    source: Path | None = None

    @property
    def specs(self) -> list[LevelSpec]:
        return [d.spec for d in self.levels]

    def level_train(self, level: int, seed: int | None = None) -> TrainConfig:
        """Shared training settings with the level's overrides applied."""
        return _train_config(self.levels[level].train, replace(self.train, seed=self.seed if seed is None else seed),
                             f"levels[{level}].train")

    def path(self, key: str, default: str | None = None) -> Path | None:
        value = self.paths.get(key, default)
        if value is None:
            return None
        p = Path(value)
        if not p.is_absolute() and self.source is not None:
            p = self.source.parent / p
        return p


def _check_keys(section: dict, allowed: set, where: str):
    if not isinstance(section, dict):
        raise ConfigError(f"section {where!r} must be a mapping")
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]!r} in section {where!r}")


def _require(section: dict, key: str, where: str):
    if key not in section:
        raise ConfigError(f"missing required key {key!r} in section {where!r}")
    return section[key]


def _int_list(value, where: str) -> list[int]:
    if not isinstance(value, list) or not all(isinstance(v, int) and v > 0 for v in value):
        raise ConfigError(f"{where} must be a list of positive integers")
    return list(value)


def _train_config(section: dict, base: TrainConfig, where: str) -> TrainConfig:
    _check_keys(section, _TRAIN, where)
    loss = LossConfig(
        lambda_reg=float(section.get("lambda_reg", base.loss.lambda_reg)),
        lambda_enc=float(section.get("lambda_enc", base.loss.lambda_enc)),
        lambda_dec=float(section.get("lambda_dec", base.loss.lambda_dec)),
    )
    kw = {k: section[k] for k in ("epochs", "batch_size", "bptt_window", "window") if k in section}
    if "lr" in section:
        kw["lr"] = float(section["lr"])
    return replace(base, loss=loss, **kw)


def parse_config_dict(raw: dict, source: Path | None = None) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping at the top level")
    _check_keys(raw, _TOP, "<top>")
    experiment = _require(raw, "experiment", "<top>")
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {experiment!r}")
    levels_raw = _require(raw, "levels", "<top>")
    if not isinstance(levels_raw, list) or not levels_raw:
        raise ConfigError("section 'levels' must be a non-empty list")

    paths = raw.get("paths", {})
    _check_keys(paths, _PATHS, "paths")
    output = raw.get("output", {})
    _check_keys(output, _OUTPUT, "output")
    if "pod_modes" in output and "pod_energy" in output:
        raise ConfigError("section 'output': give at most one of pod_modes or pod_energy")
    decoder = raw.get("decoder", {})
    _check_keys(decoder, _DECODER, "decoder")
    dec_hidden = _int_list(_require(decoder, "hidden", "decoder"), "decoder.hidden")
    dec_kind = decoder.get("kind", "lstm")
    evaluate = raw.get("evaluate", {})
    _check_keys(evaluate, _EVAL, "evaluate")

    d_out = output.get("pod_modes") or output.get("d_out")
    if d_out is None:
        raise ConfigError("section 'output' needs d_out (or pod_modes when the output is POD-reduced)")

    train = _train_config(raw.get("train", {}), TrainConfig(), "train")

    decls = []
    total = 0
    for i, lv in enumerate(levels_raw):
        where = f"levels[{i}]"
        _check_keys(lv, _LEVEL, where)
        kind = _require(lv, "encoder", where)
        if kind not in ENCODER_KINDS:
            raise ConfigError(f"{where}: encoder must be one of {ENCODER_KINDS}, got {kind!r}")
        d_in = int(_require(lv, "d_in", where))
        d_h = int(_require(lv, "d_h", where))
        total += d_h
        d_h_tot = int(lv.get("d_h_tot", total))
        if d_h_tot != total:
            raise ConfigError(
                f"{where}: declared decoder input d_h_tot={d_h_tot} does not match the latent chain "
                f"({' + '.join(str(int(l['d_h'])) for l in levels_raw[:i + 1])} = {total})"
            )
        spec = LevelSpec(
            index=i, kind=kind, d_in=d_in, d_h=d_h, d_h_tot=d_h_tot, d_out=int(d_out),
            encoder_hidden=_int_list(_require(lv, "hidden", where), f"{where}.hidden"),
            decoder_hidden=dec_hidden, decoder_kind=dec_kind,
            n_pod=lv.get("n_pod"), pod_energy=lv.get("pod_energy"),
            scaler=lv.get("scaler", "minmax"), name=lv.get("name", ""),
        )
        overrides = lv.get("train", {})
        _train_config(overrides, train, f"{where}.train")
        decls.append(LevelDecl(spec=spec, input=lv.get("input"), train=overrides))
    check_hierarchy([d.spec for d in decls])

    ensemble = int(raw.get("ensemble", 1))
    if ensemble < 1:
        raise ConfigError("ensemble size must be >= 1")
    return RunConfig(
        experiment=experiment, levels=decls, train=train, seed=int(raw.get("seed", 0)), ensemble=ensemble,
        paths=paths, generate=raw.get("generate", {}), ingest=raw.get("ingest", {}), output=output,
        evaluate=evaluate, source=source,
    )


def parse_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from exc
    return parse_config_dict(raw, source=path)


def check_data_dims(cfg: RunConfig, dims: list[int]):
    """Compare declared level input widths against the data before any training."""
    for decl, d in zip(cfg.levels, dims):
        if decl.spec.d_in != d:
            raise ConfigError(
                f"levels[{decl.spec.index}]: declared d_in={decl.spec.d_in} but the data provides {d} channel(s)"
            )
