"""Command-line driver: ``pmfs {gen-rd,ingest-air,train,predict,evaluate}``."""
from __future__ import annotations

import argparse
import logging
import os
import sys
import tempfile
from pathlib import Path

from . import pipeline
from .archive import load_dataset, load_model
from .config import RunConfig, parse_config

log = logging.getLogger("pmfs")


def _write_text(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _config(args) -> RunConfig | None:
    return parse_config(args.config) if getattr(args, "config", None) else None


def _need(value, what: str):
    if value is None:
        raise ValueError(f"no {what} given")
    return Path(value)


def cmd_gen_rd(args) -> int:
    from .config import parse_config_dict

    cfg = _config(args)
    if cfg is None:
        # a bare generator run only needs the data section
        cfg = parse_config_dict({"experiment": "rd", "output": {"d_out": 1}, "decoder": {"hidden": [1]},
                                 "levels": [{"encoder": "dense", "d_in": 2, "d_h": 1, "hidden": [1]}]})
    out = args.out if args.out is not None else cfg.path("dataset")
    path = pipeline.generate_rd(cfg, _need(out, "output directory (--out)"), args.seed)
    print(f"wrote reaction-diffusion dataset to {path}")
    return 0


def cmd_ingest_air(args) -> int:
    cfg = _config(args)
    csv_path = args.csv or (cfg.path("csv") if cfg else None)
    out = args.out or (cfg.path("dataset") if cfg else None)
    path = pipeline.ingest_air(cfg, _need(csv_path, "input CSV (--csv)"), _need(out, "output directory (--out)"),
                               columns=args.columns, missing_marker=args.missing_marker)
    print(f"wrote air-quality dataset to {path}")
    return 0


def cmd_train(args) -> int:
    from .archive import save_model

    cfg = parse_config(args.config)
    data = _need(args.data or cfg.path("dataset"), "dataset directory (--data)")
    out = _need(args.out or cfg.path("archive"), "archive path (--out)")
    obj, seconds = pipeline.train_from_config(cfg, data, m=args.ensemble, seed=args.seed)
    save_model(obj, out, extra_meta={"experiment": cfg.experiment})
    members = len(pipeline.members(obj))
    print(f"trained {len(cfg.levels)} level(s) x {members} member(s) in {seconds:.1f} s; archive {out}")
    return 0


def _dataset_for(args, cfg: RunConfig | None, upto: int, targets: bool):
    data = args.data or (cfg.path("dataset") if cfg else None)
    data = _need(data, "dataset directory (--data)")
    if cfg is not None:
        return pipeline.load_inputs(cfg, data, upto=upto, targets=targets)
    return load_dataset(data, levels=range(upto + 1), targets=targets)


def cmd_predict(args) -> int:
    cfg = _config(args)
    archive = _need(args.archive or (cfg.path("archive") if cfg else None), "archive (--archive)")
    obj = load_model(archive)
    n_levels = pipeline.as_ensemble(obj).n_levels
    lbar = n_levels - 1 if args.level is None else args.level
    if not 0 <= lbar < n_levels:
        raise ValueError(f"--level {lbar} out of range: model has levels 0..{n_levels - 1}")
    ds = _dataset_for(args, cfg, lbar, targets=False)
    text = pipeline.predict_table(obj, ds, lbar, field=args.space == "field", samples=args.samples)
    if args.out:
        _write_text(Path(args.out), text)
        print(f"level {lbar} predictions written to {args.out}", file=sys.stderr)
    else:
        sys.stdout.write(text)
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    archive = _need(args.archive or (cfg.path("archive") if cfg else None), "archive (--archive)")
    obj = load_model(archive)
    ds = _dataset_for(args, cfg, pipeline.as_ensemble(obj).n_levels - 1, targets=True)
    space = args.space or ("field" if (cfg is None or cfg.evaluate.get("field", True)) else "model")
    report = pipeline.evaluate(obj, ds, field=space == "field")
    text = report.text()
    sys.stdout.write(text)
    out = args.out or (cfg.path("out") if cfg else None)
    if out is not None:
        out = Path(out)
        _write_text(out / "metrics.csv", report.metrics_csv())
        _write_text(out / "per_time.csv", report.per_time_csv())
        _write_text(out / "report.txt", text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pmfs", description="Progressive multi-fidelity surrogate experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True, metavar="{gen-rd,ingest-air,train,predict,evaluate}")

    g = sub.add_parser("gen-rd", help="generate the reaction-diffusion dataset")
    g.add_argument("--config")
    g.add_argument("--seed", type=int)
    g.add_argument("--out")
    g.set_defaults(func=cmd_gen_rd)

    a = sub.add_parser("ingest-air", help="convert the air-quality CSV into a dataset")
    a.add_argument("--config")
    a.add_argument("--csv")
    a.add_argument("--out")
    a.add_argument("--columns", help='e.g. "levels=T,RH,PT08.S1(CO),PT08.S5(O3);target=C6H6(GT)"')
    a.add_argument("--missing-marker", type=float)
    a.set_defaults(func=cmd_ingest_air)

    t = sub.add_parser("train", help="train all levels sequentially and write an archive")
    t.add_argument("--config", required=True)
    t.add_argument("--data")
    t.add_argument("--seed", type=int)
    t.add_argument("--ensemble", type=int)
    t.add_argument("--out")
    t.set_defaults(func=cmd_train)

    for name, func, helptext in (("predict", cmd_predict, "write predictions as CSV"),
                                 ("evaluate", cmd_evaluate, "per-level relative errors on the test set")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config")
        s.add_argument("--archive")
        s.add_argument("--data")
        s.add_argument("--out")
        s.add_argument("--space", choices=("field", "model"))
        if name == "predict":
            s.add_argument("--level", type=int)
            s.add_argument("--samples", choices=("test", "all"), default="test")
            s.set_defaults(space="field")
        s.set_defaults(func=func)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except KeyboardInterrupt:
        print("error: interrupted", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - every failure becomes a one-line message
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
