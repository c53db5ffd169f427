"""Reaction-diffusion experiment: generate, train the ensemble, evaluate.

    python scripts/run_rd_experiment.py --config configs/rd_desk.yaml --workdir runs/rd_desk
"""
import argparse
import json
import logging
import time
from pathlib import Path

from pmfs.archive import TARGETS_FILE, load_model, save_model
from pmfs.config import parse_config
from pmfs.pipeline import evaluate, generate_rd, load_inputs, train_from_config

ROOT = Path(__file__).resolve().parents[1]


def run(config, workdir, ensemble=None, seed=None, reuse=True):
    cfg = parse_config(config)
    workdir = Path(workdir)
    data, archive = workdir / "data", workdir / "model.pmfs"
    timings = {}
    t0 = time.perf_counter()
    if not (reuse and (data / TARGETS_FILE).exists()):
        generate_rd(cfg, data)
    timings["generate_s"] = time.perf_counter() - t0
    if reuse and archive.exists():
        obj = load_model(archive)
        timings["train_s"] = 0.0
    else:
        obj, timings["train_s"] = train_from_config(cfg, data, m=ensemble, seed=seed)
        save_model(obj, archive, extra_meta={"experiment": cfg.experiment})
    report = evaluate(obj, load_inputs(cfg, data), field=cfg.evaluate.get("field", True))
    report.runtime.update(timings)
    out = workdir / "report"
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(report.metrics_csv())
    (out / "per_time.csv").write_text(report.per_time_csv())
    (out / "report.txt").write_text(report.text())
    return report


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config", default=ROOT / "configs" / "rd_desk.yaml")
    p.add_argument("--workdir", default=ROOT / "runs" / "rd_desk")
    p.add_argument("--ensemble", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--fresh", action="store_true", help="ignore cached data and archive")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s: %(message)s")
    report = run(args.config, args.workdir, args.ensemble, args.seed, reuse=not args.fresh)
    print(report.text())
    e = report.level_errors
    print(json.dumps({"decreasing": all(a > b for a, b in zip(e, e[1:])), "top_level_error": e[-1]}))


if __name__ == "__main__":
    main()
