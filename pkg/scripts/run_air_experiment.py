"""Air-quality experiment on the hourly multisensor record.

    python scripts/run_air_experiment.py --csv AirQualityUCI.csv --workdir runs/air

The CSV may also be given through the PMFS_AIR_CSV environment variable.
"""
import argparse
import logging
import os
import time
from pathlib import Path

from pmfs.config import parse_config
from pmfs.pipeline import evaluate, ingest_air, load_inputs, train_from_config

ROOT = Path(__file__).resolve().parents[1]


def run(csv, workdir, config=ROOT / "configs" / "air.yaml", ensemble=None, seed=None):
    cfg = parse_config(config)
    workdir = Path(workdir)
    ingest_air(cfg, csv, workdir / "data")
    t0 = time.perf_counter()
    obj, train_s = train_from_config(cfg, workdir / "data", m=ensemble, seed=seed)
    report = evaluate(obj, load_inputs(cfg, workdir / "data"), field=True)
    report.runtime.update(train_s=train_s, total_s=time.perf_counter() - t0)
    out = workdir / "report"
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(report.metrics_csv())
    (out / "per_time.csv").write_text(report.per_time_csv())
    (out / "report.txt").write_text(report.text())
    return report


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--csv", default=os.environ.get("PMFS_AIR_CSV"))
    p.add_argument("--config", default=ROOT / "configs" / "air.yaml")
    p.add_argument("--workdir", default=ROOT / "runs" / "air")
    p.add_argument("--ensemble", type=int)
    p.add_argument("--seed", type=int)
    args = p.parse_args()
    if not args.csv:
        p.error("no input file: pass --csv or set PMFS_AIR_CSV")
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s: %(message)s")
    print(run(args.csv, args.workdir, args.config, args.ensemble, args.seed).text())


if __name__ == "__main__":
    main()
