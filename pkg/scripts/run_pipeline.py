"""Run the Hessian-bound pipeline from a TOML config and write the JSON report.

    python scripts/run_pipeline.py configs/pipeline.toml --out pipeline_report.json
"""
import argparse

from ma_lab.pipeline import load_config, run_pipeline
from ma_lab.reporting import dumps


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("--out")
    args = ap.parse_args()
    rep = run_pipeline(load_config(args.config))
    text = dumps(rep)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    status = "passed" if rep.passed else f"failed at {rep.failed_step}"
    print(f"pipeline {status}: r={rep.r}, p={rep.p}, bound={rep.final_bound}, observed={rep.ball_hessian_max}")


if __name__ == "__main__":
    main()
