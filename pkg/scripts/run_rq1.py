"""Linear-measure accuracy: MASE of expected attribution vs. reference sample size.

    python scripts/run_rq1.py --repetitions 100 --out results
"""

import argparse
import json
from dataclasses import replace
from pathlib import Path

import numpy as np

from cubeshap.experiments import LinearSimConfig, run_linear_sim


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repetitions", type=int, default=LinearSimConfig.repetitions)
    ap.add_argument("--seed", type=int, default=LinearSimConfig.seed)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", default="results")
    args = ap.parse_args()

    config = replace(LinearSimConfig(), repetitions=args.repetitions, seed=args.seed, threads=args.threads)
    report = run_linear_sim(config)
    print(report.summary(percent=True))
    slope = np.polyfit(report.x, report.mean, 1)[0]
    print(f"fitted slope of mean MASE vs N: {slope:.3e}")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "rq1.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    (out / "rq1.csv").write_text(report.to_csv())


if __name__ == "__main__":
    main()
