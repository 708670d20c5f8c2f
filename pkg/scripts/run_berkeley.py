"""Berkeley admissions: contribution of applicants and admissions per department
to the female-minus-male admission-rate gap.

    python scripts/run_berkeley.py [--engine exact]
"""

import argparse

from cubeshap.experiments import contribution_table, run_berkeley
from cubeshap.gam import EngineConfig
from cubeshap.model import rank_subcubes


def main() -> None:
    ap = argparse.ArgumentParser(description="Berkeley admissions attribution")
    ap.add_argument("--engine", default="aumann-ratio-closed")
    args = ap.parse_args()

    c = run_berkeley(EngineConfig(engine=args.engine))
    print(f"engine={c.method}  delta={c.delta_y * 100:+.4f}%  residual={c.residual:.2e}")
    print(contribution_table(c))
    print()
    print("ranking:", ", ".join(f"{label} ({total * 100:+.2f}%)" for label, total in rank_subcubes(c)))


if __name__ == "__main__":
    main()
