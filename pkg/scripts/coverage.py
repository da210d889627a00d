"""Censor-and-refit calibration of 95% nowcast intervals on BASE data.

    python scripts/coverage.py --replicates 100 --out coverage.csv
"""

from _common import config, parser

from runoff.experiments import calibration_study
from runoff.simulator import coverage_summary


def main():
    p = parser(__doc__.splitlines()[0], 100, 6000, 3000, 3)
    p.add_argument("--T", type=int, default=68)
    p.add_argument("--D", type=int, default=10)
    args = p.parse_args()
    df = calibration_study(args.replicates, config(args), args.T, args.D, seed=args.seed)
    df.to_csv(args.out, index=False)
    print(coverage_summary(df).to_string())


if __name__ == "__main__":
    main()
