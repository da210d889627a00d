"""Parameter recovery for BASE at dengue scale (T=68, D=10).

    python scripts/recovery.py --out recovery.csv
"""

from _common import config, parser

from runoff.experiments import recovery_study


def main():
    p = parser(__doc__.splitlines()[0], 20, 20000, 10000, 5)
    p.add_argument("--T", type=int, default=68)
    p.add_argument("--D", type=int, default=10)
    args = p.parse_args()
    df = recovery_study(args.replicates, config(args), args.T, args.D, seed=args.seed)
    df.to_csv(args.out, index=False)
    print(df.groupby("parameter")["covered"].agg(["sum", "count"]).to_string())


if __name__ == "__main__":
    main()
