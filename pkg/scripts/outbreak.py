"""Rolling nowcasts around a planted outbreak (amplitude 3, 6 weeks) against naive partial counts.

    python scripts/outbreak.py --out outbreak.csv
"""

from _common import config, parser

from runoff.experiments import outbreak_study


def main():
    p = parser(__doc__.splitlines()[0], 10, 6000, 3000, 3)
    p.add_argument("--amplitude", type=float, default=3.0)
    p.add_argument("--threshold-factor", type=float, default=2.0)
    args = p.parse_args()
    df = outbreak_study(args.replicates, config(args), seed=args.seed, amplitude=args.amplitude,
                        threshold_factor=args.threshold_factor)
    df.to_csv(args.out, index=False)
    print(df.to_string(index=False))
    print(f"nowcast alarm at least one week earlier: {df['early'].sum()}/{len(df)}")


if __name__ == "__main__":
    main()
