"""DIC/WAIC comparison of M0-M7 on data with region-specific delays (M4 truth, 6 regions).

    python scripts/selection.py --out selection.csv
"""

from _common import config, parser

from runoff.experiments import selection_study, selection_summary

MODELS = ("M0", "M1", "M2", "M3", "M4", "M5", "M6", "M7")


def main():
    p = parser(__doc__.splitlines()[0], 10, 10000, 5000, 5)
    p.add_argument("--models", nargs="+", default=list(MODELS))
    args = p.parse_args()
    df = selection_study(args.replicates, config(args), models=tuple(args.models), seed=args.seed)
    df.to_csv(args.out, index=False)
    summ = selection_summary(df)
    print(summ.to_string(index=False))
    print(f"M4 beats M0 on DIC: {summ['truth_beats_rival'].sum()}/{len(summ)}; "
          f"DIC/WAIC agree: {summ['agree'].sum()}/{len(summ)}")


if __name__ == "__main__":
    main()
