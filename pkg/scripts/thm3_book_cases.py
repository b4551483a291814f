"""Sample means around a tree with one missing edge, for book cases a, b and d."""

import time

from _common import parser, run, threads_note

CASES = {"a": "thm3_case_a.toml", "b": "thm3_case_b.json", "d": "thm3_case_d.json"}


def main():
    p = parser(__doc__)
    p.add_argument("--cases", default="abd")
    args = p.parse_args()
    for case in args.cases:
        t0 = time.perf_counter()
        rep = run(CASES[case], args)
        d = rep.discrepancy
        print(f"case {case}: law {rep.law.kind}, integrals {rep.certificate['book_integrals']}")
        print(f"  off-spine fraction      {d['off_spine_fraction']:.4f}")
        print(f"  covariance rel. error   {d['frobenius_vs_prediction']:.4f}")
        print(f"  KS first coordinate     {d['ks'][0]['statistic']:.4f}" if d["ks"] else "  (no coordinates)")
        if rep.law.kind == "half_line_gaussian":
            print(f"  zeros {d['zero_fraction_first']:.4f} vs predicted {d['predicted_zero_fraction_first']:.4f}")
        print(f"  elapsed {time.perf_counter() - t0:.1f}s ({threads_note()})")


if __name__ == "__main__":
    main()
