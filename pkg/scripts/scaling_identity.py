"""Check E[phi(aX + bY)] = E[phi(sqrt(a^2 + b^2) X)] for independent G-normal X, Y.

    python3 scripts/scaling_identity.py --a 1 --b 1
"""
import argparse

from gexpect import CovarianceSet, GNormalSpec, parse
from gexpect.gnormal import scaling_identity_check


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--a", type=float, default=1.0)
    ap.add_argument("--b", type=float, default=1.0)
    ap.add_argument("--sigma", type=float, nargs="+", default=[0.25, 1.0], help="variances")
    ap.add_argument("--payoffs", nargs="+", default=["x1^2", "x1^4", "abs(x1)", "max(x1, 0)"])
    ap.add_argument("--rel-tol", type=float, default=5e-3)
    args = ap.parse_args()

    spec = GNormalSpec(CovarianceSet.from_variances(args.sigma))
    r = scaling_identity_check(spec, args.a, args.b, [parse(t, 1) for t in args.payoffs], args.rel_tol)
    for row in r.rows:
        print(f"{row['phi']:>14}  lhs {row['lhs']:.6f}  rhs {row['rhs']:.6f}  diff {row['abs_diff']:.1e}")
    print("ok" if r.ok else "FAILED", f"(max diff {r.max_abs_diff:.1e})")
    raise SystemExit(0 if r.ok else 1)


if __name__ == "__main__":
    main()
