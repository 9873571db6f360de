"""End-to-end generation of the uniform measure on a quarter circle, N = 4..32."""

import argparse

from rectiflow.rectifiable import build_pipeline, quarter_circle_piece, uniform_parameter_measure


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--N", type=int, nargs="+", default=[4, 8, 16, 32])
    p.add_argument("--atoms", type=int, default=4000)
    args = p.parse_args()
    piece = quarter_circle_piece()
    mu = uniform_parameter_measure(1, args.atoms)
    print("N  claimed  measured  slack  depth  connectivity  width  ok")
    for N in args.N:
        slack = piece.side * piece.sample.lip / (4 * args.atoms)
        c = build_pipeline(piece, mu, N, atoms=args.atoms, target_slack=slack).certificate
        print(f"{N:<3} {c.claimed_w1:.4f}  {c.measured_w1:.5f}  {c.slack:.1e}  {c.metrics['depth']['value']}"
              f"  {c.metrics['connectivity']['value']}  {c.metrics['width']['value']}  {c.ok}")


if __name__ == "__main__":
    main()
