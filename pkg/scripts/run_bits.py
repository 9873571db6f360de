"""Fitted scaling exponents of the bit counts b(eps) over eps in [1e-3, 1e-1]."""

import numpy as np

from rectiflow.rectifiable import bit_count, bit_count_countable, kappa_log, kappa_poly, scaling_exponent


def main():
    eps = np.geomspace(1e-3, 1e-1, 25)
    print("class         m  slope  polylog-corrected  target")
    for m in (1, 2, 3):
        C = m + 1
        cases = [("rectifiable", lambda e: bit_count(m, 2, C, e), m),
                 ("kappa=log", lambda e: bit_count_countable(m, 2, C, kappa_log, e), m)]
        for k in (0.5, 1.0):
            cases.append((f"kappa=eps^-{k}", lambda e, k=k: bit_count_countable(m, 2, C, kappa_poly(k), e),
                          m * (k + 1)))
        for name, b, target in cases:
            bits = [b(e) for e in eps]
            print(f"{name:<13} {m}  {scaling_exponent(eps, bits):.3f}"
                  f"  {scaling_exponent(eps, bits, polylog=True):.3f}  {target:g}")


if __name__ == "__main__":
    main()
