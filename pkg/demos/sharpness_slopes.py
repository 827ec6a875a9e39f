"""Growth of the weighted cone norm of the reference indicator profile.

The cone functional of the unit-ball indicator admits a mesh-free radial
form, so its weighted norm can be evaluated to quadrature accuracy for any
aperture. Doubling the aperture multiplies the norm by 2^{(n-theta)/p};
the log-log slope printed below recovers that exponent.
"""

import numpy as np

from conical_lab import tent

ALPHAS = (1.0, 2.0, 4.0, 8.0, 16.0)


def main():
    print(f"{'n':>2} {'p':>4} {'theta':>6} {'fitted':>8} {'exact':>7}")
    for n, p, theta in ((1, 1.0, 0.0), (1, 2.0, 0.5), (2, 2.0, 0.0),
                        (2, 2.0, 1.0), (2, 4.0, 1.5)):
        vals = [tent.continuous_cone_on_indicator(a, p, theta, n)
                for a in ALPHAS]
        slope = np.polyfit(np.log(ALPHAS), np.log(vals), 1)[0]
        print(f"{n:>2} {p:>4.1f} {theta:>6.2f} {slope:>8.4f} "
              f"{(n - theta) / p:>7.4f}")


if __name__ == "__main__":
    main()
