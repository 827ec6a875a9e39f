"""Whitney cubes of a disc and the gamma-density extension of its mask.

Decomposes an open disc on the torus into dyadic cubes whose sides track
their distance to the complement, prints the cube census by level, and
shows the gamma-density extension collapsing onto the mask as gamma
decreases.
"""

from collections import Counter

import numpy as np

from conical_lab import tent
from conical_lab.grid import Grid, torus_distance
from conical_lab.weights import BallFamily


def main():
    g = Grid(2, 64)
    centers = g.cell_centers()
    mask = torus_distance(centers, np.array([0.5, 0.5])) < 0.3

    cubes = tent.whitney(mask, g)
    census = Counter(q.level for q in cubes)
    print(f"disc mask: {int(mask.sum())} cells, {len(cubes)} cubes")
    for level in sorted(census):
        side = 1.0 / (1 << level)
        print(f"  level {level}: {census[level]:3d} cubes of side {side}")

    fam = BallFamily.dense_dyadic(g)
    for gamma in (0.95, 0.75, 0.5):
        grown = tent.gamma_density_complement(mask, gamma, fam)
        print(f"gamma = {gamma}: density set has {int(grown.sum())} cells")


if __name__ == "__main__":
    main()
