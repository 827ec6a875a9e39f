"""Tent functional tests.

Reference values come from independent brute-force implementations written
here: cone and box functionals are recomputed with per-cell, per-ball loops,
the mesh-free engine is checked against closed-form overlap integrals, and
the fitted-bound protocols freeze constants on a seeded batch before a fresh
holdout batch must honor them.
"""

import csv
import io
import math

import numpy as np
import pytest

from conical_lab.grid import (
    Grid,
    TimeGrid,
    UpperHalfField,
    ball_cells,
    ball_kernel,
    ball_sum,
    lp_norm_weighted,
    torus_distance,
)
from conical_lab.weights import (
    BallFamily,
    Weight,
    power_weight_in_Ar,
    power_weight_in_RHs,
)
from conical_lab import tent
from conical_lab.tent import ConeParams


def rand_field(grid, tgrid, rng):
    shape = (len(tgrid.levels), *grid.shape)
    vals = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return UpperHalfField(grid, tgrid, vals)


def brute_cone(F, params):
    grid, tg = F.grid, F.tgrid
    lo = -np.inf if params.t_lo is None else params.t_lo
    hi = np.inf if params.t_hi is None else params.t_hi
    centers = grid.cell_centers().reshape(-1, grid.n)
    flat = np.abs(F.values).reshape(len(tg.levels), -1) ** params.q
    out = np.zeros(grid.ncells)
    for i, c in enumerate(centers):
        acc = 0.0
        for k, t in enumerate(tg.levels):
            if t < lo - 1e-12 or t > hi + 1e-12:
                continue
            cells = ball_cells(grid, c, min(params.aperture * t, 0.5))
            acc += tg.dlog * (grid.h / t) ** grid.n * flat[k][cells].sum()
        out[i] = acc ** (1.0 / params.q)
    return out.reshape(grid.shape)


def brute_carleson(F, q, family):
    grid, tg = F.grid, F.tgrid
    flat = np.abs(F.values).reshape(len(tg.levels), -1) ** q
    out = np.zeros(grid.ncells)
    for c, r in family.iter_balls():
        cells = ball_cells(grid, c, r)
        ks = [k for k, t in enumerate(tg.levels) if t <= r]
        if not ks:
            continue
        val = tg.dlog * flat[np.ix_(ks, cells)].sum() / cells.size
        out[cells] = np.maximum(out[cells], val)
    return (out ** (1.0 / q)).reshape(grid.shape)


def brute_carleson_p0(F, q, p0, family):
    grid, tg = F.grid, F.tgrid
    flat = np.abs(F.values).reshape(len(tg.levels), -1) ** q
    centers = grid.cell_centers().reshape(-1, grid.n)
    cone_prefix = np.zeros((len(tg.levels), grid.ncells))
    for i, c in enumerate(centers):
        acc = 0.0
        for k, t in enumerate(tg.levels):
            cells = ball_cells(grid, c, min(t, 0.5))
            acc += tg.dlog * (grid.h / t) ** grid.n * flat[k][cells].sum()
            cone_prefix[k, i] = acc
    times = np.asarray(tg.levels)
    out = np.zeros(grid.ncells)
    for c, r in family.iter_balls():
        cells = ball_cells(grid, c, r)
        j = int(np.searchsorted(times, r, side="right"))
        if j == 0:
            continue
        val = float((cone_prefix[j - 1][cells] ** (p0 / q)).mean())
        out[cells] = np.maximum(out[cells], val)
    return (out ** (1.0 / p0)).reshape(grid.shape)


def generic_copy(family):
    # same balls, but without the dense-radii flag: forces the per-ball path
    return BallFamily(family.grid, family.centers, family.radii)


@pytest.fixture(scope="module")
def lab1():
    grid = Grid(1, 16)
    tg = TimeGrid.spanning(grid)
    return grid, tg, rand_field(grid, tg, np.random.default_rng(101))


@pytest.fixture(scope="module")
def lab2():
    grid = Grid(2, 8)
    tg = TimeGrid.spanning(grid)
    return grid, tg, rand_field(grid, tg, np.random.default_rng(102))


@pytest.fixture(scope="module")
def lab32():
    grid = Grid(2, 32)
    tg = TimeGrid.spanning(grid)
    fam = BallFamily.dense_dyadic(grid)
    return grid, tg, fam


class TestConeParams:
    def test_validation(self):
        with pytest.raises(ValueError):
            ConeParams(aperture=0.0)
        with pytest.raises(ValueError):
            ConeParams(aperture=1.0, q=0.0)
        with pytest.raises(ValueError):
            ConeParams(aperture=1.0, t_lo=0.3, t_hi=0.2)

    def test_wraparound_rejected_at_construction(self):
        with pytest.raises(ValueError, match="wrap around"):
            ConeParams(aperture=1.2, t_hi=0.45)

    def test_wraparound_rejected_at_evaluation(self, lab1):
        grid, tg, F = lab1
        # t_hi unset, so the check can only happen against the actual ladder
        params = ConeParams(aperture=1.3)
        assert 1.3 * max(tg.levels) > 0.5
        with pytest.raises(ValueError, match="wrap around"):
            tent.cone_functional(F, params)

    def test_empty_time_window(self, lab1):
        grid, tg, F = lab1
        with pytest.raises(ValueError, match="selects no levels"):
            tent.cone_functional(F, ConeParams(aperture=1.0, t_lo=0.41, t_hi=0.42))


class TestConeFunctional:
    def test_zero_field(self, lab1):
        grid, tg, _ = lab1
        Z = UpperHalfField(grid, tg, np.zeros((len(tg.levels), *grid.shape)))
        out = tent.cone_functional(Z, ConeParams(aperture=1.0))
        assert np.all(out.values == 0)

    @pytest.mark.parametrize("aperture,q", [(0.5, 2.0), (1.0, 2.0), (1.0, 1.5)])
    def test_matches_brute_1d(self, lab1, aperture, q):
        grid, tg, F = lab1
        params = ConeParams(aperture=aperture, q=q)
        got = tent.cone_functional(F, params).values.real
        np.testing.assert_allclose(got, brute_cone(F, params), rtol=1e-12)

    def test_matches_brute_2d(self, lab2):
        grid, tg, F = lab2
        params = ConeParams(aperture=1.0, q=2.0)
        got = tent.cone_functional(F, params).values.real
        np.testing.assert_allclose(got, brute_cone(F, params), rtol=1e-12)

    def test_matches_brute_truncated(self, lab1):
        grid, tg, F = lab1
        params = ConeParams(aperture=1.0, q=2.0, t_lo=0.05, t_hi=0.2)
        got = tent.cone_functional(F, params).values.real
        np.testing.assert_allclose(got, brute_cone(F, params), rtol=1e-12)

    def test_constant_slices_closed_form(self, lab1):
        # F(y, t_k) = c_k is constant in y, so every cone integrates the
        # same ball counts and the output is a constant grid function
        grid, tg, _ = lab1
        c = 1.0 + 0.1 * np.arange(len(tg.levels))
        F = UpperHalfField(
            grid, tg, np.broadcast_to(c[:, None], (len(c), grid.N)).copy()
        )
        out = tent.cone_functional(F, ConeParams(aperture=1.0, q=2.0)).values.real
        expect = 0.0
        for k, t in enumerate(tg.levels):
            _, cnt = ball_kernel(grid.n, grid.N, min(t, 0.5))
            expect += tg.dlog * (grid.h / t) ** grid.n * cnt * c[k] ** 2
        np.testing.assert_allclose(out, math.sqrt(expect), rtol=1e-12)

    def test_aperture_monotone(self, lab2):
        grid, tg, F = lab2
        a = tent.cone_functional(F, ConeParams(aperture=0.5)).values.real
        b = tent.cone_functional(F, ConeParams(aperture=1.0)).values.real
        assert np.all(a <= b + 1e-12)

    def test_power_identity(self, lab2):
        # A_q F = (A_2 |F|^{q/2})^{2/q} holds exactly, not approximately
        grid, tg, F = lab2
        q = 3.0
        lhs = tent.cone_functional(F, ConeParams(aperture=1.0, q=q)).values.real
        H = UpperHalfField(grid, tg, np.abs(F.values) ** (q / 2))
        rhs = tent.cone_functional(H, ConeParams(aperture=1.0, q=2.0)).values.real
        np.testing.assert_allclose(lhs, rhs ** (2.0 / q), rtol=1e-13)


class TestContinuousCone:
    # the reference profile a(y,t) = chi_{B(0,1/4)}(y) chi_{[1/2,1]}(t)

    @pytest.mark.parametrize("alpha", [0.5, 1.0, 2.0])
    def test_l2_fubini_1d(self, alpha):
        # int A^2 dx = int_{1/2}^1 |B_{alpha t}| |B_{1/4}| t^{-2} dt = alpha ln 2
        got = tent.continuous_cone_on_indicator(alpha, 2.0, 0.0, 1)
        np.testing.assert_allclose(got, math.sqrt(alpha * math.log(2)), rtol=1e-8)

    @pytest.mark.parametrize("alpha", [0.5, 1.0, 2.0])
    def test_l2_fubini_2d(self, alpha):
        # int A^2 dx = int_{1/2}^1 pi (alpha t)^2 (pi/16) t^{-3} dt
        #            = pi^2 alpha^2 ln 2 / 16
        got = tent.continuous_cone_on_indicator(alpha, 2.0, 0.0, 2)
        np.testing.assert_allclose(
            got, math.pi * alpha * math.sqrt(math.log(2)) / 4, rtol=1e-8
        )

    def test_profile_flat_core(self):
        # for alpha >= 1 the cone at |x| <= (2 alpha - 1)/4 sees the whole
        # ball at every time, so the profile is constant there
        alpha = 1.5
        flat2 = 3 * math.pi / 32
        for rho in [0.0, 0.1, (2 * alpha - 1) / 4 - 1e-9]:
            np.testing.assert_allclose(
                tent.cone_profile_on_indicator(rho, alpha, 2), flat2, rtol=1e-12
            )
        np.testing.assert_allclose(
            tent.cone_profile_on_indicator(0.0, alpha, 1), 0.5, rtol=1e-12
        )

    def test_origin_value(self):
        got = math.sqrt(tent.cone_profile_on_indicator(0.0, 1.0, 2))
        np.testing.assert_allclose(got, math.sqrt(3 * math.pi / 32), rtol=1e-12)
        np.testing.assert_allclose(got, 0.5427009409187007, rtol=1e-12)

    def test_support_radius(self):
        alpha = 1.0
        assert tent.cone_profile_on_indicator(alpha + 0.25 + 1e-9, alpha, 2) == 0.0
        assert tent.cone_profile_on_indicator(alpha + 0.25 - 1e-3, alpha, 2) > 0.0

    @pytest.mark.parametrize(
        "n,theta,p", [(2, -1.0, 2.0), (1, 0.5, 2.0)]
    )
    def test_growth_exponent(self, n, theta, p):
        # || A^alpha a ||_{L^p(|x|^{-theta})} grows like alpha^{(n-theta)/p}
        alphas = np.array([2.0, 4.0, 8.0])
        vals = [tent.continuous_cone_on_indicator(a, p, theta, n) for a in alphas]
        slope = np.polyfit(np.log(alphas), np.log(vals), 1)[0]
        expect = (n - theta) / p
        assert abs(slope - expect) < 0.1 * expect

    def test_validation(self):
        with pytest.raises(ValueError):
            tent.continuous_cone_on_indicator(1.0, 2.0, 0.0, 3)
        with pytest.raises(ValueError):
            tent.continuous_cone_on_indicator(1.0, 2.0, 2.0, 2)
        with pytest.raises(ValueError):
            tent.continuous_cone_on_indicator(0.0, 2.0, 0.0, 2)
        with pytest.raises(ValueError):
            tent.continuous_cone_on_indicator(1.0, 0.0, 0.0, 2)


class TestCarleson:
    @pytest.mark.parametrize("q", [2.0, 1.5])
    def test_matches_brute_dense_1d(self, lab1, q):
        grid, tg, F = lab1
        fam = BallFamily.dense_dyadic(grid)
        got = tent.carleson_functional(F, q, fam).values.real
        np.testing.assert_allclose(got, brute_carleson(F, q, fam), rtol=1e-12)

    def test_matches_brute_dense_2d(self, lab2):
        grid, tg, F = lab2
        fam = BallFamily.dense_dyadic(grid)
        got = tent.carleson_functional(F, 2.0, fam).values.real
        np.testing.assert_allclose(got, brute_carleson(F, 2.0, fam), rtol=1e-12)

    def test_generic_path_equals_dense(self, lab1):
        grid, tg, F = lab1
        fam = BallFamily.dense_dyadic(grid)
        dense = tent.carleson_functional(F, 2.0, fam).values.real
        loose = tent.carleson_functional(F, 2.0, generic_copy(fam)).values.real
        np.testing.assert_allclose(loose, dense, rtol=1e-12)

    def test_constant_field_closed_form(self, lab2):
        grid, tg, _ = lab2
        F = UpperHalfField(grid, tg, np.ones((len(tg.levels), *grid.shape)))
        fam = BallFamily.dense_dyadic(grid)
        out = tent.carleson_functional(F, 2.0, fam).values.real
        # every box average of 1 equals dlog * (number of levels below r),
        # so the sup is attained at the largest radius
        r_top = max(float(r) for r in fam.radii)
        nlev = sum(1 for t in tg.levels if t <= r_top)
        np.testing.assert_allclose(out, math.sqrt(tg.dlog * nlev), rtol=1e-12)

    def test_power_identity(self, lab1):
        grid, tg, F = lab1
        fam = BallFamily.dense_dyadic(grid)
        q = 3.0
        lhs = tent.carleson_functional(F, q, fam).values.real
        H = UpperHalfField(grid, tg, np.abs(F.values) ** (q / 2))
        rhs = tent.carleson_functional(H, 2.0, fam).values.real
        np.testing.assert_allclose(lhs, rhs ** (2.0 / q), rtol=1e-13)

    @pytest.mark.parametrize("p0", [1.2, 2.0])
    def test_p0_matches_brute_1d(self, lab1, p0):
        grid, tg, F = lab1
        fam = BallFamily.dense_dyadic(grid)
        got = tent.carleson_p0(F, 2.0, p0, fam).values.real
        np.testing.assert_allclose(got, brute_carleson_p0(F, 2.0, p0, fam), rtol=1e-12)

    def test_p0_matches_brute_2d(self, lab2):
        grid, tg, F = lab2
        fam = BallFamily.dense_dyadic(grid)
        got = tent.carleson_p0(F, 2.0, 1.5, fam).values.real
        np.testing.assert_allclose(got, brute_carleson_p0(F, 2.0, 1.5, fam), rtol=1e-12)

    def test_p0_generic_path_equals_dense(self, lab1):
        grid, tg, F = lab1
        fam = BallFamily.dense_dyadic(grid)
        dense = tent.carleson_p0(F, 2.0, 1.5, fam).values.real
        loose = tent.carleson_p0(F, 2.0, 1.5, generic_copy(fam)).values.real
        np.testing.assert_allclose(loose, dense, rtol=1e-12)

    def test_p0_power_identity(self, lab1):
        # C_{q,p0} F = (C_{2, 2 p0/q} |F|^{q/2})^{2/q}
        grid, tg, F = lab1
        fam = BallFamily.dense_dyadic(grid)
        q, p0 = 3.0, 1.8
        lhs = tent.carleson_p0(F, q, p0, fam).values.real
        H = UpperHalfField(grid, tg, np.abs(F.values) ** (q / 2))
        rhs = tent.carleson_p0(H, 2.0, 2 * p0 / q, fam).values.real
        np.testing.assert_allclose(lhs, rhs ** (2.0 / q), rtol=1e-13)

    def test_validation(self, lab1):
        grid, tg, F = lab1
        fam = BallFamily.dense_dyadic(grid)
        with pytest.raises(ValueError):
            tent.carleson_functional(F, 0.0, fam)
        with pytest.raises(ValueError):
            tent.carleson_p0(F, 2.0, 0.0, fam)
        other = BallFamily.dense_dyadic(Grid(1, 32))
        with pytest.raises(ValueError, match="family grid"):
            tent.carleson_functional(F, 2.0, other)


# ratio bounds between the two q = 2 box functionals, recorded at N = 32
# over 50 random fields (measured 1.7342 and 0.5809)
BRACKET_HI = 1.75
BRACKET_LO = 0.60


class TestCarlesonEquivalence:
    @staticmethod
    def _extremes(N, count, seed):
        grid = Grid(2, N)
        tg = TimeGrid.spanning(grid)
        fam = BallFamily.dense_dyadic(grid)
        rng = np.random.default_rng(seed)
        hi = lo = 0.0
        for _ in range(count):
            F = rand_field(grid, tg, rng)
            c = tent.carleson_functional(F, 2.0, fam).values.real
            c2 = tent.carleson_p0(F, 2.0, 2.0, fam).values.real
            hi = max(hi, float((c2 / c).max()))
            lo = max(lo, float((c / c2).max()))
        return hi, lo

    def test_bracket_at_n32(self):
        hi, lo = self._extremes(32, 50, seed=7)
        assert hi <= BRACKET_HI
        assert lo <= BRACKET_LO

    def test_bracket_stable_at_n64(self):
        # full 50-field refinement run lives in the acceptance suite; a
        # smaller batch already pins the drift
        hi, lo = self._extremes(64, 8, seed=7)
        assert hi <= 1.25 * BRACKET_HI
        assert lo <= 1.25 * BRACKET_LO


class TestFitReport:
    def test_semantics(self):
        rep = tent.fitted_bound_report([1.0, 2.0], [2.9], margin=1.5)
        assert rep.constant == 2.0
        assert rep.holdout_max == 2.9
        assert rep.ok
        assert not tent.fitted_bound_report([1.0, 2.0], [3.1], margin=1.5).ok

    def test_validation(self):
        with pytest.raises(ValueError):
            tent.fitted_bound_report([], [1.0])
        with pytest.raises(ValueError):
            tent.fitted_bound_report([1.0], [])
        with pytest.raises(ValueError):
            tent.fitted_bound_report([np.inf], [1.0])


class TestFittedBounds:
    @pytest.mark.parametrize(
        "p0,p,theta",
        [(1.2, 2.0, None), (1.2, 3.0, -1.0)],
    )
    def test_cone_vs_carleson_p0_two_sided(self, lab32, p0, p, theta):
        grid, tg, fam = lab32
        if theta is None:
            w = Weight.ones(grid)
        else:
            w = Weight.power_law(grid, theta)
            # the reverse direction needs w in A_{p/p0}
            assert power_weight_in_Ar(theta, grid.n, p / p0)
        cone = ConeParams(aperture=1.0, q=2.0)
        rng = np.random.default_rng(210)

        def ratios(count):
            fwd, rev = [], []
            for _ in range(count):
                F = rand_field(grid, tg, rng)
                na = lp_norm_weighted(tent.cone_functional(F, cone), w.values, p)
                nc = lp_norm_weighted(tent.carleson_p0(F, 2.0, p0, fam), w.values, p)
                fwd.append(na / nc)
                rev.append(nc / na)
            return fwd, rev

        fit_f, fit_r = ratios(10)
        hold_f, hold_r = ratios(20)
        assert tent.fitted_bound_report(fit_f, hold_f, margin=1.5).ok
        assert tent.fitted_bound_report(fit_r, hold_r, margin=1.5).ok

    def test_angle_growth_in_Ar(self, lab32):
        # theta = -1 keeps w in A_2 at n = 2; growing the aperture from
        # alpha to beta costs at most (beta/alpha)^{n r / p}
        grid, tg, _ = lab32
        r, p, theta = 2.0, 2.0, -1.0
        assert power_weight_in_Ar(theta, grid.n, r)
        assert p <= 2 * r
        w = Weight.power_law(grid, theta)
        pairs = [(0.25, 0.5), (0.25, 1.0), (0.5, 1.0)]
        rng = np.random.default_rng(220)

        def ratios(count):
            out = []
            for _ in range(count):
                F = rand_field(grid, tg, rng)
                norms = {
                    a: lp_norm_weighted(
                        tent.cone_functional(F, ConeParams(aperture=a)), w.values, p
                    )
                    for a in {x for pair in pairs for x in pair}
                }
                for a, b in pairs:
                    out.append((norms[b] / norms[a]) / (b / a) ** (grid.n * r / p))
            return out

        assert tent.fitted_bound_report(ratios(10), ratios(50), margin=1.5).ok

    def test_angle_decay_in_RHs(self, lab32):
        # theta = 1 keeps w in RH_{s'} for s = 4 at n = 2; shrinking the
        # aperture wins a factor (alpha/beta)^{n/(s p)}
        grid, tg, _ = lab32
        s, p, theta = 4.0, 2.0, 1.0
        assert power_weight_in_RHs(theta, grid.n, s / (s - 1))
        assert p >= 2 / s
        w = Weight.power_law(grid, theta)
        pairs = [(0.25, 0.5), (0.25, 1.0), (0.5, 1.0)]
        rng = np.random.default_rng(230)

        def ratios(count):
            out = []
            for _ in range(count):
                F = rand_field(grid, tg, rng)
                norms = {
                    a: lp_norm_weighted(
                        tent.cone_functional(F, ConeParams(aperture=a)), w.values, p
                    )
                    for a in {x for pair in pairs for x in pair}
                }
                for a, b in pairs:
                    out.append((norms[a] / norms[b]) / (a / b) ** (grid.n / (s * p)))
            return out

        assert tent.fitted_bound_report(ratios(10), ratios(50), margin=1.5).ok

    def test_shrinking_ball_at_fixed_time(self, lab32):
        # L^1(w) norms of (integral over B(x, alpha t) of |h|)^{1/q} shrink
        # like alpha^{n/s} when w is in RH_{s'}; q = s = 2, theta = 0.5
        grid, tg, _ = lab32
        q, s, theta, t = 2.0, 2.0, 0.5, 0.4
        assert power_weight_in_RHs(theta, grid.n, s / (s - 1))
        w = Weight.power_law(grid, theta)
        hn = grid.h**grid.n
        rng = np.random.default_rng(240)

        def ratios(count):
            out = []
            for _ in range(count):
                h = np.abs(rng.standard_normal(grid.shape))
                base = float(
                    ((ball_sum(h, t) * hn) ** (1 / q) * w.values).sum() * hn
                )
                for alpha in (0.125, 0.25, 0.5):
                    lhs = float(
                        ((ball_sum(h, alpha * t) * hn) ** (1 / q) * w.values).sum()
                        * hn
                    )
                    out.append(lhs / (alpha ** (grid.n / s) * base))
            return out

        assert tent.fitted_bound_report(ratios(10), ratios(20), margin=1.5).ok


def brute_chebyshev(mask, grid):
    centers = grid.cell_centers().reshape(-1, grid.n)
    comp = centers[~mask.ravel()]
    out = np.empty(grid.ncells)
    for i, x in enumerate(centers):
        d = np.abs(x[None, :] - comp)
        d = np.minimum(d, 1 - d)
        out[i] = d.max(axis=1).min()
    return out.reshape(grid.shape)


@pytest.fixture(scope="module")
def ball_mask():
    grid = Grid(2, 32)
    pts = grid.cell_centers().reshape(-1, 2)
    mask = (torus_distance(pts, [0.5, 0.5]) <= 0.25).reshape(grid.shape)
    return grid, mask, tent.whitney(mask, grid)


class TestWhitney:
    def test_single_cell(self):
        grid = Grid(1, 16)
        mask = np.zeros(grid.shape, bool)
        mask[3] = True
        (cube,) = tent.whitney(mask, grid)
        assert cube.level == 4
        assert cube.corner == (3,)
        assert cube.side == pytest.approx(grid.h)
        assert cube.dist == pytest.approx(grid.h)

    def test_half_slab_1d(self):
        grid = Grid(1, 16)
        mask = np.zeros(grid.shape, bool)
        mask[:8] = True
        cubes = tent.whitney(mask, grid)
        got = [(q.level, q.corner) for q in cubes]
        # cubes shrink dyadically toward both mask edges
        assert got == [
            (3, (1,)),
            (3, (2,)),
            (4, (0,)),
            (4, (1,)),
            (4, (6,)),
            (4, (7,)),
        ]

    def test_partition(self, ball_mask):
        grid, mask, cubes = ball_mask
        cover = np.zeros(grid.shape, int)
        for q in cubes:
            cover[q.cell_slices(grid)] += 1
        assert np.array_equal(cover, mask.astype(int))

    def test_side_vs_distance(self, ball_mask):
        grid, mask, cubes = ball_mask
        D = tent.chebyshev_to_complement(mask, grid)
        for q in cubes:
            block_min = float(D[q.cell_slices(grid)].min())
            assert q.dist == pytest.approx(block_min)
            assert q.side <= q.dist + 1e-12
            assert q.dist <= 4 * q.side + 1e-12

    def test_dilate_overlap(self, ball_mask):
        # 9/8-dilates have bounded overlap; count cells inside each dilate
        grid, mask, cubes = ball_mask
        centers = grid.cell_centers()
        counts = np.zeros(grid.shape, int)
        for q in cubes:
            c = (np.asarray(q.corner) + 0.5) * q.side
            d = np.abs(centers - c)
            d = np.minimum(d, 1 - d)
            counts += np.all(d <= (9 / 16) * q.side + 1e-12, axis=-1)
        assert counts.max() <= 12**grid.n

    def test_sorted_output(self, ball_mask):
        _, _, cubes = ball_mask
        keys = [(q.level, q.corner) for q in cubes]
        assert keys == sorted(keys)

    def test_distance_field_matches_brute(self, ball_mask):
        grid, mask, _ = ball_mask
        got = tent.chebyshev_to_complement(mask, grid)
        expect = brute_chebyshev(mask, grid)
        np.testing.assert_allclose(got, expect, atol=1e-12)
        g1 = Grid(1, 16)
        m1 = np.zeros(g1.shape, bool)
        m1[:8] = True
        np.testing.assert_allclose(
            tent.chebyshev_to_complement(m1, g1), brute_chebyshev(m1, g1), atol=1e-12
        )

    def test_degenerate_masks(self):
        grid = Grid(1, 16)
        with pytest.raises(ValueError, match="empty"):
            tent.whitney(np.zeros(grid.shape, bool), grid)
        with pytest.raises(ValueError, match="whole torus"):
            tent.whitney(np.ones(grid.shape, bool), grid)

    def test_csv_round_trip(self, ball_mask):
        grid, _, cubes = ball_mask
        text = tent.cubes_to_csv(cubes, grid.n)
        rows = list(csv.reader(io.StringIO(text)))
        assert rows[0] == ["level", "corner_0", "corner_1", "side", "dist"]
        assert len(rows) == len(cubes) + 1
        for row, q in zip(rows[1:], cubes):
            assert int(row[0]) == q.level
            assert tuple(int(c) for c in row[1:3]) == q.corner
            assert float(row[3]) == q.side
            assert float(row[4]) == q.dist


@pytest.fixture(scope="module")
def fam():
    grid = Grid(1, 32)
    return grid, BallFamily.dense_dyadic(grid)


class TestGammaDensity:
    def test_empty_mask(self, fam):
        grid, family = fam
        out = tent.gamma_density_complement(np.zeros(grid.shape, bool), 0.5, family)
        assert not out.any()

    def test_contains_mask(self, fam):
        grid, family = fam
        rng = np.random.default_rng(5)
        mask = rng.random(grid.shape) < 0.3
        out = tent.gamma_density_complement(mask, 0.7, family)
        assert np.all(out[mask])

    def test_half_torus_no_extension(self, fam):
        # centered averages of a half torus never exceed 1/2, so at
        # gamma = 1/2 the enlargement is the mask itself
        grid, family = fam
        mask = np.zeros(grid.shape, bool)
        mask[:16] = True
        out = tent.gamma_density_complement(mask, 0.5, family)
        assert np.array_equal(out, mask)

    def test_matches_direct_maximal(self, fam):
        grid, family = fam
        mask = np.zeros(grid.shape, bool)
        mask[:16] = True
        gamma = 0.9
        out = tent.gamma_density_complement(mask, gamma, family)
        assert out.sum() > mask.sum()
        centers = grid.cell_centers().reshape(-1, grid.n)
        radii = sorted({float(r) for r in family.radii})
        expect = mask.copy().ravel()
        for i, c in enumerate(centers):
            best = max(
                float(mask.ravel()[ball_cells(grid, c, r)].mean()) for r in radii
            )
            expect[i] |= best > 1 - gamma
        assert np.array_equal(out.ravel(), expect)

    def test_complement_keeps_density(self, fam):
        # every family ball centered outside the enlargement keeps at
        # least gamma of its cells outside the original mask
        grid, family = fam
        mask = np.zeros(grid.shape, bool)
        mask[:16] = True
        gamma = 0.9
        out = tent.gamma_density_complement(mask, gamma, family)
        centers = grid.cell_centers().reshape(-1, grid.n)
        radii = sorted({float(r) for r in family.radii})
        for i in np.flatnonzero(~out.ravel()):
            for r in radii:
                cells = ball_cells(grid, centers[i], r)
                assert (~mask.ravel()[cells]).mean() >= gamma - 1e-12

    def test_validation(self, fam):
        grid, family = fam
        mask = np.zeros(grid.shape, bool)
        mask[0] = True
        for bad in (0.0, 1.0, -0.2):
            with pytest.raises(ValueError):
                tent.gamma_density_complement(mask, bad, family)
        with pytest.raises(ValueError, match="mask shape"):
            tent.gamma_density_complement(np.zeros((4,), bool), 0.5, family)
