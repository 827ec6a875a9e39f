"""Seeded experiment harness and command-line surface.

Each experiment builds a ResultTable whose rows carry a measured value, the
reference it is held against, that reference's provenance (paper, derived,
or fitted), a tolerance, and a verdict. Rows whose parameters fall outside
the analytically checked weight classes are emitted as info, never as fail:
nothing is asserted where the hypotheses do not hold.

Fitted-constant protocol: constants are fitted on the first half of the
samples and asserted on the second half. Refinement-stability protocol: a
quantity counts as bounded when its value at N stays within the configured
drift factor of its value at N/2.
"""

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from datetime import datetime, timezone

import numpy as np

from .grid import (
    Grid,
    TimeGrid,
    UpperHalfField,
    GridFunction,
    ball_sum,
    lp_norm_weighted,
    torus_distance,
)
from .weights import (
    BallFamily,
    Weight,
    admissible_interval,
    hl_maximal,
    p_plus_Kstar,
    power_weight_exponents,
    power_weight_in_Ar,
    power_weight_in_RHs,
)
from .elliptic import (
    CoefficientField,
    SemigroupRequest,
    assemble,
    offdiagonal_opnorm,
)
from . import squarefn, tent


class ConfigError(ValueError):
    """Bad configuration or usage; the CLI maps this to exit code 2."""


_INT_KEYS = ("n", "N", "levels", "samples", "seed", "order")
_FLOAT_KEYS = (
    "t0", "ratio", "theta", "p", "p0", "q", "r", "s",
    "tol", "drift", "margin", "t", "radius",
)
_STR_KEYS = ("experiment", "preset", "coeff_file", "branch", "family", "out")
_TUPLE_KEYS = ("apertures", "center", "separations", "p_list")


def _parse_scalar(key, value):
    try:
        if key in _INT_KEYS:
            return int(value)
        if key in _FLOAT_KEYS:
            return float(value)
        if key in _TUPLE_KEYS:
            return tuple(float(x) for x in value.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"cannot parse {key} = {value!r}") from None
    return value


@dataclass
class ExperimentConfig:
    """Flat key = value configuration; unknown keys are rejected.

    Only seed is mandatory. Every other key has an experiment-specific
    default so a one-line config runs anything.
    """

    seed: int
    experiment: str | None = None
    preset: str = "laplace"
    coeff_file: str | None = None
    n: int | None = None
    N: int | None = None
    t0: float | None = None
    ratio: float | None = None
    levels: int | None = None
    theta: float = 0.0
    center: tuple | None = None
    p: float = 2.0
    p0: float | None = None
    q: float = 2.0
    r: float | None = None
    s: float | None = None
    apertures: tuple | None = None
    p_list: tuple = (1.5, 2.0, 4.0)
    separations: tuple | None = None
    radius: float = 0.04
    t: float | None = None
    samples: int | None = None
    order: int = 0
    tol: float = 0.10
    drift: float = 1.25
    margin: float = 1.5
    branch: str | None = None
    family: str | None = None
    out: str | None = None

    @classmethod
    def parse(cls, text="", overrides=()):
        raw = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"config line {lineno}: expected key = value")
            key, value = line.split("=", 1)
            raw[key.strip()] = value.strip()
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"--set needs key=value, got {item!r}")
            key, value = item.split("=", 1)
            raw[key.strip()] = value.strip()
        known = {f.name for f in fields(cls)}
        for key in raw:
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
        if "seed" not in raw:
            raise ConfigError("seed is mandatory")
        return cls(**{k: _parse_scalar(k, v) for k, v in raw.items()})

    # ------------------------------------------------------------ builders

    def build_grid(self, default_n=1, default_N=32, halve=False):
        n = self.n if self.n is not None else default_n
        N = self.N if self.N is not None else default_N
        if halve:
            N //= 2
        try:
            return Grid(n, N)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def build_operator(self, grid):
        if self.coeff_file is not None:
            try:
                coeff = CoefficientField.from_file(self.coeff_file)
            except (OSError, ValueError) as exc:
                raise ConfigError(str(exc)) from None
            if (coeff.grid.n, coeff.grid.N) != (grid.n, grid.N):
                raise ConfigError(
                    f"coefficient file is sampled at n={coeff.grid.n}, "
                    f"N={coeff.grid.N}; this run needs n={grid.n}, N={grid.N}"
                )
        else:
            try:
                coeff = CoefficientField.preset(grid, self.preset)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        try:
            return assemble(grid, coeff)
        except (ValueError, RuntimeError) as exc:
            raise ConfigError(str(exc)) from None

    def build_tgrid(self, grid):
        if self.t0 is None and self.ratio is None and self.levels is None:
            return TimeGrid.spanning(grid)
        if None in (self.t0, self.ratio, self.levels):
            raise ConfigError("a custom time grid needs t0, ratio, and levels")
        ladder = [self.t0 * self.ratio**k for k in range(self.levels)]
        try:
            return TimeGrid(grid, tuple(ladder))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def build_weight(self, grid):
        if self.theta != 0.0 and not self.theta < grid.n:
            raise ConfigError(f"theta = {self.theta} must stay below n = {grid.n}")
        return Weight.power_law(grid, self.theta, self.center)

    def count(self, default):
        return self.samples if self.samples is not None else default


# --------------------------------------------------------------- results


_VERDICTS = ("pass", "fail", "info")
_PROVENANCE = ("paper", "derived", "fitted")
CSV_COLUMNS = (
    "experiment", "param_json", "measured", "reference",
    "provenance", "tolerance", "verdict",
)


@dataclass(frozen=True)
class ResultRow:
    experiment: str
    params: dict
    measured: float
    reference: float
    provenance: str
    tolerance: float
    verdict: str

    def __post_init__(self):
        if self.verdict not in _VERDICTS:
            raise ValueError(f"verdict must be one of {_VERDICTS}")
        if self.provenance not in _PROVENANCE:
            raise ValueError(f"provenance must be one of {_PROVENANCE}")


@dataclass
class ResultTable:
    rows: list = field(default_factory=list)

    def add(self, experiment, params, measured, reference, provenance,
            tolerance, verdict):
        self.rows.append(ResultRow(
            experiment, dict(params), float(measured), float(reference),
            provenance, float(tolerance), verdict,
        ))

    def info(self, experiment, params, measured, provenance="derived"):
        self.add(experiment, params, measured, math.nan, provenance,
                 math.nan, "info")

    def extend(self, other):
        self.rows.extend(other.rows)

    @property
    def counts(self):
        out = {v: 0 for v in _VERDICTS}
        for row in self.rows:
            out[row.verdict] += 1
        return out

    @property
    def all_pass(self):
        return self.counts["fail"] == 0

    def to_csv(self, timestamp=True):
        buf = io.StringIO()
        if timestamp:
            stamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
            buf.write(f"# generated {stamp}\n")
        writer = csv.writer(buf, quoting=csv.QUOTE_NONNUMERIC, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in self.rows:
            writer.writerow([
                row.experiment,
                json.dumps(row.params, sort_keys=True),
                row.measured,
                row.reference,
                row.provenance,
                row.tolerance,
                row.verdict,
            ])
        return buf.getvalue()

    def write(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_csv())


# ------------------------------------------------------------- sampling


def _thread_count():
    raw = os.environ.get("CONICAL_LAB_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"CONICAL_LAB_THREADS must be an integer, got {raw!r}")


def _spawn_rngs(seed, count):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


def _map_samples(fn, items):
    # per-sample seeds are spawned before dispatch, so results are
    # independent of scheduling
    workers = _thread_count()
    if workers == 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _rand_field(grid, tgrid, rng):
    shape = (len(tgrid.levels), *grid.shape)
    return UpperHalfField(
        grid, tgrid, rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    )


def _rand_gf(grid, rng):
    return GridFunction(
        grid, rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    )


def _fit_holdout(table, experiment, params, ratios, margin):
    """One fitted-constant row pair: the constant, then the holdout verdict."""
    half = max(1, len(ratios) // 2)
    report = tent.fitted_bound_report(ratios[:half], ratios[half:], margin=margin)
    table.info(experiment, {**params, "stat": "fitted_constant"},
               report.constant, provenance="fitted")
    table.add(experiment, {**params, "stat": "holdout_max"},
              report.holdout_max, report.constant, "fitted", margin,
              "pass" if report.ok else "fail")
    return report


# ------------------------------------------------------------ sharpness


def run_sharpness(cfg):
    """Growth of the weighted cone norm of the reference indicator profile."""
    n = cfg.n if cfg.n is not None else 2
    if n not in (1, 2):
        raise ConfigError("sharpness runs need n in {1, 2}")
    if not cfg.theta < n:
        raise ConfigError(f"theta = {cfg.theta} must stay below n = {n}")
    p = cfg.p
    alphas = cfg.apertures if cfg.apertures is not None else (1.0, 2.0, 4.0, 8.0, 16.0)
    if len(alphas) < 2:
        raise ConfigError("need at least two apertures to fit a slope")
    table = ResultTable()
    vals = []
    for alpha in alphas:
        v = tent.continuous_cone_on_indicator(alpha, p, cfg.theta, n)
        vals.append(v)
        table.info("sharpness",
                   {"alpha": alpha, "n": n, "p": p, "theta": cfg.theta}, v)
    slope = float(np.polyfit(np.log(alphas), np.log(vals), 1)[0])
    expect = (n - cfg.theta) / p
    verdict = "pass" if abs(slope - expect) <= cfg.tol * expect else "fail"
    table.add("sharpness",
              {"stat": "loglog_slope", "n": n, "p": p, "theta": cfg.theta},
              slope, expect, "paper", cfg.tol, verdict)
    return table


# ------------------------------------------------------- change of angle


def run_change_of_angle(cfg):
    """Aperture growth/decay rates of the discrete cone in weighted norms."""
    if cfg.branch not in ("i", "ii"):
        raise ConfigError("angles runs need branch = i or ii")
    grid = cfg.build_grid(default_n=2, default_N=32)
    tgrid = cfg.build_tgrid(grid)
    weight = cfg.build_weight(grid)
    p = cfg.p
    alphas = sorted(cfg.apertures if cfg.apertures is not None else (0.25, 0.5, 1.0))
    top = max(tgrid.levels)
    if max(alphas) * top > 0.5 + 1e-12:
        raise ConfigError(
            f"aperture {max(alphas)} with top level {top:.4g} wraps the torus"
        )
    if cfg.branch == "i":
        r = cfg.r if cfg.r is not None else 2.0
        if not power_weight_in_Ar(cfg.theta, grid.n, r):
            raise ConfigError(f"w_theta with theta = {cfg.theta} is not in A_{r}")
        if not p <= 2 * r:
            raise ConfigError(f"branch (i) needs p <= 2r, got p = {p}, r = {r}")
        exponent = grid.n * r / p
        label = {"branch": "i", "r": r}
    else:
        s = cfg.s if cfg.s is not None else 2.0
        s_conj = math.inf if s == 1 else s / (s - 1)
        if not power_weight_in_RHs(cfg.theta, grid.n, s_conj):
            raise ConfigError(f"w_theta with theta = {cfg.theta} is not in RH_{{s'}}")
        if not p >= 2 / s:
            raise ConfigError(f"branch (ii) needs p >= 2/s, got p = {p}, s = {s}")
        exponent = grid.n / (s * p)
        label = {"branch": "ii", "s": s}
    pairs = [(a, b) for i, a in enumerate(alphas) for b in alphas[i + 1:]]

    def one(rng):
        F = _rand_field(grid, tgrid, rng)
        norms = {
            a: lp_norm_weighted(
                tent.cone_functional(F, tent.ConeParams(aperture=a)),
                weight.values, p)
            for a in alphas
        }
        out = []
        for a, b in pairs:
            if cfg.branch == "i":
                out.append((norms[b] / norms[a]) / (b / a) ** exponent)
            else:
                out.append((norms[a] / norms[b]) / (a / b) ** exponent)
        return out

    ratios = [x for chunk in
              _map_samples(one, _spawn_rngs(cfg.seed, cfg.count(20)))
              for x in chunk]
    table = ResultTable()
    params = {**label, "n": grid.n, "N": grid.N, "p": p, "theta": cfg.theta,
              "exponent": exponent, "apertures": list(alphas)}
    _fit_holdout(table, "angles", params, ratios, cfg.margin)
    return table


# -------------------------------------------------------- carleson suite


def run_carleson_suite(cfg):
    """Equivalence bracket of the two box functionals plus the two-sided
    comparability of cone and box averages."""
    p0 = cfg.p0 if cfg.p0 is not None else 1.2
    p = cfg.p
    if not p0 < p:
        raise ConfigError(f"the reverse comparison needs p0 < p, got {p0} >= {p}")
    count = cfg.count(50)
    table = ResultTable()

    def bracket(N, seed):
        grid = Grid(cfg.n if cfg.n is not None else 2, N)
        tgrid = TimeGrid.spanning(grid)
        fam = BallFamily.dense_dyadic(grid)

        def one(rng):
            F = _rand_field(grid, tgrid, rng)
            a = tent.carleson_functional(F, 2.0, fam).values.real
            b = tent.carleson_p0(F, 2.0, 2.0, fam).values.real
            return float((b / a).max()), float((a / b).max())

        out = _map_samples(one, _spawn_rngs(seed, count))
        return max(x for x, _ in out), max(y for _, y in out)

    N = cfg.N if cfg.N is not None else 32
    if N < 8:
        raise ConfigError("carleson bracket needs N >= 8 so N/2 is a grid")
    hi_coarse, lo_coarse = bracket(N // 2, cfg.seed + 1)
    hi, lo = bracket(N, cfg.seed)
    for name, fine, coarse in (("ratio_hi", hi, hi_coarse),
                               ("ratio_lo", lo, lo_coarse)):
        table.info("carleson", {"stat": name, "N": N // 2}, coarse)
        verdict = "pass" if math.isfinite(fine) and fine <= cfg.drift * coarse else "fail"
        table.add("carleson", {"stat": name, "N": N}, fine, coarse,
                  "derived", cfg.drift, verdict)

    # the zero field sends every functional to zero
    grid = Grid(cfg.n if cfg.n is not None else 2, N)
    tgrid = TimeGrid.spanning(grid)
    fam = BallFamily.dense_dyadic(grid)
    zero = UpperHalfField(grid, tgrid, np.zeros((len(tgrid.levels), *grid.shape)))
    z = float(np.abs(tent.carleson_functional(zero, 2.0, fam).values).max())
    table.info("carleson", {"stat": "zero_field"}, z)

    weight = cfg.build_weight(grid)
    in_class = power_weight_in_Ar(cfg.theta, grid.n, p / p0)
    cone = tent.ConeParams(aperture=1.0, q=2.0)

    def one(rng):
        F = _rand_field(grid, tgrid, rng)
        na = lp_norm_weighted(tent.cone_functional(F, cone), weight.values, p)
        nc = lp_norm_weighted(tent.carleson_p0(F, 2.0, p0, fam), weight.values, p)
        return na / nc, nc / na

    out = _map_samples(one, _spawn_rngs(cfg.seed + 2, count))
    base = {"p0": p0, "p": p, "theta": cfg.theta, "N": N}
    for direction, ratios in (("cone_over_box", [x for x, _ in out]),
                              ("box_over_cone", [y for _, y in out])):
        if in_class:
            _fit_holdout(table, "carleson", {**base, "direction": direction},
                         ratios, cfg.margin)
        else:
            # outside A_{p/p0} the two-sided comparison carries no claim
            table.info("carleson", {**base, "direction": direction,
                                    "note": "w outside A_{p/p0}"},
                       max(ratios))
    return table


# ------------------------------------------------------- cp vs maximal


_CP_INTEGRANDS = {
    "semigroup": ("s_h", 1),
    "gradient": ("g_h", 0),
    "full_gradient": ("gcal_h", 0),
}


def run_cp_vs_maximal(cfg):
    """Box functional of the semigroup integrands against the p0-maximal
    function, pointwise over cells."""
    p0 = cfg.p0 if cfg.p0 is not None else 1.5
    count = cfg.count(20)
    N = cfg.N if cfg.N is not None else 32
    if N < 8:
        raise ConfigError("refinement column needs N >= 8")
    # the range p_-(L) < p0 <= 2 is certain for the identity preset; for
    # other coefficients the lower endpoint is only bracketed, so anything
    # below 2 is reported rather than asserted
    if cfg.coeff_file is None and cfg.preset == "laplace":
        in_range = 1.0 < p0 <= 2.0
    else:
        in_range = p0 == 2.0
    table = ResultTable()

    def max_ratios(N_run, seed):
        grid = Grid(cfg.n if cfg.n is not None else 1, N_run)
        op = cfg.build_operator(grid)
        tgrid = TimeGrid.spanning(grid)
        fam = BallFamily.dense_dyadic(grid)
        out = {name: [] for name in _CP_INTEGRANDS}

        def one(rng):
            f = _rand_gf(grid, rng)
            M = hl_maximal(f, p0, fam)
            vals = {}
            for name, (family, order) in _CP_INTEGRANDS.items():
                spec = squarefn.SquareFunctionSpec(family, order=order, tgrid=tgrid)
                F = squarefn.integrand_field(op, spec, f)
                C = tent.carleson_p0(F, 2.0, p0, fam).values.real
                vals[name] = float((C / M).max())
            return vals

        for vals in _map_samples(one, _spawn_rngs(seed, count)):
            for name, v in vals.items():
                out[name].append(v)
        return out

    coarse = max_ratios(N // 2, cfg.seed + 1)
    fine = max_ratios(N, cfg.seed)
    for name in _CP_INTEGRANDS:
        params = {"integrand": name, "p0": p0, "preset": cfg.preset}
        if in_range:
            _fit_holdout(table, "cp-maximal", params, fine[name], cfg.margin)
        else:
            table.info("cp-maximal",
                       {**params, "note": "p0 outside the certain range"},
                       max(fine[name]))
        worst_fine, worst_coarse = max(fine[name]), max(coarse[name])
        table.info("cp-maximal", {**params, "stat": "max_ratio", "N": N // 2},
                   worst_coarse)
        verdict = "pass" if worst_fine <= cfg.drift * worst_coarse else "fail"
        if not in_range:
            verdict = "info"
        table.add("cp-maximal", {**params, "stat": "max_ratio", "N": N},
                  worst_fine, worst_coarse, "derived", cfg.drift, verdict)

    # constants are annihilated up to the conditioning perturbation, so the
    # box side sits at rounding-noise level
    grid = Grid(cfg.n if cfg.n is not None else 1, N)
    op = cfg.build_operator(grid)
    tgrid = TimeGrid.spanning(grid)
    fam = BallFamily.dense_dyadic(grid)
    one_f = GridFunction(grid, np.ones(grid.shape))
    spec = squarefn.SquareFunctionSpec("s_h", order=1, tgrid=tgrid)
    F = squarefn.integrand_field(op, spec, one_f)
    cval = float(np.abs(tent.carleson_p0(F, 2.0, p0, fam).values).max())
    table.info("cp-maximal", {"stat": "constant_input", "p0": p0}, cval)
    return table


# --------------------------------------------------------- off-diagonal


_OFFDIAG_FAMILIES = (
    # label, request builder, model gate ("exp" or minimum polynomial order)
    ("heat", lambda t, m: SemigroupRequest("heat", t, m), "exp"),
    ("heat_gradient", lambda t, m: SemigroupRequest("heat", t, m, "spatial"), "exp"),
    ("poisson", lambda t, K: SemigroupRequest("poisson", t, K), "poly"),
    ("poisson_gradient",
     lambda t, K: SemigroupRequest("poisson", t, K, "spatial"), "poly"),
)


def run_offdiagonal(cfg):
    """Decay-model comparison for restricted norms between separated sets."""
    grid = cfg.build_grid(default_n=1, default_N=64)
    op = cfg.build_operator(grid)
    t = cfg.t if cfg.t is not None else 0.1
    seps = cfg.separations if cfg.separations is not None else (
        0.12, 0.18, 0.24, 0.30, 0.36, 0.42)
    radius = cfg.radius
    if min(seps) <= 2 * radius:
        raise ConfigError(
            f"separation {min(seps)} does not keep sets of radius {radius} disjoint"
        )
    if len(seps) < 3:
        raise ConfigError("need at least three separations to compare models")
    pts = grid.cell_centers().reshape(-1, grid.n)
    anchor = np.full(grid.n, 0.25)

    def cells_near(center, rad):
        idx = np.flatnonzero(torus_distance(pts, center) < rad)
        if idx.size == 0:
            raise ConfigError(f"radius {rad} captures no cell at N = {grid.N}")
        return idx

    table = ResultTable()
    order = cfg.order
    for label, build, gate in _OFFDIAG_FAMILIES:
        req = build(t, order)
        vals = []
        for d in seps:
            E = cells_near(anchor, radius)
            shifted = anchor.copy()
            shifted[0] += d
            F = cells_near(shifted, radius)
            v = offdiagonal_opnorm(op, req, E, F, seed=cfg.seed)
            vals.append(v)
            table.info("offdiag", {"family": label, "order": order,
                                   "d": d, "t": t}, v)
        y = np.log(vals)
        x_exp = (np.asarray(seps) / t) ** 2
        x_pol = np.log1p(x_exp)
        slope_exp, _ = np.polyfit(x_exp, y, 1)
        rss_exp = float(((y - np.polyval(np.polyfit(x_exp, y, 1), x_exp)) ** 2).sum())
        fit_pol = np.polyfit(x_pol, y, 1)
        rss_pol = float(((y - np.polyval(fit_pol, x_pol)) ** 2).sum())
        poly_order = -float(fit_pol[0])
        prefers = "exp" if rss_exp < rss_pol else "poly"
        base = {"family": label, "order": order, "t": t}
        table.info("offdiag", {**base, "stat": "model_preference",
                               "prefers": prefers},
                   rss_exp / rss_pol)
        if gate == "exp":
            ok = prefers == "exp" and slope_exp <= -0.125
            table.add("offdiag", {**base, "stat": "exp_slope"},
                      float(slope_exp), -0.125, "derived", 0.0,
                      "pass" if ok else "fail")
        else:
            # Poisson kernels decay polynomially: order K + 1/2 for the
            # member, K + 1 for its gradient
            want = order + (1.0 if label.endswith("gradient") else 0.5)
            ok = poly_order >= want - 0.5
            table.add("offdiag", {**base, "stat": "poly_order"},
                      poly_order, want, "paper", 0.5,
                      "pass" if ok else "fail")
    return table


# --------------------------------------------------------- boundedness


def run_boundedness(cfg):
    """Weighted norm ratios of the square functions under refinement."""
    families = [cfg.family] if cfg.family else sorted(squarefn.FAMILIES)
    for family in families:
        if family not in squarefn.FAMILIES:
            raise ConfigError(f"unknown square function family {family!r}")
    p_list = cfg.p_list
    count = cfg.count(20)
    N = cfg.N if cfg.N is not None else 32
    if N < 8:
        raise ConfigError("refinement column needs N >= 8")
    identity = cfg.coeff_file is None and cfg.preset == "laplace"
    table = ResultTable()

    def sups(N_run, seed):
        grid = Grid(cfg.n if cfg.n is not None else 1, N_run)
        op = cfg.build_operator(grid)
        weight = cfg.build_weight(grid)
        out = {}
        for family in families:
            spec = squarefn.SquareFunctionSpec(family)
            rngs = _spawn_rngs(seed, count)

            def one(rng, spec=spec, op=op, grid=grid, weight=weight):
                f = _rand_gf(grid, rng)
                Sf = squarefn.evaluate(op, spec, f)
                return {
                    p: lp_norm_weighted(Sf, weight.values, p)
                    / lp_norm_weighted(f, weight.values, p)
                    for p in p_list
                }

            rows = _map_samples(one, rngs)
            out[family] = {p: max(row[p] for row in rows) for p in p_list}
        return out

    coarse = sups(N // 2, cfg.seed + 1)
    fine = sups(N, cfg.seed)
    n = cfg.n if cfg.n is not None else 1
    for family in families:
        for p in p_list:
            # pass/fail needs a certain weight class: identity coefficients
            # put every p in range when w_theta is in A_p; other presets are
            # certain only at p = 2 with the flat weight, and their Poisson
            # rows stay informational because the upper endpoint is only
            # bracketed
            if identity:
                certain = power_weight_in_Ar(cfg.theta, n, p)
            else:
                certain = (p == 2.0 and cfg.theta == 0.0
                           and not family.endswith("_p"))
            a, b = coarse[family][p], fine[family][p]
            params = {"family": family, "p": p, "theta": cfg.theta,
                      "preset": cfg.preset}
            table.info("boundedness", {**params, "stat": "sup_ratio", "N": N // 2}, a)
            verdict = "pass" if (np.isfinite(b) and b <= cfg.drift * a) else "fail"
            if not certain:
                verdict = "info"
            table.add("boundedness", {**params, "stat": "sup_ratio", "N": N},
                      b, a, "derived", cfg.drift, verdict)
    return table


# --------------------------------------------------------- comparisons


_COMPARISON_PAIRS = (
    ("s_h2_vs_s_h1", ("s_h", 2), ("s_h", 1), "heat"),
    ("gcal_h2_vs_s_h1", ("gcal_h", 2), ("s_h", 1), "heat"),
    ("s_p1_vs_s_h1", ("s_p", 1), ("s_h", 1), "poisson"),
    ("gcal_p_vs_gcal_h", ("gcal_p", 0), ("gcal_h", 0), "poisson"),
)


def run_comparisons(cfg):
    """Norm comparisons across orders and semigroups with fitted constants."""
    grid = cfg.build_grid(default_n=2, default_N=16)
    op = cfg.build_operator(grid)
    weight = cfg.build_weight(grid)
    p = cfg.p
    count = cfg.count(20)
    identity = cfg.coeff_file is None and cfg.preset == "laplace"
    r_w, s_w = power_weight_exponents(cfg.theta, grid.n)
    table = ResultTable()
    for label, (top_fam, top_ord), (bot_fam, bot_ord), kind in _COMPARISON_PAIRS:
        top = squarefn.SquareFunctionSpec(top_fam, order=top_ord)
        bottom = squarefn.SquareFunctionSpec(bot_fam, order=bot_ord)

        def one(rng, top=top, bottom=bottom):
            f = _rand_gf(grid, rng)
            return (lp_norm_weighted(squarefn.evaluate(op, top, f), weight.values, p)
                    / lp_norm_weighted(squarefn.evaluate(op, bottom, f),
                                       weight.values, p))

        ratios = _map_samples(one, _spawn_rngs(cfg.seed, count))
        params = {"pair": label, "p": p, "theta": cfg.theta, "N": grid.N}
        if identity:
            # identity coefficients: lower exponent 1, upper infinite, and
            # the Poisson star exponent stays infinite at every K
            if kind == "poisson":
                upper = p_plus_Kstar(math.inf, top_ord, grid.n)
            else:
                upper = math.inf
            lo, hi = admissible_interval(1.0, upper, r_w, s_w)
            certain = lo < p < hi
        else:
            certain = False
        if certain:
            _fit_holdout(table, "comparisons", params, ratios, cfg.margin)
        else:
            table.info("comparisons",
                       {**params, "note": "range not certain for this preset"},
                       max(ratios))
    return table


# ----------------------------------------------------------------- CLI


EXPERIMENTS = {
    "sharpness": run_sharpness,
    "angles": run_change_of_angle,
    "carleson": run_carleson_suite,
    "cp-maximal": run_cp_vs_maximal,
    "offdiag": run_offdiagonal,
    "boundedness": run_boundedness,
    "comparisons": run_comparisons,
}


def run_all(cfg):
    table = ResultTable()
    for name in EXPERIMENTS:
        if name == "angles" and cfg.branch is None:
            for branch in ("i", "ii"):
                sub = ExperimentConfig(**{**cfg.__dict__, "branch": branch})
                table.extend(run_change_of_angle(sub))
            continue
        table.extend(EXPERIMENTS[name](cfg))
    return table


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="conical-lab",
        description="seeded numerical experiments emitting CSV verdict tables",
    )
    parser.add_argument("experiment", choices=[*EXPERIMENTS, "all"])
    parser.add_argument("--config", help="flat key = value file")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override a config key")
    parser.add_argument("--out", help="output directory for the CSV table")
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        text = ""
        if args.config is not None:
            try:
                with open(args.config, "r", encoding="utf-8") as fh:
                    text = fh.read()
            except OSError as exc:
                raise ConfigError(f"cannot read config: {exc}")
        cfg = ExperimentConfig.parse(text, args.overrides)
        if (cfg.experiment is not None and args.experiment != "all"
                and cfg.experiment != args.experiment):
            raise ConfigError(
                f"config names experiment {cfg.experiment!r} but the command "
                f"line asked for {args.experiment!r}"
            )
        runner = run_all if args.experiment == "all" else EXPERIMENTS[args.experiment]
        table = runner(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out_dir = args.out if args.out is not None else (cfg.out or ".")
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"{args.experiment}.csv")
    table.write(path)
    counts = table.counts
    print(f"{args.experiment}: {counts['pass']} pass, {counts['fail']} fail, "
          f"{counts['info']} info -> {path}")
    return 0 if table.all_pass else 1


if __name__ == "__main__":
    sys.exit(main())
