"""Generative model and power study for two-sample tests on [0, 1].

Group means are ``mu_1 = sqrt(2 s)`` (square root of the Beta(2, 1) density)
and ``mu_2 = exp_{mu_1}(delta v)`` with ``v`` the normalized sum of the first
``K_mu`` basis directions. Observations are ``exp_{mu_g}(+-sum_k xi_k phi_gk)``
where ``phi_gk`` rotates the trigonometric basis function ``psi_{k+1}`` from
the constant function to ``mu_g`` and the scores have variances ``3^-k``.
"""

from __future__ import annotations

import concurrent.futures
import csv
import io
import itertools
import json
import logging
import zlib
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache

import numpy as np

from . import _sphere
from .errors import HilbertSphereError, ValidationError
from .estimation import SampleSet, _support
from .geometry import SpherePoint, TangentVector, rotation_operator
from .grid import Grid
from .inference import _child_seed, flat_density_two_sample, parse_method, two_sample_suite

log = logging.getLogger(__name__)

SCORE_DISTS = ("normal", "centered_exponential")
TAIL_LIMIT = np.pi - 0.01
CSV_COLUMNS = ("delta", "n_g", "K_mu", "score_dist", "method", "rejections", "runs", "proportion", "se")


def score_variances(K_X: int) -> np.ndarray:
    """Score variances ``theta_k = 3^-k`` for k = 1..K_X."""
    return 3.0 ** -np.arange(1, K_X + 1, dtype=float)


def trig_basis(grid: Grid, j: int) -> np.ndarray:
    """Values of the trigonometric basis function ``psi_j`` (1-based) on ``grid``."""
    s = grid.points
    if j < 1:
        raise ValueError("basis index starts at 1")
    if j == 1:
        return np.ones_like(s)
    if j % 2 == 0:
        return np.sqrt(2.0) * np.sin(j * np.pi * s)
    return np.sqrt(2.0) * np.cos((j - 1) * np.pi * s)


def mean_mu1(grid: Grid) -> SpherePoint:
    """``sqrt(2 s)`` renormalized to unit quadrature norm."""
    return SpherePoint.normalized(grid, np.sqrt(2.0 * grid.points))


def basis_phi(g_mean: SpherePoint, k: int) -> TangentVector:
    """``R_{g_mean}(psi_{k+1})``: the k-th basis direction tangent at ``g_mean``."""
    if k < 1:
        raise ValueError("basis index starts at 1")
    return TangentVector.project(g_mean, rotation_operator(g_mean, trig_basis(g_mean.grid, k + 1)))


def _basis_coords(mean: np.ndarray, grid: Grid, K: int) -> np.ndarray:
    psi = np.stack([trig_basis(grid, k + 1) for k in range(1, K + 1)])
    gram = (psi * grid.weights) @ psi.T
    if np.max(np.abs(gram - np.eye(K))) > 1e-8:
        raise ValidationError(f"grid of {grid.size} points cannot resolve {K} orthonormal trigonometric functions")
    point = SpherePoint.from_coords(grid, mean)
    phi = grid.to_coords(rotation_operator(point, psi))
    return phi - np.outer(phi @ mean, mean)


def mean_mu2(mu1: SpherePoint, delta: float, K_mu: int) -> SpherePoint:
    """``exp_{mu1}(delta v)`` with ``v = K_mu^{-1/2} sum_{k <= K_mu} phi_1k``."""
    if abs(delta) >= np.pi:
        raise ValidationError("effect size must satisfy |delta| < pi")
    phi = _basis_coords(mu1.coords, mu1.grid, K_mu)
    v = phi.sum(axis=0) / np.sqrt(K_mu)
    return SpherePoint.from_coords(mu1.grid, _sphere.exp(mu1.coords, delta * v))


@dataclass(frozen=True)
class SimConfig:
    """One cell of the power study plus Monte Carlo settings."""

    n_g: int = 50
    K_mu: int = 1
    K_X: int = 50
    delta: float = 0.0
    score_dist: str = "normal"
    grid_size: int = 101
    runs: int = 500
    B: int = 199
    n_draws: int = 20_000
    seed: int = 0
    alpha: float = 0.05

    def __post_init__(self):
        if self.n_g < 2:
            raise ValidationError("n_g must be at least 2")
        if not 1 <= self.K_mu <= self.K_X:
            raise ValidationError("K_mu must lie in 1..K_X")
        if self.score_dist not in SCORE_DISTS:
            raise ValidationError(f"score_dist must be one of {SCORE_DISTS}")
        if score_variances(self.K_X).sum() > 0.5:
            raise ValidationError("total score variance exceeds 0.5")
        if not np.isfinite(self.delta) or abs(self.delta) >= np.pi:
            raise ValidationError("delta must satisfy |delta| < pi for the chart to be valid")
        if self.grid_size < 3:
            raise ValidationError("grid_size must be at least 3")
        if self.runs < 1 or self.B < 1 or self.n_draws < 1:
            raise ValidationError("runs, B and n_draws must be positive")
        if not 0.0 < self.alpha < 1.0:
            raise ValidationError("alpha must lie in (0, 1)")

    @property
    def theta(self) -> np.ndarray:
        return score_variances(self.K_X)

    def stream_key(self) -> int:
        # excludes delta and K_mu so every effect size reuses the same scores
        text = f"{self.n_g}|{self.score_dist}|{self.K_X}|{self.grid_size}"
        return zlib.crc32(text.encode())


class TwoSampleModel:
    """Precomputed means and bases for one (grid, K_mu, delta, K_X) setting."""

    def __init__(self, grid_size: int = 101, K_mu: int = 1, delta: float = 0.0, K_X: int = 50):
        self.grid = Grid.uniform(grid_size)
        self.theta = score_variances(K_X)
        mu1 = mean_mu1(self.grid)
        mu2 = mean_mu2(mu1, delta, K_mu)
        self.means = (mu1.coords, mu2.coords)
        self.bases = tuple(_basis_coords(m, self.grid, K_X) for m in self.means)
        self.rejected = 0

    def draw(self, group: int, n: int, rng: np.random.Generator, score_dist: str = "normal") -> np.ndarray:
        """``n`` observations of group 1 or 2 in isometric coordinates."""
        if group not in (1, 2):
            raise ValueError("group must be 1 or 2")
        sign = 1.0 if group == 1 else -1.0
        mean, phi = self.means[group - 1], self.bases[group - 1]
        v = sign * (self._scores(n, rng, score_dist) @ phi)
        while True:
            bad = np.flatnonzero(np.linalg.norm(v, axis=1) >= TAIL_LIMIT)
            if not bad.size:
                break
            self.rejected += bad.size
            log.info("redrawing %d tangent vectors beyond the chart limit", bad.size)
            v[bad] = sign * (self._scores(bad.size, rng, score_dist) @ phi)
        return _sphere.exp(mean, v)

    def _scores(self, n, rng, score_dist):
        sd = np.sqrt(self.theta)
        if score_dist == "normal":
            return rng.standard_normal((n, sd.size)) * sd
        # Exponential with variance theta_k has scale sqrt(theta_k); centre it.
        return (rng.standard_exponential((n, sd.size)) - 1.0) * sd


@lru_cache(maxsize=64)
def _model(grid_size: int, K_mu: int, delta: float, K_X: int) -> TwoSampleModel:
    return TwoSampleModel(grid_size, K_mu, delta, K_X)


def draw_sample(config: SimConfig, group: int, rng: np.random.Generator) -> SampleSet:
    model = _model(config.grid_size, config.K_mu, config.delta, config.K_X)
    return SampleSet.from_coords(model.grid, model.draw(group, config.n_g, rng, config.score_dist))


@dataclass
class PowerRow:
    delta: float
    n_g: int
    K_mu: int
    score_dist: str
    method: str
    rejections: int
    runs: int
    proportion: float
    se: float
    failures: int = 0
    valid: bool = True
    support_flag_rate: float = 0.0


@dataclass
class PowerTable:
    rows: list = field(default_factory=list)

    def get(self, method: str, **cell) -> PowerRow:
        for row in self.rows:
            if row.method == method and all(getattr(row, k) == v for k, v in cell.items()):
                return row
        raise KeyError((method, cell))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow(
                [repr(float(r.delta)), r.n_g, r.K_mu, r.score_dist, r.method, r.rejections, r.runs,
                 repr(float(r.proportion)), repr(float(r.se))]
            )
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps([asdict(r) for r in self.rows], indent=2, sort_keys=True) + "\n"


def _one_run(config: SimConfig, run: int, labels: tuple):
    """Draw both groups and return ``{label: rejected}``, or None on a numerical failure."""
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(config.stream_key(), run)))
    model = _model(config.grid_size, config.K_mu, config.delta, config.K_X)
    x1 = model.draw(1, config.n_g, rng, config.score_dist)
    x2 = model.draw(2, config.n_g, rng, config.score_dist)
    s1 = SampleSet.from_coords(model.grid, x1)
    s2 = SampleSet.from_coords(model.grid, x2)
    test_seed = _child_seed(config.seed, config.stream_key(), run, 1)
    try:
        reports = two_sample_suite(s1, s2, labels, B=config.B, n_draws=config.n_draws, seed=test_seed)
    except HilbertSphereError as exc:
        log.warning("run %d failed: %s", run, exc)
        return None, False
    support_ok = _support(x1).satisfied and _support(x2).satisfied
    return {k: r.p_value <= config.alpha for k, r in reports.items()}, support_ok


def _cell_runs(args):
    config, labels, runs = args
    return [_one_run(config, r, labels) for r in runs]


def run_power_study(config: SimConfig, methods, *, deltas=None, n_gs=None, K_mus=None, score_dists=None,
                    workers: int = 1, chunk: int = 25) -> PowerTable:
    """Empirical rejection rates for every combination of the given cell parameters.

    Unspecified axes take their single value from ``config``. Each run uses a
    random stream keyed by the master seed, the run index and the settings
    that shape the noise (not ``delta`` or ``K_mu``), so all effect sizes see
    the same scores and the table does not depend on ``workers``.
    """
    labels = tuple(parse_method(m).label for m in methods)
    axes = (
        deltas if deltas is not None else [config.delta],
        n_gs if n_gs is not None else [config.n_g],
        K_mus if K_mus is not None else [config.K_mu],
        score_dists if score_dists is not None else [config.score_dist],
    )
    cells = [replace(config, delta=float(d), n_g=int(n), K_mu=int(k), score_dist=s) for d, n, k, s in itertools.product(*axes)]
    tasks = []
    for ci, cell in enumerate(cells):
        for start in range(0, cell.runs, chunk):
            tasks.append((ci, (cell, labels, range(start, min(start + chunk, cell.runs)))))
    results = {ci: [] for ci in range(len(cells))}
    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            for (ci, _), res in zip(tasks, pool.map(_cell_runs, [t for _, t in tasks])):
                results[ci].extend(res)
    else:
        for ci, t in tasks:
            results[ci].extend(_cell_runs(t))
    table = PowerTable()
    for ci, cell in enumerate(cells):
        outcomes = results[ci]
        ok = [o for o, _ in outcomes if o is not None]
        failures = len(outcomes) - len(ok)
        flag_rate = 1.0 - float(np.mean([s for o, s in outcomes if o is not None])) if ok else 1.0
        for label in labels:
            runs = len(ok)
            rej = sum(int(o[label]) for o in ok)
            p = rej / runs if runs else float("nan")
            se = float(np.sqrt(p * (1 - p) / runs)) if runs else float("nan")
            table.rows.append(
                PowerRow(cell.delta, cell.n_g, cell.K_mu, cell.score_dist, label, rej, runs, p, se, failures,
                         failures < 0.01 * cell.runs, flag_rate)
            )
    return table


@dataclass(frozen=True)
class ZoneScenario:
    """Synthetic daily pick-up densities over discrete zones.

    Zones sit along one spatial axis from a busy core outward, with
    heavy-tailed intensities. Day-to-day variation comes from a handful of shared,
    spatially smooth log-intensity factors with decaying scales plus a little
    zone-level noise; daily counts are then Poisson. Group 2 scales the
    intensity of ``shift_zones`` by ``shift_factor``, a localized change that
    barely moves the raw density in L2 but is visible after the square root.
    """

    n_zones: int = 40
    daily_total: float = 20000.0
    spread: float = 1.5
    factor_sd: tuple = (0.12, 0.08, 0.05, 0.03, 0.02)
    zone_noise: float = 0.03
    shift_zones: tuple = (30, 31, 32, 33, 34)
    shift_factor: float = 0.6
    layout_seed: int = 7

    @property
    def grid(self) -> Grid:
        return Grid.zones([f"z{i}" for i in range(self.n_zones)])

    def _layout(self):
        rng = np.random.default_rng(self.layout_seed)
        # zones run from the busy core outward; shared factors vary smoothly along that axis
        lam = np.sort(np.exp(self.spread * rng.standard_normal(self.n_zones)))[::-1]
        s = (np.arange(self.n_zones) + 0.5) / self.n_zones
        j = np.arange(1, len(self.factor_sd) + 1)
        loadings = np.sqrt(2.0) * np.cos(np.pi * np.outer(j, s))
        return lam / lam.sum(), loadings

    def intensities(self, group: int) -> np.ndarray:
        lam, _ = self._layout()
        if group == 2:
            lam = lam.copy()
            lam[list(self.shift_zones)] *= self.shift_factor
            lam /= lam.sum()
        return lam

    def draw_densities(self, group: int, n: int, rng: np.random.Generator) -> np.ndarray:
        lam = self.intensities(group)
        _, loadings = self._layout()
        z = rng.standard_normal((n, len(self.factor_sd))) * np.asarray(self.factor_sd)
        log_noise = z @ loadings + self.zone_noise * rng.standard_normal((n, self.n_zones))
        counts = rng.poisson(self.daily_total * lam * np.exp(log_noise)).astype(float)
        counts[counts.sum(axis=1) == 0, 0] = 1.0
        w = self.grid.weights
        return counts / (counts @ w)[:, None]


ZONE_METHODS = (
    "norm_asymptotic", "norm_bootstrap",
    "proj_asymptotic:0.8", "proj_asymptotic:0.9", "proj_asymptotic:0.95",
    "proj_bootstrap:0.8", "proj_bootstrap:0.9", "proj_bootstrap:0.95",
    "extrinsic_bootstrap", "flat_density_bootstrap",
)


def run_zone_study(scenario: ZoneScenario, n_g: int, runs: int, methods=ZONE_METHODS, *, B: int = 199,
                   n_draws: int = 20_000, seed: int = 0, alpha: float = 0.05) -> dict:
    """Rejection rates ``{label: PowerRow}`` for two groups of zone densities.

    Square-root tests see the densities on the sphere; the flat-density test
    sees the raw densities.
    """
    labels = tuple(parse_method(m).label for m in methods)
    sphere_labels = tuple(m for m in labels if m != "flat_density_bootstrap")
    grid = scenario.grid
    rej = dict.fromkeys(labels, 0)
    for run in range(runs):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2, n_g, run)))
        y1 = scenario.draw_densities(1, n_g, rng)
        y2 = scenario.draw_densities(2, n_g, rng)
        test_seed = _child_seed(seed, 2, n_g, run)
        reports = {}
        if sphere_labels:
            s1 = SampleSet.from_coords(grid, grid.to_coords(np.sqrt(y1)))
            s2 = SampleSet.from_coords(grid, grid.to_coords(np.sqrt(y2)))
            reports = two_sample_suite(s1, s2, sphere_labels, B=B, n_draws=n_draws, seed=test_seed)
        if "flat_density_bootstrap" in labels:
            reports["flat_density_bootstrap"] = flat_density_two_sample(y1, y2, grid, B=B, seed=test_seed)
        for k in labels:
            rej[k] += reports[k].p_value <= alpha
    out = {}
    for k in labels:
        p = rej[k] / runs
        out[k] = PowerRow(0.0, n_g, 0, "zones", k, rej[k], runs, p, float(np.sqrt(p * (1 - p) / runs)))
    return out
