"""One- and two-sample tests for intrinsic means.

Norm statistics are ``n |tau(mu_hat_1) - tau(mu_hat_2)|^2`` (or against a
hypothesized ``mu0``) in the log chart; projection statistics standardize the
same difference by the leading eigenpairs of the estimated asymptotic
covariance. Calibration is either asymptotic (weighted chi-square by Monte
Carlo for norms, chi-square with K degrees of freedom for projections) or a
nonparametric bootstrap with group-centred replicates.

Random streams: a test seeded with ``seed`` draws its Monte Carlo null sample
from child stream 0 and bootstrap replicate ``b`` from child
``(1, b, attempt, tag)`` of ``numpy.random.SeedSequence(seed)``, so results do
not depend on the order in which replicates are evaluated. In two-sample tests
``tag`` is a digest of the group's data, which makes the resampling follow the
data rather than its position and keeps p-values unchanged when the groups
are swapped.
"""

from __future__ import annotations

import functools
import logging
import zlib
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy import stats

from . import _sphere
from .errors import ConditioningError, DomainError, HilbertSphereError, ValidationError
from .estimation import EIGEN_FLOOR, SampleSet, _support, eigen_from_factor, sandwich_factor, select_K
from .geometry import SpherePoint, _same_grid
from .grid import Grid

log = logging.getLogger(__name__)

KINDS = (
    "norm_asymptotic",
    "proj_asymptotic",
    "norm_bootstrap",
    "proj_bootstrap",
    "extrinsic_bootstrap",
    "flat_density_bootstrap",
)
TRACE_RETAINED = 0.999
DEFAULT_DRAWS = 100_000
DEFAULT_BOOT = 499
_MC_CHUNK = 1 << 16


class Method(NamedTuple):
    kind: str
    r: float | None = None

    @property
    def label(self) -> str:
        return self.kind if self.r is None else f"{self.kind}:{self.r:g}"

    @property
    def is_projection(self) -> bool:
        return self.kind.startswith("proj")


def parse_method(spec) -> Method:
    """Accept ``Method``, ``(kind, r)`` or strings like ``"proj_bootstrap:0.95"``."""
    if isinstance(spec, Method):
        m = spec
    elif isinstance(spec, tuple):
        m = Method(*spec)
    else:
        kind, _, r = str(spec).partition(":")
        m = Method(kind.strip(), float(r) if r else None)
    if m.kind not in KINDS:
        raise ValidationError(f"unknown test method {m.kind!r}")
    if m.is_projection and m.r is None:
        raise ValidationError(f"{m.kind} needs an FVE threshold")
    if m.r is not None and not 0.0 < m.r < 1.0:
        raise ValidationError("FVE threshold must lie in (0, 1)")
    if not m.is_projection and m.r is not None:
        m = Method(m.kind, None)
    return m


@dataclass
class TestReport:
    __test__ = False  # keep pytest from collecting this class

    statistic: float
    p_value: float
    method: str
    K: int
    fve_threshold: float | None
    n_draws: int
    n_boot: int
    support_ok: bool
    seed: int
    chart: str = ""
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def rejects(self, alpha: float = 0.05) -> bool:
        return self.p_value <= alpha


@dataclass(frozen=True)
class NullSpectrum:
    """Eigenvalues of the null covariance, truncated to retain 99.9% of the trace."""

    values: np.ndarray
    trace: float

    @classmethod
    def from_eigenvalues(cls, values, total: float | None = None, retain: float = TRACE_RETAINED) -> "NullSpectrum":
        values = np.sort(np.clip(np.asarray(values, dtype=float), 0.0, None))[::-1]
        total = float(values.sum()) if total is None else float(total)
        if values.size == 0 or total <= 0.0 or values[0] <= 0.0:
            return cls(np.zeros(0), 0.0)
        values = values[values >= EIGEN_FLOOR * values[0]]
        cum = np.cumsum(values) / total
        k = int(np.searchsorted(cum, retain - 1e-15)) + 1
        return cls(values[: min(k, values.size)].copy(), total)

    def __len__(self):
        return self.values.size


def _child_seed(seed: int, *key: int) -> int:
    state = np.random.SeedSequence(seed, spawn_key=key).generate_state(2, dtype=np.uint32)
    return int(state[0]) << 32 | int(state[1])


def _replicate_rng(seed: int, b: int, attempt: int, tag: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, b, attempt, tag)))


def _content_tag(x: np.ndarray) -> int:
    return zlib.crc32(np.ascontiguousarray(x, dtype=float).tobytes())


def weighted_chisq_draws(spectrum: NullSpectrum, n_draws: int, seed: int) -> np.ndarray:
    """Monte Carlo draws of ``sum_k lambda_k W_k`` with ``W_k`` iid chi-square(1)."""
    if len(spectrum) == 0:
        raise DomainError("no variation under null: empty spectrum")
    rng = np.random.default_rng(seed)
    out = np.empty(n_draws)
    lam = spectrum.values
    for start in range(0, n_draws, _MC_CHUNK):
        m = min(_MC_CHUNK, n_draws - start)
        z = rng.standard_normal((m, lam.size))
        out[start : start + m] = (z * z) @ lam
    return out


def weighted_chisq_pvalue(spectrum: NullSpectrum, observed: float, n_draws: int = DEFAULT_DRAWS, seed: int = 0) -> float:
    """``(1 + #{draw >= observed}) / (n_draws + 1)``."""
    draws = weighted_chisq_draws(spectrum, n_draws, seed)
    return (1 + int(np.count_nonzero(draws >= observed))) / (n_draws + 1)


def weighted_chisq_quantile(spectrum: NullSpectrum, q: float, n_draws: int = DEFAULT_DRAWS, seed: int = 0) -> float:
    return float(np.quantile(weighted_chisq_draws(spectrum, n_draws, seed), q))


class _Fit:
    """Intrinsic mean of a coordinate sample with its log-chart sandwich factor."""

    def __init__(self, x: np.ndarray, init=None, tol: float = 1e-10, max_iter: int = 200):
        self.x = x
        self.mean, self.iterations, self.grad_norm, _, _ = _sphere.karcher_mean(x, tol, max_iter, init)
        self.v, self.theta = _sphere.log(self.mean, x, return_angle=True)
        self._factor = None

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def factor(self) -> np.ndarray:
        if self._factor is None:
            self._factor = sandwich_factor(self.v, self.theta)
        return self._factor

    def factor_at(self, base: np.ndarray) -> np.ndarray:
        return _sphere.transport(self.mean, base, self.factor.T).T


def _pooled_factor(fits: Sequence[_Fit], base: np.ndarray) -> np.ndarray:
    n = sum(f.n for f in fits)
    return np.hstack([np.sqrt(n / f.n) * f.factor_at(base) for f in fits])


def _proj_stat(diff: np.ndarray, n: int, lam: np.ndarray, vecs: np.ndarray, K: int) -> float:
    if K > lam.size or lam[K - 1] <= EIGEN_FLOOR * lam[0]:
        raise ConditioningError(f"eigenvalue {K} is below the floor", float(lam[K - 1]) if K <= lam.size else 0.0)
    proj = vecs[:K] @ diff
    return float(n * np.sum(proj * proj / lam[:K]))


class _Observed(NamedTuple):
    n: int
    diff: np.ndarray
    statistic: float
    lam: np.ndarray
    vecs: np.ndarray
    trace: float


def _spectrum(factor: np.ndarray):
    lam, vecs = eigen_from_factor(factor)
    return lam, vecs, float(np.sum(factor * factor))


def _select(obs: _Observed, r: float) -> int:
    if obs.lam.size == 0:
        raise DomainError("FVE undefined for an all-zero spectrum")
    return select_K(obs.lam, r, total=obs.trace)


def _asymptotic_reports(obs: _Observed, methods, n_draws: int, seed: int, support_ok: bool, chart: str, extra: dict):
    out = {}
    for m in methods:
        if m.kind == "norm_asymptotic":
            spec = NullSpectrum.from_eigenvalues(obs.lam, obs.trace)
            if obs.statistic == 0.0:
                p = 1.0
            elif len(spec) == 0:
                raise DomainError("no variation under null")
            else:
                p = weighted_chisq_pvalue(spec, obs.statistic, n_draws, _child_seed(seed, 0))
            diag = dict(extra, spectrum_size=len(spec))
            out[m.label] = TestReport(obs.statistic, p, m.kind, 0, None, n_draws, 0, support_ok, seed, chart, diag)
        elif m.kind == "proj_asymptotic":
            K = _select(obs, m.r)
            s = _proj_stat(obs.diff, obs.n, obs.lam, obs.vecs, K)
            p = float(stats.chi2.sf(s, K)) if s > 0 else 1.0
            diag = dict(extra, eigenvalues=[float(x) for x in obs.lam[:K]])
            out[m.label] = TestReport(s, p, m.kind, K, m.r, 0, 0, support_ok, seed, chart, diag)
    return out


def _bootstrap_reports(obs, methods, B, seed, support_ok, chart, extra, replicate):
    """Run ``replicate(stream, ...) -> (diff*, eigenpairs*, extrinsic stat*)`` B times.

    ``stream(tag)`` returns the generator for the current replicate and tag.
    """
    boot = [m for m in methods if m.kind in ("norm_bootstrap", "proj_bootstrap", "extrinsic_bootstrap")]
    if not boot:
        return {}
    if B < 99:
        raise ValidationError("bootstrap needs at least 99 replicates")
    proj = [m for m in boot if m.kind == "proj_bootstrap"]
    ks = {m.label: _select(obs, m.r) for m in proj}
    kmax = max(ks.values(), default=0)
    need_intrinsic = any(m.kind != "extrinsic_bootstrap" for m in boot)
    reps = {m.label: np.empty(B) for m in boot}
    failures = 0
    for b in range(B):
        for attempt in (0, 1):
            try:
                stream = functools.partial(_replicate_rng, seed, b, attempt)
                res = replicate(stream, need_intrinsic, kmax)
                break
            except HilbertSphereError as exc:
                res = None
                log.debug("bootstrap replicate %d attempt %d failed: %s", b, attempt, exc)
        if res is None:
            failures += 1
            for arr in reps.values():
                arr[b] = np.inf
            continue
        diff, lam, vecs, ext = res
        for m in boot:
            if m.kind == "norm_bootstrap":
                reps[m.label][b] = obs.n * float(diff @ diff)
            elif m.kind == "extrinsic_bootstrap":
                reps[m.label][b] = ext
            else:
                try:
                    reps[m.label][b] = _proj_stat(diff, obs.n, lam, vecs, ks[m.label])
                except ConditioningError:
                    reps[m.label][b] = np.inf
    out = {}
    for m in boot:
        observed = extra["extrinsic_statistic"] if m.kind == "extrinsic_bootstrap" else obs.statistic
        K = 0
        if m.kind == "proj_bootstrap":
            K = ks[m.label]
            observed = _proj_stat(obs.diff, obs.n, obs.lam, obs.vecs, K)
        p = (1 + int(np.count_nonzero(reps[m.label] >= observed))) / (B + 1)
        diag = {k: v for k, v in extra.items() if k != "extrinsic_statistic"}
        diag["failed_replicates"] = failures
        c = "ambient" if m.kind == "extrinsic_bootstrap" else chart
        out[m.label] = TestReport(observed, p, m.kind, K, m.r, 0, B, support_ok, seed, c, diag)
    return out


def _coords(sample: SampleSet) -> np.ndarray:
    return sample.coords


def one_sample_suite(sample: SampleSet, mu0: SpherePoint, methods, *, B: int = DEFAULT_BOOT,
                     n_draws: int = DEFAULT_DRAWS, seed: int = 0) -> dict:
    """Evaluate several one-sample tests sharing the mean fit and bootstrap replicates."""
    _same_grid(sample.grid, mu0.grid)
    methods = [parse_method(m) for m in methods]
    for m in methods:
        if m.kind in ("extrinsic_bootstrap", "flat_density_bootstrap"):
            raise ValidationError(f"{m.kind} is a two-sample test")
    x = _coords(sample)
    base = mu0.coords
    fit = _Fit(x)
    a = _sphere.log(base, fit.mean)
    n = fit.n
    stat = n * float(a @ a)
    need_spec = any(m.is_projection or m.kind == "norm_asymptotic" for m in methods)
    if need_spec:
        lam, vecs, trace = _spectrum(fit.factor_at(base))
    else:
        lam, vecs, trace = np.zeros(0), np.zeros((0, x.shape[1])), 0.0
    obs = _Observed(n, a, stat, lam, vecs, trace)
    support = _support(x)
    extra = {"support_diameter": support.diameter, "mean_iterations": fit.iterations}
    chart = "log at mu0"
    out = _asymptotic_reports(obs, methods, n_draws, seed, support.satisfied, chart, extra)

    def replicate(stream, need_intrinsic, kmax):
        f = _Fit(x[stream(0).integers(0, n, n)], init=fit.mean)
        diff = _sphere.log(base, f.mean) - a
        lam_b = vecs_b = None
        if kmax:
            lam_b, vecs_b = eigen_from_factor(f.factor_at(base), kmax)
        return diff, lam_b, vecs_b, None

    out.update(_bootstrap_reports(obs, methods, B, seed, support.satisfied, chart, extra, replicate))
    return {m.label: out[m.label] for m in methods}


def two_sample_suite(sample1: SampleSet, sample2: SampleSet, methods, *, B: int = DEFAULT_BOOT,
                     n_draws: int = DEFAULT_DRAWS, seed: int = 0) -> dict:
    """Evaluate several two-sample tests on one pair of samples.

    The chart is the log map at the Frechet mean of the pooled sample; group
    covariances are estimated at the group means and parallel-transported
    there before pooling with weights ``n / n_g``. Bootstrap replicates (and
    their resampling indices) are shared by all bootstrap methods.
    """
    _same_grid(sample1.grid, sample2.grid)
    methods = [parse_method(m) for m in methods]
    if any(m.kind == "flat_density_bootstrap" for m in methods):
        raise ValidationError("flat_density_bootstrap works on raw densities; use flat_density_two_sample")
    x1, x2 = _coords(sample1), _coords(sample2)
    n1, n2 = x1.shape[0], x2.shape[0]
    if min(n1, n2) < 2:
        raise DomainError("each group needs at least two observations")
    n = n1 + n2
    intrinsic = any(m.kind != "extrinsic_bootstrap" for m in methods)
    extra = {}
    s1, s2 = _support(x1), _support(x2)
    support_ok = s1.satisfied and s2.satisfied
    extra["support_diameter"] = [s1.diameter, s2.diameter]
    if intrinsic:
        f1, f2 = _Fit(x1), _Fit(x2)
        pooled = _Fit(np.vstack([x1, x2]), init=_sphere.normalize(f1.mean + f2.mean))
        base = pooled.mean
        a1, a2 = _sphere.log(base, f1.mean), _sphere.log(base, f2.mean)
        diff = a1 - a2
        stat = n * float(diff @ diff)
        if any(m.is_projection or m.kind == "norm_asymptotic" for m in methods):
            lam, vecs, trace = _spectrum(_pooled_factor([f1, f2], base))
        else:
            lam, vecs, trace = np.zeros(0), np.zeros((0, x1.shape[1])), 0.0
        extra["mean_iterations"] = [f1.iterations, f2.iterations]
    else:
        diff, stat, lam, vecs, trace = np.zeros(x1.shape[1]), 0.0, np.zeros(0), np.zeros((0, x1.shape[1])), 0.0
    obs = _Observed(n, diff, stat, lam, vecs, trace)
    if any(m.kind == "extrinsic_bootstrap" for m in methods):
        e1, e2 = _sphere.extrinsic_mean(x1), _sphere.extrinsic_mean(x2)
        ed = e1 - e2
        extra["extrinsic_statistic"] = n * float(ed @ ed)
    chart = "log at pooled Frechet mean"
    out = _asymptotic_reports(obs, methods, n_draws, seed, support_ok, chart, extra)

    tag1, tag2 = _content_tag(x1), _content_tag(x2)

    def replicate(stream, need_intrinsic, kmax):
        i1 = stream(tag1).integers(0, n1, n1)
        i2 = stream(tag2).integers(0, n2, n2)
        y1, y2 = x1[i1], x2[i2]
        ext = None
        if "extrinsic_statistic" in extra:
            d = (_sphere.extrinsic_mean(y1) - e1) - (_sphere.extrinsic_mean(y2) - e2)
            ext = n * float(d @ d)
        if not need_intrinsic:
            return None, None, None, ext
        g1, g2 = _Fit(y1, init=f1.mean), _Fit(y2, init=f2.mean)
        d = (_sphere.log(base, g1.mean) - a1) - (_sphere.log(base, g2.mean) - a2)
        lam_b = vecs_b = None
        if kmax:
            lam_b, vecs_b = eigen_from_factor(_pooled_factor([g1, g2], base), kmax)
        return d, lam_b, vecs_b, ext

    out.update(_bootstrap_reports(obs, methods, B, seed, support_ok, chart, extra, replicate))
    for rep in out.values():
        rep.diagnostics.pop("extrinsic_statistic", None)
    return {m.label: out[m.label] for m in methods}


def one_sample_norm(sample: SampleSet, mu0: SpherePoint, n_draws: int = DEFAULT_DRAWS, seed: int = 0) -> TestReport:
    """``T1 = n rho^2(mu_hat, mu0)`` calibrated by the weighted chi-square law."""
    return one_sample_suite(sample, mu0, ["norm_asymptotic"], n_draws=n_draws, seed=seed)["norm_asymptotic"]


def one_sample_proj(sample: SampleSet, mu0: SpherePoint, r: float, seed: int = 0) -> TestReport:
    """Projection statistic on the FVE-selected eigenpairs, chi-square(K) calibrated."""
    m = Method("proj_asymptotic", r)
    return one_sample_suite(sample, mu0, [m], seed=seed)[m.label]


def two_sample_norm(sample1: SampleSet, sample2: SampleSet, n_draws: int = DEFAULT_DRAWS, seed: int = 0) -> TestReport:
    return two_sample_suite(sample1, sample2, ["norm_asymptotic"], n_draws=n_draws, seed=seed)["norm_asymptotic"]


def two_sample_proj(sample1: SampleSet, sample2: SampleSet, r: float, seed: int = 0) -> TestReport:
    m = Method("proj_asymptotic", r)
    return two_sample_suite(sample1, sample2, [m], seed=seed)[m.label]


def _boot_method(statistic_kind: str, r) -> Method:
    if statistic_kind not in ("norm", "proj"):
        raise ValidationError("statistic_kind must be 'norm' or 'proj'")
    return parse_method(Method(f"{statistic_kind}_bootstrap", r))


def bootstrap_one_sample(sample: SampleSet, mu0: SpherePoint, B: int = DEFAULT_BOOT, statistic_kind: str = "norm",
                         r: float | None = None, seed: int = 0) -> TestReport:
    m = _boot_method(statistic_kind, r)
    return one_sample_suite(sample, mu0, [m], B=B, seed=seed)[m.label]


def bootstrap_two_sample(sample1: SampleSet, sample2: SampleSet, B: int = DEFAULT_BOOT, statistic_kind: str = "norm",
                         r: float | None = None, seed: int = 0) -> TestReport:
    m = _boot_method(statistic_kind, r)
    return two_sample_suite(sample1, sample2, [m], B=B, seed=seed)[m.label]


def extrinsic_two_sample(sample1: SampleSet, sample2: SampleSet, B: int = DEFAULT_BOOT, seed: int = 0) -> TestReport:
    """Bootstrap test comparing normalized linear averages in the ambient space."""
    return two_sample_suite(sample1, sample2, ["extrinsic_bootstrap"], B=B, seed=seed)["extrinsic_bootstrap"]


def check_densities(grid: Grid, densities, tol: float = 1e-9) -> np.ndarray:
    y = np.atleast_2d(grid.check(densities))
    neg = np.argwhere(y < 0)
    if neg.size:
        raise ValidationError("densities must be nonnegative", row=int(neg[0, 0]), column=int(neg[0, 1]))
    mass = y @ grid.weights
    bad = np.flatnonzero(np.abs(mass - 1.0) > tol)
    if bad.size:
        raise ValidationError(f"density does not integrate to 1 (mass {mass[bad[0]]:.12g})", row=int(bad[0]))
    return y


def flat_density_two_sample(densities1, densities2, grid: Grid, B: int = DEFAULT_BOOT, seed: int = 0) -> TestReport:
    """Norm bootstrap test on raw densities as elements of a flat L2 space."""
    y1 = check_densities(grid, densities1) * grid.sqrt_weights
    y2 = check_densities(grid, densities2) * grid.sqrt_weights
    n1, n2 = y1.shape[0], y2.shape[0]
    if min(n1, n2) < 2:
        raise DomainError("each group needs at least two observations")
    if B < 99:
        raise ValidationError("bootstrap needs at least 99 replicates")
    n = n1 + n2
    m1, m2 = y1.mean(axis=0), y2.mean(axis=0)
    d = m1 - m2
    stat = n * float(d @ d)
    reps = np.empty(B)
    tag1, tag2 = _content_tag(y1), _content_tag(y2)
    for b in range(B):
        i1 = _replicate_rng(seed, b, 0, tag1).integers(0, n1, n1)
        i2 = _replicate_rng(seed, b, 0, tag2).integers(0, n2, n2)
        db = (y1[i1].mean(axis=0) - m1) - (y2[i2].mean(axis=0) - m2)
        reps[b] = n * float(db @ db)
    p = (1 + int(np.count_nonzero(reps >= stat))) / (B + 1)
    return TestReport(stat, p, "flat_density_bootstrap", 0, None, 0, B, True, seed, "flat L2", {"failed_replicates": 0})
