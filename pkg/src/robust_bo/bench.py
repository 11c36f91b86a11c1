"""Synthetic benchmark protocol: GP-sampled objectives, outlier injection, trials.

Test functions are exact GP sample paths realized lazily: each new query is
drawn from the GP conditioned on every value revealed so far. To keep the
paths of different optimizers (which query different points) close to each
other, each function is first revealed on a Latin hypercube of anchor points;
all later queries are conditioned on those anchors.

Outliers replace the true value by a U(1, 2) draw with probability ``rate``.
The decision and the value are keyed on (trial, evaluation index) only, so
every method sees the same corruption pattern in the same trial.
"""

from __future__ import annotations

import copy
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import solve_triangular
from scipy.optimize import minimize

from robust_bo.design import check_bounds, latin_hypercube
from robust_bo.diagnostics import FilterConfig
from robust_bo.engine import BoConfig, FitSettings, Mode, Observation, RunLog, run_bo
from robust_bo.errors import ContractViolation, NumericalFailure
from robust_bo.kernels import JITTER, MAX_JITTER, KernelFamily, KernelParams, cross_kernel, gram_matrix, jittered_cholesky
from robust_bo.rng import keyed_rng

log = logging.getLogger(__name__)

#: Label of the reference runs without injected outliers.
NO_OUTLIERS = "no_outliers"


class SyntheticObjective:
    """A lazily sampled GP path, consistent under repeated queries.

    Parameters
    ----------
    kernel : KernelParams
        Generating covariance (noise free; only jitter is added).
    bounds : array-like, shape (d, 2)
        Domain, used for the anchor design and the minimum search.
    seed : int
        Seed of the path; the path is a deterministic function of the seed
        and of the order of queries.
    n_anchors : int
        Number of Latin hypercube points revealed at construction.
    """

    def __init__(self, kernel: KernelParams, bounds, seed: int, n_anchors: int = 0):
        self.kernel = kernel
        self.bounds = check_bounds(bounds)
        if self.bounds.shape[0] != kernel.dim:
            raise ContractViolation("bounds and kernel dimension differ")
        self.seed = seed
        self._rng = keyed_rng(seed, "gp-path")
        cap = max(16, n_anchors + 64)
        self._L = np.zeros((cap, cap))
        self._X = np.zeros((cap, kernel.dim))
        self._w = np.zeros(cap)  # L^-1 f, i.e. the standard normal innovations
        self._f = np.zeros(cap)
        self._n = 0
        self._cache: dict[bytes, float] = {}
        if n_anchors:
            self._reveal_batch(latin_hypercube(n_anchors, self.bounds, keyed_rng(seed, "anchors")))

    @property
    def dim(self) -> int:
        return self.kernel.dim

    @property
    def n_revealed(self) -> int:
        return self._n

    def _grow(self, extra: int):
        need = self._n + extra
        cap = self._L.shape[0]
        if need <= cap:
            return
        new = max(need, 2 * cap)
        L = np.zeros((new, new))
        L[:cap, :cap] = self._L
        self._L = L
        self._X = np.vstack([self._X, np.zeros((new - cap, self.dim))])
        self._w = np.append(self._w, np.zeros(new - cap))
        self._f = np.append(self._f, np.zeros(new - cap))

    def _reveal_batch(self, Xb: np.ndarray):
        """Reveal a block of new points jointly (used for the anchors)."""
        m = Xb.shape[0]
        self._grow(m)
        n = self._n
        Kbb = gram_matrix(Xb, self.kernel, 0.0)
        if n:
            Kcb = cross_kernel(self._X[:n], Xb, self.kernel)
            V = solve_triangular(self._L[:n, :n], Kcb, lower=True)
            Kbb = Kbb - V.T @ V
        else:
            V = np.zeros((0, m))
        Lb, _ = jittered_cholesky(Kbb, self.kernel.signal_variance)
        z = self._rng.standard_normal(m)
        self._L[n:n + m, :n] = V.T
        self._L[n:n + m, n:n + m] = Lb
        self._w[n:n + m] = z
        self._f[n:n + m] = V.T @ self._w[:n] + Lb @ z
        self._X[n:n + m] = Xb
        self._n = n + m
        for i in range(n, n + m):
            self._cache[self._X[i].tobytes()] = float(self._f[i])

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.size != self.dim:
            raise ContractViolation(f"expected a {self.dim}-vector, got {x.size}")
        key = x.tobytes()
        if key in self._cache:
            return self._cache[key]
        self._grow(1)
        n = self._n
        sv = self.kernel.signal_variance
        k = cross_kernel(self._X[:n], x[None, :], self.kernel)[:, 0] if n else np.zeros(0)
        v = solve_triangular(self._L[:n, :n], k, lower=True) if n else k
        var = sv - v @ v
        jitter = JITTER * sv
        while var + jitter <= 0:
            jitter *= 10.0
            if jitter > MAX_JITTER * sv:
                raise NumericalFailure("conditional variance collapsed")
        diag = np.sqrt(var + jitter)
        z = self._rng.standard_normal()
        f = float(v @ self._w[:n] + diag * z)
        self._L[n, :n] = v
        self._L[n, n] = diag
        self._w[n] = z
        self._f[n] = f
        self._X[n] = x
        self._n = n + 1
        self._cache[key] = f
        return f

    def fork(self) -> "SyntheticObjective":
        """Independent copy that continues the same path from the current state."""
        return copy.deepcopy(self)

    def posterior_mean(self, Xq) -> np.ndarray:
        """Mean of the path at ``Xq`` given the revealed values (does not reveal)."""
        n = self._n
        coef = solve_triangular(self._L[:n, :n], self._w[:n], lower=True, trans="T")
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        out = np.empty(Xq.shape[0])
        for s in range(0, Xq.shape[0], 4096):
            out[s:s + 4096] = cross_kernel(Xq[s:s + 4096], self._X[:n], self.kernel) @ coef
        return out

    def estimate_minimum(self, n_points: int = 100_000, n_polish: int = 5) -> tuple[np.ndarray, float]:
        """Minimum of the path, estimated on a Latin hypercube and polished locally.

        The search uses the conditional mean given the revealed values, which
        equals the path wherever anchors are dense; revealed values are
        included as candidates too.
        """
        if self._n == 0:
            raise ContractViolation("reveal some points before estimating the minimum")
        Xc = latin_hypercube(n_points, self.bounds, keyed_rng(self.seed, "min-search"))
        vals = self.posterior_mean(Xc)
        order = np.argsort(vals, kind="stable")[:n_polish]
        best_x, best_v = Xc[order[0]], float(vals[order[0]])
        for i in order:
            res = minimize(lambda z: float(self.posterior_mean(z[None, :])[0]), Xc[i],
                           method="L-BFGS-B", bounds=self.bounds)
            if res.fun < best_v:
                best_x, best_v = res.x, float(res.fun)
        j = int(np.argmin(self._f[: self._n]))
        if self._f[j] < best_v:
            best_x, best_v = self._X[j].copy(), float(self._f[j])
        return best_x, best_v


def sample_gp_function(kernel: KernelParams, d: int, seed: int, bounds=None,
                       n_anchors: int = 0) -> SyntheticObjective:
    if kernel.dim != d:
        raise ContractViolation(f"kernel has dimension {kernel.dim}, expected {d}")
    bounds = np.tile([0.0, 1.0], (d, 1)) if bounds is None else bounds
    return SyntheticObjective(kernel, bounds, seed, n_anchors)


@dataclass(frozen=True)
class OutlierModel:
    rate: float = 0.1
    low: float = 1.0
    high: float = 2.0

    def __post_init__(self):
        if not 0 <= self.rate <= 1:
            raise ContractViolation(f"outlier rate must be in [0, 1], got {self.rate}")
        if not self.low <= self.high:
            raise ContractViolation("outlier range must have low <= high")


def corrupt(y_true: float, outliers: OutlierModel, iteration: int, trial_seed: int):
    """Possibly replace ``y_true`` by an outlier; returns (observed, was_outlier).

    Both draws come from a stream keyed on (trial_seed, iteration), so the
    same evaluation index is corrupted identically for every method, and the
    set corrupted at a lower rate is contained in the set at a higher rate.
    """
    rng = keyed_rng(trial_seed, "outlier", iteration)
    u, v = rng.random(2)
    if u < outliers.rate:
        return float(outliers.low + v * (outliers.high - outliers.low)), True
    return float(y_true), False


class CorruptedObjective:
    """Wraps a path with outlier injection; counts evaluations to key the draws."""

    def __init__(self, fn: SyntheticObjective, outliers: OutlierModel, trial_seed: int):
        self.fn = fn
        self.outliers = outliers
        self.trial_seed = trial_seed
        self.count = 0

    def __call__(self, x) -> Observation:
        self.count += 1
        y = self.fn(x)
        y_obs, flag = corrupt(y, self.outliers, self.count, self.trial_seed)
        return Observation(y_obs, y, flag)


@dataclass(frozen=True)
class ObjectiveSpec:
    kernel: KernelFamily = KernelFamily.MATERN52
    d: int = 2
    bounds: tuple | None = None
    lengthscale_fraction: float = 0.1
    lengthscales: tuple | None = None
    signal_variance: float = 1.0
    rq_alpha: float = 2.0
    n_anchors: int = 1024
    min_search_points: int = 100_000

    def resolved_bounds(self) -> np.ndarray:
        if self.bounds is None:
            return np.tile([0.0, 1.0], (self.d, 1))
        return check_bounds(self.bounds)

    def generator_kernel(self) -> KernelParams:
        b = self.resolved_bounds()
        if self.lengthscales is not None:
            ls = np.asarray(self.lengthscales, dtype=float)
        else:
            ls = self.lengthscale_fraction * (b[:, 1] - b[:, 0])
        return KernelParams(ls, self.signal_variance, KernelFamily(self.kernel), self.rq_alpha)


@dataclass(frozen=True)
class ExperimentConfig:
    objective: ObjectiveSpec = field(default_factory=ObjectiveSpec)
    modes: tuple = ("filtered", "t_likelihood", "t_process", "baseline", NO_OUTLIERS)
    outlier_rates: tuple = (0.1, 0.2)
    trials: int = 20
    budget: int = 50
    init_count: int = 10
    filter: FilterConfig = field(default_factory=FilterConfig)
    persist_mask: bool = False
    dof: float = 4.0
    fit: FitSettings = field(default_factory=FitSettings)
    n_candidates: int = 1000
    seed: int = 0

    def __post_init__(self):
        for m in self.modes:
            if m != NO_OUTLIERS:
                Mode(m)
        if self.trials < 1:
            raise ContractViolation("trials must be >= 1")


@dataclass
class RunResult:
    mode: str
    rate: float
    trial: int
    log: RunLog
    f_min: float

    @property
    def regret(self) -> np.ndarray:
        return self.log.y_star_true - self.f_min


@dataclass
class Summary:
    mode: str
    rate: float
    mean_regret: np.ndarray
    ci_halfwidth: np.ndarray

    @property
    def final(self) -> float:
        return float(self.mean_regret[-1])


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    runs: list[RunResult]
    summaries: list[Summary]
    errors: list[str] = field(default_factory=list)

    def summary(self, mode: str, rate: float) -> Summary:
        for s in self.summaries:
            if s.mode == mode and s.rate == rate:
                return s
        raise KeyError((mode, rate))

    @property
    def complete(self) -> bool:
        return not self.errors


def trial_seed(cfg: ExperimentConfig, trial: int) -> int:
    return int(keyed_rng(cfg.seed, "trial", trial).integers(0, 2**63 - 1))


def _bo_config(cfg: ExperimentConfig, mode: str, seed: int) -> BoConfig:
    engine_mode = Mode.BASELINE if mode == NO_OUTLIERS else Mode(mode)
    return BoConfig(
        budget=cfg.budget, bounds=cfg.objective.resolved_bounds(), init_count=cfg.init_count,
        mode=engine_mode, filter=cfg.filter, seed=seed, persist_mask=cfg.persist_mask,
        dof=cfg.dof, fit=cfg.fit, n_candidates=cfg.n_candidates,
    )


def run_trial(cfg: ExperimentConfig, trial: int) -> tuple[list[RunResult], list[str]]:
    """All (mode, rate) runs of one trial, sharing its function and random streams."""
    seed = trial_seed(cfg, trial)
    spec = cfg.objective
    base = SyntheticObjective(spec.generator_kernel(), spec.resolved_bounds(), seed, spec.n_anchors)
    _, f_min = base.estimate_minimum(spec.min_search_points)
    results, errors = [], []
    clean_done: dict[str, RunResult] = {}
    for rate in cfg.outlier_rates:
        for mode in cfg.modes:
            effective = 0.0 if mode == NO_OUTLIERS else rate
            if mode == NO_OUTLIERS and mode in clean_done:
                # The clean reference does not depend on the rate.
                results.append(replace(clean_done[mode], rate=rate))
                continue
            objective = CorruptedObjective(base.fork(), OutlierModel(effective), seed)
            try:
                runlog = run_bo(objective, _bo_config(cfg, mode, seed))
            except (NumericalFailure, ArithmeticError, ValueError) as exc:
                errors.append(f"trial {trial} mode {mode} rate {rate}: {exc}")
                log.error(errors[-1])
                continue
            if runlog.status != "ok":
                errors.append(f"trial {trial} mode {mode} rate {rate}: {runlog.message}")
            res = RunResult(mode, rate, trial, runlog, f_min)
            if mode == NO_OUTLIERS:
                clean_done[mode] = res
            results.append(res)
    # Any queried value below the search estimate is a better bound on the minimum.
    seen = [r.log.y_true.min() for r in results if len(r.log)]
    f_min = min([f_min, *seen])
    results = [replace(r, f_min=float(f_min)) for r in results]
    return results, errors


def summarize(runs: list[RunResult], mode: str, rate: float, budget: int) -> Summary:
    rows = [r.regret for r in runs if r.mode == mode and r.rate == rate and len(r.regret) == budget]
    if not rows:
        nan = np.full(budget, np.nan)
        return Summary(mode, rate, nan, nan)
    R = np.vstack(rows)
    mean = R.mean(axis=0)
    if R.shape[0] > 1:
        half = 1.96 * R.std(axis=0, ddof=1) / np.sqrt(R.shape[0])
    else:
        half = np.zeros(budget)
    return Summary(mode, rate, mean, half)


def run_experiment(cfg: ExperimentConfig, jobs: int = 1) -> ExperimentResult:
    """Every (mode, rate, trial) run plus per-iteration regret summaries.

    Trials are independent and keyed by their index, so ``jobs > 1`` gives
    the same numbers as a sequential run.
    """
    trials = range(cfg.trials)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outputs = list(pool.map(run_trial, [cfg] * cfg.trials, trials))
    else:
        outputs = [run_trial(cfg, t) for t in trials]
    runs = [r for out in outputs for r in out[0]]
    errors = [e for out in outputs for e in out[1]]
    summaries = [summarize(runs, m, rate, cfg.budget) for rate in cfg.outlier_rates for m in cfg.modes]
    return ExperimentResult(cfg, runs, summaries, errors)
