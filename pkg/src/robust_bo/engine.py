"""Bayesian optimization with outlier filtering, plus the comparison strategies.

``Mode.FILTERED`` runs the two-step method: on scheduled iterations a
Student-t likelihood GP is fitted to every observation and used to classify
outliers; a Gaussian-likelihood GP is then fitted to the inliers and drives
expected improvement. The other modes are the references it is compared
against: a robust model used directly (Laplace Student-t GP or t-process)
and a plain GP on all points.
"""

from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from robust_bo.acquisition import propose
from robust_bo.design import check_bounds, latin_hypercube
from robust_bo.diagnostics import FilterConfig, classify_outliers, schedule_says_filter
from robust_bo.errors import ContractViolation, NumericalFailure
from robust_bo.gp import Dataset, fit_gp_gaussian
from robust_bo.kernels import KernelParams
from robust_bo.laplace import (
    StudentTLikParams,
    laplace_fit,
    latent_predictive,
    predict_studentt_laplace,
)
from robust_bo.rng import keyed_rng
from robust_bo.tprocess import TProcessParams, fit_tprocess

log = logging.getLogger(__name__)


class Mode(str, Enum):
    FILTERED = "filtered"
    T_LIKELIHOOD = "t_likelihood"
    T_PROCESS = "t_process"
    BASELINE = "baseline"


@dataclass(frozen=True)
class FitSettings:
    """Hyperparameter search budget inside the BO loop.

    The first fit of each model uses ``first_restarts`` random restarts and
    ``maxfev`` evaluations per start; later fits warm-start from the previous
    optimum with ``warm_maxfev`` evaluations and ``restarts`` extra random
    starts, except every ``refresh_every`` iterations where the first-fit
    budget is used again.
    """

    first_restarts: int = 5
    restarts: int = 0
    refresh_every: int = 10
    maxfev: int = 200
    warm_maxfev: int = 100


@dataclass(frozen=True)
class BoConfig:
    budget: int
    bounds: np.ndarray
    init_count: int = 10
    mode: Mode = Mode.FILTERED
    filter: FilterConfig = field(default_factory=FilterConfig)
    seed: int = 0
    persist_mask: bool = False
    dof: float = 4.0
    fit: FitSettings = field(default_factory=FitSettings)
    n_candidates: int = 1000

    def __post_init__(self):
        object.__setattr__(self, "bounds", check_bounds(self.bounds))
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.init_count < 2:
            raise ContractViolation(f"init_count must be >= 2, got {self.init_count}")
        if self.budget < self.init_count:
            raise ContractViolation("budget must be at least init_count")


@dataclass(frozen=True)
class Observation:
    """What an objective reports; ``y_true`` is the uncorrupted value when known."""

    y_observed: float
    y_true: float | None = None
    was_outlier: bool | None = None


@dataclass
class IterationRecord:
    iteration: int
    x: np.ndarray
    y_observed: float
    y_true: float
    was_outlier: bool | None
    mask_digest: str
    y_star: float
    y_star_true: float
    wall_time: float


@dataclass
class RunLog:
    records: list[IterationRecord] = field(default_factory=list)
    last_mask: np.ndarray | None = None
    ever_masked: np.ndarray | None = None
    n_classifications: int = 0
    n_reverted: int = 0
    status: str = "ok"
    message: str = ""

    def __len__(self):
        return len(self.records)

    @property
    def X(self) -> np.ndarray:
        return np.array([r.x for r in self.records])

    @property
    def y_observed(self) -> np.ndarray:
        return np.array([r.y_observed for r in self.records])

    @property
    def y_true(self) -> np.ndarray:
        return np.array([r.y_true for r in self.records])

    @property
    def y_star_true(self) -> np.ndarray:
        return np.array([r.y_star_true for r in self.records])

    def summary(self) -> dict:
        return {
            "status": self.status,
            "n": len(self),
            "best_true": float(self.y_star_true[-1]) if self.records else np.nan,
            "classifications": self.n_classifications,
            "reverted": self.n_reverted,
            "ever_masked": int(self.ever_masked.sum()) if self.ever_masked is not None else 0,
        }


def initial_design(p: int, bounds, seed: int) -> np.ndarray:
    """Latin hypercube of ``p`` points, reproducible from ``seed``."""
    return latin_hypercube(p, bounds, keyed_rng(seed, "init"))


def mask_digest(mask: np.ndarray | None) -> str:
    if mask is None:
        return ""
    return hashlib.sha1(np.packbits(mask).tobytes() + str(mask.size).encode()).hexdigest()[:12]


def _as_observation(value) -> Observation:
    if isinstance(value, Observation):
        return value
    return Observation(float(value))


class _Surrogates:
    """Warm-started hyperparameters carried between iterations."""

    def __init__(self, cfg: BoConfig, y0: np.ndarray):
        self.cfg = cfg
        width = cfg.bounds[:, 1] - cfg.bounds[:, 0]
        self.width = width
        s2 = float(max(np.var(y0), 1e-4))
        self.gp_kernel = KernelParams(0.25 * width, s2)
        self.gp_noise = 1e-4 * s2
        self.t_kernel = KernelParams(0.25 * width, s2)
        self.t_lik = StudentTLikParams(cfg.dof, 0.1 * np.sqrt(s2))
        self.t_model = None
        self.tp_params = TProcessParams(KernelParams(0.25 * width, 1.0), 1e-3)
        self.fitted = set()

    def _budget(self, which: str, step: int):
        fs = self.cfg.fit
        first = which not in self.fitted or (fs.refresh_every and step % fs.refresh_every == 0)
        self.fitted.add(which)
        return {"n_restarts": fs.first_restarts if first else fs.restarts,
                "maxfev": fs.maxfev if first else fs.warm_maxfev,
                "input_range": self.width}

    def gaussian(self, data: Dataset, step: int):
        model = fit_gp_gaussian(
            data, self.gp_kernel, self.gp_noise, True,
            rng=keyed_rng(self.cfg.seed, "fit-gp", step), **self._budget("gp", step),
        )
        self.gp_kernel, self.gp_noise = model.kernel, model.noise_variance
        return model

    def student_t(self, data: Dataset, step: int):
        f0 = None
        if self.t_model is not None:
            f0, _ = latent_predictive(self.t_model, data.X, on_indefinite="floor")
        model = laplace_fit(
            data, self.t_kernel, self.t_lik, True, f0=f0,
            rng=keyed_rng(self.cfg.seed, "fit-t", step), **self._budget("t", step),
        )
        self.t_kernel, self.t_lik, self.t_model = model.kernel, model.lik, model
        return model

    def t_process(self, data: Dataset, step: int):
        model = fit_tprocess(
            data, self.tp_params, True,
            rng=keyed_rng(self.cfg.seed, "fit-tp", step), **self._budget("tp", step),
        )
        self.tp_params = model.params
        return model


def run_bo(objective: Callable[[np.ndarray], float | Observation], cfg: BoConfig) -> RunLog:
    """Minimize ``objective`` over ``cfg.bounds`` with ``cfg.budget`` evaluations.

    ``objective`` may return a float or an :class:`Observation` carrying the
    uncorrupted value. A non-finite observation aborts the run; the log then
    has ``status == "aborted"`` and holds the records gathered so far.
    """
    runlog = RunLog()
    X_all: list[np.ndarray] = []
    y_all: list[float] = []
    best_obs = np.inf
    best_true = np.inf

    def evaluate(x, digest: str) -> bool:
        nonlocal best_obs, best_true
        t0 = time.perf_counter()
        obs = _as_observation(objective(np.array(x)))
        y_true = obs.y_observed if obs.y_true is None else obs.y_true
        if not np.isfinite(obs.y_observed):
            runlog.status = "aborted"
            runlog.message = (
                f"objective returned {obs.y_observed!r} at iteration {len(X_all) + 1}"
            )
            log.warning(runlog.message)
            return False
        best_obs = min(best_obs, obs.y_observed)
        best_true = min(best_true, y_true)
        X_all.append(np.array(x, dtype=float))
        y_all.append(float(obs.y_observed))
        runlog.records.append(IterationRecord(
            len(X_all), np.array(x, dtype=float), float(obs.y_observed), float(y_true),
            obs.was_outlier, digest, best_obs, best_true, time.perf_counter() - t0,
        ))
        return True

    for x in initial_design(cfg.init_count, cfg.bounds, cfg.seed):
        if not evaluate(x, ""):
            return runlog

    models = _Surrogates(cfg, np.array(y_all))
    runlog.ever_masked = np.zeros(len(y_all), dtype=bool)
    last_mask = None

    for step in range(cfg.budget - cfg.init_count):
        t0 = time.perf_counter()
        data = Dataset(np.array(X_all), np.array(y_all))
        n = len(data)
        runlog.ever_masked = np.append(runlog.ever_masked, np.zeros(n - runlog.ever_masked.size, bool))
        rng = keyed_rng(cfg.seed, "acq", n)

        if cfg.mode in (Mode.FILTERED, Mode.BASELINE):
            mask = np.ones(n, dtype=bool)
            if cfg.mode is Mode.FILTERED:
                scheduled = schedule_says_filter(n, cfg.filter)
                if scheduled:
                    try:
                        robust = models.student_t(data, step)
                        report = classify_outliers(data, robust, cfg.filter)
                    except NumericalFailure as exc:
                        log.info("robust fit failed at n=%d: %s", n, exc)
                        report = None
                    runlog.n_classifications += 1
                    if report is None or report.reverted:
                        runlog.n_reverted += 1
                        last_mask = np.ones(n, dtype=bool)
                    else:
                        mask = report.inlier_mask
                        last_mask = mask.copy()
                        runlog.ever_masked |= ~mask
                elif cfg.persist_mask and last_mask is not None:
                    mask = np.append(last_mask, np.ones(n - last_mask.size, bool))
            train = data.with_mask(mask)
            gp = models.gaussian(train, step)
            y_star = float(np.min(data.y[mask]))
            predict = gp.predict
            digest = mask_digest(mask)
        elif cfg.mode is Mode.T_LIKELIHOOD:
            robust = models.student_t(data, step)
            y_star = float(np.min(data.y))
            predict = lambda Xq: predict_studentt_laplace(robust, Xq, "floor")  # noqa: E731
            digest = mask_digest(np.ones(n, dtype=bool))
        else:
            tp = models.t_process(data, step)
            y_star = float(np.min(data.y))
            predict = tp.predict
            digest = mask_digest(np.ones(n, dtype=bool))

        x_next = propose(predict, y_star, cfg.bounds, rng, n_candidates=cfg.n_candidates)
        fit_time = time.perf_counter() - t0
        if not evaluate(x_next, digest):
            break
        runlog.records[-1].wall_time += fit_time

    runlog.last_mask = (
        np.append(last_mask, np.ones(len(y_all) - last_mask.size, bool))
        if last_mask is not None else np.ones(len(y_all), dtype=bool)
    )
    if runlog.ever_masked is not None:
        runlog.ever_masked = np.append(
            runlog.ever_masked, np.zeros(len(y_all) - runlog.ever_masked.size, bool)
        )
    return runlog
