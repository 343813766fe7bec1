"""Monte Carlo driver: replicate loop, metrics and flag tallies."""

from __future__ import annotations

import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .dgp import LcGenerator, ScenarioCoefficients, Truth, default_nuisance_specs, generate, stream, true_ate
from .errors import ConfigError
from .estimators import (
    ALL_ESTIMATORS,
    CCMAR_IF,
    FLAG_CLIPPED,
    FLAG_FAILED,
    FLAG_NONCONVERGED,
    EstimateRecord,
    EstimatorId,
    run_estimator_suite,
)
from .nuisance import DEFAULT_PI_CLIP, LP_QUADRATURE, NuisanceSpecs

log = logging.getLogger(__name__)

WORKERS_ENV = "CCMAR_WORKERS"
DEFAULT_FENCE = 10.0


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw is None:
        return 1
    try:
        w = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    if w < 1:
        raise ConfigError(f"{WORKERS_ENV} must be at least 1")
    return w


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to run one simulation scenario deterministically."""

    coefficients: ScenarioCoefficients
    lc: LcGenerator = LcGenerator()
    n: int = 4344
    replicates: int = 500
    suite: tuple[str, ...] = tuple(e.key for e in ALL_ESTIMATORS)
    master_seed: int = 0
    truth_method: str = "monte-carlo"
    truth_n_mc: int = 2_000_000
    truth_repeats: int = 5
    truth_value: Optional[float] = None
    pi_clip: Optional[tuple[float, float]] = DEFAULT_PI_CLIP
    workers: int = 1
    crossfit_folds: int = 1
    n_imputations: int = 1
    laguerre_nodes: int = 30
    hermite_nodes: int = 20
    y_nodes: Optional[int] = None
    lp_method: str = LP_QUADRATURE
    mc_draws: int = 500
    gamma_shape: object = "moment"
    fit_specs: Optional[NuisanceSpecs] = None
    name: str = ""
    description: str = ""

    def __post_init__(self):
        if self.replicates < 1:
            raise ConfigError("replicates must be at least 1")
        if self.n < 50:
            raise ConfigError("n must be at least 50")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.truth_method not in ("analytic", "monte-carlo"):
            raise ConfigError(f"unknown truth method {self.truth_method!r}")
        if self.crossfit_folds < 1:
            raise ConfigError("crossfit_folds must be at least 1")
        suite = tuple(EstimatorId.parse(s).key for s in self.suite)
        if not suite:
            raise ConfigError("estimator suite is empty")
        object.__setattr__(self, "suite", suite)
        if self.pi_clip is not None:
            object.__setattr__(self, "pi_clip", tuple(float(x) for x in self.pi_clip))
        specs = self.nuisance_specs()
        specs.validate(self.coefficients.lc_names, self.coefficients.lp_names)

    def nuisance_specs(self) -> NuisanceSpecs:
        if self.fit_specs is not None:
            return self.fit_specs
        return default_nuisance_specs(self.coefficients, self.gamma_shape)

    def fit_kwargs(self, seed: int) -> dict:
        return dict(pi_clip=self.pi_clip, y_nodes=self.y_nodes, laguerre_nodes=self.laguerre_nodes,
                    hermite_nodes=self.hermite_nodes, lp_method=self.lp_method,
                    mc_draws=self.mc_draws, mc_seed=seed)

    def with_updates(self, **kw) -> "ScenarioConfig":
        from dataclasses import replace
        return replace(self, **kw)


@dataclass(frozen=True)
class ReplicateRecord:
    replicate: int
    record: EstimateRecord


@dataclass
class ScenarioResults:
    records: list[ReplicateRecord]
    elapsed: float = 0.0
    meta: dict = field(default_factory=dict)

    def by_estimator(self) -> dict[str, list[EstimateRecord]]:
        out: dict[str, list[EstimateRecord]] = {}
        for r in self.records:
            out.setdefault(r.record.estimator, []).append(r.record)
        return out

    def ates(self, estimator: str) -> np.ndarray:
        return np.array([r.record.ate for r in self.records if r.record.estimator == estimator])


def _replicate_seed(master, r):
    return int(np.random.SeedSequence(int(master), spawn_key=(int(r), 1)).generate_state(1)[0])


def run_replicate(config: ScenarioConfig, r: int) -> list[EstimateRecord]:
    """Generate replicate ``r`` and run the suite on it; never raises."""
    try:
        data = generate(config.coefficients, config.n, stream(config.master_seed, r, 0), config.lc)
        specs = config.nuisance_specs()
        seed = _replicate_seed(config.master_seed, r)
        return run_estimator_suite(
            data, config.suite, specs, seed,
            crossfit_folds=config.crossfit_folds, imputation_lambda=specs.lam,
            n_imputations=config.n_imputations, **config.fit_kwargs(seed))
    except Exception as err:  # a broken replicate is recorded, never fatal
        return [EstimateRecord.failed(k, err) for k in config.suite]


def _run_batch(config: ScenarioConfig, reps: Sequence[int]):
    with threadpool_limits(1):
        return [(r, run_replicate(config, r)) for r in reps]


def run_scenario(config: ScenarioConfig, workers: Optional[int] = None,
                 replicates: Optional[Sequence[int]] = None) -> ScenarioResults:
    """Run every replicate; output order and content do not depend on ``workers``."""
    workers = config.workers if workers is None else workers
    reps = list(range(config.replicates)) if replicates is None else list(replicates)
    t0 = time.perf_counter()
    batch = max(1, min(25, math.ceil(len(reps) / max(4 * workers, 1))))
    batches = [reps[i:i + batch] for i in range(0, len(reps), batch)]
    out: dict[int, list[EstimateRecord]] = {}

    def collect(done):
        for r, recs in done:
            out[r] = recs
        n_failed = sum(rec.error is not None for r, _ in done for rec in out[r])
        log.info("replicates %d/%d done (%d failed records in batch)", len(out), len(reps), n_failed)

    if workers == 1 or len(batches) == 1:
        for b in batches:
            collect(_run_batch(config, b))
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            for done in ex.map(_run_batch, [config] * len(batches), batches):
                collect(done)
    records = [ReplicateRecord(r, rec) for r in sorted(out) for rec in out[r]]
    res = ScenarioResults(records, time.perf_counter() - t0)
    res.meta["flags"] = flag_report(res)
    return res


def compute_truth(config: ScenarioConfig, n_mc: Optional[int] = None, repeats: Optional[int] = None,
                  seed: Optional[int] = None) -> Truth:
    if config.truth_value is not None and n_mc is None and repeats is None:
        return Truth(float(config.truth_value), 0.0, "configured")
    if config.truth_method == "analytic" and config.coefficients.factorization != "np-beta":
        raise ConfigError("analytic truth is only available for the np-beta design")
    seed = config.master_seed + 1_000_003 if seed is None else seed
    with threadpool_limits(1):
        return true_ate(config.coefficients, n_mc or config.truth_n_mc,
                        repeats or config.truth_repeats, seed, config.lc)


# ---------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class MetricsRow:
    estimator: str
    pct_bias: float
    pct_m_bias: float
    se: float
    relative_uncertainty: float
    dropped: int
    kept: int = 0
    mean: float = math.nan
    median: float = math.nan
    mc_se: float = math.nan
    absolute: bool = False


def fence_mask(ates: np.ndarray, multiplier: float = DEFAULT_FENCE) -> np.ndarray:
    """True for finite estimates within median +/- multiplier * IQR."""
    ates = np.asarray(ates, dtype=float)
    finite = np.isfinite(ates)
    if not finite.any():
        return finite
    v = ates[finite]
    med = np.median(v)
    q75, q25 = np.percentile(v, [75, 25])
    width = multiplier * (q75 - q25)
    keep = finite.copy()
    keep[finite] = np.abs(v - med) <= width
    return keep


def summarize(results, truth: float, reference: str = CCMAR_IF,
              fence: float = DEFAULT_FENCE, order: Optional[Sequence[str]] = None) -> list[MetricsRow]:
    """Per-estimator metrics over kept replicates.

    ``results`` is a :class:`ScenarioResults` or a mapping from estimator to
    a sequence of ATE estimates. Percent metrics become absolute biases when
    the truth is (numerically) zero.
    """
    truth = float(truth)
    if not math.isfinite(truth):
        raise ConfigError("truth must be finite")
    if isinstance(results, ScenarioResults):
        groups = {k: np.array([r.ate for r in v]) for k, v in results.by_estimator().items()}
    else:
        groups = {k: np.asarray(v, dtype=float) for k, v in results.items()}
    if reference not in groups:
        raise ConfigError(f"reference estimator {reference!r} is not in the results")
    absolute = abs(truth) < 1e-8
    scale = 1.0 if absolute else 100.0 / truth
    stats = {}
    for k, ates in groups.items():
        keep = fence_mask(ates, fence)
        v = ates[keep]
        if v.size == 0:
            raise ConfigError(f"estimator {k!r} has no kept replicates")
        se = float(np.std(v, ddof=1)) if v.size > 1 else 0.0
        stats[k] = (v, se, int(ates.size - v.size))
    se_ref = stats[reference][1]
    keys = list(order) if order is not None else list(groups)
    rows = []
    for k in keys:
        v, se, dropped = stats[k]
        mean, med = float(np.mean(v)), float(np.median(v))
        ru = se / se_ref if se_ref > 0 else (1.0 if k == reference else math.nan)
        if k == reference:
            ru = 1.0
        rows.append(MetricsRow(k, (mean - truth) * scale, (med - truth) * scale, se, ru, dropped,
                               int(v.size), mean, med, se / math.sqrt(v.size), absolute))
    return rows


def flag_report(results: ScenarioResults, fence: float = DEFAULT_FENCE) -> dict[str, int]:
    """Counts of records per flag kind; ``extreme`` uses the summary fence."""
    counts = {FLAG_NONCONVERGED: 0, FLAG_CLIPPED: 0, FLAG_FAILED: 0, "extreme": 0}
    for r in results.records:
        for f in r.record.flags:
            if f in counts:
                counts[f] += 1
    for k, recs in results.by_estimator().items():
        ates = np.array([r.ate for r in recs])
        finite = np.isfinite(ates)
        counts["extreme"] += int(np.count_nonzero(finite & ~fence_mask(ates, fence)))
    return counts
