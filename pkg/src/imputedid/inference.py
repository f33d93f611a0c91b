"""Cluster bootstrap inference shared by every estimator.

Random draws come from numpy's Philox generator, a counter-based 4x64 PRNG.
Each replicate gets its own stream keyed by ``(seed, replicate)`` and each
redraw attempt its own counter block, so results do not depend on the order
or thread in which replicates run.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .data import ObservationTable
from .errors import (
    AllResamplesDegenerate,
    EstimationError,
    SingleCluster,
    UnpairedReplicates,
    UnwritablePath,
)

Z975 = float(stats.norm.ppf(0.975))
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class BootstrapPlan:
    """How to bootstrap: ``iterations`` draws of ``flavor`` over ``cluster``.

    ``flavor`` is ``"pairs"`` (resample whole clusters with replacement) or
    ``"wild"`` (flip cluster residual signs with Rademacher weights).
    """

    iterations: int = 1000
    seed: int = 0
    cluster: str = "cluster"
    flavor: str = "pairs"
    max_attempts: int = 100

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if self.flavor not in ("pairs", "wild"):
            raise ValueError(f"unknown bootstrap flavor {self.flavor!r}")
        if not 0 <= int(self.seed) <= _MASK64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be at least 1")


def replicate_rng(seed: int, replicate: int, attempt: int = 0) -> np.random.Generator:
    """Independent generator for one (replicate, attempt) pair."""
    key = np.array([int(seed) & _MASK64, int(replicate) & _MASK64], dtype=np.uint64)
    counter = np.array([0, 0, 0, int(attempt)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


@dataclass
class BootstrapResult:
    point: np.ndarray
    replicates: np.ndarray
    se: np.ndarray
    ci_percentile: np.ndarray
    ci_normal: np.ndarray
    discarded: int
    attempted: int
    redraws: int = 0
    names: list[str] | None = None

    @property
    def n_replicates(self) -> int:
        return int(self.replicates.shape[0])

    @property
    def cov(self) -> np.ndarray:
        reps = self.replicates
        keep = np.all(np.isfinite(reps), axis=1)
        if keep.sum() < 2:
            return np.zeros((reps.shape[1], reps.shape[1]))
        return np.atleast_2d(np.cov(reps[keep].T, ddof=1))

    def scalar(self, j: int = 0) -> tuple[float, float, tuple[float, float]]:
        """Point, SE and percentile CI of component ``j``."""
        return (float(self.point[j]), float(self.se[j]),
                (float(self.ci_percentile[0, j]), float(self.ci_percentile[1, j])))


def summarize_replicates(point, replicates: np.ndarray, discarded: int = 0,
                         attempted: int | None = None, redraws: int = 0,
                         names=None) -> BootstrapResult:
    point = np.atleast_1d(np.asarray(point, dtype=np.float64))
    reps = np.asarray(replicates, dtype=np.float64).reshape(-1, point.size)
    counts = np.sum(np.isfinite(reps), axis=0)
    se = np.full(point.size, np.nan)
    lo = np.full(point.size, np.nan)
    hi = np.full(point.size, np.nan)
    for j in range(point.size):
        col = reps[:, j][np.isfinite(reps[:, j])]
        if counts[j] >= 2:
            se[j] = float(np.std(col, ddof=1))
        elif counts[j] == 1:
            se[j] = 0.0
        if counts[j]:
            lo[j], hi[j] = np.percentile(col, [2.5, 97.5])
    ci_norm = np.vstack([point - Z975 * se, point + Z975 * se])
    return BootstrapResult(point, reps, se, np.vstack([lo, hi]), ci_norm, discarded,
                           reps.shape[0] + discarded if attempted is None else attempted,
                           redraws, names)


def _as_vector(value) -> np.ndarray:
    return np.atleast_1d(np.asarray(value, dtype=np.float64))


def cluster_bootstrap(
    estimator: Callable[[ObservationTable], float | np.ndarray],
    table: ObservationTable,
    plan: BootstrapPlan,
    *,
    point=None,
    residualize: Callable[[ObservationTable], tuple[np.ndarray, np.ndarray]] | None = None,
    sampler: Callable[[int, int, int], np.ndarray] | None = None,
    threads: int = 1,
    names: Sequence[str] | None = None,
) -> BootstrapResult:
    """Bootstrap an estimator over clusters.

    Parameters
    ----------
    estimator
        Maps a table to a scalar or a fixed-length vector. Raising an
        :class:`EstimationError` marks the draw degenerate; it is redrawn up to
        ``plan.max_attempts`` times and then discarded.
    point
        Estimate on the original table; computed if omitted.
    residualize
        Required for the wild flavor: returns ``(fitted, residuals)`` for the
        table; replicate outcomes are ``fitted + v_c * residuals``.
    sampler
        Optional override for pairs draws, called as
        ``sampler(replicate, attempt, n_clusters)`` and returning cluster
        indices. Used to enumerate resample spaces in tests.
    threads
        Worker threads; results are identical for any value.
    """
    codes, _ = table.factor(plan.cluster)
    n_clusters = int(codes.max()) + 1
    if n_clusters < 2:
        raise SingleCluster("bootstrap needs at least two clusters")
    if point is None:
        point = estimator(table)
    point = _as_vector(point)

    order = np.argsort(codes, kind="stable")
    sizes = np.bincount(codes, minlength=n_clusters)
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])

    if plan.flavor == "wild":
        if residualize is None:
            raise ValueError("wild bootstrap needs a residualize callback")
        fitted, resid = residualize(table)

    def draw(b: int, attempt: int) -> ObservationTable:
        if plan.flavor == "pairs":
            if sampler is not None:
                picks = np.asarray(sampler(b, attempt, n_clusters), dtype=np.int64)
            else:
                picks = replicate_rng(plan.seed, b, attempt).integers(0, n_clusters, n_clusters)
            lengths = sizes[picks]
            labels = np.repeat(np.arange(len(picks)), lengths)
            offsets = np.arange(lengths.sum()) - np.repeat(np.cumsum(lengths) - lengths, lengths)
            rows = order[starts[picks][labels] + offsets]
            return table.take(rows, cluster=labels.astype(object))
        signs = replicate_rng(plan.seed, b, attempt).integers(0, 2, n_clusters) * 2.0 - 1.0
        return table.with_outcome(fitted + signs[codes] * resid)

    def run(b: int):
        for attempt in range(plan.max_attempts):
            try:
                value = _as_vector(estimator(draw(b, attempt)))
            except EstimationError:
                continue
            if value.shape != point.shape:
                raise ValueError("estimator returned a vector of changing length")
            return value, attempt
        return None, plan.max_attempts

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(run, range(plan.iterations)))
    else:
        outcomes = [run(b) for b in range(plan.iterations)]

    kept = [v for v, _ in outcomes if v is not None]
    discarded = sum(v is None for v, _ in outcomes)
    redraws = sum(a for v, a in outcomes if v is not None)
    if not kept:
        raise AllResamplesDegenerate(
            f"all {plan.iterations} bootstrap iterations were degenerate")
    return summarize_replicates(point, np.vstack(kept), discarded, plan.iterations, redraws,
                                list(names) if names is not None else None)


@dataclass
class ContrastResult:
    diff: float
    se: float
    z: float
    p_value: float
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {"diff": self.diff, "se": self.se, "z": self.z, "p_value": self.p_value,
                "degenerate_se": self.degenerate}


def contrast_test(replicates_a, replicates_b, point_a: float, point_b: float) -> ContrastResult:
    """Two-sided normal test of ``point_a - point_b`` using paired replicates.

    Replicates must come from the same resample stream so that the SE is the
    SD of the per-iteration differences. A zero SE yields ``p = 0`` for a
    nonzero difference (``p = 1`` for a zero one) with ``degenerate`` set;
    differences constant up to rounding count as a zero SE.
    """
    a = np.asarray(replicates_a, dtype=np.float64)
    b = np.asarray(replicates_b, dtype=np.float64)
    if a.shape != b.shape:
        raise UnpairedReplicates(f"replicate counts differ: {a.shape} vs {b.shape}")
    diff = float(point_a - point_b)
    d = a - b
    d = d[np.isfinite(d)]
    se = float(np.std(d, ddof=1)) if d.size >= 2 else 0.0
    # constant differences up to rounding count as a zero SE
    if d.size < 2 or np.ptp(d) <= 1e-12 * max(1.0, float(np.abs(d).max())):
        se = 0.0
    if se == 0.0:
        return ContrastResult(diff, 0.0, float("inf") if diff else 0.0,
                              0.0 if diff else 1.0, degenerate=True)
    z = diff / se
    return ContrastResult(diff, se, z, float(2 * stats.norm.sf(abs(z))))


def export_replicates(result: BootstrapResult, path, names: Sequence[str] | None = None) -> None:
    """Write the replicate matrix as CSV, one row per kept iteration."""
    names = list(names or result.names or [f"stat{j}" for j in range(result.replicates.shape[1])])
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["replicate", *names])
            for i, row in enumerate(result.replicates):
                writer.writerow([i, *(repr(float(v)) for v in row)])
    except OSError as exc:
        raise UnwritablePath(str(exc)) from exc
