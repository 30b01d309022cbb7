"""Trace post-processing: empirical detailed-balance testing on grid chains,
autocorrelation summaries, mode occupancy, error tables, and HPD intervals.

Everything here is read-only over sampler output and deterministic given the
inputs, so reports can be regenerated from persisted traces at any time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import (
    DimensionMismatchError,
    InvalidParameterError,
    OverlappingModesError,
)
from .mathcore import _as_spd, acf, iact


@dataclass
class FlowEstimate:
    """Empirical one-step flow F(x, y) between grid states.

    ``flow[x, y]`` estimates the stationary probability of observing the
    transition x -> y; entries sum to one over all pairs.  ``std_errors``
    carries the binomial Monte Carlo error of each entry.
    """

    flow: np.ndarray
    std_errors: np.ndarray
    n_transitions: int

    def asymmetry_sigmas(self) -> np.ndarray:
        """|F(x,y) - F(y,x)| in units of its Monte Carlo standard error."""
        diff = np.abs(self.flow - self.flow.T)
        se = np.sqrt(self.std_errors**2 + self.std_errors.T**2)
        out = np.zeros_like(diff)
        mask = se > 0.0
        out[mask] = diff[mask] / se[mask]
        out[~mask & (diff > 0.0)] = np.inf
        return out


@dataclass
class DetailedBalanceResult:
    flow: FlowEstimate
    status: str  # "pass" | "fail" | "inconclusive"
    max_sigma: float
    worst_pair: tuple[int, int]

    @property
    def passed(self) -> bool:
        return self.status == "pass"


_DB_CHUNK = 500_000


def detailed_balance_test(engine, grid, rng, transitions, sigma_threshold=3.0):
    """Estimate the stationary transition flow of a grid stepping engine and
    test its symmetry.

    Each of the ``transitions`` replicas starts at an exact stationary draw
    and advances one step, so the tallied (from, to) pairs are i.i.d. samples
    of the flow F(x, y) = pi(x) * A(x, y).  A reversible chain has symmetric
    flow; the verdict fails when any state pair differs by more than
    ``sigma_threshold`` combined standard errors.  When even the smallest
    positive flow is resolved worse than 10% the verdict is "inconclusive"
    rather than a coin flip.
    """
    n_states = grid.n_states
    if n_states > 10:
        raise InvalidParameterError(
            f"flow test enumerates state pairs and needs <= 10 states, got {n_states}"
        )
    if transitions < 1:
        raise InvalidParameterError("need at least one transition")
    pi = np.exp(grid.log_probs - grid.log_probs.max())
    pi /= pi.sum()

    counts = np.zeros(n_states * n_states, dtype=np.int64)
    done = 0
    while done < transitions:
        block = min(_DB_CHUNK, transitions - done)
        states = rng.choice(n_states, size=block, p=pi)
        stepped = engine.step(rng, states)[0]
        counts += np.bincount(states * n_states + stepped, minlength=n_states * n_states)
        done += block

    flow = counts.reshape(n_states, n_states) / float(transitions)
    se = np.sqrt(flow * (1.0 - flow) / float(transitions))
    estimate = FlowEstimate(flow=flow, std_errors=se, n_transitions=int(transitions))

    sigmas = estimate.asymmetry_sigmas()
    upper = np.triu_indices(n_states, k=1)
    if sigmas[upper].size == 0:
        return DetailedBalanceResult(estimate, "pass", 0.0, (0, 0))
    k = int(np.argmax(sigmas[upper]))
    worst = (int(upper[0][k]), int(upper[1][k]))
    max_sigma = float(sigmas[upper][k])

    positive = flow[(flow > 0.0) & (se > 0.0)]
    if positive.size:
        f_min = positive.min()
        if np.sqrt(f_min * (1.0 - f_min) / transitions) >= 0.1 * f_min:
            return DetailedBalanceResult(estimate, "inconclusive", max_sigma, worst)

    status = "pass" if max_sigma <= sigma_threshold else "fail"
    return DetailedBalanceResult(estimate, status, max_sigma, worst)


@dataclass
class ModeOccupancy:
    fractions: np.ndarray  # one entry per mode
    remainder: float
    counts: np.ndarray
    n_samples: int


def mode_occupancy(positions, centers, covariances, radius):
    """Fraction of pooled samples inside a Mahalanobis ball of ``radius``
    around each mode center; points in no ball land in the remainder.

    The mode balls must be separated: for every pair the centers must sit at
    least ``2 * radius`` apart in both modes' metrics, otherwise membership
    would be ambiguous and the configuration is rejected.
    """
    if radius <= 0.0:
        raise InvalidParameterError("radius must be positive")
    pts = np.asarray(positions, dtype=float)
    if pts.size == 0:
        raise InvalidParameterError("no samples to classify")
    dim = pts.shape[-1]
    pts = pts.reshape(-1, dim)

    mus = [np.asarray(c, dtype=float) for c in centers]
    spds = [_as_spd(c) for c in covariances]
    if len(mus) != len(spds):
        raise DimensionMismatchError(
            f"{len(mus)} centers but {len(spds)} covariances"
        )
    for mu, spd in zip(mus, spds):
        if mu.shape != (dim,) or spd.dim != dim:
            raise DimensionMismatchError("mode centers and covariances must match sample dim")

    def mahal(spd, dev):
        z = solve_triangular(spd.chol, dev.T, lower=True)
        return np.sqrt(np.sum(z * z, axis=0))

    n_modes = len(mus)
    for i in range(n_modes):
        for j in range(i + 1, n_modes):
            gap = mus[j] - mus[i]
            d_ij = float(mahal(spds[i], gap[None, :])[0])
            d_ji = float(mahal(spds[j], -gap[None, :])[0])
            if min(d_ij, d_ji) < 2.0 * radius:
                raise OverlappingModesError(
                    f"modes {i} and {j} are closer than 2*radius in their own metrics"
                )

    dists = np.stack([mahal(spd, pts - mu) for mu, spd in zip(mus, spds)])
    inside = dists <= radius
    nearest = np.argmin(dists, axis=0)
    label = np.where(inside[nearest, np.arange(pts.shape[0])], nearest, n_modes)
    counts = np.bincount(label, minlength=n_modes + 1)
    total = pts.shape[0]
    return ModeOccupancy(
        fractions=counts[:n_modes] / total,
        remainder=counts[n_modes] / total,
        counts=counts[:n_modes],
        n_samples=total,
    )


@dataclass
class MseReport:
    """Mean squared error across replicates and its spread, per parameter."""

    mse: np.ndarray
    sd: np.ndarray
    n_replicates: int


def mse_report(estimates, truth):
    est = np.asarray(estimates, dtype=float)
    if est.ndim == 1:
        est = est[:, None]
    if est.ndim != 2:
        raise DimensionMismatchError(f"estimates must be (replicates,) or (replicates, params), got {est.shape}")
    if est.shape[0] < 2:
        raise InvalidParameterError("need at least 2 replicates for a spread")
    truth_arr = np.broadcast_to(np.asarray(truth, dtype=float), (est.shape[1],))
    sq = (est - truth_arr) ** 2
    return MseReport(mse=sq.mean(axis=0), sd=sq.std(axis=0, ddof=1), n_replicates=est.shape[0])


def cumulative_rmse(estimates, truth):
    """sqrt of the running mean of squared errors: curve value at t averages
    the first t squared deviations."""
    est = np.asarray(estimates, dtype=float).ravel()
    tru = np.asarray(truth, dtype=float).ravel()
    if est.shape != tru.shape:
        raise DimensionMismatchError(f"length mismatch: {est.shape} vs {tru.shape}")
    if est.size == 0:
        raise InvalidParameterError("empty series")
    sq = (est - tru) ** 2
    t = np.arange(1, est.size + 1, dtype=float)
    return np.sqrt(np.cumsum(sq) / t)


def hpd_interval(samples, level):
    """Shortest interval covering ceil(level * n) order statistics."""
    if not 0.0 < level < 1.0:
        raise InvalidParameterError(f"level must lie in (0, 1), got {level}")
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n < 100:
        raise InvalidParameterError(f"need at least 100 samples for an HPD interval, got {n}")
    k = int(np.ceil(level * n))
    widths = x[k - 1:] - x[: n - k + 1]
    i = int(np.argmin(widths))
    return float(x[i]), float(x[i + k - 1])


@dataclass
class AcfReport:
    """Per-coordinate autocorrelations at lags 0..max_lag plus the integrated
    autocorrelation time; the scalar verdict statistic is the median IACT."""

    acf: np.ndarray  # (max_lag + 1, dim)
    iact: np.ndarray  # (dim,)
    median_iact: float
    n_samples: int

    @property
    def max_lag(self) -> int:
        return self.acf.shape[0] - 1

    def rows(self):
        """(coordinate, lag, autocorrelation) triples, coordinate-major."""
        out = []
        for d in range(self.acf.shape[1]):
            for lag in range(self.acf.shape[0]):
                out.append((d, lag, float(self.acf[lag, d])))
        return out


def acf_report(positions, max_lag=30):
    pts = np.asarray(positions, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2:
        raise DimensionMismatchError(f"expected (iters, dim) positions, got shape {pts.shape}")
    n, dim = pts.shape
    rho = np.empty((max_lag + 1, dim))
    times = np.empty(dim)
    for d in range(dim):
        rho[:, d] = acf(pts[:, d], max_lag)
        times[d] = iact(pts[:, d])
    return AcfReport(acf=rho, iact=times, median_iact=float(np.median(times)), n_samples=n)


def separated_clusters(points, min_separation, min_size=1):
    """Number of single-linkage clusters whose pairwise link distance is
    below ``min_separation``, counting only clusters with ``min_size``
    members.  Small inputs only: the scan is quadratic."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    n = pts.shape[0]
    if n == 0:
        raise InvalidParameterError("no points to cluster")
    if min_separation <= 0.0:
        raise InvalidParameterError("min_separation must be positive")

    parent = np.arange(n)

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    d2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=-1)
    close = d2 < min_separation**2
    for i in range(n):
        for j in range(i + 1, n):
            if close[i, j]:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[rj] = ri
    roots = np.array([find(i) for i in range(n)])
    _, sizes = np.unique(roots, return_counts=True)
    return int(np.sum(sizes >= min_size))


@dataclass
class ComparisonReport:
    """Rows of (method, statistic, value) with replicate counts, plus run
    metadata, rendered to CSV one row per statistic."""

    seeds: tuple = ()
    runtime_seconds: float = 0.0
    rows: list = field(default_factory=list)

    def add(self, method, statistic, value, replicates):
        self.rows.append((str(method), str(statistic), float(value), int(replicates)))

    def value(self, method, statistic):
        for m, s, v, _ in self.rows:
            if m == method and s == statistic:
                return v
        raise KeyError(f"no row for {method}.{statistic}")

    def csv_lines(self):
        out = ["method,statistic,value,replicates"]
        for method, stat, value, reps in self.rows:
            out.append(f"{method},{stat},{'%.17g' % value},{reps}")
        return out

    def summary_text(self):
        width = max((len(f"{m}.{s}") for m, s, _, _ in self.rows), default=0)
        lines = [f"seeds: {','.join(str(s) for s in self.seeds)}",
                 f"runtime_seconds: {self.runtime_seconds:.1f}"]
        for method, stat, value, reps in self.rows:
            lines.append(f"{(method + '.' + stat).ljust(width)}  {value:.6g}  (n={reps})")
        return "\n".join(lines) + "\n"
