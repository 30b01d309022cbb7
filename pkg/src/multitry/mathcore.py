"""Deterministic numerical primitives: RNG streams, SPD matrices, Gaussian
and Wishart sampling, autocorrelation and integrated autocorrelation time.

Everything here is pure given an explicit `RngStream`, which is what makes
whole runs replayable bit for bit.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

from .errors import ConstantSeriesError, DecompositionError, DimensionMismatchError, InvalidParameterError

_LOG_2PI = float(np.log(2.0 * np.pi))


class RngStream:
    """A named, independently seeded random stream.

    Streams with the same ``(seed, stream_id)`` produce identical draw
    sequences; distinct ``stream_id`` values give statistically independent
    streams for the same seed, so each chain in a population can own one and
    the update order of the population stops mattering.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        if seed < 0 or stream_id < 0:
            raise InvalidParameterError("seed and stream_id must be non-negative")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        self.generator = np.random.Generator(np.random.PCG64(seq))

    # Thin passthroughs for the handful of primitives the samplers use.
    def standard_normal(self, size=None):
        return self.generator.standard_normal(size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def random(self, size=None):
        return self.generator.random(size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size=size)

    def gamma(self, shape, scale=1.0, size=None):
        return self.generator.gamma(shape, scale, size)

    def chisquare(self, df, size=None):
        return self.generator.chisquare(df, size)

    def choice(self, a, size=None, p=None, replace=True):
        return self.generator.choice(a, size=size, p=p, replace=replace)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


def streams(seed: int, count: int, base: int = 0) -> list[RngStream]:
    """One independent stream per chain: ids ``base .. base+count-1``."""
    return [RngStream(seed, base + i) for i in range(count)]


def cholesky(matrix: np.ndarray) -> np.ndarray:
    """Lower-triangular Cholesky factor of a symmetric positive definite matrix.

    Raises DecompositionError naming the first non-positive leading minor when
    the factorization cannot proceed.
    """
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatchError(f"expected a square matrix, got shape {m.shape}")
    if not np.allclose(m, m.T, rtol=1e-12, atol=1e-12):
        raise DecompositionError("matrix is not symmetric")
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        for k in range(1, m.shape[0] + 1):
            sign, _ = np.linalg.slogdet(m[:k, :k])
            if sign <= 0:
                raise DecompositionError(
                    f"matrix is not positive definite: leading minor of order {k} is not positive"
                ) from None
        raise DecompositionError("matrix is not positive definite") from None


class SpdMatrix:
    """A symmetric positive definite matrix with its Cholesky factor cached.

    The factorization happens once at construction; samplers and densities
    reuse it for every draw and evaluation.
    """

    __slots__ = ("matrix", "chol", "_log_det")

    def __init__(self, matrix):
        m = np.array(matrix, dtype=float)
        self.chol = cholesky(m)  # validates symmetry + positive definiteness
        self.matrix = m
        self._log_det = 2.0 * float(np.sum(np.log(np.diag(self.chol))))

    @classmethod
    def identity(cls, dim: int) -> "SpdMatrix":
        return cls(np.eye(dim))

    @classmethod
    def diagonal(cls, values) -> "SpdMatrix":
        v = np.asarray(values, dtype=float)
        if np.any(v <= 0):
            raise DecompositionError("diagonal entries must be positive")
        return cls(np.diag(v))

    @classmethod
    def scaled_identity(cls, dim: int, scale: float) -> "SpdMatrix":
        if scale <= 0:
            raise DecompositionError("scale must be positive")
        return cls(scale * np.eye(dim))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def log_det(self) -> float:
        return self._log_det

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve ``matrix @ x = rhs`` via the cached factor."""
        y = solve_triangular(self.chol, rhs, lower=True)
        return solve_triangular(self.chol.T, y, lower=False)

    def __repr__(self):
        return f"SpdMatrix(dim={self.dim})"


def _as_spd(cov) -> SpdMatrix:
    return cov if isinstance(cov, SpdMatrix) else SpdMatrix(cov)


def mvn_sample(rng: RngStream, mean: np.ndarray, cov, size: int | None = None) -> np.ndarray:
    """Draw from N(mean, cov) using the cached Cholesky factor.

    Returns shape (d,) when ``size`` is None, else (size, d).
    """
    spd = _as_spd(cov)
    mean = np.asarray(mean, dtype=float)
    if mean.shape != (spd.dim,):
        raise DimensionMismatchError(f"mean shape {mean.shape} does not match cov dim {spd.dim}")
    if size is None:
        z = rng.standard_normal(spd.dim)
        return mean + spd.chol @ z
    z = rng.standard_normal((size, spd.dim))
    return mean + z @ spd.chol.T


def mvn_logpdf(x: np.ndarray, mean: np.ndarray, cov) -> np.ndarray | float:
    """Log density of N(mean, cov) at ``x`` (a point or a batch of rows)."""
    spd = _as_spd(cov)
    mean = np.asarray(mean, dtype=float)
    x = np.asarray(x, dtype=float)
    if mean.shape != (spd.dim,):
        raise DimensionMismatchError(f"mean shape {mean.shape} does not match cov dim {spd.dim}")
    if x.shape[-1] != spd.dim:
        raise DimensionMismatchError(f"point dim {x.shape[-1]} does not match cov dim {spd.dim}")
    dev = np.atleast_2d(x) - mean
    z = solve_triangular(spd.chol, dev.T, lower=True)
    quad = np.sum(z * z, axis=0)
    out = -0.5 * (spd.dim * _LOG_2PI + spd.log_det + quad)
    return float(out[0]) if x.ndim == 1 else out


def wishart_sample(rng: RngStream, dof: float, scale) -> SpdMatrix:
    """Draw a Wishart(dof, scale) matrix via the Bartlett decomposition.

    Requires dof > dim - 1 so the draw is almost surely positive definite.
    """
    spd = _as_spd(scale)
    d = spd.dim
    if dof <= d - 1:
        raise InvalidParameterError(f"wishart dof must exceed dim - 1 = {d - 1}, got {dof}")
    a = np.zeros((d, d))
    for i in range(d):
        a[i, i] = np.sqrt(rng.chisquare(dof - i))
    if d > 1:
        idx = np.tril_indices(d, k=-1)
        a[idx] = rng.standard_normal(len(idx[0]))
    f = spd.chol @ a
    w = f @ f.T
    return SpdMatrix((w + w.T) / 2.0)


def acf(series: np.ndarray, max_lag: int) -> np.ndarray:
    """Biased-normalization autocorrelation at lags 0..max_lag (acf[0] == 1)."""
    x = np.asarray(series, dtype=float).ravel()
    n = x.size
    if max_lag < 0:
        raise InvalidParameterError("max_lag must be non-negative")
    if n <= max_lag:
        raise DimensionMismatchError(f"series length {n} must exceed max_lag {max_lag}")
    xd = x - x.mean()
    s0 = float(np.dot(xd, xd))
    if s0 == 0.0:
        raise ConstantSeriesError("series is constant; autocorrelation is undefined")
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(xd, nfft)
    corr = np.fft.irfft(f * np.conj(f), nfft)[: max_lag + 1]
    return corr / s0


def iact(series: np.ndarray) -> float:
    """Integrated autocorrelation time: 1 + 2*sum of the autocorrelations,
    truncated where the sums of successive lag pairs first turn non-positive.
    """
    x = np.asarray(series, dtype=float).ravel()
    n = x.size
    if n < 4:
        raise DimensionMismatchError("series too short for an autocorrelation time")
    rho = acf(x, min(n - 1, 2000))
    total = 0.0
    k = 1
    while k + 1 < rho.size:
        pair = rho[k] + rho[k + 1]
        if pair <= 0.0:
            break
        total += pair
        k += 2
    return 1.0 + 2.0 * total
