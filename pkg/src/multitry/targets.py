"""Target log densities.

All targets expose ``log_density`` (one point) and ``log_density_batch``
(rows of points); off-support points return ``-inf`` rather than raising, so
samplers can treat support violations as zero-probability trials.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, gammaln, logsumexp, xlogy

from .errors import (
    DimensionMismatchError,
    InvalidParameterError,
    NumericalOverflowError,
)
from .mathcore import RngStream, SpdMatrix, mvn_logpdf, mvn_sample

_LOG_2PI = float(np.log(2.0 * np.pi))


class TargetDensity:
    """Base interface: a log density on R^dim (possibly with restricted support)."""

    dim: int

    def log_density(self, x: np.ndarray) -> float:
        raise NotImplementedError

    def log_density_batch(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return np.array([self.log_density(p) for p in points])

    def in_support(self, x: np.ndarray) -> bool:
        return True

    def gradient(self, x: np.ndarray) -> np.ndarray | None:
        """Gradient of the log density, or None when not available analytically."""
        return None


def gradient_fd(target: TargetDensity, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central-difference gradient fallback for targets without an analytic one."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        g[i] = (target.log_density(x + e) - target.log_density(x - e)) / (2.0 * step)
    return g


class GaussianTarget(TargetDensity):
    """A single multivariate normal."""

    def __init__(self, mean, cov):
        self.mean = np.asarray(mean, dtype=float)
        self.cov = cov if isinstance(cov, SpdMatrix) else SpdMatrix(cov)
        if self.mean.shape != (self.cov.dim,):
            raise DimensionMismatchError("mean and covariance dimensions differ")
        self.dim = self.cov.dim

    def log_density(self, x):
        return float(mvn_logpdf(np.asarray(x, dtype=float), self.mean, self.cov))

    def log_density_batch(self, points):
        return np.atleast_1d(mvn_logpdf(np.atleast_2d(points), self.mean, self.cov))

    def gradient(self, x):
        return -self.cov.solve(np.asarray(x, dtype=float) - self.mean)

    def sample(self, rng: RngStream, size=None):
        return mvn_sample(rng, self.mean, self.cov, size=size)


class GaussianMixtureTarget(TargetDensity):
    """Finite mixture of multivariate normals with full covariances."""

    def __init__(self, weights, means, covs):
        w = np.asarray(weights, dtype=float)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise InvalidParameterError("mixture weights must be non-negative and sum to 1")
        self.weights = w
        self.means = [np.asarray(m, dtype=float) for m in means]
        self.covs = [c if isinstance(c, SpdMatrix) else SpdMatrix(c) for c in covs]
        if not (len(self.means) == len(self.covs) == w.size):
            raise DimensionMismatchError("weights, means, covs must have equal length")
        dims = {m.shape[0] for m in self.means} | {c.dim for c in self.covs}
        if len(dims) != 1:
            raise DimensionMismatchError("all components must share one dimension")
        self.dim = dims.pop()
        self._log_w = np.where(w > 0, np.log(np.where(w > 0, w, 1.0)), -np.inf)

    @property
    def n_components(self) -> int:
        return self.weights.size

    def mean(self) -> np.ndarray:
        return sum(w * m for w, m in zip(self.weights, self.means))

    def _component_logpdfs(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.empty((pts.shape[0], self.n_components))
        for k in range(self.n_components):
            out[:, k] = mvn_logpdf(pts, self.means[k], self.covs[k])
        return out

    def log_density(self, x):
        return float(logsumexp(self._component_logpdfs(x)[0] + self._log_w))

    def log_density_batch(self, points):
        return logsumexp(self._component_logpdfs(points) + self._log_w, axis=1)

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        lp = self._component_logpdfs(x)[0] + self._log_w
        resp = np.exp(lp - logsumexp(lp))
        g = np.zeros(self.dim)
        for k in range(self.n_components):
            g -= resp[k] * self.covs[k].solve(x - self.means[k])
        return g

    def sample(self, rng: RngStream, size: int) -> np.ndarray:
        """Exact draws (component indicator, then the component normal)."""
        comps = rng.choice(self.n_components, size=size, p=self.weights)
        z = rng.standard_normal((size, self.dim))
        out = np.empty((size, self.dim))
        for k in range(self.n_components):
            mask = comps == k
            out[mask] = self.means[k] + z[mask] @ self.covs[k].chol.T
        return out


class TemperedTarget(TargetDensity):
    """The base density raised to a power: log density scaled by the exponent."""

    def __init__(self, base: TargetDensity, exponent: float):
        if not (0.0 < exponent <= 1.0):
            raise InvalidParameterError(f"tempering exponent must be in (0, 1], got {exponent}")
        self.base = base
        self.exponent = float(exponent)
        self.dim = base.dim

    def log_density(self, x):
        return self.exponent * self.base.log_density(x)

    def log_density_batch(self, points):
        return self.exponent * self.base.log_density_batch(points)

    def in_support(self, x):
        return self.base.in_support(x)

    def gradient(self, x):
        g = self.base.gradient(x)
        return None if g is None else self.exponent * g


def grid_normalize(masses) -> np.ndarray:
    """Normalize positive masses into probabilities."""
    m = np.asarray(masses, dtype=float)
    if m.ndim != 1 or m.size == 0:
        raise DimensionMismatchError("masses must be a non-empty vector")
    if np.any(~np.isfinite(m)) or np.any(m <= 0):
        raise InvalidParameterError("masses must be finite and strictly positive")
    return m / m.sum()


class GridTarget(TargetDensity):
    """A finite-state target embedded on the real line (unit spacing by default).

    Points count as on-support only when they coincide with a state position
    to within 1e-9; everything else has zero density.
    """

    dim = 1

    def __init__(self, masses, positions=None):
        self.probs = grid_normalize(masses)
        self.n_states = self.probs.size
        if positions is None:
            positions = np.arange(self.n_states, dtype=float)
        self.positions = np.asarray(positions, dtype=float)
        if self.positions.shape != (self.n_states,):
            raise DimensionMismatchError("positions must match the number of states")
        if np.any(np.diff(self.positions) <= 0):
            raise InvalidParameterError("positions must be strictly increasing")
        self.log_probs = np.log(self.probs)

    def probabilities(self) -> np.ndarray:
        return self.probs.copy()

    def state_index(self, x) -> int:
        pos = float(np.asarray(x, dtype=float).ravel()[0])
        hits = np.nonzero(np.abs(self.positions - pos) <= 1e-9)[0]
        return int(hits[0]) if hits.size else -1

    def log_density(self, x):
        i = self.state_index(x)
        return float(self.log_probs[i]) if i >= 0 else -np.inf

    def in_support(self, x):
        return self.state_index(x) >= 0

    def sample_index(self, rng: RngStream, size=None):
        return rng.choice(self.n_states, size=size, p=self.probs)


class BetaBinomialPosterior(TargetDensity):
    """Posterior over (eta, p1, p2, gamma) for counts modeled as a two-part
    mixture: a binomial(p1) component with weight eta and an overdispersed
    (beta-binomial) component with weight 1-eta whose dispersion is
    0.5*sigmoid(gamma). Priors are uniform over the box
    [0,1]^3 x [-gamma_bound, gamma_bound].

    The beta-binomial log pmf is computed with rising-factorial sums rather
    than gammaln differences: exact at p2 in {0,1} and immune to cancellation
    when the dispersion is tiny (huge pseudo-counts).
    """

    dim = 4

    def __init__(self, x, n, gamma_bound: float = 30.0):
        x = np.asarray(x, dtype=int)
        n = np.asarray(n, dtype=int)
        if x.shape != n.shape or x.ndim != 1 or x.size == 0:
            raise DimensionMismatchError("x and n must be equal-length non-empty vectors")
        if np.any(x < 0) or np.any(n < 1) or np.any(x > n):
            raise InvalidParameterError("need 0 <= x <= n and n >= 1 for every observation")
        self.x = x
        self.n = n
        self.n_obs = x.size
        self.gamma_bound = float(gamma_bound)
        self._log_choose = gammaln(n + 1) - gammaln(x + 1) - gammaln(n - x + 1)
        # flattened index ladders for the rising-factorial sums
        self._seg_x, self._idx_x = self._segments(x)
        self._seg_nx, self._idx_nx = self._segments(n - x)
        self._seg_n, self._idx_n = self._segments(n)

    @staticmethod
    def _segments(counts):
        seg = np.repeat(np.arange(counts.size), counts)
        idx = np.concatenate([np.arange(c, dtype=float) for c in counts]) if counts.sum() else np.empty(0)
        return seg, idx

    def _rising_sum(self, base: float, seg, idx) -> np.ndarray:
        """Per-observation sums of log(base + i) over each index ladder."""
        if idx.size == 0:
            return np.zeros(self.n_obs)
        with np.errstate(divide="ignore"):
            terms = np.log(base + idx)
        return np.bincount(seg, weights=terms, minlength=self.n_obs)

    def in_support(self, theta) -> bool:
        t = np.asarray(theta, dtype=float)
        if t.shape != (4,):
            return False
        eta, p1, p2, gam = t
        return bool(
            0.0 <= eta <= 1.0
            and 0.0 <= p1 <= 1.0
            and 0.0 <= p2 <= 1.0
            and -self.gamma_bound <= gam <= self.gamma_bound
        )

    def support_box(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([0.0, 0.0, 0.0, -self.gamma_bound])
        hi = np.array([1.0, 1.0, 1.0, self.gamma_bound])
        return lo, hi

    def log_density(self, theta) -> float:
        t = np.asarray(theta, dtype=float)
        if t.shape != (4,):
            raise DimensionMismatchError(f"expected a 4-vector, got shape {t.shape}")
        if not np.all(np.isfinite(t)):
            raise InvalidParameterError("non-finite parameter value")
        if not self.in_support(t):
            return -np.inf
        eta, p1, p2, gam = (float(v) for v in t)
        with np.errstate(divide="ignore"):
            log_binom = self._log_choose + xlogy(self.x, p1) + xlogy(self.n - self.x, 1.0 - p1)
            omega = 0.5 * expit(gam)
            a = p2 / omega
            b = (1.0 - p2) / omega
            log_bb = (
                self._log_choose
                + self._rising_sum(a, self._seg_x, self._idx_x)
                + self._rising_sum(b, self._seg_nx, self._idx_nx)
                - self._rising_sum(a + b, self._seg_n, self._idx_n)
            )
            first = (np.log(eta) if eta > 0 else -np.inf) + log_binom
            second = (np.log1p(-eta) if eta < 1 else -np.inf) + log_bb
            per_obs = np.logaddexp(first, second)
        if np.any(np.isnan(per_obs)):
            raise InvalidParameterError("density evaluation produced NaN")
        return float(per_obs.sum())


def inverse_gamma_sample(rng: RngStream, shape: float, scale: float) -> float:
    """One draw from InverseGamma(shape, scale), density ~ x^(-shape-1) e^(-scale/x)."""
    if not np.isfinite(scale):
        raise NumericalOverflowError(f"inverse-gamma scale is not finite: {scale}")
    if shape <= 0 or scale <= 0:
        raise InvalidParameterError("inverse-gamma shape and scale must be positive")
    return float(scale / rng.gamma(shape, 1.0))


@dataclass
class SVModel:
    """State of the latent log-variance model.

    Observations y_t have variance beta2 * exp(h_t); the latent path follows a
    stationary AR(1): h_1 ~ N(0, sigma2/(1-phi^2)), h_t | h_{t-1} ~
    N(phi*h_{t-1}, sigma2). The level parameter alpha = log(beta2).
    """

    y: np.ndarray
    beta2: float
    phi: float
    sigma2: float
    h: np.ndarray

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.h = np.asarray(self.h, dtype=float)
        if self.y.shape != self.h.shape or self.y.ndim != 1 or self.y.size < 3:
            raise DimensionMismatchError("y and h must be equal-length vectors (length >= 3)")
        if not (-1.0 < self.phi < 1.0):
            raise InvalidParameterError(f"phi must lie in (-1, 1), got {self.phi}")
        if self.beta2 <= 0 or self.sigma2 <= 0:
            raise InvalidParameterError("beta2 and sigma2 must be positive")

    @property
    def size(self) -> int:
        return self.y.size

    @property
    def alpha(self) -> float:
        return float(np.log(self.beta2))


def sv_simulate(rng: RngStream, alpha: float, phi: float, sigma2: float, size: int):
    """Generate (y, h) from the model; alpha enters as the observation level
    log(beta2) while the latent AR(1) stays centered."""
    if not (-1.0 < phi < 1.0):
        raise InvalidParameterError("phi must lie in (-1, 1)")
    if sigma2 <= 0:
        raise InvalidParameterError("sigma2 must be positive")
    sd = np.sqrt(sigma2)
    h = np.empty(size)
    h[0] = rng.normal(0.0, sd / np.sqrt(1.0 - phi * phi))
    for t in range(1, size):
        h[t] = phi * h[t - 1] + sd * rng.standard_normal()
    beta = np.exp(alpha / 2.0)
    y = beta * np.exp(h / 2.0) * rng.standard_normal(size)
    return y, h


def sv_beta2_params(model: SVModel) -> tuple[float, float]:
    """Inverse-gamma (shape, scale) of the observation-variance conditional."""
    scale = float(np.sum(model.y**2 * np.exp(-model.h))) / 2.0
    if not np.isfinite(scale):
        raise NumericalOverflowError("beta2 conditional scale overflowed")
    return (model.size - 1) / 2.0, scale


def sv_sigma2_params(model: SVModel) -> tuple[float, float]:
    """Inverse-gamma (shape, scale) of the innovation-variance conditional."""
    h = model.h
    resid = h[1:] - model.phi * h[:-1]
    scale = float(np.dot(resid, resid)) / 2.0 + float(h[0] ** 2) * (1.0 - model.phi**2)
    if not np.isfinite(scale):
        raise NumericalOverflowError("sigma2 conditional scale overflowed")
    return (model.size - 1) / 2.0, scale


def sv_draw_beta2(model: SVModel, rng: RngStream) -> float:
    """Observation-variance draw given the latent path."""
    shape, scale = sv_beta2_params(model)
    return inverse_gamma_sample(rng, shape, scale)


def sv_draw_sigma2(model: SVModel, rng: RngStream) -> float:
    """Innovation-variance draw given the latent path and phi."""
    shape, scale = sv_sigma2_params(model)
    return inverse_gamma_sample(rng, shape, scale)


def sv_phi_log_density(phi, h: np.ndarray, sigma2: float):
    """Unnormalized log conditional of the persistence parameter given the
    path; vectorized over phi. Zero outside (-1, 1)."""
    phi = np.asarray(phi, dtype=float)
    mid_sq = float(np.dot(h[1:-1], h[1:-1]))
    cross = float(np.dot(h[1:], h[:-1]))
    with np.errstate(divide="ignore", invalid="ignore"):
        inside = np.abs(phi) < 1.0
        val = np.where(
            inside,
            0.5 * np.log1p(-np.square(np.clip(phi, -1.0, 1.0)))
            - np.square(phi) * mid_sq / (2.0 * sigma2)
            + phi * cross / sigma2,
            -np.inf,
        )
    return val if val.ndim else float(val)


def sv_h_site_log_density(
    value,
    *,
    y_t: float,
    sigma2: float,
    beta2: float,
    phi: float,
    h_prev: float | None,
    h_next: float | None,
    drift: float = 0.0,
):
    """Unnormalized log conditional of one latent site; vectorized over `value`.

    ``h_prev is None`` marks the first site (stationary AR(1) prior instead of
    a transition from the left); ``h_next is None`` marks the last site. The
    optional drift shifts the transition means (the level-absorbed form; with
    drift the likelihood term reads y^2 e^{-h}/2 without the beta2 divisor).
    """
    v = np.asarray(value, dtype=float)
    two_s2 = 2.0 * sigma2
    if h_prev is None:
        mean0 = drift / (1.0 - phi) if drift else 0.0
        out = -np.square(v - mean0) * (1.0 - phi * phi) / two_s2
    else:
        out = -np.square(v - drift - phi * h_prev) / two_s2
    if h_next is not None:
        out = out - np.square(h_next - drift - phi * v) / two_s2
    like_scale = 1.0 if drift else beta2
    out = out - v / 2.0 - (y_t * y_t / like_scale) * np.exp(-v) / 2.0
    return out if out.ndim else float(out)


@dataclass
class SVConditionals:
    """One systematic scan's worth of conditional pieces: fresh variance draws
    plus log-density callables for phi and each latent site (bound to the new
    variances)."""

    beta2: float
    sigma2: float
    phi_log_density: object
    h_log_density: object


def sv_full_conditionals(model: SVModel, rng: RngStream) -> SVConditionals:
    """Draw beta2 and sigma2, then return slice callables for phi and the
    latent sites conditioned on those fresh draws."""
    beta2 = sv_draw_beta2(model, rng)
    sigma2 = sv_draw_sigma2(SVModel(model.y, beta2, model.phi, model.sigma2, model.h), rng)
    h = model.h.copy()
    y = model.y
    T = model.size

    def phi_slice(phi):
        return sv_phi_log_density(phi, h, sigma2)

    def h_slice(t, value):
        if not 1 <= t <= T:
            raise InvalidParameterError(f"site index must be in 1..{T}, got {t}")
        i = t - 1
        return sv_h_site_log_density(
            value,
            y_t=float(y[i]),
            sigma2=sigma2,
            beta2=beta2,
            phi=model.phi,
            h_prev=None if i == 0 else float(h[i - 1]),
            h_next=None if i == T - 1 else float(h[i + 1]),
        )

    return SVConditionals(beta2=beta2, sigma2=sigma2, phi_log_density=phi_slice, h_log_density=h_slice)


def load_count_pairs_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a two-column CSV with header ``x,n`` of per-region counts."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header] != ["x", "n"]:
            raise InvalidParameterError(f"{path}: expected header 'x,n', got {header}")
        xs, ns = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                x, n = int(row[0]), int(row[1])
            except (ValueError, IndexError):
                raise InvalidParameterError(f"{path}: malformed row {lineno}: {row}") from None
            if not 0 <= x <= n:
                raise InvalidParameterError(f"{path}: row {lineno} violates 0 <= x <= n")
            xs.append(x)
            ns.append(n)
    if not xs:
        raise InvalidParameterError(f"{path}: no data rows")
    return np.array(xs), np.array(ns)


def load_series_csv(path) -> np.ndarray:
    """Read a two-column CSV with header ``t,y``; rows are sorted by t."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header] != ["t", "y"]:
            raise InvalidParameterError(f"{path}: expected header 't,y', got {header}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append((int(row[0]), float(row[1])))
            except (ValueError, IndexError):
                raise InvalidParameterError(f"{path}: malformed row {lineno}: {row}") from None
    if not rows:
        raise InvalidParameterError(f"{path}: no data rows")
    rows.sort(key=lambda r: r[0])
    return np.array([v for _, v in rows])
