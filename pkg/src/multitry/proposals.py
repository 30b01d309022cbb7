"""Proposal kernels and the conditioning context they are evaluated in.

Every kernel can both draw (``sample``) and evaluate (``log_density``) given a
``ConditioningContext``; the multiple-try machinery evaluates each kernel in
both sweep directions by swapping which point occupies the context's current
slot, so densities must be honest functions of (point, context).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import logsumexp

from .errors import (
    DecompositionError,
    DegenerateDensityError,
    DegenerateDirectionError,
    DimensionMismatchError,
    InvalidParameterError,
)
from .mathcore import RngStream, SpdMatrix, cholesky, mvn_logpdf
from .targets import GridTarget, TargetDensity, gradient_fd

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class ConditioningContext:
    """Everything a kernel may condition on when proposing from one chain.

    ``current`` is the point occupying the chain's slot for this evaluation
    (the chain's state in the forward sweep, the selected candidate in the
    reference sweep). ``snapshot`` is the frozen population, ``anchor_index``
    selects a snapshot row for anchored kernels, ``previous`` is the chain's
    state one iteration ago (ray directions use it).
    """

    current: np.ndarray
    snapshot: np.ndarray | None = None
    anchor_index: int | None = None
    previous: np.ndarray | None = None

    def with_current(self, point: np.ndarray) -> "ConditioningContext":
        return replace(self, current=np.asarray(point, dtype=float))

    @property
    def anchor_point(self) -> np.ndarray:
        if self.snapshot is None or self.anchor_index is None:
            raise InvalidParameterError("context has no anchor (snapshot or anchor_index missing)")
        return self.snapshot[self.anchor_index]


def context_at(point, snapshot=None, anchor_index=None, previous=None) -> ConditioningContext:
    return ConditioningContext(
        current=np.asarray(point, dtype=float),
        snapshot=None if snapshot is None else np.asarray(snapshot, dtype=float),
        anchor_index=anchor_index,
        previous=None if previous is None else np.asarray(previous, dtype=float),
    )


class ProposalKernel:
    """Base interface for proposal kernels."""

    dim: int

    def sample(self, rng: RngStream, ctx: ConditioningContext) -> np.ndarray:
        raise NotImplementedError

    def log_density(self, point: np.ndarray, ctx: ConditioningContext) -> float:
        raise NotImplementedError

    def descriptor(self) -> dict:
        raise NotImplementedError


class GaussianRWProposal(ProposalKernel):
    """Random walk: N(current, cov)."""

    def __init__(self, cov):
        self.cov = cov if isinstance(cov, SpdMatrix) else SpdMatrix(cov)
        self.dim = self.cov.dim

    def sample(self, rng, ctx):
        z = rng.standard_normal(self.dim)
        return ctx.current + self.cov.chol @ z

    def log_density(self, point, ctx):
        return float(mvn_logpdf(np.asarray(point, dtype=float) - ctx.current, np.zeros(self.dim), self.cov))

    def descriptor(self):
        return {"kind": "gaussian_rw", "cov": self.cov.matrix.tolist()}


class MixtureRWProposal(ProposalKernel):
    """Random walk whose increment is a finite Gaussian mixture."""

    def __init__(self, weights, covs):
        w = np.asarray(weights, dtype=float)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise InvalidParameterError("mixture weights must be non-negative and sum to 1")
        self.weights = w
        self.covs = [c if isinstance(c, SpdMatrix) else SpdMatrix(c) for c in covs]
        if len(self.covs) != w.size:
            raise DimensionMismatchError("weights and covs must have equal length")
        dims = {c.dim for c in self.covs}
        if len(dims) != 1:
            raise DimensionMismatchError("all components must share one dimension")
        self.dim = dims.pop()
        self._log_w = np.log(w)

    def sample(self, rng, ctx):
        k = int(rng.choice(self.weights.size, p=self.weights))
        z = rng.standard_normal(self.dim)
        return ctx.current + self.covs[k].chol @ z

    def log_density(self, point, ctx):
        dev = np.asarray(point, dtype=float) - ctx.current
        parts = [self._log_w[k] + mvn_logpdf(dev, np.zeros(self.dim), self.covs[k]) for k in range(self.weights.size)]
        return float(logsumexp(parts))

    def descriptor(self):
        return {
            "kind": "mixture_rw",
            "weights": self.weights.tolist(),
            "covs": [c.matrix.tolist() for c in self.covs],
        }


class AnchoredRWProposal(ProposalKernel):
    """Gaussian centered on another chain's frozen position, not on the
    proposing chain: N(snapshot[anchor_index], cov). Forward and reference
    densities coincide because the center ignores the current slot."""

    def __init__(self, cov):
        self.cov = cov if isinstance(cov, SpdMatrix) else SpdMatrix(cov)
        self.dim = self.cov.dim

    def sample(self, rng, ctx):
        z = rng.standard_normal(self.dim)
        return ctx.anchor_point + self.cov.chol @ z

    def log_density(self, point, ctx):
        return float(mvn_logpdf(np.asarray(point, dtype=float) - ctx.anchor_point, np.zeros(self.dim), self.cov))

    def descriptor(self):
        return {"kind": "anchored_rw", "cov": self.cov.matrix.tolist()}


class GridRWProposal(ProposalKernel):
    """Support-restricted Gaussian step on a finite-state target: the move
    probability to each state is a Gaussian in the embedded distance,
    renormalized over the states. The normalization depends on the source
    state, so the kernel is asymmetric in general."""

    dim = 1

    def __init__(self, grid: GridTarget, sigma: float):
        if sigma <= 0:
            raise InvalidParameterError("sigma must be positive")
        self.grid = grid
        self.sigma = float(sigma)
        pos = grid.positions
        sq = (pos[:, None] - pos[None, :]) ** 2
        logits = -sq / (2.0 * self.sigma**2)
        self.log_matrix = logits - logsumexp(logits, axis=1, keepdims=True)
        self.matrix = np.exp(self.log_matrix)  # rows: from-state, cols: to-state

    def _index_or_raise(self, point, role):
        i = self.grid.state_index(point)
        if i < 0:
            raise DegenerateDensityError(f"{role} point is not a grid state: {point}")
        return i

    def sample(self, rng, ctx):
        i = self._index_or_raise(ctx.current, "current")
        j = int(rng.choice(self.grid.n_states, p=self.matrix[i]))
        return np.array([self.grid.positions[j]])

    def log_density(self, point, ctx):
        i = self._index_or_raise(ctx.current, "current")
        j = self.grid.state_index(point)
        return float(self.log_matrix[i, j]) if j >= 0 else -np.inf

    def descriptor(self):
        return {"kind": "grid_rw", "sigma": self.sigma}


def _sym_sqrt(matrix: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(matrix)
    if np.any(vals <= 0):
        raise DecompositionError("matrix square root requires positive definiteness")
    return (vecs * np.sqrt(vals)) @ vecs.T


class SORBlockProposal:
    """Jointly correlated trial block: (trial_1..trial_{M-1}, current) follows
    one zero-cross-correlation-except-last multivariate normal, so the trials
    are drawn from their exact joint conditional given the current point.

    Per-slot densities (used by the trial weights) are each trial's marginal
    conditional normal. Cross-correlation with the current block is
    ``cross[i] @`` applied between symmetric square roots; trials are
    negatively correlated with the current point when those coefficients are
    negative, which is what pushes candidates to the opposite side of a mode.
    """

    def __init__(self, covs, cov_current=None, cross=None, center=None):
        self.covs = [c if isinstance(c, SpdMatrix) else SpdMatrix(c) for c in covs]
        if not self.covs:
            raise InvalidParameterError("need at least one trial block")
        dims = {c.dim for c in self.covs}
        if len(dims) != 1:
            raise DimensionMismatchError("all blocks must share one dimension")
        self.dim = dims.pop()
        d = self.dim
        self.n_trials = len(self.covs)
        self.cov_current = (
            SpdMatrix.identity(d)
            if cov_current is None
            else (cov_current if isinstance(cov_current, SpdMatrix) else SpdMatrix(cov_current))
        )
        if self.cov_current.dim != d:
            raise DimensionMismatchError("current-block covariance has the wrong dimension")
        if cross is None:
            # joint positive definiteness needs the squared couplings to sum
            # below 1, so the -0.9 default shrinks with the trial count
            cross = [(-0.9 / np.sqrt(self.n_trials)) * np.eye(d)] * self.n_trials
        self.cross = [np.asarray(r, dtype=float) for r in cross]
        if len(self.cross) != self.n_trials or any(r.shape != (d, d) for r in self.cross):
            raise DimensionMismatchError("need one d x d cross-coefficient block per trial")
        self.center = np.zeros(d) if center is None else np.asarray(center, dtype=float)

        sqrt_cur = _sym_sqrt(self.cov_current.matrix)
        psi = [_sym_sqrt(c.matrix) @ r @ sqrt_cur for c, r in zip(self.covs, self.cross)]

        m = self.n_trials + 1
        joint = np.zeros((m * d, m * d))
        for i, c in enumerate(self.covs):
            joint[i * d : (i + 1) * d, i * d : (i + 1) * d] = c.matrix
        last = self.n_trials * d
        joint[last:, last:] = self.cov_current.matrix
        for i, p in enumerate(psi):
            joint[i * d : (i + 1) * d, last:] = p
            joint[last:, i * d : (i + 1) * d] = p.T
        try:
            cholesky(joint)
        except DecompositionError as err:
            max_r = max(float(np.max(np.abs(r))) for r in self.cross)
            raise DecompositionError(
                f"joint trial covariance is not positive definite "
                f"(largest cross-coefficient magnitude {max_r:g}): {err}"
            ) from None

        # gains and conditional (Schur) covariance given the current block
        self._gains = [p @ np.linalg.inv(self.cov_current.matrix) for p in psi]
        stacked_psi = np.vstack(psi)  # ((M-1)d, d)
        schur = joint[:last, :last] - stacked_psi @ np.linalg.inv(self.cov_current.matrix) @ stacked_psi.T
        self._schur_chol = cholesky((schur + schur.T) / 2.0)
        self.marginal_covs = [
            SpdMatrix(c.matrix - g @ p.T) for c, g, p in zip(self.covs, self._gains, psi)
        ]

    def sample_block(self, rng: RngStream, current: np.ndarray) -> np.ndarray:
        """Joint conditional draw of all trials given the current point."""
        current = np.asarray(current, dtype=float)
        dev = current - self.center
        mean = np.concatenate([self.center + g @ dev for g in self._gains])
        z = rng.standard_normal(mean.size)
        return (mean + self._schur_chol @ z).reshape(self.n_trials, self.dim)

    def slot_mean(self, j: int, current: np.ndarray) -> np.ndarray:
        return self.center + self._gains[j] @ (np.asarray(current, dtype=float) - self.center)

    def slot_log_density(self, j: int, point: np.ndarray, current: np.ndarray) -> float:
        """Marginal conditional density of trial slot j given the current point."""
        dev = np.asarray(point, dtype=float) - self.slot_mean(j, current)
        return float(mvn_logpdf(dev, np.zeros(self.dim), self.marginal_covs[j]))

    def slot_view(self, j: int) -> "SORSlotKernel":
        return SORSlotKernel(self, j)

    def descriptor(self):
        return {
            "kind": "sor_block",
            "covs": [c.matrix.tolist() for c in self.covs],
            "cov_current": self.cov_current.matrix.tolist(),
            "cross": [r.tolist() for r in self.cross],
            "center": self.center.tolist(),
        }


class SORSlotKernel(ProposalKernel):
    """One slot of a jointly correlated trial block, viewed as a kernel: its
    sample is the slot's row of a joint block draw (the correct marginal) and
    its density is the marginal conditional normal."""

    def __init__(self, block: SORBlockProposal, slot: int):
        if not 0 <= slot < block.n_trials:
            raise InvalidParameterError(f"slot must be in 0..{block.n_trials - 1}")
        self.block = block
        self.slot = slot
        self.dim = block.dim

    def sample(self, rng, ctx):
        return self.block.sample_block(rng, ctx.current)[self.slot]

    def log_density(self, point, ctx):
        return self.block.slot_log_density(self.slot, point, ctx.current)

    def descriptor(self):
        return {"kind": "sor_slot", "slot": self.slot, "block": self.block.descriptor()}


def sor_sample_block(kernel: SORBlockProposal, rng: RngStream, current: np.ndarray) -> np.ndarray:
    """Module-level alias for the joint conditional block draw."""
    return kernel.sample_block(rng, current)


class RayProposal(ProposalKernel):
    """One-dimensional Gaussian step along a fixed direction through the
    conditioning point: point = current + r * direction, r ~ N(0, scale).

    The density is the scalar density of the signed radius; evaluation points
    off the ray are a geometry violation and raise rather than returning
    -inf, because the multiple-try sweeps only ever produce on-ray points.
    """

    def __init__(self, direction, scale: float):
        e = np.asarray(direction, dtype=float)
        nrm = float(np.linalg.norm(e))
        if nrm < 1e-12:
            raise DegenerateDirectionError("direction has zero norm")
        if scale <= 0:
            raise InvalidParameterError("scale must be positive")
        self.direction = e / nrm
        self.scale = float(scale)
        self.dim = e.size

    def radius_of(self, point, ctx) -> float:
        dev = np.asarray(point, dtype=float) - ctx.current
        r = float(np.dot(dev, self.direction))
        perp = dev - r * self.direction
        if float(np.linalg.norm(perp)) > 1e-9 * max(1.0, abs(r)):
            raise DegenerateDensityError("evaluation point is off the proposal ray")
        return r

    def sample(self, rng, ctx):
        r = rng.normal(0.0, np.sqrt(self.scale))
        return ctx.current + r * self.direction

    def log_density(self, point, ctx):
        r = self.radius_of(point, ctx)
        return -0.5 * (np.log(2.0 * np.pi * self.scale) + r * r / self.scale)

    def descriptor(self):
        return {"kind": "ray", "direction": self.direction.tolist(), "scale": self.scale}


def ray_direction(towards: np.ndarray, anchor: np.ndarray) -> np.ndarray:
    """Unit vector pointing from the anchor towards a reference point."""
    dev = np.asarray(towards, dtype=float) - np.asarray(anchor, dtype=float)
    nrm = float(np.linalg.norm(dev))
    if nrm < 1e-12:
        raise DegenerateDirectionError("towards and anchor coincide; direction undefined")
    return dev / nrm


_INVPHI = (np.sqrt(5.0) - 1.0) / 2.0


def line_search_mode(
    target: TargetDensity,
    x: np.ndarray,
    direction: np.ndarray,
    tol: float = 1e-6,
    max_radius: float = 1e6,
) -> tuple[np.ndarray, bool]:
    """Maximize the target log density along x + r*direction.

    Brackets the maximum by geometric expansion from r=0, then refines with
    golden-section search until the radius interval is narrower than ``tol``.
    Returns (point, True) on success; if the slice keeps increasing past
    ``max_radius`` the best point found is returned with False.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(direction, dtype=float)
    if float(np.linalg.norm(u)) < 1e-12:
        raise DegenerateDirectionError("line search direction has zero norm")

    def g(r):
        return target.log_density(x + r * u)

    lo, mid, hi = -1.0, 0.0, 1.0
    g_lo, g_mid, g_hi = g(lo), g(mid), g(hi)
    while not (g_mid >= g_lo and g_mid >= g_hi):
        if g_hi > g_mid:
            lo, g_lo = mid, g_mid
            mid, g_mid = hi, g_hi
            hi = mid + 2.0 * (mid - lo)
            g_hi = g(hi)
        else:
            hi, g_hi = mid, g_mid
            mid, g_mid = lo, g_lo
            lo = mid - 2.0 * (hi - mid)
            g_lo = g(lo)
        if abs(hi) > max_radius or abs(lo) > max_radius:
            best = max([(g_lo, lo), (g_mid, mid), (g_hi, hi)])
            return x + best[1] * u, False

    a, b = lo, hi
    r1 = b - _INVPHI * (b - a)
    r2 = a + _INVPHI * (b - a)
    f1, f2 = g(r1), g(r2)
    while b - a > tol:
        if f1 >= f2:
            b, r2, f2 = r2, r1, f1
            r1 = b - _INVPHI * (b - a)
            f1 = g(r1)
        else:
            a, r1, f1 = r1, r2, f2
            r2 = a + _INVPHI * (b - a)
            f2 = g(r2)
    return x + 0.5 * (a + b) * u, True


def fallback_direction(target: TargetDensity, x: np.ndarray) -> np.ndarray | None:
    """Gradient direction used when a chain has no displacement to follow;
    None when the gradient itself is (numerically) zero."""
    g = target.gradient(x)
    if g is None:
        g = gradient_fd(target, x)
    nrm = float(np.linalg.norm(g))
    if not np.isfinite(nrm) or nrm < 1e-12:
        return None
    return g / nrm
