"""Trial weights, candidate selection, and the generalized acceptance ratio.

The weight of a candidate z evaluated against a conditioning point c is

    log w = log pi(z) + log T(z -> c) + log lambda(T_fwd, T_rev)

where T(z -> c) is the kernel's density of *producing c when z occupies the
current slot* (the reverse direction). That direction is what makes
pi(x) T(x,y) w(y,x) symmetric in (x, y) and hence the whole move reversible;
with M=1 it collapses to the classic Metropolis-Hastings ratio. The same
function scores both sweeps: forward weights use (z=trial, c=chain state),
reference weights use (z=reference point, c=selected candidate).

All weight arithmetic stays in log space; -inf is the zero-weight flag and
degeneracies become zero weights plus diagnostic counts, never exceptions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import InvalidParameterError, StuckTrialError
from .mathcore import RngStream
from .proposals import ConditioningContext, ProposalKernel
from .targets import TargetDensity

_LOG_2 = float(np.log(2.0))

CONST_ONE = "const_one"
HARMONIC = "harmonic"
POWER_PRODUCT = "power_product"
_KINDS = (CONST_ONE, HARMONIC, POWER_PRODUCT)


@dataclass
class WeightDiagnostics:
    """Counters for the benign pathologies of weight computation."""

    degenerate_lambda: int = 0
    stuck_selections: int = 0
    degenerate_ratios: int = 0

    def merge(self, other: "WeightDiagnostics") -> None:
        self.degenerate_lambda += other.degenerate_lambda
        self.stuck_selections += other.stuck_selections
        self.degenerate_ratios += other.degenerate_ratios


@dataclass(frozen=True)
class LambdaPolicy:
    """How the symmetric lambda factor in each trial weight is formed.

    ``const_one`` ignores the kernel densities; ``harmonic`` uses
    2 / (T_fwd + T_rev); ``power_product`` uses (T_fwd * T_rev)^(-alpha),
    which for alpha=1 turns anchored-kernel weights into genuine importance
    ratios. ``population_weighted`` multiplies by the slot's selection
    frequency nu_j from the previous population iteration; optional
    ``slot_coefficients`` multiply constant per-slot factors in.
    """

    kind: str
    alpha: float = 1.0
    population_weighted: bool = False
    slot_coefficients: tuple | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise InvalidParameterError(f"unknown lambda kind {self.kind!r}; expected one of {_KINDS}")
        if self.kind == POWER_PRODUCT and self.alpha <= 0:
            raise InvalidParameterError("power_product alpha must be positive")
        if self.slot_coefficients is not None and np.any(np.asarray(self.slot_coefficients) <= 0):
            raise InvalidParameterError("slot coefficients must be positive")

    @classmethod
    def const_one(cls, population_weighted=False):
        return cls(CONST_ONE, population_weighted=population_weighted)

    @classmethod
    def harmonic(cls, population_weighted=False, slot_coefficients=None):
        return cls(HARMONIC, population_weighted=population_weighted, slot_coefficients=slot_coefficients)

    @classmethod
    def power_product(cls, alpha=1.0, population_weighted=False):
        return cls(POWER_PRODUCT, alpha=alpha, population_weighted=population_weighted)

    def log_lambda(self, log_t_fwd, log_t_rev, log_nu=None, slot=None, diag: WeightDiagnostics | None = None):
        """Vectorized log lambda; -inf marks a degenerate (zeroed) slot."""
        f = np.asarray(log_t_fwd, dtype=float)
        r = np.asarray(log_t_rev, dtype=float)
        if self.kind == CONST_ONE:
            out = np.zeros(np.broadcast(f, r).shape)
        elif self.kind == HARMONIC:
            denom = np.logaddexp(f, r)
            degenerate = np.isinf(denom) & (denom < 0)
            if np.any(degenerate) and diag is not None:
                diag.degenerate_lambda += int(np.count_nonzero(degenerate))
            with np.errstate(invalid="ignore"):
                out = np.where(degenerate, -np.inf, _LOG_2 - denom)
        else:  # POWER_PRODUCT
            degenerate = np.isneginf(f) | np.isneginf(r)
            if np.any(degenerate) and diag is not None:
                diag.degenerate_lambda += int(np.count_nonzero(degenerate))
            with np.errstate(invalid="ignore"):
                out = np.where(degenerate, -np.inf, -self.alpha * (f + r))
        if self.population_weighted:
            if log_nu is None:
                raise InvalidParameterError("population-weighted lambda needs nu")
            out = out + np.asarray(log_nu, dtype=float)
        if self.slot_coefficients is not None and slot is not None:
            out = out + np.log(np.asarray(self.slot_coefficients, dtype=float)[slot])
        return out if out.ndim else float(out)


def lambda_value(policy: LambdaPolicy, t_fwd, t_rev, nu=None, slot=None) -> float:
    """Linear-space lambda for inspection and testing."""
    t_fwd, t_rev = float(t_fwd), float(t_rev)
    if t_fwd < 0 or t_rev < 0:
        raise InvalidParameterError("kernel densities must be non-negative")
    if policy.kind == CONST_ONE:
        val = 1.0
    elif policy.kind == HARMONIC:
        denom = t_fwd + t_rev
        val = 0.0 if denom == 0.0 else 2.0 / denom
    else:
        prod = t_fwd * t_rev
        val = 0.0 if prod == 0.0 else prod ** (-policy.alpha)
    if policy.population_weighted:
        if nu is None:
            raise InvalidParameterError("population-weighted lambda needs nu")
        val *= float(nu)
    if policy.slot_coefficients is not None and slot is not None:
        val *= float(policy.slot_coefficients[slot])
    return val


def trial_weight(
    target: TargetDensity,
    kernel: ProposalKernel,
    policy: LambdaPolicy,
    point: np.ndarray,
    cond: np.ndarray,
    ctx: ConditioningContext,
    nu_j: float | None = None,
    slot: int | None = None,
    diag: WeightDiagnostics | None = None,
) -> float:
    """Log weight of ``point`` scored against conditioning point ``cond``.

    ``ctx`` carries the ambient population information (snapshot, anchor,
    previous state); the current-slot substitutions for the two kernel
    evaluations happen here, so callers pass the same context for both sweeps.
    """
    lp = target.log_density(np.asarray(point, dtype=float))
    if lp == -np.inf:
        return -np.inf
    t_rev = kernel.log_density(cond, ctx.with_current(point))
    t_fwd = kernel.log_density(point, ctx.with_current(cond))
    log_nu = None
    if policy.population_weighted:
        if nu_j is None:
            raise InvalidParameterError("population-weighted lambda needs nu_j")
        with np.errstate(divide="ignore"):
            log_nu = np.log(nu_j)
    lam = policy.log_lambda(t_fwd, t_rev, log_nu=log_nu, slot=slot, diag=diag)
    w = lp + t_rev + lam
    return -np.inf if np.isnan(w) else float(w)


def select_trial(rng: RngStream, log_weights: np.ndarray) -> int:
    """Sample a candidate index proportional to its weight by inverting the
    cumulative sum at a single uniform. A single-candidate set returns index
    0 without consuming randomness, so an M=1 step spends exactly the draws
    a plain Metropolis-Hastings step would."""
    lw = np.asarray(log_weights, dtype=float)
    if lw.ndim != 1 or lw.size == 0:
        raise InvalidParameterError("log_weights must be a non-empty vector")
    m = np.max(lw)
    if m == -np.inf:
        raise StuckTrialError("all trial weights are zero")
    if lw.size == 1:
        return 0
    c = np.cumsum(np.exp(lw - m))
    u = rng.random() * c[-1]
    return int(np.searchsorted(c, u, side="right").clip(0, lw.size - 1))


def select_trial_batch(rng: RngStream, log_weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise selection for a batch: returns (indices, stuck_mask); stuck
    rows report index 0 and True in the mask. Consumes one uniform per row."""
    lw = np.asarray(log_weights, dtype=float)
    if lw.ndim != 2:
        raise InvalidParameterError("expected a (batch, trials) array")
    m = np.max(lw, axis=1)
    stuck = np.isneginf(m)
    safe = np.where(stuck[:, None], 0.0, lw - np.where(stuck, 0.0, m)[:, None])
    with np.errstate(under="ignore"):
        p = np.exp(safe)
    c = np.cumsum(p, axis=1)
    u = rng.random(lw.shape[0]) * c[:, -1]
    idx = (c > u[:, None]).argmax(axis=1)
    return idx, stuck


def acceptance_ratio(
    log_forward: np.ndarray, log_reference: np.ndarray, diag: WeightDiagnostics | None = None
) -> float:
    """min(1, sum of forward weights / sum of reference weights) in log space.

    A zero reference sum with positive forward mass accepts outright (ratio 1)
    and bumps the degenerate-ratio counter.
    """
    lf = float(logsumexp(np.asarray(log_forward, dtype=float)))
    lr = float(logsumexp(np.asarray(log_reference, dtype=float)))
    if lf == -np.inf:
        return 0.0
    if lr == -np.inf:
        if diag is not None:
            diag.degenerate_ratios += 1
        return 1.0
    return float(np.exp(min(0.0, lf - lr)))


def acceptance_ratio_batch(
    log_forward: np.ndarray, log_reference: np.ndarray, diag: WeightDiagnostics | None = None
) -> np.ndarray:
    """Row-wise acceptance ratios with the same degeneracy conventions."""
    lf = logsumexp(np.asarray(log_forward, dtype=float), axis=1)
    lr = logsumexp(np.asarray(log_reference, dtype=float), axis=1)
    dead = np.isneginf(lf)
    degen = np.isneginf(lr) & ~dead
    if diag is not None and np.any(degen):
        diag.degenerate_ratios += int(np.count_nonzero(degen))
    with np.errstate(invalid="ignore", under="ignore"):
        rho = np.exp(np.minimum(0.0, lf - lr))
    rho = np.where(dead, 0.0, rho)
    return np.where(degen, 1.0, rho)


@dataclass
class NuTracker:
    """Slot-selection frequencies from the previous population iteration.

    Starts uniform (no history); after each full population update,
    ``update`` replaces the frequencies with the fraction of chains whose
    selected candidate came from each slot.
    """

    n_slots: int
    nu: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.n_slots < 1:
            raise InvalidParameterError("need at least one slot")
        self.nu = np.full(self.n_slots, 1.0 / self.n_slots)

    def update(self, selections: np.ndarray) -> np.ndarray:
        sel = np.asarray(selections, dtype=int)
        if sel.size == 0:
            raise InvalidParameterError("selections must be non-empty")
        if np.any(sel < 0) or np.any(sel >= self.n_slots):
            raise InvalidParameterError("selection index outside slot range")
        self.nu = np.bincount(sel, minlength=self.n_slots) / sel.size
        return self.nu


def update_nu(tracker: NuTracker, selections: np.ndarray) -> np.ndarray:
    """Module-level alias for ``NuTracker.update``."""
    return tracker.update(selections)


@dataclass
class TrialSet:
    """Everything one multiple-try transition computed, for inspection."""

    trials: np.ndarray
    log_forward: np.ndarray
    selected: int
    reference: np.ndarray
    log_reference: np.ndarray
    ratio: float
