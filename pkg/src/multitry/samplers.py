"""Multiple-try transition steps, population samplers, and run orchestration.

The module provides three layers:

* single-chain steps (``mh_step``, ``mtm_step``, ``mtm_dp_step``) that move one
  point through one accept/reject decision;
* population steps (``imtm_step``, ``gimtm_step``, ``aimtm1_step``,
  ``aimtm2_step``, ``random_ray_step``, ``imtm_within_gibbs_step``) that advance
  a vector of chains whose proposal kernels may condition on each other's
  positions; and
* the ``run`` driver, which validates a :class:`SamplerConfig`, wires up seeded
  per-chain streams, and records a :class:`ChainTrace`.

Every multiple-try decision scores a candidate ``z`` against a conditioning
point ``c`` with the weight ``pi(z) * T_j(z -> c) * lambda_j``: the kernel
density is evaluated with the candidate occupying the current slot. With one
trial and a constant lambda the generalized ratio collapses to the classic
Metropolis-Hastings ratio, and ``mtm_step``/``mh_step`` then consume identical
variate sequences, so their trajectories agree bitwise under a shared seed.
"""

import os
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import (
    ConfigValidationError,
    DegenerateDirectionError,
    DimensionMismatchError,
    InvalidParameterError,
    StuckTrialError,
)
from .mathcore import RngStream, streams
from .proposals import (
    AnchoredRWProposal,
    GaussianRWProposal,
    GridRWProposal,
    MixtureRWProposal,
    RayProposal,
    context_at,
    fallback_direction,
)
from .targets import GridTarget, TemperedTarget
from .weights import (
    LambdaPolicy,
    NuTracker,
    WeightDiagnostics,
    acceptance_ratio,
    select_trial,
    select_trial_batch,
    trial_weight,
)

_LOG_2PI = float(np.log(2.0 * np.pi))
_INVPHI = (np.sqrt(5.0) - 1.0) / 2.0

ALGORITHMS = ("mh", "mtm", "mtm_dp", "imtm", "gimtm", "aimtm1", "aimtm2", "random_ray")
_SINGLE_CHAIN = ("mh", "mtm", "mtm_dp")

STRATEGY_FIXED = "fixed-per-slot"
STRATEGY_RANDOM = "anchored-random-indices"
STRATEGY_NU = "nu-proportional"
STRATEGY_SELF = "anchored-self"
STRATEGIES = (STRATEGY_FIXED, STRATEGY_RANDOM, STRATEGY_NU, STRATEGY_SELF)
_RANDOM_STRATEGIES = (STRATEGY_RANDOM, STRATEGY_NU)


# ---------------------------------------------------------------------------
# population bookkeeping


@dataclass(frozen=True)
class TemperatureLadder:
    """Strictly decreasing tempering exponents starting at 1.

    Chain ``i`` of an annealed population targets ``pi ** exponents[i]``; the
    first rung is the distribution of interest and later rungs are flatter.
    """

    exponents: tuple

    def __post_init__(self):
        exps = tuple(float(e) for e in self.exponents)
        object.__setattr__(self, "exponents", exps)
        if not exps:
            raise InvalidParameterError("ladder needs at least one exponent")
        if exps[0] != 1.0:
            raise InvalidParameterError(f"first ladder exponent must be 1, got {exps[0]}")
        if any(e <= 0 for e in exps):
            raise InvalidParameterError("ladder exponents must be positive")
        if any(a <= b for a, b in zip(exps, exps[1:])):
            raise InvalidParameterError("ladder exponents must be strictly decreasing")

    @classmethod
    def default(cls, n: int) -> "TemperatureLadder":
        """The 1/t ladder: exponents 1, 1/2, ..., 1/n."""
        if n < 1:
            raise InvalidParameterError("ladder length must be positive")
        return cls(tuple(1.0 / t for t in range(1, n + 1)))

    def __len__(self):
        return len(self.exponents)

    def __getitem__(self, i):
        return self.exponents[i]

    def __iter__(self):
        return iter(self.exponents)


@dataclass
class PopulationState:
    """Positions of a chain population plus the plumbing later steps read.

    ``previous`` holds the positions one iteration back (ray directions are
    built from the displacement), ``selected`` the trial-slot index each chain
    picked last, ``accepted`` whether that candidate was taken.
    """

    positions: np.ndarray
    previous: np.ndarray
    selected: np.ndarray
    accepted: np.ndarray
    iteration: int = 0

    @classmethod
    def from_positions(cls, positions) -> "PopulationState":
        pos = np.atleast_2d(np.asarray(positions, dtype=float))
        n = pos.shape[0]
        return cls(
            positions=pos.copy(),
            previous=pos.copy(),
            selected=np.zeros(n, dtype=int),
            accepted=np.zeros(n, dtype=bool),
            iteration=0,
        )

    @property
    def n_chains(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]


@dataclass
class SamplerConfig:
    """Everything ``run`` needs to execute one algorithm deterministically.

    ``n_trials`` may be a single count or one count per chain (population
    algorithms only). ``kernels`` lists the trial proposal kernels; how a slot
    is tied to a population position depends on ``strategy``:

    * ``fixed-per-slot`` — slot j anchors at population row j (random-walk
      kernels just move their own chain);
    * ``anchored-random-indices`` — each slot draws a fresh anchor row
      uniformly, excluding the chain itself unless ``anchor_include_self``;
    * ``nu-proportional`` — slots resample which kernel family they use in
      proportion to the previous iteration's selection frequencies, with
      anchor rows drawn as above;
    * ``anchored-self`` — every slot anchors at the chain's own position,
      which decouples the population into independent chains (a diagnostic
      mode the test suite leans on).
    """

    algorithm: str
    n_chains: int
    n_trials: object
    policy: LambdaPolicy
    kernels: list
    iterations: int
    seed: int
    strategy: str = STRATEGY_FIXED
    ladder: TemperatureLadder | None = None
    init_center: np.ndarray | None = None
    init_scale: float | None = None
    anchor_include_self: bool = False
    ray_scale: float = 1.0

    def trial_counts(self) -> np.ndarray:
        arr = np.asarray(self.n_trials)
        if arr.ndim == 0:
            arr = np.full(self.n_chains, arr)
        if not np.issubdtype(arr.dtype, np.integer):
            if not np.all(np.isfinite(arr.astype(float))) or np.any(np.mod(arr, 1) != 0):
                raise ValueError(f"trial counts must be integers, got {self.n_trials!r}")
        return arr.astype(int)

    def validate(self) -> list:
        """Collect every violated constraint (empty when the config is sound)."""
        probs = []
        if self.algorithm not in ALGORITHMS:
            probs.append(f"unknown algorithm '{self.algorithm}' (choose from {', '.join(ALGORITHMS)})")
        if not isinstance(self.n_chains, (int, np.integer)) or self.n_chains < 1:
            probs.append(f"n_chains must be a positive integer, got {self.n_chains!r}")
            return probs
        if not isinstance(self.iterations, (int, np.integer)) or self.iterations < 0:
            probs.append(f"iterations must be a non-negative integer, got {self.iterations!r}")
        if not isinstance(self.seed, (int, np.integer)) or self.seed < 0:
            probs.append(f"seed must be a non-negative integer, got {self.seed!r}")
        if not isinstance(self.policy, LambdaPolicy):
            probs.append("policy must be a LambdaPolicy")
        if self.strategy not in STRATEGIES:
            probs.append(f"unknown strategy '{self.strategy}' (choose from {', '.join(STRATEGIES)})")

        try:
            counts = self.trial_counts()
        except ValueError as exc:
            probs.append(str(exc))
            return probs
        if counts.shape != (self.n_chains,):
            probs.append(f"n_trials gives {counts.size} counts for {self.n_chains} chains")
            return probs
        if np.any(counts < 1):
            probs.append("every trial count must be at least 1")
            return probs
        m_max = int(counts.max())

        if self.init_scale is not None and self.init_scale <= 0:
            probs.append(f"init_scale must be positive, got {self.init_scale}")
        if not (self.ray_scale > 0):
            probs.append(f"ray_scale must be positive, got {self.ray_scale}")

        algo = self.algorithm
        if algo == "random_ray":
            if self.kernels:
                probs.append("random_ray builds its ray kernels internally; pass ray_scale, not kernels")
            if self.n_chains < 2:
                probs.append("random_ray aims rays at other chains and needs n_chains >= 2")
            if np.any(counts != counts[0]):
                probs.append("random_ray uses one shared trial count for every chain")
            if self.strategy != STRATEGY_FIXED:
                probs.append("random_ray draws its own anchors; leave strategy at fixed-per-slot")
            return probs

        if not self.kernels:
            probs.append("at least one proposal kernel is required")
            return probs
        dims = {k.dim for k in self.kernels}
        if len(dims) != 1:
            probs.append(f"kernels disagree on dimension: {sorted(dims)}")

        anchored = all(isinstance(k, AnchoredRWProposal) for k in self.kernels)
        if algo in _SINGLE_CHAIN:
            if self.strategy != STRATEGY_FIXED:
                probs.append(f"{algo} runs independent chains; strategy must stay fixed-per-slot")
            if isinstance(self.policy, LambdaPolicy) and self.policy.population_weighted:
                probs.append("population-weighted lambda needs an interacting algorithm (imtm or gimtm)")
            if np.any(counts != counts[0]):
                probs.append(f"{algo} replicates one chain; per-chain trial counts are not supported")
        if algo == "mh":
            if len(self.kernels) != 1:
                probs.append("mh uses exactly one kernel")
        elif algo == "mtm":
            if len(self.kernels) != 1:
                probs.append("mtm shares one kernel across slots; use mtm_dp for per-slot kernels")
        elif algo == "mtm_dp":
            if len(self.kernels) != m_max:
                probs.append(f"mtm_dp needs one kernel per trial slot ({m_max}), got {len(self.kernels)}")
        elif algo in ("imtm", "gimtm"):
            if self.strategy == STRATEGY_NU:
                if len(self.kernels) < 2:
                    probs.append("nu-proportional resamples kernel families and needs at least 2 kernels")
            elif len(self.kernels) < m_max:
                probs.append(f"need at least {m_max} kernels for {m_max} trial slots, got {len(self.kernels)}")
            if self.strategy in _RANDOM_STRATEGIES:
                if not anchored:
                    probs.append(f"strategy '{self.strategy}' requires anchored kernels")
                if self.n_chains <= m_max:
                    probs.append(
                        f"strategy '{self.strategy}' draws anchor rows from the rest of the population "
                        f"and needs more chains than trials per chain (N > M); "
                        f"got N={self.n_chains}, M={m_max}"
                    )
            elif self.strategy == STRATEGY_FIXED and anchored and m_max > self.n_chains:
                probs.append(
                    f"fixed-per-slot anchoring ties slot j to population row j and needs "
                    f"M <= N; got M={m_max}, N={self.n_chains}"
                )
            elif self.strategy == STRATEGY_SELF and not anchored:
                probs.append("strategy 'anchored-self' requires anchored kernels")
        elif algo == "aimtm1":
            if self.ladder is None or len(self.ladder) != self.n_chains:
                probs.append("aimtm1 needs a temperature ladder with one exponent per chain")
            if not anchored:
                probs.append("aimtm1 trial kernels must be anchored")
            if len(self.kernels) < m_max:
                probs.append(f"need at least {m_max} kernels for {m_max} trial slots, got {len(self.kernels)}")
        elif algo == "aimtm2":
            if self.ladder is None or len(self.ladder) != self.n_chains:
                probs.append("aimtm2 needs a temperature ladder with one exponent per chain")
            if self.n_chains < 2:
                probs.append("aimtm2 needs at least one auxiliary chain (n_chains >= 2)")
            else:
                if len(self.kernels) != self.n_chains - 1:
                    probs.append(
                        f"aimtm2 borrows one kernel per auxiliary chain: expected "
                        f"{self.n_chains - 1} kernels, got {len(self.kernels)}"
                    )
                if int(counts[0]) != self.n_chains - 1:
                    probs.append("aimtm2 runs the first chain with n_trials = n_chains - 1")
            if not all(isinstance(k, GaussianRWProposal) for k in self.kernels):
                probs.append("aimtm2 auxiliary kernels must be Gaussian random walks")
        return probs

    def validated(self) -> "SamplerConfig":
        probs = self.validate()
        if probs:
            raise ConfigValidationError(probs)
        return self


# ---------------------------------------------------------------------------
# single-chain transitions


def mh_step(target, kernel, x, rng, ctx=None):
    """One Metropolis-Hastings transition; returns ``(x_new, accepted)``.

    A candidate whose forward mass ``pi(y) * T(y -> x)`` vanishes rejects
    without spending the acceptance variate, and a vanishing reference mass
    accepts outright — the same degeneracy conventions the multiple-try
    ratio uses, which keeps the two reductions bit-compatible.
    """
    x = np.asarray(x, dtype=float)
    ctx = context_at(x) if ctx is None else ctx.with_current(x)
    y = kernel.sample(rng, ctx)
    num = target.log_density(y)
    if num > -np.inf:
        num = num + kernel.log_density(x, ctx.with_current(y))
    if num == -np.inf or np.isnan(num):
        return x, False
    den = target.log_density(x) + kernel.log_density(y, ctx)
    rho = float(np.exp(min(0.0, num - den)))
    if rng.random() < rho:
        return y, True
    return x, False


def _kernel_transition(target, kernels, policy, x, ctxs, rng, nu=None, slot_ids=None, diag=None):
    """One multiple-try transition driven by per-slot kernel objects.

    ``ctxs`` carries one conditioning context per slot with ``current`` set to
    ``x``; ``slot_ids`` maps slot positions to kernel-family indices (used by
    per-family lambda coefficients). Returns ``(x_new, accepted, selected)``;
    an all-zero forward sweep holds the chain.
    """
    m = len(kernels)
    ids = range(m) if slot_ids is None else slot_ids
    trials = []
    w_fwd = np.empty(m)
    for j, (k, ctx) in enumerate(zip(kernels, ctxs)):
        y_j = k.sample(rng, ctx)
        trials.append(y_j)
        w_fwd[j] = trial_weight(
            target, k, policy, y_j, x, ctx,
            nu_j=None if nu is None else float(nu[j]), slot=int(ids[j]), diag=diag,
        )
    try:
        sel = select_trial(rng, w_fwd)
    except StuckTrialError:
        if diag is not None:
            diag.stuck_selections += 1
        return x, False, 0
    y = trials[sel]
    w_ref = np.empty(m)
    for j, (k, ctx) in enumerate(zip(kernels, ctxs)):
        point = x if j == sel else k.sample(rng, ctx.with_current(y))
        w_ref[j] = trial_weight(
            target, k, policy, point, y, ctx,
            nu_j=None if nu is None else float(nu[j]), slot=int(ids[j]), diag=diag,
        )
    rho = acceptance_ratio(w_fwd, w_ref, diag)
    if rng.random() < rho:
        return y, True, sel
    return x, False, sel


def mtm_step(target, kernel, n_trials, policy, x, rng, diag=None):
    """Multiple-try transition with one shared kernel across all trial slots."""
    x = np.asarray(x, dtype=float)
    ctx = context_at(x)
    m = int(n_trials)
    return _kernel_transition(target, [kernel] * m, policy, x, [ctx] * m, rng, diag=diag)


def mtm_dp_step(target, kernels, policy, x, rng, diag=None, contexts=None):
    """Multiple-try transition with a distinct proposal kernel per trial slot.

    ``contexts`` optionally supplies per-slot conditioning contexts (snapshot
    rows, anchor indices); by default each slot conditions on ``x`` alone.
    """
    x = np.asarray(x, dtype=float)
    if contexts is None:
        ctx = context_at(x)
        ctxs = [ctx] * len(kernels)
    else:
        if len(contexts) != len(kernels):
            raise DimensionMismatchError("one context per kernel slot is required")
        ctxs = [c.with_current(x) for c in contexts]
    return _kernel_transition(target, list(kernels), policy, x, ctxs, rng, diag=diag)


# ---------------------------------------------------------------------------
# slot-vectorized Gaussian banks (the fast path the population steps use)


class GaussianSlotBank:
    """Batched draws and pair densities for a stack of Gaussian slot kernels.

    The bank factors each kernel family's covariance once; a population step
    then asks for draws and densities under an arbitrary slot selection
    without touching the kernel objects again. Scaled-identity covariances
    take a cheaper arithmetic route than general ones.
    """

    def __init__(self, kernels, anchored=None):
        if not kernels:
            raise InvalidParameterError("bank needs at least one kernel")
        covs = [k.cov for k in kernels]
        dims = {c.dim for c in covs}
        if len(dims) != 1:
            raise DimensionMismatchError("bank kernels must share one dimension")
        self.dim = dims.pop()
        if anchored is None:
            anchored = isinstance(kernels[0], AnchoredRWProposal)
        self.anchored = bool(anchored)
        self.n_families = len(covs)

        iso = all(np.array_equal(c.matrix, c.matrix[0, 0] * np.eye(self.dim)) for c in covs)
        if iso:
            self.scales = np.array([c.matrix[0, 0] for c in covs])
            self.chols = None
            self.log_dets = self.dim * np.log(self.scales)
        else:
            self.scales = None
            self.chols = np.stack([c.chol for c in covs])
            self.log_dets = np.array([c.log_det for c in covs])

    def _steps(self, z, slots):
        if self.scales is not None:
            return np.sqrt(self.scales[slots])[:, None] * z
        return np.einsum("jkl,jl->jk", self.chols[slots], z)

    def draw(self, rng, center, slots, anchors):
        z = rng.standard_normal((len(slots), self.dim))
        base = anchors if self.anchored else np.asarray(center, dtype=float)
        return base + self._steps(z, slots)

    def draw_skip(self, rng, center, slots, anchors, skip):
        """Draws for every slot except ``skip`` (that row comes back zeroed;
        the caller substitutes the held point). Consumes one fewer draw,
        matching the scalar reference sweep."""
        m = len(slots)
        out = np.zeros((m, self.dim))
        keep = np.arange(m) != skip
        if m > 1:
            z = rng.standard_normal((m - 1, self.dim))
            base = anchors[keep] if self.anchored else np.asarray(center, dtype=float)
            out[keep] = base + self._steps(z, slots[keep])
        return out

    def _logpdf(self, dev, slots):
        if self.scales is not None:
            quad = np.sum(dev * dev, axis=-1) / self.scales[slots]
        else:
            z = np.linalg.solve(self.chols[slots], dev[..., None])[..., 0]
            quad = np.sum(z * z, axis=-1)
        return -0.5 * (self.dim * _LOG_2PI + self.log_dets[slots] + quad)

    def pair_log_density(self, points, cond, slots, anchors):
        """``(log T_j(cond -> point_j), log T_j(point_j -> cond))`` per slot."""
        cond = np.asarray(cond, dtype=float)
        if self.anchored:
            t_fwd = self._logpdf(points - anchors, slots)
            t_rev = self._logpdf(cond - anchors, slots)
            return t_fwd, t_rev
        dens = self._logpdf(points - cond, slots)
        return dens, dens


class MixtureSlotBank:
    """Batched draws and densities when every slot carries *the same* Gaussian
    mixture random walk object.

    The increment law is symmetric (zero-mean components), so forward and
    reverse densities coincide and neither slot indices nor anchors enter the
    arithmetic. Slots holding equal-but-distinct mixture objects stay on the
    per-object path; only identity shares the factorization safely.
    """

    def __init__(self, kernel):
        self.dim = kernel.dim
        self.anchored = False
        self.chols = np.stack([c.chol for c in kernel.covs])
        self.log_dets = np.array([c.log_det for c in kernel.covs])
        self._log_w = np.log(kernel.weights)
        self._cum = np.cumsum(kernel.weights)

    def _increments(self, rng, count):
        comps = np.searchsorted(self._cum, rng.random(count), side="right")
        comps = np.minimum(comps, self._cum.size - 1)
        z = rng.standard_normal((count, self.dim))
        return np.einsum("jkl,jl->jk", self.chols[comps], z)

    def draw(self, rng, center, slots, anchors):
        return np.asarray(center, dtype=float) + self._increments(rng, len(slots))

    def draw_skip(self, rng, center, slots, anchors, skip):
        m = len(slots)
        out = np.zeros((m, self.dim))
        keep = np.arange(m) != skip
        if m > 1:
            out[keep] = np.asarray(center, dtype=float) + self._increments(rng, m - 1)
        return out

    def _logpdf(self, dev):
        z = np.linalg.solve(self.chols[:, None, :, :], dev[None, :, :, None])[..., 0]
        quad = np.sum(z * z, axis=-1)
        parts = self._log_w[:, None] - 0.5 * (
            self.dim * _LOG_2PI + self.log_dets[:, None] + quad
        )
        return logsumexp(parts, axis=0)

    def pair_log_density(self, points, cond, slots, anchors):
        dens = self._logpdf(np.asarray(points, dtype=float) - np.asarray(cond, dtype=float))
        return dens, dens


def _try_bank(kernels):
    """A slot bank when every kernel is a plain Gaussian walk, every kernel
    anchored, or every slot the same mixture walk; None sends the caller down
    the per-object path."""
    if all(type(k) is AnchoredRWProposal for k in kernels):
        return GaussianSlotBank(kernels, anchored=True)
    if all(type(k) is GaussianRWProposal for k in kernels):
        return GaussianSlotBank(kernels, anchored=False)
    if (
        kernels
        and type(kernels[0]) is MixtureRWProposal
        and all(k is kernels[0] for k in kernels[1:])
    ):
        return MixtureSlotBank(kernels[0])
    return None


def _combine_weight(lp, t_rev, lam):
    with np.errstate(invalid="ignore"):
        w = lp + t_rev + lam
    return np.where(np.isnan(w), -np.inf, w)


def _log_density_rows(target, rows):
    batch = getattr(target, "log_density_batch", None)
    if batch is not None:
        return np.asarray(batch(rows), dtype=float)
    return np.array([target.log_density(r) for r in rows])


def _bank_transition(target, bank, policy, x, rng, slots, anchors, nu=None, diag=None):
    """Slot-vectorized multiple-try transition (same law as _kernel_transition)."""
    x = np.asarray(x, dtype=float)
    log_nu = None
    if policy.population_weighted:
        if nu is None:
            raise InvalidParameterError("population-weighted lambda needs selection frequencies")
        with np.errstate(divide="ignore"):
            log_nu = np.log(np.asarray(nu, dtype=float)[slots])

    trials = bank.draw(rng, x, slots, anchors)
    lp = _log_density_rows(target, trials)
    t_fwd, t_rev = bank.pair_log_density(trials, x, slots, anchors)
    lam = policy.log_lambda(t_fwd, t_rev, log_nu=log_nu, slot=slots, diag=diag)
    w_fwd = _combine_weight(lp, t_rev, lam)
    try:
        sel = select_trial(rng, w_fwd)
    except StuckTrialError:
        if diag is not None:
            diag.stuck_selections += 1
        return x, False, 0
    y = trials[sel]

    refs = bank.draw_skip(rng, y, slots, anchors, sel)
    refs[sel] = x
    lp_ref = _log_density_rows(target, refs)
    t_fwd2, t_rev2 = bank.pair_log_density(refs, y, slots, anchors)
    lam2 = policy.log_lambda(t_fwd2, t_rev2, log_nu=log_nu, slot=slots, diag=diag)
    w_ref = _combine_weight(lp_ref, t_rev2, lam2)

    rho = acceptance_ratio(w_fwd, w_ref, diag)
    if rng.random() < rho:
        return y, True, sel
    return x, False, sel


# ---------------------------------------------------------------------------
# interacting population steps


def _anchor_rows(rng, m, n, chain, include_self):
    if include_self:
        return rng.integers(0, n, size=m)
    rows = rng.integers(0, n - 1, size=m)
    return rows + (rows >= chain)


def _assign_slots(config, rng, chain, m, nu):
    """Kernel-family indices and anchor rows for one chain's update.

    Returns ``(slots, rows)``; ``rows`` is None when the kernels do not anchor
    into the population (plain random walks under fixed-per-slot).
    """
    n = config.n_chains
    anchored = all(isinstance(k, AnchoredRWProposal) for k in config.kernels)
    if config.strategy == STRATEGY_FIXED:
        slots = np.arange(m)
        rows = np.arange(m) if anchored else None
    elif config.strategy == STRATEGY_SELF:
        slots = np.arange(m)
        rows = np.full(m, chain)
    elif config.strategy == STRATEGY_RANDOM:
        slots = np.arange(m)
        rows = _anchor_rows(rng, m, n, chain, config.anchor_include_self)
    else:  # nu-proportional: resample kernel families by selection frequency
        if nu is None:
            raise InvalidParameterError("nu-proportional slot assignment needs a NuTracker")
        slots = np.asarray(rng.choice(len(config.kernels), size=m, p=nu), dtype=int)
        rows = _anchor_rows(rng, m, n, chain, config.anchor_include_self)
    return slots, rows


def _chain_update(target, config, x, rng, bank, snapshot, slots, rows, nu, diag):
    anchors = None if rows is None else snapshot[rows]
    if bank is not None:
        return _bank_transition(target, bank, config.policy, x, rng, slots, anchors, nu, diag)
    kernels = [config.kernels[s] for s in slots]
    ctxs = [
        context_at(x, snapshot=snapshot, anchor_index=None if rows is None else int(rows[j]))
        for j in range(len(slots))
    ]
    nu_slice = None if nu is None else np.asarray(nu, dtype=float)[slots]
    return _kernel_transition(target, kernels, config.policy, x, ctxs, rng, nu_slice, slots, diag)


def imtm_step(pop, target, config, rngs, nu_tracker=None, diag=None):
    """Advance every chain one interacting multiple-try transition.

    All conditioning contexts are built from the frozen beginning-of-iteration
    snapshot, so chains are mutually independent within the iteration and the
    update order is immaterial (each chain owns its own stream). Selection
    frequencies are folded into ``nu_tracker`` after the sweep.
    """
    snapshot = np.array(pop.positions, copy=True)
    counts = config.trial_counts()
    bank = _try_bank(config.kernels)
    nu = None if nu_tracker is None else nu_tracker.nu
    new_pos = snapshot.copy()
    accepted = np.zeros(config.n_chains, dtype=bool)
    selected = np.zeros(config.n_chains, dtype=int)
    families = np.zeros(config.n_chains, dtype=int)
    for i in range(config.n_chains):
        slots, rows = _assign_slots(config, rngs[i], i, int(counts[i]), nu)
        new_pos[i], accepted[i], selected[i] = _chain_update(
            target, config, snapshot[i], rngs[i], bank, snapshot, slots, rows, nu, diag
        )
        families[i] = int(slots[selected[i]])
    if nu_tracker is not None:
        nu_tracker.update(families)
    return PopulationState(new_pos, snapshot, selected, accepted, pop.iteration + 1)


def gimtm_step(pop, target, config, rngs, nu_tracker=None, diag=None):
    """Sequential population update: chain i's anchors are gathered from the
    already-updated chains 0..i-1 and the not-yet-updated chains i..N-1."""
    working = np.array(pop.positions, copy=True)
    counts = config.trial_counts()
    bank = _try_bank(config.kernels)
    nu = None if nu_tracker is None else nu_tracker.nu
    accepted = np.zeros(config.n_chains, dtype=bool)
    selected = np.zeros(config.n_chains, dtype=int)
    families = np.zeros(config.n_chains, dtype=int)
    for i in range(config.n_chains):
        slots, rows = _assign_slots(config, rngs[i], i, int(counts[i]), nu)
        working[i], accepted[i], selected[i] = _chain_update(
            target, config, working[i].copy(), rngs[i], bank, working, slots, rows, nu, diag
        )
        families[i] = int(slots[selected[i]])
    if nu_tracker is not None:
        nu_tracker.update(families)
    return PopulationState(working, pop.positions.copy(), selected, accepted, pop.iteration + 1)


def aimtm1_step(pop, base_target, ladder, config, rngs, diag=None):
    """Annealed population step where every chain runs a tempered multiple-try
    update anchored into the colder part of the population.

    Chain i (0-based) targets ``pi ** ladder[i]`` — both the forward and the
    reference sweep score candidates against that chain's own tempered target
    — and draws each anchor row uniformly from ``{0, ..., n - i - 1}``, so the
    hottest chain always anchors at the first (untempered) chain.
    """
    snapshot = np.array(pop.positions, copy=True)
    counts = config.trial_counts()
    bank = _try_bank(config.kernels)
    n = config.n_chains
    new_pos = snapshot.copy()
    accepted = np.zeros(n, dtype=bool)
    selected = np.zeros(n, dtype=int)
    for i in range(n):
        tempered = base_target if ladder[i] == 1.0 else TemperedTarget(base_target, ladder[i])
        m = int(counts[i])
        rows = rngs[i].integers(0, n - i, size=m)
        slots = np.arange(m)
        new_pos[i], accepted[i], selected[i] = _chain_update(
            tempered, config, snapshot[i], rngs[i], bank, snapshot, slots, rows, None, diag
        )
    return PopulationState(new_pos, snapshot, selected, accepted, pop.iteration + 1)


def aimtm2_step(pop, base_target, ladder, config, rngs, diag=None):
    """Annealed population with one multiple-try chain fed by plain
    Metropolis-Hastings auxiliaries.

    The first chain targets the base density with one anchored trial slot per
    auxiliary kernel; each slot borrows the matching auxiliary's random-walk
    covariance and anchors at a population row drawn uniformly over all of
    ``{0, ..., n-1}`` (itself included). Chains 1..n-1 are random-walk MH on
    their tempered targets and never look at each other.
    """
    snapshot = np.array(pop.positions, copy=True)
    n = config.n_chains
    new_pos = snapshot.copy()
    accepted = np.zeros(n, dtype=bool)
    selected = np.zeros(n, dtype=int)

    m = n - 1
    bank = GaussianSlotBank(config.kernels, anchored=True)
    rows = rngs[0].integers(0, n, size=m)
    slots = np.arange(m)
    new_pos[0], accepted[0], selected[0] = _bank_transition(
        base_target, bank, config.policy, snapshot[0], rngs[0], slots, snapshot[rows], None, diag
    )
    for i in range(1, n):
        tempered = TemperedTarget(base_target, ladder[i]) if ladder[i] != 1.0 else base_target
        new_pos[i], accepted[i] = mh_step(tempered, config.kernels[i - 1], snapshot[i], rngs[i])
    return PopulationState(new_pos, snapshot, selected, accepted, pop.iteration + 1)


# ---------------------------------------------------------------------------
# random-ray population step


def _gradient_direction_rows(target, points):
    """Unit gradient directions row by row; zero rows mark dead gradients."""
    out = np.zeros_like(points)
    for i, p in enumerate(points):
        try:
            d = fallback_direction(target, p)
        except DegenerateDirectionError:
            d = None
        if d is not None:
            out[i] = d
    return out


def _line_search_rays(target, x, u, active, tol=1e-2, max_radius=1e6, max_rounds=200):
    """Golden-section mode search along ``x[i] + r * u[i]`` for every row.

    Returns ``(radii, ok)``; rows whose bracket escapes ``max_radius`` keep
    the best radius seen with ``ok = False``, inactive rows return 0.
    """
    n = x.shape[0]

    def g(r):
        return _log_density_rows(target, x + r[:, None] * u)

    lo, mid, hi = np.full(n, -1.0), np.zeros(n), np.full(n, 1.0)
    g_lo, g_mid, g_hi = g(lo), g(mid), g(hi)
    ok = active.copy()
    for _ in range(max_rounds):
        need = active & ok & ~((g_mid >= g_lo) & (g_mid >= g_hi))
        if not need.any():
            break
        up = need & (g_hi >= g_lo)
        down = need & ~up
        n_lo = np.where(up, mid, np.where(down, lo - 2.0 * (mid - lo), lo))
        n_mid = np.where(up, hi, np.where(down, lo, mid))
        n_hi = np.where(up, hi + 2.0 * (hi - mid), np.where(down, mid, hi))
        n_glo = np.where(up, g_mid, g_lo)
        n_gmid = np.where(up, g_hi, np.where(down, g_lo, g_mid))
        n_ghi = np.where(down, g_mid, g_hi)
        lo, mid, hi = n_lo, n_mid, n_hi
        g_lo, g_mid, g_hi = n_glo, n_gmid, n_ghi
        fresh = g(np.where(down, lo, hi))
        g_hi = np.where(up, fresh, g_hi)
        g_lo = np.where(down, fresh, g_lo)
        escaped = need & ((np.abs(hi) > max_radius) | (np.abs(lo) > max_radius))
        if escaped.any():
            best = np.argmax(np.stack([g_lo, g_mid, g_hi]), axis=0)
            mid = np.where(escaped, np.choose(best, [lo, mid, hi]), mid)
            ok &= ~escaped
    leftovers = active & ok & ~((g_mid >= g_lo) & (g_mid >= g_hi))
    if leftovers.any():
        best = np.argmax(np.stack([g_lo, g_mid, g_hi]), axis=0)
        mid = np.where(leftovers, np.choose(best, [lo, mid, hi]), mid)
        ok &= ~leftovers

    live = active & ok
    a = np.where(live, lo, mid)
    b = np.where(live, hi, mid)
    for _ in range(max_rounds):
        if not np.any((b - a) > tol):
            break
        r1 = b - _INVPHI * (b - a)
        r2 = a + _INVPHI * (b - a)
        f1, f2 = g(r1), g(r2)
        left = f1 >= f2
        b = np.where(live & left, r2, b)
        a = np.where(live & ~left, r1, a)
    radius = 0.5 * (a + b)
    return np.where(active, radius, 0.0), ok


def _anchor_rows_matrix(rng, n, m):
    rows = rng.integers(0, n - 1, size=(n, m))
    return rows + (rows >= np.arange(n)[:, None])


def _ratio_rows(w_fwd, w_ref, diag=None, reference_log_scale=0.0):
    """Row-wise generalized acceptance ratios with the scalar conventions:
    a dead forward sum rejects, a dead reference sum (forward alive) accepts."""
    lf = logsumexp(w_fwd, axis=-1)
    lr = logsumexp(w_ref, axis=-1) + reference_log_scale
    dead = np.isneginf(lf)
    degen = np.isneginf(lr) & ~dead
    if diag is not None and np.any(degen):
        diag.degenerate_ratios += int(np.count_nonzero(degen))
    with np.errstate(invalid="ignore"):
        rho = np.exp(np.minimum(0.0, lf - lr))
    rho = np.where(dead, 0.0, rho)
    return np.where(degen, 1.0, rho)


def random_ray_step(pop, target, config, rng, diag=None):
    """Population transition whose trials slide along mode-seeking rays.

    Each chain maximizes the target along its own displacement direction
    (falling back to the gradient when it has not moved), then points one ray
    from that line maximum toward each of ``n_trials`` randomly chosen other
    chains and runs a multiple-try decision over one-dimensional Gaussian
    radii. The radius density is even in the radius, so the forward and
    reverse kernel densities coincide slot by slot. A chain with no usable
    direction — or any slot whose anchor still coincides with the line
    maximum after ten redraws — holds for the iteration.

    The whole population shares one ``rng``: ray geometry couples the chains,
    so there is no per-chain stream contract here.
    """
    n, d = pop.positions.shape
    counts = config.trial_counts()
    m = int(counts[0])
    snapshot = np.array(pop.positions, copy=True)
    x = snapshot
    scale = float(config.ray_scale)

    u = x - pop.previous
    norms = np.linalg.norm(u, axis=1)
    moved = norms > 1e-12
    dirs = np.zeros_like(u)
    dirs[moved] = u[moved] / norms[moved, None]
    if np.any(~moved):
        dirs[~moved] = _gradient_direction_rows(target, x[~moved])
    alive = np.linalg.norm(dirs, axis=1) > 0.0

    radii, _ = _line_search_rays(target, x, dirs, alive)
    modes = x + radii[:, None] * dirs

    rows = _anchor_rows_matrix(rng, n, m)
    rays = modes[:, None, :] - snapshot[rows]
    ray_norms = np.linalg.norm(rays, axis=2)
    for _ in range(10):
        degenerate = alive[:, None] & (ray_norms < 1e-12)
        if not degenerate.any():
            break
        idx = np.nonzero(degenerate)
        redraw = rng.integers(0, n - 1, size=idx[0].size)
        redraw = redraw + (redraw >= idx[0])
        rows[idx] = redraw
        rays[idx] = modes[idx[0]] - snapshot[redraw]
        ray_norms[idx] = np.linalg.norm(rays[idx], axis=1)
    alive &= ~((ray_norms < 1e-12).any(axis=1))
    safe = np.where(ray_norms > 0, ray_norms, 1.0)
    rays = rays / safe[..., None]

    sd = np.sqrt(scale)
    r_fwd = rng.normal(0.0, sd, size=(n, m))
    trials = x[:, None, :] + r_fwd[..., None] * rays
    lp = _log_density_rows(target, trials.reshape(-1, d)).reshape(n, m)
    t_sym = -0.5 * (np.log(2.0 * np.pi * scale) + r_fwd * r_fwd / scale)
    lam = config.policy.log_lambda(t_sym, t_sym, diag=diag)
    w_fwd = _combine_weight(lp, t_sym, lam)
    w_fwd = np.where(alive[:, None], w_fwd, -np.inf)

    sel, stuck = select_trial_batch(rng, w_fwd)
    hold = ~alive | stuck
    if diag is not None:
        diag.stuck_selections += int(np.count_nonzero(stuck & alive))
    every = np.arange(n)
    y = trials[every, sel]

    r_ref = rng.normal(0.0, sd, size=(n, m))
    refs = y[:, None, :] + r_ref[..., None] * rays
    rad = r_ref.copy()
    rad[every, sel] = r_fwd[every, sel]
    refs[every, sel] = x
    lp_ref = _log_density_rows(target, refs.reshape(-1, d)).reshape(n, m)
    t_ref = -0.5 * (np.log(2.0 * np.pi * scale) + rad * rad / scale)
    lam_ref = config.policy.log_lambda(t_ref, t_ref, diag=diag)
    w_ref = _combine_weight(lp_ref, t_ref, lam_ref)

    rho = _ratio_rows(w_fwd, w_ref, diag)
    accept = (rng.random(n) < rho) & ~hold
    new_pos = np.where(accept[:, None], y, x)
    return PopulationState(new_pos, snapshot, np.where(hold, 0, sel), accept, pop.iteration + 1)


# ---------------------------------------------------------------------------
# annealed importance pooling


@dataclass(frozen=True)
class AnnealEstimate:
    """A pooled-ladder expectation and how many iterations were unusable."""

    value: float
    skipped: int


def anneal_estimate(target, positions, ladder, h):
    """Pooled estimate of ``E_pi[h]`` from one aligned draw per ladder rung.

    ``positions`` stacks the rung trajectories as ``(n_rungs, n_iters, dim)``
    (a 2-d array is read as scalar positions). Iteration t contributes the
    self-normalized average of ``h`` over the rungs, each rung reweighted by
    ``pi(x) ** (1 - exponent)`` to correct it back to the target; iterations
    whose weights all vanish are skipped and counted. With ``h = 1`` the
    numerator and denominator share every term, so the estimate is exactly 1.
    """
    pos = np.asarray(positions, dtype=float)
    if pos.ndim == 2:
        pos = pos[:, :, None]
    if pos.ndim != 3:
        raise DimensionMismatchError(f"expected (n_rungs, n_iters, dim) positions, got shape {pos.shape}")
    n_rungs, n_iters, _ = pos.shape
    if n_rungs != len(ladder):
        raise DimensionMismatchError(f"{n_rungs} trajectories for a {len(ladder)}-rung ladder")
    if n_iters == 0:
        raise InvalidParameterError("no iterations to pool")

    log_w = np.empty((n_rungs, n_iters))
    hv = np.empty((n_rungs, n_iters))
    for j, exponent in enumerate(ladder):
        if exponent == 1.0:
            log_w[j] = 0.0
        else:
            lp = _log_density_rows(target, pos[j])
            with np.errstate(invalid="ignore"):
                log_w[j] = (1.0 - exponent) * lp
        hv[j] = [float(h(p)) for p in pos[j]]

    shift = np.max(log_w, axis=0)
    usable = np.isfinite(shift)
    skipped = int(np.count_nonzero(~usable))
    if not usable.any():
        raise InvalidParameterError("every iteration had zero total weight")
    w = np.exp(log_w[:, usable] - shift[usable])
    num = np.sum(hv[:, usable] * w, axis=0)
    den = np.sum(w, axis=0)
    return AnnealEstimate(value=float(np.mean(num / den)), skipped=skipped)


# ---------------------------------------------------------------------------
# finite-state batch engines (exhaustive transition tests run millions of
# replicas; these precompute every pairwise quantity once)


class GridBatchMtm:
    """Multiple-try transitions for many replicas of a finite-state chain.

    All per-pair quantities live in tables indexed ``[slot, from, to]``, so a
    step reduces to categorical draws plus gathers. ``reference_log_scale``
    is added to the log reference sum of the acceptance ratio; planting
    ``log(2)`` there is how the flow tests inject a known reversibility
    violation with everything else held fixed.
    """

    def __init__(self, target, kernels, policy, reference_log_scale=0.0):
        if policy.population_weighted:
            raise InvalidParameterError(
                "population-weighted lambda needs per-replica trackers; use the scalar step"
            )
        for k in kernels:
            if not isinstance(k, GridRWProposal):
                raise InvalidParameterError("grid batch stepping needs grid proposal kernels")
        self.target = target
        self.kernels = list(kernels)
        self.policy = policy
        self.reference_log_scale = float(reference_log_scale)
        self.n_states = target.n_states
        self.m = len(self.kernels)

        log_t = np.stack([k.log_matrix for k in self.kernels])  # [slot, from, to]
        log_t_rev = np.swapaxes(log_t, 1, 2)
        slot_idx = np.broadcast_to(np.arange(self.m)[:, None, None], log_t.shape)
        lam = policy.log_lambda(log_t, log_t_rev, slot=slot_idx)
        self.weight_table = target.log_probs[None, None, :] + log_t_rev + lam
        self.cum = np.cumsum(np.stack([k.matrix for k in self.kernels]), axis=2)

    def step(self, rng, states, diag=None):
        """Advance every replica once; returns ``(states, accepted, selected)``."""
        states = np.asarray(states, dtype=int)
        b = states.size
        every = np.arange(b)
        slot_axis = np.arange(self.m)[:, None]

        rows = self.cum[:, states, :]  # [slot, replica, to]
        u = rng.random((self.m, b)) * rows[:, :, -1]
        cand = (rows > u[:, :, None]).argmax(axis=2)
        w_fwd = self.weight_table[slot_axis, states[None, :], cand].T

        sel, stuck = select_trial_batch(rng, w_fwd)
        if diag is not None:
            diag.stuck_selections += int(np.count_nonzero(stuck))
        y = cand[sel, every]

        rows_ref = self.cum[:, y, :]
        u_ref = rng.random((self.m, b)) * rows_ref[:, :, -1]
        cand_ref = (rows_ref > u_ref[:, :, None]).argmax(axis=2)
        cand_ref[sel, every] = states
        w_ref = self.weight_table[slot_axis, y[None, :], cand_ref].T

        rho = _ratio_rows(w_fwd, w_ref, diag, self.reference_log_scale)
        accept = (rng.random(b) < rho) & ~stuck
        return np.where(accept, y, states), accept, sel


class GridBatchMh:
    """Metropolis-Hastings analogue of :class:`GridBatchMtm`: one categorical
    proposal per replica and a precomputed log-ratio table."""

    def __init__(self, target, kernel):
        if not isinstance(kernel, GridRWProposal):
            raise InvalidParameterError("grid batch stepping needs a grid proposal kernel")
        self.target = target
        self.kernel = kernel
        lp = target.log_probs
        log_t = kernel.log_matrix
        self.ratio_table = lp[None, :] + log_t.T - lp[:, None] - log_t
        self.cum = np.cumsum(kernel.matrix, axis=1)

    def step(self, rng, states):
        states = np.asarray(states, dtype=int)
        b = states.size
        rows = self.cum[states]
        u = rng.random(b) * rows[:, -1]
        cand = (rows > u[:, None]).argmax(axis=1)
        log_r = self.ratio_table[states, cand]
        accept = rng.random(b) < np.exp(np.minimum(0.0, log_r))
        return np.where(accept, cand, states), accept


# ---------------------------------------------------------------------------
# stochastic volatility: interacting trials inside a Gibbs sweep


@dataclass
class SvPopulationState:
    """Latent log-volatility paths and parameters for a population of chains."""

    h: np.ndarray        # (n_chains, series_length)
    phi: np.ndarray      # (n_chains,)
    sigma2: np.ndarray   # (n_chains,)
    beta2: np.ndarray    # (n_chains,)

    @property
    def n_chains(self) -> int:
        return self.h.shape[0]


@dataclass
class SvSweepDiagnostics:
    """Counters one Gibbs sweep (or a whole run) accumulates."""

    overflow_holds: int = 0
    phi_accepts: int = 0
    phi_moves: int = 0
    h_accepts: int = 0
    h_moves: int = 0
    weights: WeightDiagnostics = field(default_factory=WeightDiagnostics)


def _norm_logpdf(x, mean, sd):
    z = (x - mean) / sd
    return -0.5 * (_LOG_2PI + z * z) - np.log(sd)


def _sv_phi_logdens(phi, mid_sq, cross, sigma2):
    """Autoregression-coefficient conditional, vectorized over any phi shape.

    Matches ``targets.sv_phi_log_density`` with the path statistics
    ``mid_sq = sum(h[1:-1]^2)`` and ``cross = sum(h[1:] * h[:-1])`` hoisted
    out so a whole population broadcasts through at once.
    """
    phi = np.asarray(phi, dtype=float)
    inside = np.abs(phi) < 1.0
    p = np.where(inside, phi, 0.0)
    val = 0.5 * np.log1p(-p * p) - p * p * mid_sq / (2.0 * sigma2) + p * cross / sigma2
    return np.where(inside, val, -np.inf)


def _sv_site_logdens(v, y_site, h_prev, h_next, first, last, phi, sigma2, beta2):
    """Single-site log-volatility conditional, vectorized over sites/chains.

    Matches ``targets.sv_h_site_log_density`` (zero drift): the first site
    carries the stationary prior factor ``1 - phi^2`` and the last site has
    no successor term.
    """
    left = np.where(first, (1.0 - phi * phi) * v * v, (v - phi * h_prev) ** 2)
    quad = left + np.where(last, 0.0, (h_next - phi * v) ** 2)
    with np.errstate(over="ignore"):
        like = y_site * y_site * np.exp(-v) / beta2
    out = -quad / (2.0 * sigma2) - 0.5 * v - 0.5 * like
    return np.where(np.isfinite(out), out, -np.inf)


def _sv_conditional_scales(y, h, phi):
    """Inverse-gamma shape/scale pairs for the beta2 and sigma2 draws, one
    chain per row (the row-wise analogue of the scalar helpers)."""
    t = y.size
    shape = 0.5 * (t - 1)
    b_scale = 0.5 * np.einsum("t,nt->n", y * y, np.exp(-h))
    resid = h[:, 1:] - phi[:, None] * h[:, :-1]
    s_scale = 0.5 * np.einsum("nt,nt->n", resid, resid) + h[:, 0] ** 2 * (1.0 - phi**2)
    return shape, b_scale, shape, s_scale


def _ig_rows(rng, shape, scale, old, diag):
    """Exact inverse-gamma draws per chain; rows whose scale (or draw) is not
    a positive finite number keep their previous value and are counted."""
    g = rng.gamma(shape, 1.0, size=scale.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = scale / g
    bad = ~np.isfinite(val) | ~np.isfinite(scale) | (scale <= 0) | (val <= 0)
    if bad.any():
        diag.overflow_holds += int(np.count_nonzero(bad))
    return np.where(bad, old, val)


def _anchor_rows_nd(rng, n, shape, chain_index):
    rows = rng.integers(0, n - 1, size=shape)
    return rows + (rows >= chain_index)


def _sv_phi_update(phi, h, sigma2, rng, m, policy, scale, diag):
    """Interacting multiple-try update of every chain's autoregression
    coefficient; trial slots anchor at other chains' current coefficients."""
    n = phi.size
    mid_sq = np.einsum("nt,nt->n", h[:, 1:-1], h[:, 1:-1])[:, None]
    cross = np.einsum("nt,nt->n", h[:, 1:], h[:, :-1])[:, None]
    s2 = sigma2[:, None]

    rows = _anchor_rows_nd(rng, n, (n, m), np.arange(n)[:, None])
    anchors = phi[rows]
    trials = anchors + scale * rng.standard_normal((n, m))
    t_fwd = _norm_logpdf(trials, anchors, scale)
    t_cur = _norm_logpdf(phi[:, None], anchors, scale)
    lp = _sv_phi_logdens(trials, mid_sq, cross, s2)
    lam = policy.log_lambda(t_fwd, t_cur, diag=diag.weights)
    w_fwd = _combine_weight(lp, t_cur, lam)

    sel, stuck = select_trial_batch(rng, w_fwd)
    diag.weights.stuck_selections += int(np.count_nonzero(stuck))
    every = np.arange(n)
    y = trials[every, sel]

    refs = anchors + scale * rng.standard_normal((n, m))
    refs[every, sel] = phi
    t_ref = _norm_logpdf(refs, anchors, scale)
    t_y = _norm_logpdf(y[:, None], anchors, scale)
    lp_ref = _sv_phi_logdens(refs, mid_sq, cross, s2)
    lam_ref = policy.log_lambda(t_ref, t_y, diag=diag.weights)
    w_ref = _combine_weight(lp_ref, t_y, lam_ref)

    rho = _ratio_rows(w_fwd, w_ref, diag.weights)
    accept = ((rng.random(n) < rho) & ~stuck)
    diag.phi_accepts += int(np.count_nonzero(accept))
    diag.phi_moves += n
    return np.where(accept, y, phi)


def _sv_site_blocks(h, sites, y, phi, sigma2, beta2):
    """Neighbour values, observation row, and edge masks for a parity block,
    shaped to broadcast against (n_chains, n_sites, n_trials) trial arrays."""
    t = h.shape[1]
    return dict(
        y_site=y[sites][None, :, None],
        h_prev=h[:, np.maximum(sites - 1, 0)][:, :, None],
        h_next=h[:, np.minimum(sites + 1, t - 1)][:, :, None],
        first=(sites == 0)[None, :, None],
        last=(sites == t - 1)[None, :, None],
        phi=phi[:, None, None],
        sigma2=sigma2[:, None, None],
        beta2=beta2[:, None, None],
    )


def _sv_h_phase_imtm(h, parity, y, phi, sigma2, beta2, rng, m, policy, scale, diag):
    """One checkerboard phase of interacting multiple-try site updates.

    Sites of one parity are conditionally independent given the other parity,
    so the whole block updates in a single batch; trial slots anchor at other
    chains' values of the same site, frozen at the phase start.
    """
    n, t = h.shape
    sites = np.arange(parity, t, 2)
    k = sites.size
    cur = h[:, sites].copy()
    blocks = _sv_site_blocks(h, sites, y, phi, sigma2, beta2)

    rows = _anchor_rows_nd(rng, n, (n, k, m), np.arange(n)[:, None, None])
    anchors = cur[rows, np.arange(k)[None, :, None]]
    trials = anchors + scale * rng.standard_normal((n, k, m))
    t_fwd = _norm_logpdf(trials, anchors, scale)
    t_cur = _norm_logpdf(cur[:, :, None], anchors, scale)
    lp = _sv_site_logdens(trials, **blocks)
    lam = policy.log_lambda(t_fwd, t_cur, diag=diag.weights)
    w_fwd = _combine_weight(lp, t_cur, lam).reshape(n * k, m)

    sel, stuck = select_trial_batch(rng, w_fwd)
    diag.weights.stuck_selections += int(np.count_nonzero(stuck))
    flat = np.arange(n * k)
    y_sel = trials.reshape(n * k, m)[flat, sel].reshape(n, k)

    refs = anchors + scale * rng.standard_normal((n, k, m))
    refs_flat = refs.reshape(n * k, m)
    refs_flat[flat, sel] = cur.reshape(n * k)
    t_ref = _norm_logpdf(refs, anchors, scale)
    t_y = _norm_logpdf(y_sel[:, :, None], anchors, scale)
    lp_ref = _sv_site_logdens(refs, **blocks)
    lam_ref = policy.log_lambda(t_ref, t_y, diag=diag.weights)
    w_ref = _combine_weight(lp_ref, t_y, lam_ref).reshape(n * k, m)

    rho = _ratio_rows(w_fwd, w_ref, diag.weights)
    accept = ((rng.random(n * k) < rho) & ~stuck).reshape(n, k)
    diag.h_accepts += int(np.count_nonzero(accept))
    diag.h_moves += n * k
    h[:, sites] = np.where(accept, y_sel, cur)


def imtm_within_gibbs_step(y, state, rng, n_trials, policy, phi_scale, h_scale, diag):
    """One Gibbs sweep over (beta2, sigma2, phi, h) for a chain population.

    The conjugate coordinates are exact inverse-gamma draws; the awkward ones
    (phi and each log-volatility site) get interacting multiple-try updates
    whose trial slots anchor at other chains' current values. Sites update in
    two checkerboard phases, so within a phase the block is one batched
    decision per chain.
    """
    y = np.asarray(y, dtype=float)
    shape_b, b_scale, shape_s, s_scale = _sv_conditional_scales(y, state.h, state.phi)
    beta2 = _ig_rows(rng, shape_b, b_scale, state.beta2, diag)
    sigma2 = _ig_rows(rng, shape_s, s_scale, state.sigma2, diag)
    phi = _sv_phi_update(state.phi, state.h, sigma2, rng, n_trials, policy, phi_scale, diag)
    h = state.h.copy()
    _sv_h_phase_imtm(h, 0, y, phi, sigma2, beta2, rng, n_trials, policy, h_scale, diag)
    _sv_h_phase_imtm(h, 1, y, phi, sigma2, beta2, rng, n_trials, policy, h_scale, diag)
    return SvPopulationState(h, phi, sigma2, beta2)


def mh_within_gibbs_step(y, state, rng, phi_scale, h_scale, diag):
    """The random-walk comparator sweep: identical conjugate draws, plain
    Metropolis updates for phi and the checkerboard site blocks."""
    y = np.asarray(y, dtype=float)
    n, t = state.h.shape
    shape_b, b_scale, shape_s, s_scale = _sv_conditional_scales(y, state.h, state.phi)
    beta2 = _ig_rows(rng, shape_b, b_scale, state.beta2, diag)
    sigma2 = _ig_rows(rng, shape_s, s_scale, state.sigma2, diag)

    mid_sq = np.einsum("nt,nt->n", state.h[:, 1:-1], state.h[:, 1:-1])
    cross = np.einsum("nt,nt->n", state.h[:, 1:], state.h[:, :-1])
    phi = state.phi
    cand = phi + phi_scale * rng.standard_normal(n)
    log_r = _sv_phi_logdens(cand, mid_sq, cross, sigma2) - _sv_phi_logdens(phi, mid_sq, cross, sigma2)
    accept = rng.random(n) < np.exp(np.minimum(0.0, log_r))
    diag.phi_accepts += int(np.count_nonzero(accept))
    diag.phi_moves += n
    phi = np.where(accept, cand, phi)

    h = state.h.copy()
    for parity in (0, 1):
        sites = np.arange(parity, t, 2)
        blocks = _sv_site_blocks(h, sites, y, phi, sigma2, beta2)
        cur = h[:, sites]
        cand = cur + h_scale * rng.standard_normal(cur.shape)
        log_r = (
            _sv_site_logdens(cand[:, :, None], **blocks)[:, :, 0]
            - _sv_site_logdens(cur[:, :, None], **blocks)[:, :, 0]
        )
        accept = rng.random(cur.shape) < np.exp(np.minimum(0.0, log_r))
        diag.h_accepts += int(np.count_nonzero(accept))
        diag.h_moves += accept.size
        h[:, sites] = np.where(accept, cand, cur)
    return SvPopulationState(h, phi, sigma2, beta2)


@dataclass
class SvGibbsResult:
    """Parameter traces (rows are sweeps, columns chains), the pooled
    post-burn-in log-volatility mean, and sweep statistics."""

    phi: np.ndarray
    sigma2: np.ndarray
    beta2: np.ndarray
    h_mean: np.ndarray
    burn_in: int
    phi_accept_rate: float
    h_accept_rate: float
    diagnostics: SvSweepDiagnostics

    def posterior_means(self) -> dict:
        keep = slice(self.burn_in + 1, None)
        return {
            "phi": float(np.mean(self.phi[keep])),
            "sigma2": float(np.mean(self.sigma2[keep])),
            "beta2": float(np.mean(self.beta2[keep])),
        }


def _sv_initial_state(seed, n_chains, t):
    """Overdispersed start, drawn chain by chain so the first chain's values
    do not depend on how many chains follow it (the comparator runs fewer)."""
    rng = RngStream(seed, 0)
    h = np.empty((n_chains, t))
    phi = np.empty(n_chains)
    sigma2 = np.empty(n_chains)
    beta2 = np.empty(n_chains)
    for i in range(n_chains):
        h[i] = rng.standard_normal(t)
        phi[i] = rng.uniform(-0.5, 0.5)
        sigma2[i] = rng.uniform(0.05, 0.5)
        beta2[i] = rng.uniform(0.5, 2.0)
    return SvPopulationState(h, phi, sigma2, beta2)


def _sv_gibbs_run(y, n_chains, iterations, seed, burn_in, sweep):
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.size < 3:
        raise InvalidParameterError("need a one-dimensional series of length >= 3")
    if burn_in is None:
        burn_in = iterations // 2
    if not 0 <= burn_in < iterations:
        raise InvalidParameterError(f"burn_in must lie in [0, iterations), got {burn_in}")
    state = _sv_initial_state(seed, n_chains, y.size)
    rng = RngStream(seed, 1)
    diag = SvSweepDiagnostics()
    phi = np.empty((iterations + 1, n_chains))
    sigma2 = np.empty((iterations + 1, n_chains))
    beta2 = np.empty((iterations + 1, n_chains))
    phi[0], sigma2[0], beta2[0] = state.phi, state.sigma2, state.beta2
    h_sum = np.zeros(y.size)
    kept = 0
    for r in range(1, iterations + 1):
        state = sweep(state, rng, diag)
        phi[r], sigma2[r], beta2[r] = state.phi, state.sigma2, state.beta2
        if r > burn_in:
            h_sum += state.h.sum(axis=0)
            kept += n_chains
    return SvGibbsResult(
        phi=phi,
        sigma2=sigma2,
        beta2=beta2,
        h_mean=h_sum / kept,
        burn_in=burn_in,
        phi_accept_rate=diag.phi_accepts / max(diag.phi_moves, 1),
        h_accept_rate=diag.h_accepts / max(diag.h_moves, 1),
        diagnostics=diag,
    )


def sv_imtm_gibbs(y, n_chains, n_trials, iterations, seed, phi_scale=0.15,
                  h_scale=0.6, burn_in=None, policy=None):
    """Population Gibbs run with interacting multiple-try phi/site updates."""
    if n_chains < 2:
        raise ConfigValidationError(
            ["interacting trial slots anchor at other chains and need n_chains >= 2"]
        )
    if n_trials < 1:
        raise ConfigValidationError(["n_trials must be at least 1"])
    policy = LambdaPolicy.power_product(1.0) if policy is None else policy

    def sweep(state, rng, diag):
        return imtm_within_gibbs_step(
            y, state, rng, n_trials=n_trials, policy=policy,
            phi_scale=phi_scale, h_scale=h_scale, diag=diag,
        )

    return _sv_gibbs_run(y, n_chains, iterations, seed, burn_in, sweep)


def sv_mh_gibbs(y, iterations, seed, n_chains=1, phi_scale=0.15, h_scale=0.6, burn_in=None):
    """Single-site random-walk comparator for the same Gibbs decomposition."""

    def sweep(state, rng, diag):
        return mh_within_gibbs_step(y, state, rng, phi_scale=phi_scale, h_scale=h_scale, diag=diag)

    return _sv_gibbs_run(y, n_chains, iterations, seed, burn_in, sweep)


# ---------------------------------------------------------------------------
# initialization, traces, and the run driver


def _kernel_scale(kernel):
    cov = getattr(kernel, "cov", None)
    if cov is not None:
        return float(np.sqrt(np.max(np.diag(cov.matrix))))
    if isinstance(kernel, MixtureRWProposal):
        return max(float(np.sqrt(np.max(np.diag(c.matrix)))) for c in kernel.covs)
    if isinstance(kernel, GridRWProposal):
        return float(kernel.sigma)
    if isinstance(kernel, RayProposal):
        return float(np.sqrt(kernel.scale))
    return 1.0


def initial_population(target, config, rng):
    """Overdispersed starting positions: uniform over a declared support box
    or a finite state set when the target has one, otherwise a Gaussian cloud
    ten proposal scales wide (overridable via init_center/init_scale)."""
    n = config.n_chains
    box = getattr(target, "support_box", None)
    if callable(box):
        lo, hi = box()
        return lo + (hi - lo) * rng.random((n, lo.size))
    if isinstance(target, GridTarget):
        idx = rng.integers(0, target.n_states, size=n)
        return target.positions[idx][:, None]
    dim = config.kernels[0].dim if config.kernels else target.dim
    center = np.zeros(dim) if config.init_center is None else np.asarray(config.init_center, dtype=float)
    if center.shape != (dim,):
        raise DimensionMismatchError(f"init_center must be a {dim}-vector, got shape {center.shape}")
    if config.init_scale is not None:
        scale = float(config.init_scale)
    elif config.kernels:
        scale = 10.0 * max(_kernel_scale(k) for k in config.kernels)
    else:
        scale = 10.0 * float(np.sqrt(config.ray_scale))
    return center + scale * rng.standard_normal((n, dim))


@dataclass
class ChainTrace:
    """A recorded run: row r of every array is the state after r iterations
    (row 0 is the initial population, flagged unaccepted with slot 0)."""

    positions: np.ndarray          # (iterations + 1, n_chains, dim)
    accepted: np.ndarray           # (iterations + 1, n_chains)
    selected: np.ndarray           # (iterations + 1, n_chains)
    nu: np.ndarray | None = None   # (iterations + 1, n_families) when tracked
    diagnostics: WeightDiagnostics = field(default_factory=WeightDiagnostics)

    @property
    def n_iterations(self) -> int:
        return self.positions.shape[0] - 1

    @property
    def n_chains(self) -> int:
        return self.positions.shape[1]

    @property
    def dim(self) -> int:
        return self.positions.shape[2]

    def chain(self, i: int) -> np.ndarray:
        return self.positions[:, i, :]

    def pooled(self, burn_in: int = 0) -> np.ndarray:
        """All post-burn-in positions flattened to (draws, dim)."""
        return self.positions[burn_in:].reshape(-1, self.dim)

    def acceptance_rate(self) -> float:
        if self.n_iterations == 0:
            return 0.0
        return float(np.mean(self.accepted[1:]))


def write_trace_csv(trace, path):
    """Persist a trace as CSV: one row per (iteration, chain), iteration-major,
    17 significant digits, written atomically via a temporary sibling."""
    path = os.fspath(path)
    header = "iter,chain,accepted,J," + ",".join(f"x_{k}" for k in range(1, trace.dim + 1))
    tmp = path + ".tmp"
    try:
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(header + "\n")
            for r in range(trace.positions.shape[0]):
                for c in range(trace.n_chains):
                    coords = ",".join("%.17g" % v for v in trace.positions[r, c])
                    fh.write(f"{r},{c},{int(trace.accepted[r, c])},{int(trace.selected[r, c])},{coords}\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_trace_csv(path):
    """Load a trace written by :func:`write_trace_csv`, validating the header,
    every row's shape and finiteness, and the iteration-major layout; errors
    name the offending file line."""
    with open(os.fspath(path), encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    while lines and not lines[-1]:
        lines.pop()
    if not lines:
        raise InvalidParameterError("trace file is empty")
    cols = lines[0].split(",")
    if len(cols) < 5 or cols[:4] != ["iter", "chain", "accepted", "J"]:
        raise InvalidParameterError(f"unexpected trace header: {lines[0]!r}")
    for k, name in enumerate(cols[4:], start=1):
        if name != f"x_{k}":
            raise InvalidParameterError(f"unexpected trace header: {lines[0]!r}")
    dim = len(cols) - 4

    records = []
    for num, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != len(cols):
            raise InvalidParameterError(f"trace row {num}: expected {len(cols)} fields, got {len(parts)}")
        try:
            it, ch, acc, sel = (int(parts[i]) for i in range(4))
            xs = [float(v) for v in parts[4:]]
        except ValueError:
            raise InvalidParameterError(f"trace row {num}: unparseable field") from None
        if not all(np.isfinite(x) for x in xs):
            raise InvalidParameterError(f"trace row {num}: non-finite position")
        records.append((it, ch, acc, sel, xs, num))
    if not records:
        raise InvalidParameterError("trace file has no data rows")

    n_chains = max(r[1] for r in records) + 1
    n_rows = max(r[0] for r in records) + 1
    if len(records) != n_rows * n_chains:
        raise InvalidParameterError(
            f"trace holds {len(records)} rows; {n_rows} iterations x {n_chains} chains needs "
            f"{n_rows * n_chains}"
        )
    positions = np.empty((n_rows, n_chains, dim))
    accepted = np.zeros((n_rows, n_chains), dtype=int)
    selected = np.zeros((n_rows, n_chains), dtype=int)
    for k, (it, ch, acc, sel, xs, num) in enumerate(records):
        if it != k // n_chains or ch != k % n_chains:
            raise InvalidParameterError(
                f"trace row {num}: expected iteration {k // n_chains} chain {k % n_chains}, "
                f"got {it}/{ch}"
            )
        positions[it, ch] = xs
        accepted[it, ch] = acc
        selected[it, ch] = sel
    return ChainTrace(positions, accepted, selected)


def _single_chain_stepper(config, target, rngs, diag):
    kernel = config.kernels[0] if config.kernels else None
    m = int(config.trial_counts()[0])
    n = config.n_chains

    if config.algorithm == "mh":
        def advance(pop):
            new = pop.positions.copy()
            acc = np.zeros(n, dtype=bool)
            for i in range(n):
                new[i], acc[i] = mh_step(target, kernel, pop.positions[i], rngs[i])
            return PopulationState(new, pop.positions.copy(), np.zeros(n, dtype=int),
                                   acc, pop.iteration + 1)
        return advance

    slot_kernels = [kernel] * m if config.algorithm == "mtm" else list(config.kernels)
    bank = _try_bank(slot_kernels)
    if bank is not None and not bank.anchored:
        slots = np.arange(m)

        def advance(pop):
            new = pop.positions.copy()
            acc = np.zeros(n, dtype=bool)
            sel = np.zeros(n, dtype=int)
            for i in range(n):
                new[i], acc[i], sel[i] = _bank_transition(
                    target, bank, config.policy, pop.positions[i], rngs[i], slots, None,
                    diag=diag,
                )
            return PopulationState(new, pop.positions.copy(), sel, acc, pop.iteration + 1)
        return advance

    if config.algorithm == "mtm":
        def advance(pop):
            new = pop.positions.copy()
            acc = np.zeros(n, dtype=bool)
            sel = np.zeros(n, dtype=int)
            for i in range(n):
                new[i], acc[i], sel[i] = mtm_step(target, kernel, m, config.policy,
                                                  pop.positions[i], rngs[i], diag)
            return PopulationState(new, pop.positions.copy(), sel, acc, pop.iteration + 1)
        return advance

    def advance(pop):
        new = pop.positions.copy()
        acc = np.zeros(n, dtype=bool)
        sel = np.zeros(n, dtype=int)
        for i in range(n):
            new[i], acc[i], sel[i] = mtm_dp_step(target, config.kernels, config.policy,
                                                 pop.positions[i], rngs[i], diag)
        return PopulationState(new, pop.positions.copy(), sel, acc, pop.iteration + 1)
    return advance


def run(config, target) -> ChainTrace:
    """Validate the config, seed the streams, and record a full trace.

    Stream layout: chain i reads stream i, initialization reads stream
    n_chains, and population-coupled algorithms (random rays) read stream
    n_chains + 1. Single-chain algorithms run n_chains independent replicas.
    """
    config.validated()
    n = config.n_chains
    rngs = streams(config.seed, n)
    init_rng = RngStream(config.seed, n)
    pop_rng = RngStream(config.seed, n + 1)
    diag = WeightDiagnostics()

    pop = PopulationState.from_positions(initial_population(target, config, init_rng))
    if config.kernels and pop.dim != config.kernels[0].dim:
        raise DimensionMismatchError(
            f"target produces dimension {pop.dim} but kernels expect {config.kernels[0].dim}"
        )

    tracker = None
    if config.algorithm in ("imtm", "gimtm") and (
        config.policy.population_weighted or config.strategy == STRATEGY_NU
    ):
        tracker = NuTracker(len(config.kernels))

    if config.algorithm in _SINGLE_CHAIN:
        advance = _single_chain_stepper(config, target, rngs, diag)
    elif config.algorithm == "imtm":
        def advance(pop):
            return imtm_step(pop, target, config, rngs, tracker, diag)
    elif config.algorithm == "gimtm":
        def advance(pop):
            return gimtm_step(pop, target, config, rngs, tracker, diag)
    elif config.algorithm == "aimtm1":
        def advance(pop):
            return aimtm1_step(pop, target, config.ladder, config, rngs, diag)
    elif config.algorithm == "aimtm2":
        def advance(pop):
            return aimtm2_step(pop, target, config.ladder, config, rngs, diag)
    else:
        def advance(pop):
            return random_ray_step(pop, target, config, pop_rng, diag)

    r_total = int(config.iterations)
    positions = np.empty((r_total + 1, n, pop.dim))
    accepted = np.zeros((r_total + 1, n), dtype=int)
    selected = np.zeros((r_total + 1, n), dtype=int)
    positions[0] = pop.positions
    nu_rows = None
    if tracker is not None:
        nu_rows = np.empty((r_total + 1, len(config.kernels)))
        nu_rows[0] = tracker.nu
    for r in range(1, r_total + 1):
        pop = advance(pop)
        positions[r] = pop.positions
        accepted[r] = pop.accepted
        selected[r] = pop.selected
        if nu_rows is not None:
            nu_rows[r] = tracker.nu
    return ChainTrace(positions, accepted, selected, nu_rows, diag)
