"""Consensus estimation from soft (probabilistic) expert votes.

Two EM families share the binary model's sensitivity/specificity
parameters:

* the exact variant treats each voxel's soft votes as a distribution over
  the 2^m joint hard-vote combinations and averages the binary posterior
  over them; its objective is the expected log-likelihood under that
  distribution. A Monte Carlo estimator ("soft-mc") replaces the
  enumeration when m exceeds the guard.
* the simplified variant treats each soft vote as a noisy observation of
  a latent hard vote, which factorizes per expert and keeps the E-step
  linear in m.

Both reduce exactly to the binary algorithm when every vote is hard.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, ConfigError, DegeneratePosteriorError
from .staple import (
    FusionConfig,
    FusionResult,
    RaterParams,
    SOFT_VARIANTS,
    _log_class_likelihoods,
    _lse_pair,
    _m_step_arrays,
    _posterior_from_logs,
    canonical_order,
    clamp_params,
    resolve_prior,
)
from .volume import ExpertStack, GridKind, VolumeGrid, validate_stack

# 2^m joint vote combinations per voxel; beyond this use variant "soft-mc".
ENUMERATION_GUARD = 20

# Work-array budgets for the enumeration engine.
_GROUP_LIMIT = 4096
_CELL_BUDGET = 2**22


@dataclass(frozen=True)
class VoteCombination:
    """One joint hard-vote assignment for m experts.

    ``code`` encodes the bits as an integer with expert 0 in the least
    significant bit; enumeration order is ascending code.
    """

    m: int
    code: int

    def __post_init__(self):
        if self.m < 1:
            raise ConfigError(f"need at least one expert, got m={self.m}")
        if self.m > ENUMERATION_GUARD:
            raise CapacityError(
                f"m={self.m} exceeds the enumeration guard ({ENUMERATION_GUARD})"
            )
        if not 0 <= self.code < 2**self.m:
            raise ConfigError(f"code {self.code} outside [0, 2^{self.m})")

    def bit(self, i: int) -> int:
        return (self.code >> i) & 1

    def bits(self) -> tuple[int, ...]:
        return tuple(self.bit(i) for i in range(self.m))


def combination_matrix(m: int) -> np.ndarray:
    """All 2^m combinations as a (2^m, m) 0/1 float array, ascending code."""
    if m > ENUMERATION_GUARD:
        raise CapacityError(
            f"m={m} exceeds the enumeration guard ({ENUMERATION_GUARD})"
        )
    codes = np.arange(2**m, dtype=np.int64)
    return ((codes[:, None] >> np.arange(m)) & 1).astype(np.float64)


def joint_soft_prob(soft_votes, combo: VoteCombination) -> float:
    """Probability of one joint hard-vote combination under the soft votes."""
    q = np.ascontiguousarray(soft_votes, dtype=np.float64).reshape(-1)
    if q.size != combo.m:
        raise ConfigError(f"{q.size} votes for a combination over {combo.m} experts")
    bits = np.array(combo.bits(), dtype=np.float64)
    return float(np.prod(np.where(bits == 1.0, q, 1.0 - q)))


def _combo_stats(m: int, params: RaterParams, prior: float):
    """Posterior p(x=1 | B) and log-marginal log p(B) for every combination."""
    sens, spec = clamp_params(params.sens, params.spec)
    bmat = combination_matrix(m)
    log_l1 = bmat @ np.log(sens) + (1.0 - bmat) @ np.log1p(-sens)
    log_l0 = bmat @ np.log1p(-spec) + (1.0 - bmat) @ np.log(spec)
    lse = _lse_pair(np.log1p(-prior) + log_l0, np.log(prior) + log_l1)
    p1 = np.exp(np.log(prior) + log_l1 - lse)
    return bmat, p1, lse


def _combo_weights(q_cols: np.ndarray, bmat: np.ndarray) -> np.ndarray:
    """(2^m, k) joint vote probabilities for the k voxel columns in q_cols."""
    m = q_cols.shape[0]
    w = np.ones((bmat.shape[0], q_cols.shape[1]))
    for i in range(m):
        w *= np.where(bmat[:, i : i + 1] == 1.0, q_cols[i], 1.0 - q_cols[i])
    return w


class _EnumerationEngine:
    """Shared machinery for the exact soft variant.

    The joint-combination weights depend only on the votes, not on the
    parameters, so their per-combination voxel sums ``s`` are computed
    once per run. When the stack has few distinct soft-vote columns
    (labels like {0, gamma, 1} collapse heavily) the full weight matrix is
    kept per unique column; otherwise voxels are streamed in chunks.
    """

    def __init__(self, q: np.ndarray):
        m, n = q.shape
        if m > ENUMERATION_GUARD:
            raise CapacityError(
                f"exact enumeration needs m <= {ENUMERATION_GUARD}, got m={m}; "
                "select the Monte Carlo variant instead"
            )
        self.q = q
        self.m, self.n = m, n
        self.bmat = combination_matrix(m)
        c = self.bmat.shape[0]

        uniq, inverse, counts = np.unique(
            q, axis=1, return_inverse=True, return_counts=True
        )
        inverse = np.asarray(inverse).reshape(-1)
        u = uniq.shape[1]
        if u <= _GROUP_LIMIT and c * u <= _CELL_BUDGET:
            self.grouped = True
            self.inverse = inverse
            self.w_unique = _combo_weights(uniq, self.bmat)
            self.s = self.w_unique @ counts.astype(np.float64)
        else:
            self.grouped = False
            self.chunk = max(1, _CELL_BUDGET // c)
            s = np.zeros(c)
            for lo in range(0, n, self.chunk):
                s += _combo_weights(q[:, lo : lo + self.chunk], self.bmat).sum(axis=1)
            self.s = s

    def posterior(self, params: RaterParams, prior: float) -> np.ndarray:
        _, p1, _ = _combo_stats(self.m, params, prior)
        if self.grouped:
            return (p1 @ self.w_unique)[self.inverse]
        w1 = np.empty(self.n)
        for lo in range(0, self.n, self.chunk):
            block = _combo_weights(self.q[:, lo : lo + self.chunk], self.bmat)
            w1[lo : lo + self.chunk] = p1 @ block
        return w1

    def log_likelihood(self, params: RaterParams, prior: float) -> float:
        _, _, lse = _combo_stats(self.m, params, prior)
        return float(self.s @ lse)

    def expected_count_mstep(self, params: RaterParams, prior: float, ll_trace=()):
        bmat, p1, _ = _combo_stats(self.m, params, prior)
        mass1 = float(p1 @ self.s)
        mass0 = float((1.0 - p1) @ self.s)
        if mass1 == 0.0:
            raise DegeneratePosteriorError("sensitivity", ll_trace)
        if mass0 == 0.0:
            raise DegeneratePosteriorError("specificity", ll_trace)
        sens = (bmat.T @ (p1 * self.s)) / mass1
        spec = ((1.0 - bmat.T) @ ((1.0 - p1) * self.s)) / mass0
        return clamp_params(sens, spec)


def soft_e_step_voxel(soft_votes, params: RaterParams, prior: float) -> float:
    """Exact soft posterior for one voxel: the binary posterior averaged
    over every joint hard-vote combination, weighted by the soft votes."""
    q = np.ascontiguousarray(soft_votes, dtype=np.float64).reshape(-1)
    if q.size != params.m:
        raise ConfigError(f"{q.size} votes for {params.m} experts")
    if q.size > ENUMERATION_GUARD:
        raise CapacityError(
            f"exact enumeration needs m <= {ENUMERATION_GUARD}, got m={q.size}; "
            "use mc_soft_e_step_voxel instead"
        )
    bmat, p1, _ = _combo_stats(q.size, params, prior)
    weights = _combo_weights(q[:, None], bmat)[:, 0]
    return float(np.clip(weights @ p1, 0.0, 1.0))


def soft_e_step(stack: ExpertStack, params: RaterParams, prior: float) -> VolumeGrid:
    """Exact soft posterior map over the whole grid."""
    validate_stack(stack)
    order = canonical_order(stack)
    engine = _EnumerationEngine(stack.as_matrix()[order])
    w1 = np.clip(engine.posterior(params.reordered(order), prior), 0.0, 1.0)
    return VolumeGrid(stack.dims, w1, GridKind.POSTERIOR)


def soft_log_likelihood(stack: ExpertStack, params: RaterParams, prior: float) -> float:
    """Expected log-likelihood of the exact soft model."""
    validate_stack(stack)
    order = canonical_order(stack)
    engine = _EnumerationEngine(stack.as_matrix()[order])
    return engine.log_likelihood(params.reordered(order), prior)


def soft_m_step(
    stack: ExpertStack,
    params: RaterParams,
    prior: float,
    mode: str = "expected-count",
) -> RaterParams:
    """Parameter update for the exact soft model.

    "expected-count" maximizes the model's own expected complete-data
    log-likelihood (the update that guarantees EM ascent); "plugin-mean"
    plugs the soft votes directly into the binary update, with the
    posterior taken from the exact soft E-step.
    """
    validate_stack(stack)
    if mode not in ("expected-count", "plugin-mean"):
        raise ConfigError(f"unknown mstep mode {mode!r}")
    order = canonical_order(stack)
    q = stack.as_matrix()[order]
    engine = _EnumerationEngine(q)
    cparams = params.reordered(order)
    if mode == "expected-count":
        sens, spec = engine.expected_count_mstep(cparams, prior)
    else:
        w1 = engine.posterior(cparams, prior)
        sens, spec = _m_step_arrays(q, w1)
    inverse = np.empty(stack.m, dtype=int)
    inverse[order] = np.arange(stack.m)
    return RaterParams(sens[inverse], spec[inverse])


def _voxel_rng(seed: int, voxel_index: int) -> np.random.Generator:
    mask = (1 << 64) - 1
    key = np.array([int(seed) & mask, int(voxel_index) & mask], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _bits_posterior(bits: np.ndarray, params: RaterParams, prior: float) -> np.ndarray:
    """Binary posterior for each row of a (k, m) hard-vote matrix."""
    log_l0, log_l1 = _log_class_likelihoods(bits.T, params.sens, params.spec)
    return _posterior_from_logs(log_l0, log_l1, prior)


def mc_soft_e_step_voxel(
    soft_votes,
    params: RaterParams,
    prior: float,
    samples: int,
    seed: int,
    voxel_index: int = 0,
) -> float:
    """Unbiased Monte Carlo estimate of the exact soft posterior.

    Each sample draws one hard vote per expert from the soft votes; the
    stream is keyed by (seed, voxel_index), so estimates are reproducible
    voxel by voxel regardless of evaluation order. Works for any m; hard
    votes short-circuit to the exact posterior (the estimator has zero
    variance there).
    """
    if samples < 1:
        raise ConfigError(f"samples must be >= 1, got {samples}")
    q = np.ascontiguousarray(soft_votes, dtype=np.float64).reshape(-1)
    if q.size != params.m:
        raise ConfigError(f"{q.size} votes for {params.m} experts")
    if np.all((q == 0.0) | (q == 1.0)):
        return float(_bits_posterior((q > 0.5)[None, :].astype(np.float64), params, prior)[0])
    rng = _voxel_rng(seed, voxel_index)
    bits = (rng.random((samples, q.size)) < q).astype(np.float64)
    return float(np.clip(_bits_posterior(bits, params, prior).mean(), 0.0, 1.0))


def noisy_channel_likelihood(q1: float, a: int, sens: float, spec: float) -> float:
    """Likelihood of a soft vote under the noisy-channel observation model."""
    if a == 1:
        return q1 * sens + (1.0 - q1) * (1.0 - sens)
    return q1 * (1.0 - spec) + (1.0 - q1) * spec


def _channel_likelihoods(q: np.ndarray, params: RaterParams):
    """Per-expert channel likelihoods, shape (m, n), for x=0 and x=1."""
    sens, spec = clamp_params(params.sens, params.spec)
    l1 = q * sens[:, None] + (1.0 - q) * (1.0 - sens[:, None])
    l0 = q * (1.0 - spec[:, None]) + (1.0 - q) * spec[:, None]
    return l0, l1


def _simple_posterior_arrays(q: np.ndarray, params: RaterParams, prior: float):
    l0, l1 = _channel_likelihoods(q, params)
    a0 = np.log1p(-prior) + np.log(l0).sum(axis=0)
    a1 = np.log(prior) + np.log(l1).sum(axis=0)
    lse = _lse_pair(a0, a1)
    return np.exp(a1 - lse), lse


def simple_e_step_voxel(soft_votes, params: RaterParams, prior: float) -> float:
    """Noisy-channel posterior for one voxel; linear in the expert count."""
    q = np.ascontiguousarray(soft_votes, dtype=np.float64).reshape(-1)
    if q.size != params.m:
        raise ConfigError(f"{q.size} votes for {params.m} experts")
    w1, _ = _simple_posterior_arrays(q[:, None], params, prior)
    return float(w1[0])


def simple_e_step(stack: ExpertStack, params: RaterParams, prior: float) -> VolumeGrid:
    """Noisy-channel posterior map over the whole grid."""
    validate_stack(stack)
    order = canonical_order(stack)
    q = stack.as_matrix()[order]
    w1, _ = _simple_posterior_arrays(q, params.reordered(order), prior)
    return VolumeGrid(stack.dims, np.clip(w1, 0.0, 1.0), GridKind.POSTERIOR)


def simple_log_likelihood(stack: ExpertStack, params: RaterParams, prior: float) -> float:
    """Observed-data log-likelihood of the noisy-channel model."""
    validate_stack(stack)
    order = canonical_order(stack)
    q = stack.as_matrix()[order]
    _, lse = _simple_posterior_arrays(q, params.reordered(order), prior)
    return float(np.sum(lse))


def _simple_expected_count_mstep(
    q: np.ndarray, params: RaterParams, prior: float, ll_trace=()
):
    """Exact EM update for the noisy-channel model.

    The latent hard vote behind each soft observation gets its own
    posterior, so the counts entering the update are expectations over
    both the true label and the hidden vote; this is what keeps the
    simplified objective nondecreasing.
    """
    sens, spec = clamp_params(params.sens, params.spec)
    l0, l1 = _channel_likelihoods(q, params)
    w1, _ = _simple_posterior_arrays(q, params, prior)
    w0 = 1.0 - w1
    mass1 = float(np.sum(w1))
    mass0 = float(np.sum(w0))
    if mass1 == 0.0:
        raise DegeneratePosteriorError("sensitivity", ll_trace)
    if mass0 == 0.0:
        raise DegeneratePosteriorError("specificity", ll_trace)
    r1 = q * sens[:, None] / l1
    r0 = (1.0 - q) * spec[:, None] / l0
    return clamp_params((r1 @ w1) / mass1, (r0 @ w0) / mass0)


def simple_m_step(
    stack: ExpertStack,
    params: RaterParams,
    prior: float,
    mode: str = "expected-count",
) -> RaterParams:
    """Parameter update for the noisy-channel model (modes as in soft_m_step)."""
    validate_stack(stack)
    if mode not in ("expected-count", "plugin-mean"):
        raise ConfigError(f"unknown mstep mode {mode!r}")
    order = canonical_order(stack)
    q = stack.as_matrix()[order]
    cparams = params.reordered(order)
    if mode == "expected-count":
        sens, spec = _simple_expected_count_mstep(q, cparams, prior)
    else:
        w1, _ = _simple_posterior_arrays(q, cparams, prior)
        sens, spec = _m_step_arrays(q, w1)
    inverse = np.empty(stack.m, dtype=int)
    inverse[order] = np.arange(stack.m)
    return RaterParams(sens[inverse], spec[inverse])


class _McSweep:
    """One Monte Carlo pass over all voxels with per-voxel keyed streams.

    Voxels whose votes are all hard are evaluated exactly in one
    vectorized batch (the estimator has zero variance there), which also
    makes the all-hard case agree with the binary algorithm to machine
    precision. No 2^m table is built, so any expert count works.
    """

    def __init__(self, q: np.ndarray, samples: int, seed: int):
        self.q = q
        self.samples = samples
        self.seed = seed
        self.m, self.n = q.shape
        self.hard = np.all((q == 0.0) | (q == 1.0), axis=0)
        self.soft_voxels = np.flatnonzero(~self.hard)
        self.hard_bits = (q[:, self.hard] > 0.5).astype(np.float64)

    def _sample_bits(self, t: int) -> np.ndarray:
        rng = _voxel_rng(self.seed, t)
        return (rng.random((self.samples, self.m)) < self.q[:, t]).astype(np.float64)

    def estep_and_counts(self, params: RaterParams, prior: float):
        """Posterior estimate plus expected-count M-step accumulators."""
        w1 = np.empty(self.n)
        num_sens = np.zeros(self.m)
        num_spec = np.zeros(self.m)
        if self.hard_bits.size:
            log_l0, log_l1 = _log_class_likelihoods(
                self.hard_bits, params.sens, params.spec
            )
            p1h = _posterior_from_logs(log_l0, log_l1, prior)
            w1[self.hard] = p1h
            num_sens += self.hard_bits @ p1h
            num_spec += (1.0 - self.hard_bits) @ (1.0 - p1h)
        k = float(self.samples)
        for t in self.soft_voxels:
            bits = self._sample_bits(t)
            p1k = _bits_posterior(bits, params, prior)
            w1[t] = p1k.mean()
            num_sens += (bits.T @ p1k) / k
            num_spec += ((1.0 - bits.T) @ (1.0 - p1k)) / k
        return w1, num_sens, num_spec

    def mc_log_likelihood(self, params: RaterParams, prior: float) -> float:
        """Estimator of the exact objective using the same sample streams."""
        total = 0.0
        if self.hard_bits.size:
            log_l0, log_l1 = _log_class_likelihoods(
                self.hard_bits, params.sens, params.spec
            )
            total += float(
                np.sum(_lse_pair(np.log1p(-prior) + log_l0, np.log(prior) + log_l1))
            )
        for t in self.soft_voxels:
            bits = self._sample_bits(t)
            log_l0, log_l1 = _log_class_likelihoods(bits.T, params.sens, params.spec)
            total += float(
                np.mean(_lse_pair(np.log1p(-prior) + log_l0, np.log(prior) + log_l1))
            )
        return total


def run_soft_em(stack: ExpertStack, config: FusionConfig) -> FusionResult:
    """Full EM fusion of a soft stack under the configured variant.

    Loop contract matches the binary runner: initialize from the config,
    resolve the prior as the fractional grand mean when "auto", iterate
    until every parameter moves less than ``tol`` or ``max_iters`` is
    reached, and return the posterior from a final E-step at the converged
    parameters. The trace records the exact-model objective for variants
    "soft-exact"/"soft-mc" and the noisy-channel objective for
    "simplified".
    """
    config.validate()
    if config.variant not in SOFT_VARIANTS:
        raise ConfigError(
            f"run_soft_em handles variants {SOFT_VARIANTS}, got {config.variant!r}"
        )
    validate_stack(stack)
    if stack.kind is not GridKind.SOFT:
        raise ConfigError("run_soft_em needs a soft stack; use run_em for binary votes")

    order = canonical_order(stack)
    q = stack.as_matrix()[order]
    prior = resolve_prior(stack, config.prior)
    m = stack.m
    sens, spec = clamp_params(np.full(m, config.init_sens), np.full(m, config.init_spec))

    exact_engine = None
    mc_sweep = None
    ll_is_approximate = False
    if config.variant in ("soft-exact", "soft-mc") and m <= ENUMERATION_GUARD:
        exact_engine = _EnumerationEngine(q)
    elif config.variant == "soft-exact":
        raise CapacityError(
            f"exact enumeration needs m <= {ENUMERATION_GUARD}, got m={m}; "
            "select variant 'soft-mc' instead"
        )
    if config.variant == "soft-mc":
        mc_sweep = _McSweep(q, config.mc_samples, config.mc_seed)
        ll_is_approximate = exact_engine is None

    def posterior_at(p: RaterParams) -> np.ndarray:
        if config.variant == "simplified":
            w1, _ = _simple_posterior_arrays(q, p, prior)
            return w1
        if config.variant == "soft-exact":
            return exact_engine.posterior(p, prior)
        w1, _, _ = mc_sweep.estep_and_counts(p, prior)
        return w1

    def objective_at(p: RaterParams) -> float:
        if config.variant == "simplified":
            _, lse = _simple_posterior_arrays(q, p, prior)
            return float(np.sum(lse))
        if exact_engine is not None:
            return exact_engine.log_likelihood(p, prior)
        return mc_sweep.mc_log_likelihood(p, prior)

    trace: list[float] = []
    converged = False
    iters = 0
    for iters in range(1, config.max_iters + 1):
        cparams = RaterParams(sens, spec)
        if config.variant == "simplified":
            if config.mstep_mode == "expected-count":
                new_sens, new_spec = _simple_expected_count_mstep(
                    q, cparams, prior, trace
                )
            else:
                w1, _ = _simple_posterior_arrays(q, cparams, prior)
                new_sens, new_spec = _m_step_arrays(q, w1, trace)
        elif config.variant == "soft-exact":
            if config.mstep_mode == "expected-count":
                new_sens, new_spec = exact_engine.expected_count_mstep(
                    cparams, prior, trace
                )
            else:
                w1 = exact_engine.posterior(cparams, prior)
                new_sens, new_spec = _m_step_arrays(q, w1, trace)
        else:
            w1, num_sens, num_spec = mc_sweep.estep_and_counts(cparams, prior)
            if config.mstep_mode == "expected-count":
                mass1 = float(np.sum(w1))
                mass0 = float(np.sum(1.0 - w1))
                if mass1 == 0.0:
                    raise DegeneratePosteriorError("sensitivity", trace)
                if mass0 == 0.0:
                    raise DegeneratePosteriorError("specificity", trace)
                new_sens, new_spec = clamp_params(num_sens / mass1, num_spec / mass0)
            else:
                new_sens, new_spec = _m_step_arrays(q, w1, trace)

        trace.append(objective_at(RaterParams(new_sens, new_spec)))
        delta = max(
            float(np.max(np.abs(new_sens - sens))),
            float(np.max(np.abs(new_spec - spec))),
        )
        sens, spec = new_sens, new_spec
        if delta < config.tol:
            converged = True
            break

    w1 = np.clip(posterior_at(RaterParams(sens, spec)), 0.0, 1.0)
    posterior = VolumeGrid(stack.dims, w1, GridKind.POSTERIOR)
    inverse = np.empty(m, dtype=int)
    inverse[order] = np.arange(m)
    params = RaterParams(sens[inverse], spec[inverse])
    return FusionResult(
        posterior, params, tuple(trace), iters, converged, prior, ll_is_approximate
    )
