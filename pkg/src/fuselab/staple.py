"""Binary consensus estimation by expectation-maximization.

Given m aligned binary expert masks, the EM loop alternates a per-voxel
Bayes posterior for the latent true label (E-step) with closed-form
updates of each expert's sensitivity/specificity (M-step), tracking the
observed-data log-likelihood until the parameters stop moving.

All per-voxel likelihood products are accumulated in log space and turned
into probabilities only inside normalized ratios, so any number of experts
can be fused without underflow. Reductions over experts always run in
sorted-expert-id order, which makes results exactly invariant to the order
in which experts are supplied.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegeneratePosteriorError
from .volume import ExpertStack, GridKind, VolumeGrid, validate_stack

# Parameters are clipped here after every update; keeps log() finite and
# stops sensitivity/specificity from freezing at an absorbing 0 or 1.
CLAMP_LO = 1e-7
CLAMP_HI = 1.0 - 1e-7

AUTO_PRIOR = "auto"

VARIANTS = ("binary", "soft-exact", "soft-mc", "simplified")
SOFT_VARIANTS = ("soft-exact", "soft-mc", "simplified")
MSTEP_MODES = ("expected-count", "plugin-mean")


@dataclass(frozen=True)
class RaterParams:
    """Per-expert sensitivity/specificity pairs."""

    sens: np.ndarray
    spec: np.ndarray

    def __post_init__(self):
        sens = np.ascontiguousarray(self.sens, dtype=np.float64).reshape(-1)
        spec = np.ascontiguousarray(self.spec, dtype=np.float64).reshape(-1)
        if sens.size != spec.size:
            raise ConfigError(
                f"sens has {sens.size} entries but spec has {spec.size}"
            )
        for name, arr in (("sens", sens), ("spec", spec)):
            if not np.all((arr >= 0.0) & (arr <= 1.0)):
                raise ConfigError(f"{name} values must lie in [0, 1]")
        sens.flags.writeable = False
        spec.flags.writeable = False
        object.__setattr__(self, "sens", sens)
        object.__setattr__(self, "spec", spec)

    @classmethod
    def uniform(cls, m: int, sens: float, spec: float) -> "RaterParams":
        return cls(np.full(m, sens), np.full(m, spec))

    @property
    def m(self) -> int:
        return self.sens.size

    def reordered(self, order) -> "RaterParams":
        order = np.asarray(order)
        return RaterParams(self.sens[order], self.spec[order])


@dataclass(frozen=True)
class FusionConfig:
    """Knobs for any fusion run.

    ``prior`` is a fixed foreground probability or "auto" (grand mean of
    all votes). ``variant`` selects the algorithm; ``mstep_mode`` only
    matters for the soft variants. ``mc_samples``/``mc_seed`` only matter
    for variant "soft-mc".
    """

    prior: float | str = AUTO_PRIOR
    init_sens: float = 0.9
    init_spec: float = 0.9
    max_iters: int = 100
    tol: float = 1e-6
    variant: str = "binary"
    mstep_mode: str = "expected-count"
    mc_samples: int = 10000
    mc_seed: int = 0

    def validate(self) -> None:
        if self.prior != AUTO_PRIOR:
            p = self.prior
            if not isinstance(p, (int, float)) or not 0.0 < float(p) < 1.0:
                raise ConfigError(f"prior must be in (0, 1) or 'auto', got {p!r}")
        for name in ("init_sens", "init_spec"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if self.max_iters < 1:
            raise ConfigError(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.tol > 0.0:
            raise ConfigError(f"tol must be positive, got {self.tol}")
        if self.variant not in VARIANTS:
            raise ConfigError(
                f"variant must be one of {VARIANTS}, got {self.variant!r}"
            )
        if self.mstep_mode not in MSTEP_MODES:
            raise ConfigError(
                f"mstep_mode must be one of {MSTEP_MODES}, got {self.mstep_mode!r}"
            )
        if self.mc_samples < 1:
            raise ConfigError(f"mc_samples must be >= 1, got {self.mc_samples}")


@dataclass(frozen=True)
class FusionResult:
    """Outcome of one EM run.

    ``ll_trace`` holds the objective after each iteration's M-step; for
    the deterministic variants it is nondecreasing (EM ascent). When the
    objective had to be Monte-Carlo estimated, ``ll_is_approximate`` is
    set.
    """

    posterior: VolumeGrid
    params: RaterParams
    ll_trace: tuple[float, ...]
    iters_run: int
    converged: bool
    prior: float
    ll_is_approximate: bool = False


def clamp_params(sens: np.ndarray, spec: np.ndarray):
    return np.clip(sens, CLAMP_LO, CLAMP_HI), np.clip(spec, CLAMP_LO, CLAMP_HI)


def resolve_prior(stack: ExpertStack, prior: float | str) -> float:
    """Materialize the prior: grand mean of all votes when "auto"."""
    if prior == AUTO_PRIOR:
        return float(np.clip(np.mean(stack.as_matrix()), CLAMP_LO, CLAMP_HI))
    p = float(prior)
    if not 0.0 < p < 1.0:
        raise ConfigError(f"prior must be in (0, 1), got {p}")
    return p


def canonical_order(stack: ExpertStack) -> np.ndarray:
    """Expert indices sorted by id; fixes every reduction order."""
    return np.array(sorted(range(stack.m), key=lambda i: stack.expert_ids[i]))


def _log_class_likelihoods(y: np.ndarray, sens: np.ndarray, spec: np.ndarray):
    """Per-voxel log p(votes | x=a) for a=0, 1.

    ``y`` is (m, n), expert-major; the sums over experts run in the given
    row order.
    """
    sens, spec = clamp_params(sens, spec)
    ls, l1s = np.log(sens), np.log1p(-sens)
    lp, l1p = np.log(spec), np.log1p(-spec)
    log_l1 = y.T @ ls + (1.0 - y).T @ l1s
    log_l0 = y.T @ l1p + (1.0 - y).T @ lp
    return log_l0, log_l1


def _lse_pair(a0, a1):
    """Elementwise log(exp(a0) + exp(a1)), overflow-safe."""
    hi = np.maximum(a0, a1)
    return hi + np.log(np.exp(a0 - hi) + np.exp(a1 - hi))


def _posterior_from_logs(log_l0, log_l1, prior: float):
    """w(1) from class log-likelihoods via a two-term log-sum-exp."""
    a0 = np.log1p(-prior) + log_l0
    a1 = np.log(prior) + log_l1
    return np.exp(a1 - _lse_pair(a0, a1))


def annotation_likelihood(votes, a: int, params: RaterParams) -> float:
    """p(votes | x=a): product over experts of the per-vote likelihood."""
    y = np.ascontiguousarray(votes, dtype=np.float64).reshape(-1)
    if y.size != params.m:
        raise ConfigError(f"{y.size} votes for {params.m} experts")
    log_l0, log_l1 = _log_class_likelihoods(y[:, None], params.sens, params.spec)
    return float(np.exp(log_l1[0] if a == 1 else log_l0[0]))


def posterior_voxel(votes, params: RaterParams, prior: float) -> float:
    """Bayes posterior that the voxel's true label is 1 given hard votes."""
    if not 0.0 < prior < 1.0:
        raise ConfigError(f"prior must be in (0, 1), got {prior}")
    y = np.ascontiguousarray(votes, dtype=np.float64).reshape(-1)
    if y.size != params.m:
        raise ConfigError(f"{y.size} votes for {params.m} experts")
    log_l0, log_l1 = _log_class_likelihoods(y[:, None], params.sens, params.spec)
    return float(_posterior_from_logs(log_l0, log_l1, prior)[0])


def e_step(stack: ExpertStack, params: RaterParams, prior: float) -> VolumeGrid:
    """Posterior map w(1) over the whole grid; w(0) is its complement."""
    validate_stack(stack)
    order = canonical_order(stack)
    y = stack.as_matrix()[order]
    log_l0, log_l1 = _log_class_likelihoods(y, params.sens[order], params.spec[order])
    w1 = np.clip(_posterior_from_logs(log_l0, log_l1, prior), 0.0, 1.0)
    return VolumeGrid(stack.dims, w1, GridKind.POSTERIOR)


def m_step(stack: ExpertStack, w: VolumeGrid) -> RaterParams:
    """Reliability updates from expected true-label counts."""
    if w.dims != stack.dims:
        raise ConfigError("posterior dims do not match the stack")
    y = stack.as_matrix()
    sens, spec = _m_step_arrays(y, w.data)
    return RaterParams(sens, spec)


def _m_step_arrays(y: np.ndarray, w1: np.ndarray, ll_trace=()):
    w0 = 1.0 - w1
    mass1 = float(np.sum(w1))
    mass0 = float(np.sum(w0))
    if mass1 == 0.0:
        raise DegeneratePosteriorError("sensitivity", ll_trace)
    if mass0 == 0.0:
        raise DegeneratePosteriorError("specificity", ll_trace)
    sens = (y @ w1) / mass1
    spec = ((1.0 - y) @ w0) / mass0
    return clamp_params(sens, spec)


def log_likelihood(stack: ExpertStack, params: RaterParams, prior: float) -> float:
    """Observed-data log-likelihood of the binary model."""
    validate_stack(stack)
    order = canonical_order(stack)
    y = stack.as_matrix()[order]
    log_l0, log_l1 = _log_class_likelihoods(y, params.sens[order], params.spec[order])
    return float(np.sum(_lse_pair(np.log1p(-prior) + log_l0, np.log(prior) + log_l1)))


def binarize(posterior: VolumeGrid) -> VolumeGrid:
    """Hard consensus: label 1 where w(1) > 0.5; the 0.5 tie goes to 0."""
    if posterior.kind is not GridKind.POSTERIOR:
        raise ConfigError(f"binarize expects a posterior grid, got {posterior.kind.value}")
    return VolumeGrid(
        posterior.dims, (posterior.data > 0.5).astype(np.float64), GridKind.BINARY
    )


def run_em(stack: ExpertStack, config: FusionConfig | None = None) -> FusionResult:
    """Full EM fusion of a binary stack.

    Initializes sensitivity/specificity from the config, resolves the
    prior, and iterates E/M until every parameter moves less than ``tol``
    or ``max_iters`` is hit. The returned posterior is a final E-step at
    the converged parameters.
    """
    config = config or FusionConfig()
    config.validate()
    if config.variant != "binary":
        raise ConfigError(f"run_em handles variant 'binary', got {config.variant!r}")
    validate_stack(stack)
    if stack.kind is not GridKind.BINARY:
        raise ConfigError("run_em needs a binary stack; use run_soft_em for soft votes")

    order = canonical_order(stack)
    y = stack.as_matrix()[order]
    prior = resolve_prior(stack, config.prior)
    m = stack.m
    sens = np.full(m, config.init_sens)
    spec = np.full(m, config.init_spec)
    sens, spec = clamp_params(sens, spec)

    trace: list[float] = []
    converged = False
    iters = 0
    for iters in range(1, config.max_iters + 1):
        log_l0, log_l1 = _log_class_likelihoods(y, sens, spec)
        w1 = _posterior_from_logs(log_l0, log_l1, prior)
        new_sens, new_spec = _m_step_arrays(y, w1, trace)
        trace.append(_ll_arrays(y, new_sens, new_spec, prior))
        delta = max(
            float(np.max(np.abs(new_sens - sens))),
            float(np.max(np.abs(new_spec - spec))),
        )
        sens, spec = new_sens, new_spec
        if delta < config.tol:
            converged = True
            break

    log_l0, log_l1 = _log_class_likelihoods(y, sens, spec)
    w1 = np.clip(_posterior_from_logs(log_l0, log_l1, prior), 0.0, 1.0)
    posterior = VolumeGrid(stack.dims, w1, GridKind.POSTERIOR)

    inverse = np.empty(m, dtype=int)
    inverse[order] = np.arange(m)
    params = RaterParams(sens[inverse], spec[inverse])
    return FusionResult(posterior, params, tuple(trace), iters, converged, prior)


def _ll_arrays(y: np.ndarray, sens, spec, prior: float) -> float:
    log_l0, log_l1 = _log_class_likelihoods(y, sens, spec)
    return float(np.sum(_lse_pair(np.log1p(-prior) + log_l0, np.log(prior) + log_l1)))
