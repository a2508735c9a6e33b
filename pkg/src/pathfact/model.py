"""Model types and pure evaluation of the variational objective.

The generative model approximates an N x D observation matrix X by
U S (Z o V)^T, with U mixed from known one-hot cluster labels and learned
logits, S nonnegative cluster/set associations, V real-valued basis rows,
and Z binary set memberships coupled across features by a graph prior.
All functions here are side-effect free; inference drives them.
"""

import math
from dataclasses import dataclass, field, replace
from types import SimpleNamespace

import numpy as np
from scipy import special

from .dist import (
    LOG_2PI,
    GammaParams,
    NormalParams,
    TruncatedNormalParams,
    expected_log_ndtr,
    gamma_expectations,
    normal_entropy,
    trunc_norm_moments,
)
from .graph import InteractionGraph, gp_cross_terms, normalized_laplacian


class NumericalError(RuntimeError):
    """Raised when an objective evaluation produces a non-finite block."""


@dataclass(frozen=True)
class ObservationSet:
    """Aligned observations plus structured prior knowledge.

    The feature order is the single source of truth: columns of X, rows of
    Z0 and the graph's node order all follow ``feature_ids``.
    """

    X: np.ndarray
    U0: np.ndarray
    Z0: np.ndarray
    graph: InteractionGraph
    sample_ids: tuple
    feature_ids: tuple
    cluster_ids: tuple
    set_ids: tuple
    M: frozenset = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        U0 = np.asarray(self.U0, dtype=float)
        Z0 = np.asarray(self.Z0, dtype=np.int8)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "U0", U0)
        object.__setattr__(self, "Z0", Z0)
        object.__setattr__(self, "sample_ids", tuple(self.sample_ids))
        object.__setattr__(self, "feature_ids", tuple(self.feature_ids))
        object.__setattr__(self, "cluster_ids", tuple(self.cluster_ids))
        object.__setattr__(self, "set_ids", tuple(self.set_ids))
        if not np.all(np.isfinite(X)):
            raise ValueError("X contains non-finite values")
        n, d = X.shape
        if U0.shape != (n, len(self.cluster_ids)):
            raise ValueError("U0 shape does not match samples x clusters")
        if not (np.all((U0 == 0) | (U0 == 1)) and np.all(U0.sum(axis=1) == 1)):
            raise ValueError("U0 rows must be one-hot")
        if Z0.shape != (d, len(self.set_ids)):
            raise ValueError("Z0 shape does not match features x sets")
        if not np.all((Z0 == 0) | (Z0 == 1)):
            raise ValueError("Z0 must be binary")
        if len(self.sample_ids) != n or len(self.feature_ids) != d:
            raise ValueError("label list lengths do not match matrix dimensions")
        if len(set(self.sample_ids)) != n or len(set(self.feature_ids)) != d:
            raise ValueError("duplicate sample or feature identifiers")
        if tuple(self.graph.node_labels) != self.feature_ids:
            raise ValueError("graph node order must equal the feature order")
        derived = frozenset(zip(*np.nonzero(Z0)))
        if self.M is None:
            object.__setattr__(self, "M", derived)
        elif frozenset(self.M) != derived:
            raise ValueError("M must be exactly the nonzero index set of Z0")
        else:
            object.__setattr__(self, "M", frozenset(self.M))

    @property
    def n_samples(self):
        return self.X.shape[0]

    @property
    def n_features(self):
        return self.X.shape[1]

    @property
    def n_clusters(self):
        return self.U0.shape[1]

    @property
    def n_sets(self):
        return self.Z0.shape[1]

    def mask_indices(self):
        """Known-membership indices (rows, cols) in a fixed sorted order."""
        if not self.M:
            return np.empty(0, dtype=int), np.empty(0, dtype=int)
        pairs = sorted(self.M)
        rows = np.array([p[0] for p in pairs], dtype=int)
        cols = np.array([p[1] for p in pairs], dtype=int)
        return rows, cols


@dataclass(frozen=True)
class Hyperparameters:
    """Prior constants plus fit schedule.

    ``lambda_s0`` broadcasts to K x R, ``mu_v0``/``sigma_v0`` to D x R.
    ``beta_a`` defaults to R / 10 when left unset.
    """

    alpha_a0: float = 1.0
    alpha_b0: float = 1.0
    lambda_s0: object = 1.0
    mu_v0: object = 0.0
    sigma_v0: object = 1.0
    beta_a: float = None
    zeta: float = 0.9
    xi: float = 100.0
    epsilon: float = 0.05
    max_sweeps: int = 1000
    elbo_rel_tol: float = 1e-6
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.alpha_a0 <= 0 or self.alpha_b0 <= 0:
            raise ValueError("noise prior shape/rate must be positive")
        if not np.all(np.asarray(self.lambda_s0, dtype=float) > 0):
            raise ValueError("lambda_s0 must be positive")
        if not np.all(np.asarray(self.sigma_v0, dtype=float) > 0):
            raise ValueError("sigma_v0 must be positive")
        if self.beta_a is not None and self.beta_a <= 0:
            raise ValueError("beta_a must be positive")
        if not 0.0 <= self.zeta <= 1.0:
            raise ValueError("zeta must lie in [0, 1]")
        if self.xi < 0:
            raise ValueError("xi must be nonnegative")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be >= 1")
        if self.elbo_rel_tol <= 0:
            raise ValueError("elbo_rel_tol must be positive")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    def resolve(self, data: ObservationSet) -> "ResolvedHyperparameters":
        k, r, d = data.n_clusters, data.n_sets, data.n_features
        return ResolvedHyperparameters(
            alpha_a0=float(self.alpha_a0),
            alpha_b0=float(self.alpha_b0),
            lambda_s0=np.broadcast_to(np.asarray(self.lambda_s0, dtype=float), (k, r)),
            mu_v0=np.broadcast_to(np.asarray(self.mu_v0, dtype=float), (d, r)),
            sigma_v0=np.broadcast_to(np.asarray(self.sigma_v0, dtype=float), (d, r)),
            beta_a=float(self.beta_a) if self.beta_a is not None else r / 10.0,
            zeta=float(self.zeta),
            xi=float(self.xi),
            epsilon=float(self.epsilon),
            max_sweeps=int(self.max_sweeps),
            elbo_rel_tol=float(self.elbo_rel_tol),
            seed=int(self.seed),
            threads=int(self.threads),
        )


@dataclass(frozen=True)
class ResolvedHyperparameters:
    alpha_a0: float
    alpha_b0: float
    lambda_s0: np.ndarray
    mu_v0: np.ndarray
    sigma_v0: np.ndarray
    beta_a: float
    zeta: float
    xi: float
    epsilon: float
    max_sweeps: int
    elbo_rel_tol: float
    seed: int
    threads: int

    def resolve(self, data: ObservationSet) -> "ResolvedHyperparameters":
        return self


@dataclass(frozen=True)
class VariationalState:
    """All variational parameters plus the cluster logits point estimate."""

    noise: GammaParams
    assoc: TruncatedNormalParams
    basis: NormalParams
    coupling: NormalParams
    sparsity: NormalParams
    cluster_logits: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "cluster_logits", np.asarray(self.cluster_logits, dtype=float)
        )
        k, r = self.assoc.location.shape
        d = self.basis.mean.shape[0]
        if self.basis.mean.shape != (d, r):
            raise ValueError("basis must be D x R")
        if self.coupling.mean.shape != (d, r):
            raise ValueError("coupling must be D x R")
        if self.sparsity.mean.shape != (r,):
            raise ValueError("sparsity must be length R")
        if self.cluster_logits.ndim != 2 or self.cluster_logits.shape[1] != k:
            raise ValueError("cluster_logits must be N x K")

    def updated(self, **changes) -> "VariationalState":
        return replace(self, **changes)


@dataclass(frozen=True)
class SweepRecord:
    sweep: int
    elbo: float
    penalty: float
    objective: float
    block_deltas: dict = field(default_factory=dict)


class ElboTrace:
    """Per-sweep history of the regularized objective and its pieces."""

    def __init__(self):
        self.records = []

    def append(self, record: SweepRecord):
        self.records.append(record)

    def objectives(self):
        return np.array([rec.objective for rec in self.records])

    def is_monotone(self, rtol: float = 1e-8):
        """True when no sweep decreases the objective by more than ``rtol``
        relative to its magnitude; also returns the worst signed violation."""
        obj = self.objectives()
        if obj.size < 2:
            return True, 0.0
        diffs = np.diff(obj)
        allowed = -rtol * np.maximum(np.abs(obj[:-1]), 1.0)
        return bool(np.all(diffs >= allowed)), min(0.0, float(diffs.min()))

    def __len__(self):
        return len(self.records)


@dataclass(frozen=True)
class AssociationResult:
    """Posterior summaries: association means, membership marginals, mixed
    cluster weights, and per-cluster set rankings."""

    assoc_mean: np.ndarray
    z_marginal: np.ndarray
    u_mixed: np.ndarray
    ranked: tuple
    cluster_ids: tuple
    set_ids: tuple


def softmax_rows(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    return expd / expd.sum(axis=1, keepdims=True)


def mix_cluster(theta_u, u0, zeta):
    """Row-stochastic cluster weights: zeta * u0 + (1 - zeta) * softmax(theta)."""
    theta_u = np.asarray(theta_u, dtype=float)
    u0 = np.asarray(u0, dtype=float)
    if theta_u.shape != u0.shape:
        raise ValueError("theta_U and U0 shapes differ")
    if not 0.0 <= zeta <= 1.0:
        raise ValueError("zeta must lie in [0, 1]")
    if zeta == 1.0:
        return u0.copy()
    return zeta * u0 + (1.0 - zeta) * softmax_rows(theta_u)


def membership_logit(coupling: NormalParams, sparsity: NormalParams):
    """Standardized threshold margin whose Gaussian cdf is q(Z=1)."""
    return (sparsity.mean - coupling.mean) / np.sqrt(sparsity.variance + coupling.variance)


def z_marginal(coupling: NormalParams, sparsity: NormalParams):
    """Marginal membership probability q(Z=1), elementwise."""
    return special.ndtr(membership_logit(coupling, sparsity))


def factor_moments(state: VariationalState, data: ObservationSet, hyper):
    """Moments shared by the objective and the coordinate updates."""
    hyper = hyper.resolve(data)
    s_mean, s_var, s_entropy = trunc_norm_moments(
        state.assoc.location, state.assoc.scale_sq
    )
    s_second = s_var + s_mean**2
    v_mean = state.basis.mean
    with np.errstate(over="ignore"):
        v_second = state.basis.variance + v_mean**2
    t = membership_logit(state.coupling, state.sparsity)
    rho = special.ndtr(t)
    log_rho = special.log_ndtr(t)
    u = mix_cluster(state.cluster_logits, data.U0, hyper.zeta)
    u_sq = u * u
    a = u @ s_mean
    a2_sum = np.einsum("ir,ir->r", a, a) + u_sq.sum(axis=0) @ s_var
    w = rho * v_mean
    w2 = rho * v_second
    return SimpleNamespace(
        s_mean=s_mean,
        s_var=s_var,
        s_second=s_second,
        s_entropy=s_entropy,
        v_mean=v_mean,
        v_second=v_second,
        t=t,
        rho=rho,
        log_rho=log_rho,
        u=u,
        u_sq=u_sq,
        a=a,
        a_sq_sum=np.einsum("ir,ir->r", a, a),
        a2_sum=a2_sum,
        w=w,
        w2=w2,
        w_sq_sum=np.einsum("jr,jr->r", w, w),
        w2_sum=w2.sum(axis=0),
    )


def expected_reconstruction(state, data, hyper, mom=None):
    """Posterior mean of U S (Z o V)^T."""
    mom = mom or factor_moments(state, data, hyper)
    return mom.a @ mom.w.T


def expected_sq_residual(state, data, hyper, mom=None):
    """E[ sum_ij (X_ij - reconstruction_ij)^2 ] under the factorized posterior.

    Second moments enter only on the diagonal r = r'; cross terms between
    distinct sets use products of first moments.
    """
    mom = mom or factor_moments(state, data, hyper)
    frob = float(np.sum((data.X - mom.a @ mom.w.T) ** 2))
    correction = float(mom.a2_sum @ mom.w2_sum - mom.a_sq_sum @ mom.w_sq_sum)
    return frob + correction


def elbo_terms(state: VariationalState, data: ObservationSet, hyper, lap=None, mom=None):
    """The evidence lower bound, split by named block.

    Raises :class:`NumericalError` naming the first non-finite block.
    """
    hyper = hyper.resolve(data)
    lap = lap or normalized_laplacian(data.graph, hyper.epsilon)
    mom = mom or factor_moments(state, data, hyper)
    n, d = data.X.shape
    r = data.n_sets
    a = hyper.beta_a / r

    with np.errstate(over="ignore", invalid="ignore"):
        return _elbo_terms_inner(state, data, hyper, lap, mom, n, d, r, a)


def _elbo_terms_inner(state, data, hyper, lap, mom, n, d, r, a):
    noise_mean, noise_mean_log, noise_entropy = gamma_expectations(state.noise)
    residual = expected_sq_residual(state, data, hyper, mom=mom)

    terms = {}
    terms["likelihood"] = 0.5 * n * d * (noise_mean_log - LOG_2PI) - 0.5 * noise_mean * residual
    terms["noise_prior"] = (
        hyper.alpha_a0 * math.log(hyper.alpha_b0)
        - special.gammaln(hyper.alpha_a0)
        + (hyper.alpha_a0 - 1.0) * noise_mean_log
        - hyper.alpha_b0 * noise_mean
    )
    terms["noise_entropy"] = float(noise_entropy)
    terms["assoc_prior"] = float(
        np.sum(np.log(hyper.lambda_s0) - hyper.lambda_s0 * mom.s_mean)
    )
    terms["assoc_entropy"] = float(np.sum(mom.s_entropy))
    terms["basis_prior"] = float(
        np.sum(
            -0.5 * (LOG_2PI + np.log(hyper.sigma_v0))
            - ((state.basis.mean - hyper.mu_v0) ** 2 + state.basis.variance)
            / (2.0 * hyper.sigma_v0)
        )
    )
    terms["basis_entropy"] = float(np.sum(normal_entropy(state.basis.variance)))
    cross = gp_cross_terms(state.coupling.mean, state.coupling.variance, lap)
    terms["coupling_prior"] = float(
        0.5 * r * (lap.log_det_precision - d * LOG_2PI) - 0.5 * np.sum(cross)
    )
    terms["coupling_entropy"] = float(np.sum(normal_entropy(state.coupling.variance)))
    terms["sparsity_prior"] = float(
        np.sum(
            (a - 1.0) * expected_log_ndtr(state.sparsity.mean, state.sparsity.variance)
            + math.log(a)
            - 0.5 * (LOG_2PI + state.sparsity.mean**2 + state.sparsity.variance)
        )
    )
    terms["sparsity_entropy"] = float(np.sum(normal_entropy(state.sparsity.variance)))

    for name, value in terms.items():
        if not np.isfinite(value):
            raise NumericalError(f"non-finite objective block: {name}")
    return terms


def elbo(state, data, hyper, lap=None, mom=None) -> float:
    return float(sum(elbo_terms(state, data, hyper, lap=lap, mom=mom).values()))


def mask_penalty(state, data, hyper, mom=None) -> float:
    """xi-weighted sum of log q(Z=1) over the known memberships."""
    hyper = hyper.resolve(data)
    rows, cols = data.mask_indices()
    if rows.size == 0 or hyper.xi == 0.0:
        return 0.0
    mom = mom or factor_moments(state, data, hyper)
    return float(hyper.xi * np.sum(mom.log_rho[rows, cols]))


def regularized_objective(state, data, hyper, lap=None, mom=None):
    """Objective of the penalized variational problem.

    Returns (objective, elbo, penalty) with objective = elbo + penalty.
    """
    hyper = hyper.resolve(data)
    mom = mom or factor_moments(state, data, hyper)
    bound = elbo(state, data, hyper, lap=lap, mom=mom)
    penalty = mask_penalty(state, data, hyper, mom=mom)
    return bound + penalty, bound, penalty


def rank_sets(result: AssociationResult, cluster_index: int, top_m: int):
    """Top sets for one cluster, scored by posterior association mean.

    Ties break lexicographically on set id so rankings are reproducible.
    """
    n_sets = result.assoc_mean.shape[1]
    if not 0 <= cluster_index < result.assoc_mean.shape[0]:
        raise ValueError(f"cluster index {cluster_index} out of range")
    if not 1 <= top_m <= n_sets:
        raise ValueError(f"top_m must lie in [1, {n_sets}]")
    row = result.assoc_mean[cluster_index]
    order = sorted(range(n_sets), key=lambda j: (-row[j], result.set_ids[j]))
    return [(result.set_ids[j], float(row[j])) for j in order[:top_m]]


def summarize(
    state: VariationalState,
    data: ObservationSet,
    hyper,
    top_m: int = 5,
    clamp_known: bool = False,
) -> AssociationResult:
    """Posterior summary used for reporting and serialization.

    ``clamp_known`` optionally reports q(Z=1) as exactly 1 on the curated
    mask without altering the fitted state.
    """
    hyper = hyper.resolve(data)
    mom = factor_moments(state, data, hyper)
    z_marg = mom.rho.copy()
    if clamp_known:
        rows, cols = data.mask_indices()
        z_marg[rows, cols] = 1.0
    partial = AssociationResult(
        assoc_mean=mom.s_mean,
        z_marginal=z_marg,
        u_mixed=mom.u,
        ranked=(),
        cluster_ids=data.cluster_ids,
        set_ids=data.set_ids,
    )
    top_m = min(top_m, data.n_sets)
    ranked = tuple(rank_sets(partial, k, top_m) for k in range(data.n_clusters))
    return replace(partial, ranked=ranked)
