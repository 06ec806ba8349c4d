"""Gaussian and mixture primitives: EM fitting, conditioning, and fusion.

Distributions are plain (mean, covariance) pairs. Fusion happens in
information form: the product of Gaussians adds precisions, and the
confidence-weighted product scales each factor's covariance by 1/c before
fusing, so a confident factor (c close to 1) keeps its full precision while
a doubtful one (c close to 0) contributes almost nothing.

All types are immutable after construction; every operation is a pure
function of its inputs. Randomness enters only through explicit seeds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfidenceOutOfRangeError,
    DimensionMismatchError,
    EmptyDataError,
    EmptyFactorListError,
    KTooLargeError,
    SingularCovarianceError,
    SingularInputBlockError,
)

_LOG_2PI = float(np.log(2.0 * np.pi))
_SYMMETRY_TOL = 1e-8


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _symmetrize(cov: np.ndarray) -> np.ndarray:
    return 0.5 * (cov + cov.T)


@dataclass(frozen=True, eq=False)
class Gaussian:
    """A multivariate normal with full covariance.

    The covariance must be symmetric (tiny asymmetry from round-off is
    folded away on construction); positive definiteness is required by the
    operations that factorize it, which raise SingularCovarianceError.
    """

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.asarray(self.cov, dtype=float)
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
            raise DimensionMismatchError(f"covariance must be square, got shape {cov.shape}")
        if cov.shape[0] != mean.shape[0]:
            raise DimensionMismatchError(
                f"mean has dim {mean.shape[0]} but covariance is {cov.shape[0]}x{cov.shape[1]}"
            )
        asym = float(np.max(np.abs(cov - cov.T))) if cov.size else 0.0
        if asym > _SYMMETRY_TOL:
            raise DimensionMismatchError(f"covariance is asymmetric (max |S - S^T| = {asym:.3e})")
        object.__setattr__(self, "mean", _freeze(mean))
        object.__setattr__(self, "cov", _freeze(_symmetrize(cov)))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def logpdf(self, x) -> np.ndarray | float:
        """Log density at one point (D,) or a batch (N, D)."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        pts = np.atleast_2d(x)
        if pts.shape[1] != self.dim:
            raise DimensionMismatchError(f"points have dim {pts.shape[1]}, expected {self.dim}")
        vals = _log_mvn_pdf(pts, self.mean, self.cov)
        return float(vals[0]) if single else vals


@dataclass(frozen=True, eq=False)
class GMM:
    """Finite Gaussian mixture: simplex weights over components of equal dim."""

    weights: np.ndarray
    components: tuple[Gaussian, ...]

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        components = tuple(self.components)
        if len(components) == 0:
            raise EmptyDataError("a GMM needs at least one component")
        if weights.shape[0] != len(components):
            raise DimensionMismatchError(
                f"{weights.shape[0]} weights for {len(components)} components"
            )
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise DimensionMismatchError("mixture weights must be finite and nonnegative")
        total = float(weights.sum())
        if abs(total - 1.0) > 1e-9:
            raise DimensionMismatchError(f"mixture weights sum to {total}, expected 1")
        dims = {c.dim for c in components}
        if len(dims) != 1:
            raise DimensionMismatchError(f"components have mixed dims {sorted(dims)}")
        object.__setattr__(self, "weights", _freeze(weights / total))
        object.__setattr__(self, "components", components)

    @property
    def dim(self) -> int:
        return self.components[0].dim

    @property
    def n_components(self) -> int:
        return len(self.components)


@dataclass(frozen=True, eq=False)
class FittedGMM(GMM):
    """A GMM returned by em_fit, carrying its training log-likelihood trace.

    log_likelihood_trace[i] is the total data log-likelihood of the model
    after i M-steps (entry 0 scores the initialization), so the trace is
    non-decreasing up to the regularization jitter.
    """

    log_likelihood_trace: tuple[float, ...] = ()

    @property
    def n_iterations(self) -> int:
        return max(len(self.log_likelihood_trace) - 1, 0)


@dataclass(frozen=True)
class BlockSpec:
    """Partition of the coordinate axes into an input block and an output block.

    The two index sets must be disjoint and together cover 0..D-1.
    """

    input_dims: tuple[int, ...]
    output_dims: tuple[int, ...]

    def __post_init__(self):
        inp = tuple(int(i) for i in self.input_dims)
        out = tuple(int(i) for i in self.output_dims)
        if not inp or not out:
            raise DimensionMismatchError("input and output blocks must both be nonempty")
        if set(inp) & set(out):
            raise DimensionMismatchError("input and output blocks overlap")
        d = len(inp) + len(out)
        if sorted(inp + out) != list(range(d)):
            raise DimensionMismatchError(
                f"blocks {inp} and {out} do not partition 0..{d - 1}"
            )
        object.__setattr__(self, "input_dims", inp)
        object.__setattr__(self, "output_dims", out)

    @property
    def dim(self) -> int:
        return len(self.input_dims) + len(self.output_dims)


def _log_mvn_pdf(X: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Log N(x | mean, cov) for rows of X, via Cholesky."""
    d = mean.shape[0]
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError(f"covariance not positive definite: {exc}") from exc
    y = np.linalg.solve(L, (X - mean).T)
    quad = np.sum(y * y, axis=0)
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    return -0.5 * (d * _LOG_2PI + logdet + quad)


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    amax = np.max(a, axis=axis, keepdims=True)
    amax = np.where(np.isfinite(amax), amax, 0.0)
    out = amax + np.log(np.sum(np.exp(a - amax), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


# ---------------------------------------------------------------------------
# EM fitting
# ---------------------------------------------------------------------------

def _kmeanspp_centers(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for i in range(1, k):
        total = float(d2.sum())
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[i] = X[idx]
        d2 = np.minimum(d2, np.sum((X - centers[i]) ** 2, axis=1))
    return centers


def _cluster_stats(X, labels, centers, reg):
    """Initial (weights, means, covs) from a hard assignment."""
    n, d = X.shape
    k = centers.shape[0]
    global_cov = np.cov(X, rowvar=False, bias=True).reshape(d, d)
    weights = np.empty(k)
    means = np.empty((k, d))
    covs = np.empty((k, d, d))
    for i in range(k):
        pts = X[labels == i]
        weights[i] = max(len(pts), 1)
        if len(pts) == 0:
            means[i] = centers[i]
            covs[i] = global_cov
        else:
            means[i] = pts.mean(axis=0)
            diff = pts - means[i]
            covs[i] = diff.T @ diff / len(pts)
        covs[i] = _symmetrize(covs[i]) + reg * np.eye(d)
    weights /= weights.sum()
    return weights, means, covs


def _init_params(X, k, init, reg, rng):
    n, d = X.shape
    if init == "kmeans++":
        centers = _kmeanspp_centers(X, k, rng)
        d2 = np.sum((X[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        labels = np.argmin(d2, axis=1)
        return _cluster_stats(X, labels, centers, reg)
    if init == "time_bins":
        # Contiguous chunks of the data ordered by the first coordinate; for
        # trajectories whose leading dimension is time this splits the motion
        # into K consecutive segments, deterministically.
        order = np.argsort(X[:, 0], kind="stable")
        labels = np.empty(n, dtype=int)
        for i, chunk in enumerate(np.array_split(order, k)):
            labels[chunk] = i
        centers = np.stack([X[labels == i].mean(axis=0) for i in range(k)])
        return _cluster_stats(X, labels, centers, reg)
    raise ValueError(f"unknown init strategy {init!r}; use 'kmeans++' or 'time_bins'")


def em_fit(
    data,
    n_components: int,
    *,
    init: str = "kmeans++",
    reg: float = 1e-6,
    max_iter: int = 200,
    tol: float = 1e-8,
    seed: int | None = None,
) -> FittedGMM:
    """Fit a full-covariance GMM by expectation maximization.

    After every M-step each covariance gets `reg` added to its diagonal,
    which keeps the E-step factorizations well posed. Iteration stops when
    the relative log-likelihood gain drops below `tol` or after `max_iter`
    M-steps. The returned model carries its log-likelihood trace.
    """
    X = np.asarray(data, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.size == 0:
        raise EmptyDataError("no data points to fit")
    n = X.shape[0]
    if n_components < 1:
        raise KTooLargeError("need at least one component")
    if n_components > n:
        raise KTooLargeError(f"{n_components} components requested for {n} points")
    if reg < 0:
        raise ValueError("reg must be nonnegative")

    rng = np.random.default_rng(seed)
    weights, means, covs = _init_params(X, n_components, init, reg, rng)

    trace = []
    for _ in range(max_iter):
        log_prob = _component_log_prob(X, weights, means, covs)
        lse = _logsumexp(log_prob, axis=1)
        ll = float(lse.sum())
        trace.append(ll)
        if len(trace) >= 2 and (ll - trace[-2]) < tol * max(abs(trace[-2]), 1.0):
            break
        log_resp = log_prob - lse[:, None]
        weights, means, covs = _m_step(X, np.exp(log_resp), reg)
    else:
        # Score the final M-step so the trace always matches the returned model.
        log_prob = _component_log_prob(X, weights, means, covs)
        trace.append(float(_logsumexp(log_prob, axis=1).sum()))

    components = tuple(Gaussian(means[i], covs[i]) for i in range(n_components))
    return FittedGMM(weights, components, log_likelihood_trace=tuple(trace))


def _component_log_prob(X, weights, means, covs):
    n, k = X.shape[0], weights.shape[0]
    out = np.empty((n, k))
    with np.errstate(divide="ignore"):
        log_w = np.log(weights)
    for i in range(k):
        out[:, i] = log_w[i] + _log_mvn_pdf(X, means[i], covs[i])
    return out


def _m_step(X, resp, reg):
    n, d = X.shape
    nk = resp.sum(axis=0)
    weights = nk / n
    denom = np.maximum(nk, np.finfo(float).tiny)
    means = (resp.T @ X) / denom[:, None]
    covs = np.empty((resp.shape[1], d, d))
    eye = np.eye(d)
    for i in range(resp.shape[1]):
        diff = X - means[i]
        covs[i] = _symmetrize((diff * resp[:, i : i + 1]).T @ diff / denom[i]) + reg * eye
    return weights, means, covs


def log_likelihood(gmm: GMM, data) -> float:
    """Total log-likelihood of the data under the mixture (0 for no data)."""
    X = np.asarray(data, dtype=float)
    if X.size == 0:
        return 0.0
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.shape[1] != gmm.dim:
        raise DimensionMismatchError(f"data dim {X.shape[1]} != model dim {gmm.dim}")
    means = np.stack([c.mean for c in gmm.components])
    covs = np.stack([c.cov for c in gmm.components])
    return float(_logsumexp(_component_log_prob(X, gmm.weights, means, covs), axis=1).sum())


# ---------------------------------------------------------------------------
# Conditioning (regression through the joint mixture)
# ---------------------------------------------------------------------------

def component_conditionals(gmm: GMM, spec: BlockSpec, inputs):
    """Per-component conditionals over a batch of input-block values.

    Returns (responsibilities (N, K), conditional means (K, N, D_out),
    conditional covariances (K, D_out, D_out)). Responsibilities come from
    the input-block marginals; the per-component conditional covariance
    does not depend on the input.
    """
    if spec.dim != gmm.dim:
        raise DimensionMismatchError(f"block spec covers {spec.dim} dims, model has {gmm.dim}")
    U = np.asarray(inputs, dtype=float)
    if U.ndim == 1 and len(spec.input_dims) == 1:
        U = U.reshape(-1, 1)
    U = np.atleast_2d(U)
    if U.shape[1] != len(spec.input_dims):
        raise DimensionMismatchError(
            f"inputs have dim {U.shape[1]}, expected {len(spec.input_dims)}"
        )
    idx_i = np.asarray(spec.input_dims)
    idx_o = np.asarray(spec.output_dims)
    n = U.shape[0]
    k = gmm.n_components
    d_o = idx_o.shape[0]

    log_h = np.empty((n, k))
    cond_means = np.empty((k, n, d_o))
    cond_covs = np.empty((k, d_o, d_o))
    with np.errstate(divide="ignore"):
        log_w = np.log(gmm.weights)
    for i, comp in enumerate(gmm.components):
        mu_i = comp.mean[idx_i]
        mu_o = comp.mean[idx_o]
        s_ii = comp.cov[np.ix_(idx_i, idx_i)]
        s_oi = comp.cov[np.ix_(idx_o, idx_i)]
        s_oo = comp.cov[np.ix_(idx_o, idx_o)]
        try:
            gain = np.linalg.solve(s_ii, s_oi.T).T
        except np.linalg.LinAlgError as exc:
            raise SingularInputBlockError(f"input block of component {i} is singular") from exc
        log_h[:, i] = log_w[i] + _log_mvn_pdf(U, mu_i, s_ii)
        cond_means[i] = mu_o + (U - mu_i) @ gain.T
        cond_covs[i] = _symmetrize(s_oo - gain @ s_oi.T)
    h = np.exp(log_h - _logsumexp(log_h, axis=1)[:, None])
    return h, cond_means, cond_covs


def moment_match(h: np.ndarray, cond_means: np.ndarray, cond_covs: np.ndarray):
    """Collapse per-component conditionals into one Gaussian per input.

    The output covariance keeps the cross-component spread, so it stays
    positive definite whenever the component conditionals are.
    """
    mean = np.einsum("nk,knd->nd", h, cond_means)
    dev = cond_means - mean[None, :, :]
    cov = np.einsum("nk,kde->nde", h, cond_covs) + np.einsum("nk,knd,kne->nde", h, dev, dev)
    cov = 0.5 * (cov + np.transpose(cov, (0, 2, 1)))
    return mean, cov


def conditional_moments(gmm: GMM, spec: BlockSpec, inputs) -> tuple[np.ndarray, np.ndarray]:
    """Condition the mixture on a batch of input-block values.

    Returns the moment-matched conditional (means, covs) with shapes
    (N, D_out) and (N, D_out, D_out).
    """
    h, cond_means, cond_covs = component_conditionals(gmm, spec, inputs)
    return moment_match(h, cond_means, cond_covs)


def gmr_condition(gmm: GMM, spec: BlockSpec, input_value) -> Gaussian:
    """Condition the mixture on one input value; returns the moment-matched Gaussian."""
    u = np.atleast_1d(np.asarray(input_value, dtype=float))
    means, covs = conditional_moments(gmm, spec, u.reshape(1, -1))
    return Gaussian(means[0], covs[0])


# ---------------------------------------------------------------------------
# Products of Gaussians
# ---------------------------------------------------------------------------

def _precision(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.inv(cov)
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError(f"cannot invert covariance: {exc}") from exc


def gaussian_product(factors) -> Gaussian:
    """Normalized product of Gaussian densities.

    Precisions add; the mean is the precision-weighted average, i.e. the
    minimizer of the summed Mahalanobis distances to the factor means. A
    single factor is returned unchanged.
    """
    factors = list(factors)
    if not factors:
        raise EmptyFactorListError("product of zero Gaussians is undefined")
    dim = factors[0].dim
    for f in factors:
        if f.dim != dim:
            raise DimensionMismatchError(f"factor dims differ: {f.dim} vs {dim}")
    if len(factors) == 1:
        return factors[0]
    precisions = [_precision(f.cov) for f in factors]
    lam = np.sum(precisions, axis=0)
    eta = np.sum([p @ f.mean for p, f in zip(precisions, factors)], axis=0)
    cov = _symmetrize(np.linalg.inv(lam))
    return Gaussian(cov @ eta, cov)


def weighted_gaussian_product(factors) -> Gaussian:
    """Product of Gaussians with per-factor confidences in (0, 1].

    Each factor's covariance is divided by its confidence before fusing, so
    c = 1 reproduces the plain product exactly and c -> 0 removes the factor.
    """
    factors = list(factors)
    if not factors:
        raise EmptyFactorListError("product of zero Gaussians is undefined")
    scaled = []
    for g, c in factors:
        c = float(c)
        if not (0.0 < c <= 1.0):
            raise ConfidenceOutOfRangeError(f"confidence {c} outside (0, 1]")
        scaled.append(Gaussian(g.mean, g.cov / c))
    return gaussian_product(scaled)


def affine_transform(g: Gaussian, matrix, offset) -> Gaussian:
    """Push a Gaussian through x -> M x + b."""
    m = np.asarray(matrix, dtype=float)
    b = np.asarray(offset, dtype=float).reshape(-1)
    if m.shape[1] != g.dim or m.shape[0] != b.shape[0]:
        raise DimensionMismatchError(
            f"transform {m.shape} with offset {b.shape} cannot apply to dim {g.dim}"
        )
    return Gaussian(m @ g.mean + b, _symmetrize(m @ g.cov @ m.T))
