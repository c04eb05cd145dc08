"""Single-hidden-layer network score, Bernoulli likelihood, Gaussian prior.

The classifier is a logistic model whose log-odds ("score") come from a
one-hidden-layer network with sigmoid activations:

    score(x) = beta0 + sum_j beta_j * sigmoid(gamma0_j + gamma_j . x)

All parameters live in a single flat vector of length K = k*(p+2)+1 so the
inference code can treat the model as a generic density over R^K.  Flattening
order is [beta0, beta, gamma0, Gamma row-major]; ``flatten``/``unflatten``
are exact inverses of each other.

Everything here is pure and side-effect free, so the functions are safe to
call from worker threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit as sigmoid

__all__ = [
    "NetworkShape",
    "NetworkParams",
    "PriorConfig",
    "LabeledBatch",
    "ShapeMismatchError",
    "sigmoid",
    "softplus",
    "shape_for",
    "flatten",
    "unflatten",
    "unflatten_many",
    "forward_score",
    "batch_scores",
    "scores_many",
    "log_sigmoid_likelihood",
    "log_likelihood_many",
    "log_prior",
    "log_joint",
    "log_joint_many",
    "normal_logpdf_total",
    "network_to_json_dict",
    "network_from_json_dict",
]


class ShapeMismatchError(ValueError):
    """An argument's dimensions disagree with the declared network shape."""


def softplus(z):
    """Overflow-safe log(1 + e^z), computed as max(z, 0) + log1p(e^-|z|)."""
    z = np.asarray(z, dtype=float)
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


@dataclass(frozen=True)
class NetworkShape:
    """Input width ``p`` and hidden-node count ``k``.

    Fixes the flat parameter length: one output bias, k output weights,
    k hidden biases and a k-by-p hidden weight matrix.
    """

    p: int
    k: int

    def __post_init__(self) -> None:
        if int(self.p) != self.p or int(self.k) != self.k:
            raise ShapeMismatchError("p and k must be integers")
        if self.p < 1 or self.k < 1:
            raise ShapeMismatchError(f"p and k must be >= 1, got p={self.p}, k={self.k}")

    @property
    def K(self) -> int:
        return self.k * (self.p + 2) + 1


def shape_for(K: int, p: int) -> NetworkShape:
    """Recover the network shape from a flat length and an input width."""
    k, rem = divmod(K - 1, p + 2)
    if rem != 0 or k < 1:
        raise ShapeMismatchError(f"flat length {K} is impossible for input width {p}")
    return NetworkShape(p=p, k=k)


@dataclass(frozen=True)
class NetworkParams:
    """Structured view of one parameter vector.

    beta0:  output bias (scalar)
    beta:   output weights, shape (k,)
    gamma0: hidden biases, shape (k,)
    gamma:  hidden weights, shape (k, p)
    """

    beta0: float
    beta: np.ndarray
    gamma0: np.ndarray
    gamma: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float))
        object.__setattr__(self, "gamma0", np.asarray(self.gamma0, dtype=float))
        object.__setattr__(self, "gamma", np.asarray(self.gamma, dtype=float))
        k = self.beta.shape[0]
        if self.beta.ndim != 1 or self.gamma0.shape != (k,):
            raise ShapeMismatchError("beta and gamma0 must be 1-d with equal length")
        if self.gamma.ndim != 2 or self.gamma.shape[0] != k:
            raise ShapeMismatchError("gamma must be (k, p)")
        if not np.isfinite(self.beta0) or not (
            np.all(np.isfinite(self.beta))
            and np.all(np.isfinite(self.gamma0))
            and np.all(np.isfinite(self.gamma))
        ):
            raise ValueError("network parameters must be finite")

    @property
    def shape(self) -> NetworkShape:
        return NetworkShape(p=self.gamma.shape[1], k=self.beta.shape[0])


def flatten(theta: NetworkParams) -> np.ndarray:
    """Pack parameters as [beta0, beta, gamma0, Gamma row-major]."""
    return np.concatenate(
        [[float(theta.beta0)], theta.beta, theta.gamma0, theta.gamma.ravel()]
    )


def unflatten(flat: np.ndarray, shape: NetworkShape) -> NetworkParams:
    """Inverse of :func:`flatten`; exact bijection (values copied verbatim)."""
    flat = np.asarray(flat, dtype=float)
    if flat.shape != (shape.K,):
        raise ShapeMismatchError(f"expected flat length {shape.K}, got {flat.shape}")
    k, p = shape.k, shape.p
    return NetworkParams(
        beta0=float(flat[0]),
        beta=flat[1 : 1 + k].copy(),
        gamma0=flat[1 + k : 1 + 2 * k].copy(),
        gamma=flat[1 + 2 * k :].reshape(k, p).copy(),
    )


def unflatten_many(thetas: np.ndarray, shape: NetworkShape):
    """Slice a stack of flat vectors (..., K) into (beta0, beta, gamma0, Gamma) views."""
    thetas = np.asarray(thetas, dtype=float)
    if thetas.shape[-1] != shape.K:
        raise ShapeMismatchError(f"expected flat length {shape.K}, got {thetas.shape[-1]}")
    k, p = shape.k, shape.p
    beta0 = thetas[..., 0]
    beta = thetas[..., 1 : 1 + k]
    gamma0 = thetas[..., 1 + k : 1 + 2 * k]
    gamma = thetas[..., 1 + 2 * k :].reshape(*thetas.shape[:-1], k, p)
    return beta0, beta, gamma0, gamma


@dataclass(frozen=True)
class PriorConfig:
    """Independent Gaussian prior N(mu_j, zeta_j^2) on every flat coordinate."""

    mu: np.ndarray
    zeta: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=float))
        object.__setattr__(self, "zeta", np.asarray(self.zeta, dtype=float))
        if self.mu.shape != self.zeta.shape or self.mu.ndim != 1:
            raise ValueError("mu and zeta must be 1-d arrays of equal length")
        if not np.all(np.isfinite(self.mu)) or not np.all(np.isfinite(self.zeta)):
            raise ValueError("prior parameters must be finite")
        if np.any(self.zeta <= 0):
            raise ValueError("prior scales zeta must be positive")

    @property
    def K(self) -> int:
        return self.mu.shape[0]

    @classmethod
    def standard(cls, K: int) -> "PriorConfig":
        """The default N(0, 1) prior on every coordinate."""
        return cls(mu=np.zeros(K), zeta=np.ones(K))


@dataclass(frozen=True)
class LabeledBatch:
    """A design matrix with binary labels.  ``n`` may be zero (empty batch)."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self) -> None:
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y)
        if x.ndim != 2:
            raise ShapeMismatchError("x must be 2-d (n, p)")
        if y.shape != (x.shape[0],):
            raise ShapeMismatchError("y must be 1-d with one label per row of x")
        if not np.all(np.isfinite(x)):
            raise ValueError("features must be finite")
        y_int = y.astype(np.int64)
        if y.size and (np.any(y_int != y) or not np.all((y_int == 0) | (y_int == 1))):
            raise ValueError("labels must be 0 or 1")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y_int)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]


def forward_score(theta: NetworkParams, x: np.ndarray) -> float:
    """Network score for a single point x of shape (p,)."""
    x = np.asarray(x, dtype=float)
    hidden = sigmoid(theta.gamma0 + theta.gamma @ x)
    return float(theta.beta0 + theta.beta @ hidden)


def batch_scores(theta: NetworkParams, x: np.ndarray) -> np.ndarray:
    """Network scores for a design matrix x of shape (n, p)."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != theta.gamma.shape[1]:
        raise ShapeMismatchError("x must be (n, p) matching the network input width")
    hidden = sigmoid(theta.gamma0[None, :] + x @ theta.gamma.T)
    return theta.beta0 + hidden @ theta.beta


def scores_many(thetas: np.ndarray, x: np.ndarray, shape: NetworkShape) -> np.ndarray:
    """Scores for S flat parameter vectors at once; returns (S, n)."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != shape.p:
        raise ShapeMismatchError("x must be (n, p) matching the network input width")
    beta0, beta, gamma0, gamma = unflatten_many(np.atleast_2d(thetas), shape)
    # pre-activations: (S, n, k) = (S, 1, k) + x . Gamma^T per sample
    pre = gamma0[:, None, :] + np.einsum("np,skp->snk", x, gamma)
    hidden = sigmoid(pre)
    return beta0[:, None] + np.einsum("snk,sk->sn", hidden, beta)


def log_sigmoid_likelihood(theta: NetworkParams, batch: LabeledBatch) -> float:
    """Bernoulli log-likelihood sum_i [y_i * score_i - softplus(score_i)].

    Evaluated through the identity y*z - softplus(z) = -softplus((1-2y)*z),
    which keeps the tiny tail contributions of saturated scores (for y=1,
    z=50 the exact value is about -1.93e-22, which the subtraction form would
    cancel to -0.0).  Always <= 0; an empty batch contributes exactly 0.
    """
    scores = batch_scores(theta, batch.x)
    return float(-np.sum(softplus((1 - 2 * batch.y) * scores)))


def log_likelihood_many(
    thetas: np.ndarray, batch: LabeledBatch, shape: NetworkShape
) -> np.ndarray:
    """Bernoulli log-likelihood of the batch under each of S flat vectors."""
    if batch.n == 0:
        return np.zeros(np.atleast_2d(thetas).shape[0])
    scores = scores_many(thetas, batch.x, shape)
    signs = (1 - 2 * batch.y).astype(float)
    return -softplus(scores * signs).sum(axis=1)


def normal_logpdf_total(x, mean, sd) -> np.ndarray:
    """Sum of independent Normal log-densities along the last axis."""
    x = np.asarray(x, dtype=float)
    z = (x - mean) / sd
    return -0.5 * np.sum(z * z + np.log(2.0 * np.pi) + 2.0 * np.log(sd), axis=-1)


def log_prior(theta, prior: PriorConfig):
    """Gaussian prior log-density; accepts NetworkParams or flat (..., K) arrays."""
    flat = flatten(theta) if isinstance(theta, NetworkParams) else np.asarray(theta, dtype=float)
    if flat.shape[-1] != prior.K:
        raise ShapeMismatchError("parameter length does not match prior length")
    out = normal_logpdf_total(flat, prior.mu, prior.zeta)
    return float(out) if flat.ndim == 1 else out


def log_joint(theta: NetworkParams, batch: LabeledBatch, prior: PriorConfig) -> float:
    """log p(y | theta, x) + log p(theta); the unnormalized posterior density."""
    return log_sigmoid_likelihood(theta, batch) + log_prior(theta, prior)


def log_joint_many(
    thetas: np.ndarray, batch: LabeledBatch, prior: PriorConfig, shape: NetworkShape
) -> np.ndarray:
    """Log joint density of the batch under each of S flat parameter vectors."""
    return log_likelihood_many(thetas, batch, shape) + log_prior(np.atleast_2d(thetas), prior)


def network_to_json_dict(theta: NetworkParams) -> dict:
    """Portable artifact form: {"shape": {"p", "k"}, "flat_theta": [...]}."""
    shape = theta.shape
    return {
        "shape": {"p": shape.p, "k": shape.k},
        "flat_theta": [float(v) for v in flatten(theta)],
    }


def network_from_json_dict(doc: dict) -> NetworkParams:
    shape = NetworkShape(p=int(doc["shape"]["p"]), k=int(doc["shape"]["k"]))
    flat = np.asarray(doc["flat_theta"], dtype=float)
    return unflatten(flat, shape)
