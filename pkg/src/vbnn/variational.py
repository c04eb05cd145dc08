"""Mean-field Gaussian variational family and its score-function gradients.

q(theta) = prod_j N(theta_j; m_j, s_j^2) with the positive scale expressed
through a softplus reparametrization s_j = log(1 + exp(r_j)), so both m and r
are free real vectors and gradient steps can never leave the family.

The gradients of log q follow the standard mean-field Gaussian forms

    d/dm_j  log q = (theta_j - m_j) / s_j^2
    d/ds_j  log q = (theta_j - m_j)^2 / s_j^3 - 1 / s_j
    d/dr_j  log q = sigmoid(r_j) * d/ds_j log q      (softplus chain rule)

with s_j floored at 1e-6 inside gradient evaluation only, to keep the
estimator finite when a coordinate collapses.  Densities themselves use the
unclamped scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import normal_logpdf_total, sigmoid, softplus

__all__ = [
    "SCALE_FLOOR",
    "VariationalParams",
    "SampleMatrix",
    "softplus_inverse",
    "initial_params",
    "sample",
    "log_q",
    "grad_log_q_mean",
    "grad_log_q_scale",
    "grad_log_q_raw",
]

# Floor applied to s inside gradient formulas only (never in log_q itself).
SCALE_FLOOR = 1e-6

# Smallest positive double; keeps softplus(r) strictly positive even when
# exp(r) underflows (r < ~-745).
_TINY = float(np.finfo(float).tiny)


def softplus_inverse(s):
    """r such that softplus(r) = s, i.e. log(e^s - 1), stable for all s > 0."""
    s = np.asarray(s, dtype=float)
    if np.any(s <= 0):
        raise ValueError("softplus_inverse requires s > 0")
    return s + np.log(-np.expm1(-s))


@dataclass(frozen=True)
class VariationalParams:
    """Free parameters (m, r) of the mean-field Gaussian approximation."""

    mean: np.ndarray
    raw_scale: np.ndarray

    def __post_init__(self) -> None:
        m = np.asarray(self.mean, dtype=float)
        r = np.asarray(self.raw_scale, dtype=float)
        if m.ndim != 1 or m.shape != r.shape:
            raise ValueError("mean and raw_scale must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(m)) and np.all(np.isfinite(r))):
            raise ValueError("variational parameters must be finite")
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "raw_scale", r)

    @property
    def K(self) -> int:
        return self.mean.shape[0]

    @property
    def scale(self) -> np.ndarray:
        """Per-coordinate standard deviations softplus(r), strictly positive."""
        return np.maximum(softplus(self.raw_scale), _TINY)

    def to_json_dict(self) -> dict:
        return {"m": [float(v) for v in self.mean], "r": [float(v) for v in self.raw_scale]}

    @classmethod
    def from_json_dict(cls, doc: dict) -> "VariationalParams":
        return cls(
            mean=np.asarray(doc["m"], dtype=float),
            raw_scale=np.asarray(doc["r"], dtype=float),
        )


def initial_params(K: int, mean: float = 0.0, scale: float = 1.0,
                   jitter: float = 0.0, seed=None) -> VariationalParams:
    """Starting point m = mean, s = scale; optionally jitter m ~ U(-jitter, jitter)."""
    if scale <= 0:
        raise ValueError("initial scale must be positive")
    m = np.full(K, float(mean))
    if jitter:
        rng = np.random.default_rng(seed)
        m = m + rng.uniform(-jitter, jitter, size=K)
    r = np.full(K, float(softplus_inverse(scale)))
    return VariationalParams(mean=m, raw_scale=r)


@dataclass(frozen=True)
class SampleMatrix:
    """S draws from q, one flat parameter vector per row, plus their seed."""

    thetas: np.ndarray
    seed: object

    def __post_init__(self) -> None:
        t = np.asarray(self.thetas, dtype=float)
        if t.ndim != 2 or t.shape[0] < 1:
            raise ValueError("thetas must be (S, K) with S >= 1")
        object.__setattr__(self, "thetas", t)

    @property
    def S(self) -> int:
        return self.thetas.shape[0]

    @property
    def K(self) -> int:
        return self.thetas.shape[1]


def sample(q: VariationalParams, S: int, seed) -> SampleMatrix:
    """Draw S vectors theta = m + s * z, z ~ N(0, I), from a seeded generator."""
    if S < 1:
        raise ValueError("S must be >= 1")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((S, q.K))
    return SampleMatrix(thetas=q.mean + q.scale * z, seed=seed)


def log_q(q: VariationalParams, theta: np.ndarray):
    """Variational log-density at theta; accepts (K,) or stacked (..., K)."""
    theta = np.asarray(theta, dtype=float)
    out = normal_logpdf_total(theta, q.mean, q.scale)
    return float(out) if theta.ndim == 1 else out


def _clamped_scale(q: VariationalParams) -> np.ndarray:
    return np.maximum(q.scale, SCALE_FLOOR)


def grad_log_q_mean(q: VariationalParams, theta: np.ndarray) -> np.ndarray:
    """d log q / dm, evaluated coordinate-wise: (theta - m) / s^2."""
    s = _clamped_scale(q)
    return (np.asarray(theta, dtype=float) - q.mean) / (s * s)


def grad_log_q_scale(q: VariationalParams, theta: np.ndarray) -> np.ndarray:
    """d log q / ds: (theta - m)^2 / s^3 - 1 / s."""
    s = _clamped_scale(q)
    d = np.asarray(theta, dtype=float) - q.mean
    return d * d / (s * s * s) - 1.0 / s


def grad_log_q_raw(q: VariationalParams, theta: np.ndarray) -> np.ndarray:
    """d log q / dr via the softplus chain rule: sigmoid(r) * d log q / ds."""
    return sigmoid(q.raw_scale) * grad_log_q_scale(q, theta)
