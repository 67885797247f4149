"""Planted linear model, softmax attention weights, and attention moments.

The data model is ``y = M x + z`` with ``x ~ N(0, Sigma)`` and
``z ~ N(0, Omega)``.  The predictor is a single softmax self-attention layer
``theta = (A, B)`` that maps a query ``x`` to ``A`` applied to the
softmax-weighted combination of stored covariates, with bilinear scores
``x^T B x_j``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .linalg import SpdFactors, check_symmetric, op_norm, psd_sqrt, spd_factor, sym
from .rng import stream

__all__ = [
    "Dims",
    "ProblemInstance",
    "Dataset",
    "Theta",
    "AttentionStats",
    "sample_instance",
    "sample_dataset",
    "random_theta",
    "attention_weights",
    "attention_moments",
    "predict",
]

# rows of the local-covariance einsum are processed in fixed-size chunks so the
# (chunk, n, d) centered-difference tensor stays small; fixed size keeps results
# independent of available memory
_MOMENT_CHUNK_FLOATS = 1 << 22


@dataclass(frozen=True)
class Dims:
    """Problem dimensions: outputs ``p``, inputs ``d``, sample count ``n``."""

    p: int
    d: int
    n: int

    def __post_init__(self):
        if not (self.p >= self.d >= 1):
            raise ValueError(f"need p >= d >= 1, got p={self.p}, d={self.d}")
        if self.n < self.d:
            raise ValueError(f"need n >= d so the sample covariance is invertible, got n={self.n}, d={self.d}")


@dataclass
class ProblemInstance:
    """Ground truth of the planted model: weights M, covariance Sigma, noise Omega."""

    M: np.ndarray
    Sigma: np.ndarray
    Omega: np.ndarray

    def __post_init__(self):
        self.M = np.asarray(self.M, dtype=float)
        if self.M.ndim != 2:
            raise ValueError("M must be a p x d matrix")
        p, d = self.M.shape
        self.Sigma = check_symmetric(self.Sigma, "Sigma")
        self.Omega = check_symmetric(self.Omega, "Omega")
        if self.Sigma.shape != (d, d):
            raise ValueError(f"Sigma must be {d} x {d}")
        if self.Omega.shape != (p, p):
            raise ValueError(f"Omega must be {p} x {p}")

    @property
    def p(self) -> int:
        return self.M.shape[0]

    @property
    def d(self) -> int:
        return self.M.shape[1]

    @property
    def noise_floor(self) -> float:
        """Irreducible loss: half the noise trace."""
        return 0.5 * float(np.trace(self.Omega))

    @cached_property
    def sigma_factors(self) -> SpdFactors:
        return spd_factor(self.Sigma)

    @cached_property
    def omega_half(self) -> np.ndarray:
        return psd_sqrt(self.Omega)

    @cached_property
    def m_sigma_half(self) -> np.ndarray:
        """The whitened weight matrix ``M Sigma^{1/2}``."""
        return self.M @ self.sigma_factors.sqrt


@dataclass
class Dataset:
    """Covariate/response pairs; the noise realization is kept when available."""

    X: np.ndarray
    Y: np.ndarray
    Z: np.ndarray | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.Y = np.asarray(self.Y, dtype=float)
        if self.X.ndim != 2 or self.Y.ndim != 2 or self.X.shape[0] != self.Y.shape[0]:
            raise ValueError("X and Y must be 2-d with one row per sample")
        if self.Z is not None:
            self.Z = np.asarray(self.Z, dtype=float)
            if self.Z.shape != self.Y.shape:
                raise ValueError("Z must match Y in shape")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def p(self) -> int:
        return self.Y.shape[1]

    def subset(self, indices: np.ndarray) -> "Dataset":
        z = None if self.Z is None else self.Z[indices]
        return Dataset(self.X[indices], self.Y[indices], z)

    def sample_covariance(self) -> np.ndarray:
        return sym(self.X.T @ self.X / self.n)


@dataclass
class Theta:
    """Attention parameters: value map ``A`` (p x d) and score form ``B`` (d x d)."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.B = np.asarray(self.B, dtype=float)
        if self.A.ndim != 2 or self.B.ndim != 2:
            raise ValueError("A and B must be matrices")
        d = self.A.shape[1]
        if self.B.shape != (d, d):
            raise ValueError(f"B must be {d} x {d} to match A")
        if not (np.isfinite(self.A).all() and np.isfinite(self.B).all()):
            raise ValueError("theta has non-finite entries")

    @property
    def p(self) -> int:
        return self.A.shape[0]

    @property
    def d(self) -> int:
        return self.A.shape[1]

    def stack(self) -> np.ndarray:
        """The (p + d) x d vertical concatenation of A over B."""
        return np.vstack([self.A, self.B])

    @staticmethod
    def from_stack(stacked: np.ndarray, p: int) -> "Theta":
        return Theta(stacked[:p], stacked[p:])

    def copy(self) -> "Theta":
        return Theta(self.A.copy(), self.B.copy())


@dataclass
class AttentionStats:
    """Per-query softmax weights and their first two moments.

    ``W[i, j]`` is the weight sample ``i`` places on sample ``j``;
    ``Mu[i]`` is the weighted mean of the covariates and ``SigmaLocal[i]``
    their weighted covariance around that mean.
    """

    W: np.ndarray
    Mu: np.ndarray
    SigmaLocal: np.ndarray = field(repr=False)


def sample_instance(dims: Dims, seed: int) -> ProblemInstance:
    """Draw a normalized random instance.

    ``M`` is a Gaussian matrix rescaled to operator norm 1/32, ``Sigma`` is a
    ridge-regularized Gram matrix of a square Gaussian matrix rescaled to
    operator norm 1, and ``Omega = 0.1 I``.  This puts the instance safely
    inside the regime where the whitened weights have operator norm below
    1/16.
    """
    rng = stream(seed, "instance")
    x = rng.standard_normal((dims.d, dims.d))
    y = rng.standard_normal((dims.p, dims.d))
    m = y / (32.0 * op_norm(y))
    gram = 0.1 * np.eye(dims.d) + x @ x.T
    sigma = sym(gram / op_norm(gram))
    omega = 0.1 * np.eye(dims.p)
    return ProblemInstance(M=m, Sigma=sigma, Omega=omega)


def sample_dataset(instance: ProblemInstance, n: int, seed: int, index: int = 0) -> Dataset:
    """Draw ``n`` samples from the instance; ``index`` selects a fresh batch.

    Covariates are ``Sigma^{1/2} g`` with standard normal ``g`` and the noise
    is ``Omega^{1/2} h``, so the covariance factors are shared with the rest
    of the package.
    """
    if n < 1:
        raise ValueError("need n >= 1")
    rng = stream(seed, "dataset", index)
    g = rng.standard_normal((n, instance.d))
    h = rng.standard_normal((n, instance.p))
    x = g @ instance.sigma_factors.sqrt
    z = h @ instance.omega_half
    y = x @ instance.M.T + z
    return Dataset(X=x, Y=y, Z=z)


def random_theta(p: int, d: int, rng: np.random.Generator, scale: float = 1.0) -> Theta:
    """Theta with i.i.d. N(0, scale^2) entries."""
    return Theta(scale * rng.standard_normal((p, d)), scale * rng.standard_normal((d, d)))


def attention_weights(b: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Row-stochastic softmax weights ``W[i, j] ∝ exp(x_i^T B x_j)``.

    The per-row maximum is subtracted before exponentiation; bilinear scores
    grow quadratically with the covariate scale and overflow otherwise.  The
    shift leaves each row's softmax unchanged.
    """
    x = np.asarray(x, dtype=float)
    scores = x @ np.asarray(b, dtype=float) @ x.T
    scores -= scores.max(axis=1, keepdims=True)
    w = np.exp(scores)
    w /= w.sum(axis=1, keepdims=True)
    return w


def attention_moments(b: np.ndarray, x: np.ndarray) -> AttentionStats:
    """Softmax weights plus weighted means and local covariances.

    ``SigmaLocal[i]`` accumulates ``sum_j W[i,j] (x_j - mu_i)(x_j - mu_i)^T``
    and is symmetrized afterwards; accumulation order otherwise leaves it
    asymmetric at roundoff level, which breaks downstream PSD checks.
    """
    x = np.asarray(x, dtype=float)
    n, d = x.shape
    w = attention_weights(b, x)
    mu = w @ x
    sig = np.empty((n, d, d))
    chunk = max(1, _MOMENT_CHUNK_FLOATS // max(n * d, 1))
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        diff = x[None, :, :] - mu[start:stop, None, :]
        sig[start:stop] = np.einsum("ij,ijk,ijl->ikl", w[start:stop], diff, diff, optimize=True)
    sig = 0.5 * (sig + sig.transpose(0, 2, 1))
    return AttentionStats(W=w, Mu=mu, SigmaLocal=sig)


def predict(theta: Theta, x_train: np.ndarray, x_query: np.ndarray) -> np.ndarray:
    """Attention prediction for one fresh query against stored covariates."""
    x_train = np.asarray(x_train, dtype=float)
    x_query = np.asarray(x_query, dtype=float)
    if x_train.ndim != 2 or x_train.shape[0] < 1:
        raise ValueError("x_train must hold at least one row")
    scores = x_train @ (theta.B.T @ x_query)
    scores -= scores.max()
    w = np.exp(scores)
    w /= w.sum()
    return theta.A @ (w @ x_train)
