"""Spectral initialization and preconditioned gradient descent.

The descent evolves the value map ``A`` with plain gradient steps and the
score form ``B`` with steps preconditioned by the inverse sample covariance,
matching the block structure of the extended covariance.  The training
objective always includes the balance penalty; the plain-SGD baseline drops
both the preconditioner and the penalty and starts from a standard normal
initialization.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .linalg import spd_factor
from .losses import (
    GradTheta,
    empirical_loss_and_gradient,
    expected_empirical_gradient,
    population_gradient,
    population_objective,
)
from .model import Dataset, ProblemInstance, Theta, random_theta
from .rng import stream

__all__ = [
    "OptConfig",
    "TraceRecord",
    "DivergenceError",
    "spectral_init",
    "spectral_theta",
    "pgd_step",
    "run",
    "sgd_baseline",
]

_ORACLES = ("full_batch", "minibatch", "fresh_batches", "population")
_INITS = ("spectral", "random", "explicit")

#: abort once any recorded loss passes this value
_DIVERGENCE_CAP = 1e12


class DivergenceError(RuntimeError):
    """An iterate blew up; carries the failing iteration index."""

    def __init__(self, message: str, iteration: int):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration


@dataclass
class OptConfig:
    """Settings for one optimization run.

    ``oracle`` selects how gradients are obtained: ``full_batch`` uses the
    whole dataset, ``minibatch`` uses ``k`` samples drawn without replacement
    each iteration, ``fresh_batches`` averages ``oracle_batches`` freshly
    sampled datasets per iteration (requires the generating instance), and
    ``population`` injects the exact population gradient and true covariance
    (diagnostic runs; also requires the instance).
    """

    eta: float
    m: int
    oracle: str = "minibatch"
    k: int | None = None
    oracle_batches: int | None = None
    init: str = "spectral"
    init_scale: float = 1.0
    init_theta: Theta | None = None
    seed: int = 0
    record_population: bool = False

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("step size must be positive")
        if self.m < 0:
            raise ValueError("iteration budget must be non-negative")
        if self.oracle not in _ORACLES:
            raise ValueError(f"unknown oracle {self.oracle!r}")
        if self.init not in _INITS:
            raise ValueError(f"unknown init {self.init!r}")
        if self.oracle == "minibatch" and (self.k is None or self.k < 1):
            raise ValueError("minibatch oracle needs k >= 1")
        if self.oracle == "fresh_batches" and (self.oracle_batches is None or self.oracle_batches < 1):
            raise ValueError("fresh_batches oracle needs oracle_batches >= 1")
        if self.init == "explicit" and self.init_theta is None:
            raise ValueError("explicit init needs init_theta")


@dataclass
class TraceRecord:
    """Per-iteration state snapshot; optional fields stay None when unrecorded."""

    t: int
    l_hat: float
    q_hat: float
    grad_norm: float
    wall_ms: float
    l_pop: float | None = None
    excess: float | None = None
    dist_p: float | None = None


def spectral_theta(m_hat: np.ndarray, sigma_hat: np.ndarray) -> Theta:
    """Balanced initialization from weight and covariance estimates.

    With ``U G V^T`` the SVD of ``m_hat sigma_hat^{1/2}``, returns
    ``A = U G^{1/2} sigma_hat^{-1/2}`` and
    ``B = sigma_hat^{-1/2} V G^{1/2} sigma_hat^{-1/2}``.  By construction
    ``A^T A = B^T sigma_hat B``, so the balance penalty vanishes at this
    point.
    """
    fac = spd_factor(sigma_hat)
    u, g, vh = np.linalg.svd(m_hat @ fac.sqrt, full_matrices=False)
    g_half = np.sqrt(g)
    a = (u * g_half) @ fac.inv_sqrt
    b = fac.inv_sqrt @ (vh.T * g_half) @ fac.inv_sqrt
    return Theta(A=a, B=b)


def spectral_init(data: Dataset) -> tuple[Theta, np.ndarray, np.ndarray]:
    """Data-driven spectral initialization.

    Estimates the covariance ``sigma_hat = X^T X / n`` and the regression
    weights ``m_hat = (Y^T X / n) sigma_hat^{-1}``, then places theta at the
    balanced point built from their SVD.  Returns ``(theta0, sigma_hat,
    m_hat)``.
    """
    sigma_hat = data.sample_covariance()
    try:
        fac = spd_factor(sigma_hat)
    except ValueError as exc:
        raise ValueError("insufficient samples / degenerate covariance") from exc
    m_hat = (data.Y.T @ data.X / data.n) @ fac.inv
    return spectral_theta(m_hat, sigma_hat), sigma_hat, m_hat


def pgd_step(theta: Theta, grad: GradTheta, sigma_hat_inv: np.ndarray, eta: float) -> Theta:
    """One preconditioned step: plain on A, inverse-covariance on B."""
    a = theta.A - eta * grad.dA
    b = theta.B - eta * sigma_hat_inv @ grad.dB
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise DivergenceError("step produced non-finite parameters", iteration=-1)
    return Theta(A=a, B=b)


def _plain_step(theta: Theta, grad: GradTheta, eta: float) -> Theta:
    a = theta.A - eta * grad.dA
    b = theta.B - eta * grad.dB
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise DivergenceError("step produced non-finite parameters", iteration=-1)
    return Theta(A=a, B=b)


def _initial_theta(config: OptConfig, data: Dataset | None, p: int, d: int) -> Theta:
    if config.init == "spectral":
        if data is None:
            raise ValueError("spectral init needs data")
        theta, _, _ = spectral_init(data)
        return theta
    if config.init == "random":
        return random_theta(p, d, stream(config.seed, "random-init"), scale=config.init_scale)
    return config.init_theta.copy()


def _descend(
    config: OptConfig,
    data: Dataset | None,
    instance: ProblemInstance | None,
    precondition: bool,
    regularize: bool,
) -> tuple[Theta, list[TraceRecord]]:
    if config.oracle in ("fresh_batches", "population") and instance is None:
        raise ValueError(f"{config.oracle} oracle needs the generating instance")
    if config.record_population and instance is None:
        raise ValueError("recording population quantities needs the generating instance")
    if config.oracle != "population" and data is None:
        raise ValueError(f"{config.oracle} oracle needs data")
    if config.oracle == "minibatch" and config.k > data.n:
        raise ValueError(f"minibatch size {config.k} exceeds n={data.n}")
    if not regularize and config.oracle in ("fresh_batches", "population"):
        raise ValueError(f"{config.oracle} oracle is only wired for the regularized objective")

    if data is not None:
        p, d, n = data.p, data.d, data.n
    else:
        p, d, n = instance.p, instance.d, None
    theta = _initial_theta(config, data, p, d)

    if config.oracle == "population":
        sigma_hat = instance.Sigma
    else:
        sigma_hat = data.sample_covariance()
    factors = spd_factor(sigma_hat)

    tracker = None
    if config.record_population:
        from .manifold import ProjectionTracker, build_basis

        basis, _ = build_basis(instance)
        tracker = ProjectionTracker(basis)

    def oracle(t: int, th: Theta) -> tuple[float, float, GradTheta]:
        if config.oracle == "full_batch":
            return empirical_loss_and_gradient(th, data, sigma_hat, include_regularizer=regularize)
        if config.oracle == "minibatch":
            idx = stream(config.seed, "minibatch", t).choice(n, size=config.k, replace=False)
            sub = data.subset(idx)
            # the balance penalty keeps the full-sample covariance, frozen at init
            return empirical_loss_and_gradient(th, sub, sigma_hat, include_regularizer=regularize)
        if config.oracle == "fresh_batches":
            est = expected_empirical_gradient(
                th, instance, n, config.oracle_batches, config.seed, batch_start=t * config.oracle_batches
            )
            l_hat, r_hat, _ = empirical_loss_and_gradient(th, data, sigma_hat, include_regularizer=False)
            return l_hat, r_hat, est.grad
        report = population_objective(th, instance)
        return report.l_pop, report.r_pop, population_gradient(th, instance)

    records: list[TraceRecord] = []
    started = time.perf_counter()
    for t in range(config.m + 1):
        l_hat, r_hat, grad = oracle(t, theta)
        q_hat = l_hat + r_hat if regularize else l_hat
        if not (np.isfinite(l_hat) and np.isfinite(q_hat)) or max(abs(l_hat), abs(q_hat)) > _DIVERGENCE_CAP:
            raise DivergenceError(f"loss diverged: l_hat={l_hat!r}", iteration=t)
        record = TraceRecord(
            t=t,
            l_hat=l_hat,
            q_hat=q_hat,
            grad_norm=grad.frobenius_norm(),
            wall_ms=(time.perf_counter() - started) * 1e3,
        )
        if config.record_population:
            report = population_objective(theta, instance)
            record.l_pop = report.l_pop
            record.excess = report.excess
            record.dist_p = tracker.project(theta).dist_p
        records.append(record)
        if t == config.m:
            break
        try:
            if precondition:
                theta = pgd_step(theta, grad, factors.inv, config.eta)
            else:
                theta = _plain_step(theta, grad, config.eta)
        except DivergenceError as exc:
            raise DivergenceError("step produced non-finite parameters", iteration=t + 1) from exc
    return theta, records


def run(
    config: OptConfig,
    data: Dataset | None,
    instance: ProblemInstance | None = None,
) -> tuple[Theta, list[TraceRecord]]:
    """Preconditioned descent on the regularized objective.

    Covariance factors are computed once before the loop and frozen.  Each
    trace row snapshots the iterate and the gradient evaluated at it; row
    ``t < m`` uses exactly the gradient that produces iterate ``t + 1``, so a
    rerun with the same config and data is bit-identical.
    """
    return _descend(config, data, instance, precondition=True, regularize=True)


def sgd_baseline(
    config: OptConfig,
    data: Dataset | None,
    instance: ProblemInstance | None = None,
) -> tuple[Theta, list[TraceRecord]]:
    """Plain stochastic gradient descent reference.

    No preconditioner and no balance penalty; unless an explicit starting
    point is supplied the run begins at i.i.d. standard normal parameters.
    With matching seeds the minibatch index sequences coincide with those of
    :func:`run`, so the two trainers see the same data order.
    """
    if config.oracle not in ("full_batch", "minibatch"):
        raise ValueError("the baseline supports full_batch and minibatch oracles only")
    if config.init != "explicit":
        config = replace(config, init="random", init_scale=1.0)
    return _descend(config, data, instance, precondition=False, regularize=False)
