"""Central finite-difference verification of the analytic gradients.

Every gradient formula in the package was derived by hand, so each one is
gated on agreement with central differences of the corresponding scalar
objective before anything downstream may rely on it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .losses import (
    GradTheta,
    empirical_gradient,
    empirical_loss,
    empirical_regularizer,
    population_gradient,
    population_objective,
)
from .model import Dims, Theta, random_theta, sample_dataset, sample_instance
from .rng import stream

__all__ = ["fd_gradient", "max_relative_error", "GradCheckReport", "run_gradcheck"]

#: entries smaller than this are compared absolutely instead of relatively
ABS_FLOOR = 1e-8


def fd_gradient(func, theta: Theta, h: float = 1e-5) -> GradTheta:
    """Central finite differences of a scalar function of theta."""
    out = []
    for arr in (theta.A, theta.B):
        grad = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            ix = it.multi_index
            orig = arr[ix]
            arr[ix] = orig + h
            f_plus = func(theta)
            arr[ix] = orig - h
            f_minus = func(theta)
            arr[ix] = orig
            grad[ix] = (f_plus - f_minus) / (2.0 * h)
        out.append(grad)
    return GradTheta(dA=out[0], dB=out[1])


def max_relative_error(analytic: GradTheta, numeric: GradTheta) -> float:
    """Worst entrywise relative error; tiny entries are compared absolutely."""
    worst = 0.0
    for a, b in ((analytic.dA, numeric.dA), (analytic.dB, numeric.dB)):
        mag = np.maximum(np.abs(a), np.abs(b))
        denom = np.where(mag < ABS_FLOOR, 1.0, mag)
        worst = max(worst, float((np.abs(a - b) / denom).max()))
    return worst


@dataclass
class GradCheckReport:
    points: int
    max_err_loss: float
    max_err_regularized: float
    max_err_population: float
    tolerance: float
    step_sweep: dict[float, float] = field(default_factory=dict)

    @property
    def max_err(self) -> float:
        return max(self.max_err_loss, self.max_err_regularized, self.max_err_population)

    @property
    def passed(self) -> bool:
        return self.max_err < self.tolerance


def run_gradcheck(
    p: int = 3,
    d: int = 2,
    n: int = 8,
    points: int = 100,
    h: float = 1e-5,
    tolerance: float = 1e-5,
    seed: int = 0,
    step_sweep: tuple[float, ...] = (),
) -> GradCheckReport:
    """Compare analytic and finite-difference gradients at random points.

    Checks the in-sample gradient with and without the balance penalty and the
    population gradient, each at ``points`` random (instance, dataset, theta)
    triples.  ``step_sweep`` optionally records the worst error at additional
    finite-difference steps, which exposes the usual discretization/roundoff
    trade-off.
    """
    rng = stream(seed, "gradcheck")
    worst_loss = worst_reg = worst_pop = 0.0
    sweep = {float(hh): 0.0 for hh in step_sweep}
    for i in range(points):
        inst = sample_instance(Dims(p, d, n), seed=int(rng.integers(2**62)))
        data = sample_dataset(inst, n, seed=int(rng.integers(2**62)))
        theta = random_theta(p, d, rng, scale=0.8)
        sigma_hat = data.sample_covariance()

        plain = empirical_gradient(theta, data, sigma_hat, include_regularizer=False)
        fd_plain = fd_gradient(lambda t: empirical_loss(t, data), theta, h)
        worst_loss = max(worst_loss, max_relative_error(plain, fd_plain))

        full = empirical_gradient(theta, data, sigma_hat, include_regularizer=True)

        def regularized(t: Theta) -> float:
            return empirical_loss(t, data) + empirical_regularizer(t, sigma_hat)

        fd_full = fd_gradient(regularized, theta, h)
        worst_reg = max(worst_reg, max_relative_error(full, fd_full))

        pop = population_gradient(theta, inst)
        fd_pop = fd_gradient(lambda t: population_objective(t, inst).q_pop, theta, h)
        worst_pop = max(worst_pop, max_relative_error(pop, fd_pop))

        for hh in sweep:
            fd_h = fd_gradient(regularized, theta, hh)
            sweep[hh] = max(sweep[hh], max_relative_error(full, fd_h))

    return GradCheckReport(
        points=points,
        max_err_loss=worst_loss,
        max_err_regularized=worst_reg,
        max_err_population=worst_pop,
        tolerance=tolerance,
        step_sweep=sweep,
    )
