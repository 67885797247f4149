"""Geometry of the solution manifold of the regularized population objective.

The global minima of Q form a smooth manifold: with ``U diag(gamma) V^T`` a
singular value decomposition of the whitened weights ``M Sigma^{1/2}``, every
minimizer has the form

    A = U Gamma^{1/2} J^T Sigma^{-1/2},
    B = Sigma^{-1/2} V Gamma^{1/2} J^T Sigma^{-1/2},

for an orthogonal J.  Distances to that manifold are measured in the norm
weighted by the extended covariance P = blockdiag(I_p, Sigma); in that
geometry Q is one-point strongly convex and smooth near the manifold, with
constants computable from the singular values of ``M Sigma^{1/2}`` and the
spectrum of Sigma.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .linalg import polar, random_orthogonal, sym
from .losses import population_gradient, population_objective
from .model import ProblemInstance, Theta
from .rng import stream

__all__ = [
    "ManifoldBasis",
    "LandscapeConstants",
    "ProjectionResult",
    "LandscapeReport",
    "AssumptionReport",
    "ProjectionError",
    "ProjectionTracker",
    "build_basis",
    "manifold_point",
    "p_inner",
    "p_norm",
    "project",
    "landscape_check",
    "assumption_check",
]

# multistart budget for the projection solver: 8 random starts per determinant
# component, on top of two warm starts from the polar factor of the linear term
_RANDOM_RESTARTS = 16
_MAX_ITERS = 150
# the descent phase only needs to rank the basins; the Newton polish then
# drives the stationarity residual to machine precision, far beyond the 1e-14
# relative decrease a pure first-order loop could certify
_REL_DECREASE_TOL = 1e-7
_ARMIJO_C = 1e-4
#: fixed internal seed; projections must be pure functions of their inputs
_PROJECT_SEED = 0x5EED_0B57

_ORTHOGONALITY_TOL = 1e-8


class ProjectionError(RuntimeError):
    """The projection solver failed to make progress."""


@dataclass
class ManifoldBasis:
    """Whitened-weight SVD factors plus the covariance factors used everywhere.

    ``gamma`` holds the singular values of ``M Sigma^{1/2}`` in non-increasing
    order; all are strictly positive for a valid basis.
    """

    U: np.ndarray
    gamma: np.ndarray
    V: np.ndarray
    sigma: np.ndarray
    sigma_half: np.ndarray
    sigma_neg_half: np.ndarray
    sigma_inv: np.ndarray

    @property
    def p(self) -> int:
        return self.U.shape[0]

    @property
    def d(self) -> int:
        return self.U.shape[1]

    @cached_property
    def P(self) -> np.ndarray:
        """Extended covariance blockdiag(I_p, Sigma)."""
        p, d = self.p, self.d
        out = np.zeros((p + d, p + d))
        out[:p, :p] = np.eye(p)
        out[p:, p:] = self.sigma
        return out

    @cached_property
    def _point_left(self) -> np.ndarray:
        """Stacked left factor [U; Sigma^{-1/2} V] Gamma^{1/2} of manifold points."""
        g_half = np.sqrt(self.gamma)
        return np.vstack([self.U * g_half, self.sigma_neg_half @ (self.V * g_half)])


@dataclass
class LandscapeConstants:
    """Curvature and radius constants of the landscape near the solution manifold."""

    k0: float
    k1: float
    alpha: float
    beta: float
    eps0: float
    eps1: float
    alpha_tilde: float
    beta_tilde: float
    nu: float
    eta_star: float
    mu_star: float


@dataclass
class ProjectionResult:
    """Nearest manifold point in the P-norm, with its stationarity certificate.

    ``symmetry_residual`` is the asymmetry of ``Delta^T P theta_star Sigma``;
    at a valid stationary point of the projection problem that matrix is
    symmetric, so the residual (relative to ``symmetry_scale``) certifies
    convergence.
    """

    theta_star: Theta
    j_star: np.ndarray
    dist_p: float
    symmetry_residual: float
    symmetry_scale: float
    converged: bool


@dataclass
class LandscapeReport:
    """Pointwise check of the one-point convexity/smoothness/descent bounds."""

    dist_p: float
    in_ball: bool
    convexity_lhs: float
    convexity_rhs: float
    convexity_ok: bool
    smoothness_lhs: float
    smoothness_rhs: float
    smoothness_ok: bool
    descent_lhs: float
    descent_rhs: float
    descent_ok: bool
    symmetry_residual: float
    symmetry_scale: float


@dataclass
class AssumptionReport:
    """Booleans and margins for the model assumptions on an instance."""

    a1_holds: bool
    a1_margin: float
    a2_holds: bool
    a2_margin: float
    a3_holds: bool
    a3_margin: float
    integrability_holds: bool
    integrability_margin: float
    eps0: float
    eps1: float
    eta_star: float
    mu_star: float


def _constants_from_spectra(gamma: np.ndarray, sig_min: float, sig_max: float) -> LandscapeConstants:
    k0 = 2.0 * float(gamma[-1]) * sig_min
    k1 = 2.0 * float(gamma[0]) * sig_max
    kappa2 = (sig_max / sig_min) ** 2
    alpha = k0
    beta = (14.0 + 7.0 * kappa2) * k1**2 + 21.0 * sig_max**2 * k1 + 7.0 * sig_max**4
    eps0 = min(
        1.0,
        math.sqrt(k0 / (3.0 * k1 * sig_max)),
        (k0 / 2.0) ** 0.25 / math.sqrt(sig_max),
    )
    eps1 = (1.0 / (2.0 * math.sqrt(sig_max))) * (1.0 / 16.0 - math.sqrt(float(gamma[0])))
    alpha_tilde = 2.0 * alpha / 3.0
    beta_tilde = 3.0 * beta + alpha**2 / 12.0
    nu = max(3.0 / alpha + alpha / (12.0 * beta), 6.0 + alpha**2 / (6.0 * beta))
    eta_star = alpha_tilde / beta_tilde
    mu_star = 1.0 - alpha_tilde**2 / beta_tilde
    return LandscapeConstants(
        k0=k0,
        k1=k1,
        alpha=alpha,
        beta=beta,
        eps0=eps0,
        eps1=eps1,
        alpha_tilde=alpha_tilde,
        beta_tilde=beta_tilde,
        nu=nu,
        eta_star=eta_star,
        mu_star=mu_star,
    )


def build_basis(instance: ProblemInstance) -> tuple[ManifoldBasis, LandscapeConstants]:
    """SVD basis of the solution manifold and the landscape constants.

    Raises ``ValueError`` when ``M Sigma^{1/2}`` is column-rank deficient;
    every formula below divides by its smallest singular value.
    """
    fac = instance.sigma_factors
    msh = instance.m_sigma_half
    u, gamma, vh = np.linalg.svd(msh, full_matrices=False)
    if gamma[-1] <= 1e-13 * max(gamma[0], 1.0):
        raise ValueError("M Sigma^{1/2} is rank deficient; the solution manifold is not defined")
    sig_eigs = np.linalg.eigvalsh(instance.Sigma)
    basis = ManifoldBasis(
        U=u,
        gamma=gamma,
        V=vh.T,
        sigma=instance.Sigma,
        sigma_half=fac.sqrt,
        sigma_neg_half=fac.inv_sqrt,
        sigma_inv=fac.inv,
    )
    constants = _constants_from_spectra(gamma, float(sig_eigs[0]), float(sig_eigs[-1]))
    return basis, constants


def manifold_point(basis: ManifoldBasis, j: np.ndarray) -> Theta:
    """The minimizer parameterized by the orthogonal matrix ``j``."""
    j = np.asarray(j, dtype=float)
    d = basis.d
    if j.shape != (d, d):
        raise ValueError(f"J must be {d} x {d}")
    if np.linalg.norm(j.T @ j - np.eye(d)) >= _ORTHOGONALITY_TOL:
        raise ValueError("J is not orthogonal")
    stacked = basis._point_left @ j.T @ basis.sigma_neg_half
    return Theta.from_stack(stacked, basis.p)


def p_inner(theta1: Theta, theta2: Theta, basis: ManifoldBasis) -> float:
    """Extended-covariance inner product ``tr(theta1^T P theta2)``."""
    return float(
        np.sum(theta1.A * theta2.A) + np.sum(theta1.B * (basis.sigma @ theta2.B))
    )


def p_norm(theta: Theta, basis: ManifoldBasis) -> float:
    return math.sqrt(max(p_inner(theta, theta, basis), 0.0))


def _projection_linear_term(basis: ManifoldBasis, theta: Theta) -> np.ndarray:
    """C such that the projection objective is -tr(J^T C) + tr(Sigma^-1 J Gamma J^T)."""
    inner = theta.A.T @ basis.U + theta.B.T @ basis.sigma_half @ basis.V
    return basis.sigma_neg_half @ inner * np.sqrt(basis.gamma)[None, :]


def _objective_batch(j: np.ndarray, c: np.ndarray, sigma_inv: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    jg = j * gamma[None, None, :]
    lin = np.einsum("rij,ij->r", j, c)
    quad = np.einsum("ik,rkj,rij->r", sigma_inv, jg, j)
    return quad - lin


def _minimize_over_orthogonal(
    c: np.ndarray,
    sigma_inv: np.ndarray,
    gamma: np.ndarray,
    starts: np.ndarray,
) -> tuple[np.ndarray, float, bool]:
    """Riemannian descent with polar retraction, batched over the start set.

    Steps follow the tangent projection of the Euclidean gradient with a
    per-start Armijo backtracking step size seeded at the inverse of a crude
    gradient-Lipschitz estimate.  A start counts as converged once its
    objective decreases by less than the basin-ranking tolerance.  Returns the
    best final iterate, its objective, and whether that start converged.
    """
    j = starts.copy()
    r = j.shape[0]
    f = _objective_batch(j, c, sigma_inv, gamma)
    lipschitz = 2.0 * float(np.linalg.norm(sigma_inv, 2)) * float(gamma[0]) + float(np.linalg.norm(c)) + 1e-12
    step = np.full(r, min(1.0, 1.0 / lipschitz))
    converged = np.zeros(r, dtype=bool)
    f_start = f.copy()
    for _ in range(_MAX_ITERS):
        grad = 2.0 * (sigma_inv @ (j * gamma[None, None, :])) - c[None, :, :]
        jt_g = np.matmul(j.transpose(0, 2, 1), grad)
        xi = np.matmul(j, 0.5 * (jt_g - jt_g.transpose(0, 2, 1)))
        g2 = np.sum(xi * xi, axis=(1, 2))
        converged |= g2 <= 1e-30
        if converged.all():
            break
        accepted = converged.copy()
        cand = j.copy()
        f_cand = f.copy()
        for _ in range(60):
            trial = polar(j - step[:, None, None] * xi)
            f_trial = _objective_batch(trial, c, sigma_inv, gamma)
            ok = (f_trial <= f - _ARMIJO_C * step * g2) & ~accepted
            cand[ok] = trial[ok]
            f_cand[ok] = f_trial[ok]
            accepted |= ok
            if accepted.all():
                break
            step[~accepted] *= 0.5
        # starts that cannot satisfy the decrease at machine-level steps are done
        converged |= ~accepted
        decrease = f - f_cand
        converged |= decrease <= _REL_DECREASE_TOL * np.maximum(1.0, np.abs(f_cand))
        j, f = cand, f_cand
        step = np.minimum(step * 1.3, 1e6)
    best = int(np.argmin(f))
    if f[best] > f_start.min() + 1e-12 * max(1.0, abs(f_start.min())):
        raise ProjectionError(
            f"projection failed to improve on its starts: best {f[best]!r} vs start {f_start.min()!r}"
        )
    return j[best], float(f[best]), bool(converged[best])


_SKEW_BASIS_CACHE: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}


def _skew_basis(d: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Basis tensor of d x d skew matrices plus the (row, col) index arrays."""
    cached = _SKEW_BASIS_CACHE.get(d)
    if cached is not None:
        return cached
    rows, cols = np.triu_indices(d, k=1)
    basis = np.zeros((rows.size, d, d))
    arange = np.arange(rows.size)
    basis[arange, rows, cols] = 1.0
    basis[arange, cols, rows] = -1.0
    _SKEW_BASIS_CACHE[d] = (basis, rows, cols)
    return basis, rows, cols


def _newton_polish(
    j: np.ndarray,
    c: np.ndarray,
    sigma_inv: np.ndarray,
    gamma: np.ndarray,
    max_iters: int = 12,
) -> np.ndarray:
    """Quadratically convergent refinement of a near-stationary orthogonal factor.

    First-order descent stalls once objective decreases fall below float
    resolution, leaving the factor accurate only to the square root of machine
    precision.  A few Newton steps on the Lie algebra (skew directions E,
    Hessian bilinear form ``2 tr(Gamma E^T S E) + tr(E^2 sym(K))`` with
    ``S = J^T Sigma^-1 J`` and ``K = J^T grad``) push it to full precision.
    Steps that fail to decrease the objective are rejected, so the polish can
    only improve the multistart result.
    """
    d = j.shape[0]
    if d < 2:
        return j
    basis, rows, cols = _skew_basis(d)
    f_best = float(_objective_batch(j[None], c, sigma_inv, gamma)[0])
    scale = max(1.0, float(np.linalg.norm(c)), float(gamma[0]))
    eye = np.eye(d)
    for _ in range(max_iters):
        ge = 2.0 * sigma_inv @ (j * gamma[None, :]) - c
        k = j.T @ ge
        g_skew = 0.5 * (k - k.T)
        if np.linalg.norm(g_skew) <= 1e-15 * scale:
            break
        ks = 0.5 * (k + k.T)
        s = j.T @ sigma_inv @ j
        m = 4.0 * ((s @ basis) * gamma[None, None, :]) - (ks @ basis + basis @ ks)
        m = 0.5 * (m - m.transpose(0, 2, 1))
        # column k of the Hessian matrix holds the pair components of the
        # image of basis element k; the assembled map is twice the Hessian
        # bilinear form, so the right-hand side carries a factor 2 as well
        amat = m[:, rows, cols].T
        rhs = -2.0 * g_skew[rows, cols]
        try:
            sol = np.linalg.solve(amat, rhs)
        except np.linalg.LinAlgError:
            break
        e = np.tensordot(sol, basis, axes=1)
        cand = polar(j @ (eye + e))
        f_new = float(_objective_batch(cand[None], c, sigma_inv, gamma)[0])
        if f_new > f_best + 1e-15 * max(1.0, abs(f_best)):
            break
        j, f_best = cand, min(f_best, f_new)
    return j


def _start_set(c: np.ndarray, d: int, extra: list[np.ndarray] | None = None) -> np.ndarray:
    starts: list[np.ndarray] = []
    if extra:
        starts.extend(np.asarray(e, dtype=float) for e in extra)
    u, _, vh = np.linalg.svd(c)
    pol = u @ vh
    starts.append(pol)
    flip = np.eye(d)
    flip[-1, -1] = -1.0
    starts.append(u @ flip @ vh)
    rng = stream(_PROJECT_SEED, "projection-restarts", d)
    for _ in range(_RANDOM_RESTARTS // 2):
        starts.append(random_orthogonal(rng, d, det=1))
        starts.append(random_orthogonal(rng, d, det=-1))
    return np.stack(starts)


def _finish_projection(basis: ManifoldBasis, theta: Theta, j: np.ndarray, converged: bool) -> ProjectionResult:
    theta_star = manifold_point(basis, j)
    delta = Theta(theta.A - theta_star.A, theta.B - theta_star.B)
    dist = p_norm(delta, basis)
    k = (delta.A.T @ theta_star.A + delta.B.T @ basis.sigma @ theta_star.B) @ basis.sigma
    residual = float(np.linalg.norm(k - k.T))
    scale = float(np.linalg.norm(k))
    return ProjectionResult(
        theta_star=theta_star,
        j_star=j,
        dist_p=dist,
        symmetry_residual=residual,
        symmetry_scale=scale,
        converged=converged,
    )


def project(basis: ManifoldBasis, theta: Theta, starts: list[np.ndarray] | None = None) -> ProjectionResult:
    """P-norm projection of ``theta`` onto the solution manifold.

    The orthogonal factor is found by multistart Riemannian descent: two warm
    starts from the polar factor of the linear term (one per determinant
    component) plus 8 random starts per component.  The objective is quadratic
    in J through ``tr(Sigma^-1 J Gamma J^T)``, so a single Procrustes solve is
    not sufficient unless Sigma or Gamma is a multiple of the identity.
    Additional ``starts`` may be supplied (used by the warm-started tracker).
    """
    c = _projection_linear_term(basis, theta)
    j, _, converged = _minimize_over_orthogonal(
        c, basis.sigma_inv, basis.gamma, _start_set(c, basis.d, extra=starts)
    )
    j = _newton_polish(j, c, basis.sigma_inv, basis.gamma)
    return _finish_projection(basis, theta, j, converged)


class ProjectionTracker:
    """Projection of a slowly moving iterate sequence.

    Between full multistart solves the previous orthogonal factor seeds a
    single-start descent, which is enough while consecutive iterates stay in
    the same projection basin; every ``refresh_every`` calls the full start
    set is rerun and the better minimizer wins.
    """

    def __init__(self, basis: ManifoldBasis, refresh_every: int = 50):
        self.basis = basis
        self.refresh_every = int(refresh_every)
        self._j: np.ndarray | None = None
        self._calls = 0

    def project(self, theta: Theta) -> ProjectionResult:
        full = self._j is None or self._calls % self.refresh_every == 0
        self._calls += 1
        if full:
            extra = [self._j] if self._j is not None else None
            result = project(self.basis, theta, starts=extra)
        else:
            c = _projection_linear_term(self.basis, theta)
            j, _, converged = _minimize_over_orthogonal(
                c, self.basis.sigma_inv, self.basis.gamma, self._j[None, :, :]
            )
            j = _newton_polish(j, c, self.basis.sigma_inv, self.basis.gamma)
            result = _finish_projection(self.basis, theta, j, converged)
        self._j = result.j_star
        return result


def landscape_check(
    theta: Theta,
    instance: ProblemInstance,
    basis: ManifoldBasis | None = None,
    constants: LandscapeConstants | None = None,
    projection: ProjectionResult | None = None,
) -> LandscapeReport:
    """Evaluate the one-point convexity, smoothness, and descent bounds at theta.

    The bounds are only guaranteed inside the ball of radius eps0 around the
    manifold; outside it the report still carries both sides, with ``in_ball``
    false.  Booleans use a 1e-12 relative slack so exact-zero boundary cases
    (theta on the manifold) do not flip on roundoff.
    """
    if basis is None or constants is None:
        basis, constants = build_basis(instance)
    if projection is None:
        projection = project(basis, theta)
    delta = Theta(theta.A - projection.theta_star.A, theta.B - projection.theta_star.B)
    dist2 = projection.dist_p**2
    grad = population_gradient(theta, instance)
    # <P^-1 g, delta>_P collapses to the plain trace inner product <g, delta>
    conv_lhs = float(np.sum(grad.dA * delta.A) + np.sum(grad.dB * delta.B))
    conv_rhs = constants.alpha * dist2
    smooth_lhs = float(np.sum(grad.dA * grad.dA) + np.sum(grad.dB * (basis.sigma_inv @ grad.dB)))
    smooth_rhs = constants.beta * dist2
    report = population_objective(theta, instance)
    descent_lhs = report.q_pop - instance.noise_floor
    descent_rhs = 0.5 * math.sqrt(constants.beta) * dist2
    def _ge(lhs: float, rhs: float) -> bool:
        return lhs >= rhs - 1e-12 * max(abs(lhs), abs(rhs), 1.0)

    return LandscapeReport(
        dist_p=projection.dist_p,
        in_ball=projection.dist_p <= constants.eps0,
        convexity_lhs=conv_lhs,
        convexity_rhs=conv_rhs,
        convexity_ok=_ge(conv_lhs, conv_rhs),
        smoothness_lhs=smooth_lhs,
        smoothness_rhs=smooth_rhs,
        smoothness_ok=_ge(smooth_rhs, smooth_lhs),
        descent_lhs=descent_lhs,
        descent_rhs=descent_rhs,
        descent_ok=_ge(descent_rhs, descent_lhs),
        symmetry_residual=projection.symmetry_residual,
        symmetry_scale=projection.symmetry_scale,
    )


def assumption_check(instance: ProblemInstance) -> AssumptionReport:
    """Margins for the model assumptions plus the derived radii and rates.

    A1: Sigma full rank.  A2: p >= d and the whitened weights have full column
    rank.  A3: whitened weights have operator norm below 1/16.  The stricter
    integrability premise asks the square root of the top singular value to be
    below 1/16; the landscape constants are reported as NaN when A1 or A2
    fails, and eps1 can be negative whenever the integrability premise fails.
    """
    from .linalg import psd_sqrt

    sig_eigs = np.linalg.eigvalsh(sym(instance.Sigma))
    a1_margin = float(sig_eigs[0])
    a1 = a1_margin > 0.0
    msh = instance.M @ (instance.sigma_factors.sqrt if a1 else psd_sqrt(instance.Sigma))
    gamma = np.linalg.svd(msh, compute_uv=False)
    a2_margin = float(gamma[-1])
    a2 = instance.p >= instance.d and a2_margin > 0.0
    a3_margin = 1.0 / 16.0 - float(gamma[0])
    integr_margin = 1.0 / 16.0 - math.sqrt(float(gamma[0]))
    if a1 and a2:
        consts = _constants_from_spectra(gamma, float(sig_eigs[0]), float(sig_eigs[-1]))
        eps0, eps1 = consts.eps0, consts.eps1
        eta_star, mu_star = consts.eta_star, consts.mu_star
    else:
        eps0 = eps1 = eta_star = mu_star = float("nan")
    return AssumptionReport(
        a1_holds=a1,
        a1_margin=a1_margin,
        a2_holds=a2,
        a2_margin=a2_margin,
        a3_holds=a3_margin > 0.0,
        a3_margin=a3_margin,
        integrability_holds=integr_margin > 0.0,
        integrability_margin=integr_margin,
        eps0=eps0,
        eps1=eps1,
        eta_star=eta_star,
        mu_star=mu_star,
    )
