"""Dense helpers for small symmetric and orthogonal matrices."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

__all__ = [
    "SpdFactors",
    "spd_factor",
    "psd_sqrt",
    "sym",
    "check_symmetric",
    "polar",
    "random_orthogonal",
    "op_norm",
]

#: relative tolerance under which an input must equal its own transpose
SYM_RTOL = 1e-10


class SpdFactors(NamedTuple):
    sqrt: np.ndarray
    inv_sqrt: np.ndarray
    inv: np.ndarray


def sym(a: np.ndarray) -> np.ndarray:
    """Symmetric part ``(a + a.T) / 2``."""
    return 0.5 * (a + a.T)


def check_symmetric(s: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Validate symmetry within SYM_RTOL (relative) and return the symmetric part."""
    s = np.asarray(s, dtype=float)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError(f"{name} must be square, got shape {s.shape}")
    scale = np.linalg.norm(s)
    if np.linalg.norm(s - s.T) > SYM_RTOL * max(scale, 1e-300):
        raise ValueError(f"{name} is not symmetric")
    return sym(s)


def spd_factor(s: np.ndarray, floor: float | None = None) -> SpdFactors:
    """Factor a symmetric positive-definite matrix into (S^1/2, S^-1/2, S^-1).

    Uses a symmetric eigendecomposition with eigenvalues clamped from below at
    ``floor``.  The default floor is 1e-12 times the largest eigenvalue, which
    keeps nearly singular sample covariances usable without hiding genuinely
    degenerate inputs.

    Raises
    ------
    ValueError
        If ``s`` is not symmetric, or every eigenvalue falls below the floor
        (degenerate SPD input).
    """
    s = check_symmetric(s, "SPD input")
    lam, vec = np.linalg.eigh(s)
    if floor is None:
        floor = 1e-12 * max(lam[-1], 0.0)
    elif floor < 0:
        raise ValueError("floor must be non-negative")
    if lam[-1] < floor or lam[-1] <= 0.0:
        raise ValueError("degenerate SPD input: all eigenvalues below floor")
    lam = np.maximum(lam, floor)
    if lam[0] <= 0.0:
        raise ValueError("degenerate SPD input: non-positive eigenvalue after flooring")
    root = np.sqrt(lam)
    sqrt = (vec * root) @ vec.T
    inv_sqrt = (vec / root) @ vec.T
    inv = (vec / lam) @ vec.T
    return SpdFactors(sym(sqrt), sym(inv_sqrt), sym(inv))


def psd_sqrt(s: np.ndarray) -> np.ndarray:
    """Square root of a symmetric positive *semi*-definite matrix.

    Unlike :func:`spd_factor` this tolerates zero eigenvalues (no inverse is
    formed); small negative eigenvalues from rounding are clipped to zero.
    """
    s = check_symmetric(s, "PSD input")
    lam, vec = np.linalg.eigh(s)
    lam = np.clip(lam, 0.0, None)
    return sym((vec * np.sqrt(lam)) @ vec.T)


def polar(x: np.ndarray) -> np.ndarray:
    """Orthogonal polar factor of ``x`` (batched over leading axes)."""
    u, _, vh = np.linalg.svd(x)
    return u @ vh


def random_orthogonal(rng: np.random.Generator, d: int, det: int | None = None) -> np.ndarray:
    """Haar-random orthogonal matrix, optionally with prescribed determinant sign."""
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    q = q * np.sign(np.diag(r))
    if det is not None:
        if det not in (-1, 1):
            raise ValueError("det must be -1 or +1")
        if np.sign(np.linalg.det(q)) != det:
            q = q.copy()
            q[:, -1] = -q[:, -1]
    return q


def op_norm(a: np.ndarray) -> float:
    """Operator (spectral) norm."""
    return float(np.linalg.norm(a, 2))
