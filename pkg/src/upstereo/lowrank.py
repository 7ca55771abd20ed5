"""SVD-based low-rank primitives: truncated nuclear norm, its trace
majorizer, and singular-value shrinkage."""

from dataclasses import dataclass

import numpy as np

# rank cutoff of the truncation; fixed to the three-light-dof structure
TRUNCATION_RANK = 3

# singular values below this fraction of the largest count as zero
RANK_EPS = 1e-12


@dataclass(frozen=True)
class MajorizerFactors:
    """Top-three left/right singular vectors of a frozen iterate.

    Held fixed while the surrogate ||X||_* - trace(U3^T X V3) is minimized;
    refreshed only between outer iterations.
    """

    U3: np.ndarray
    V3: np.ndarray


def tnn(X):
    """Truncated nuclear norm: nuclear norm minus the top three singular
    values. Non-negative, and zero exactly on matrices of rank <= 3."""
    s = np.linalg.svd(np.asarray(X, dtype=float), compute_uv=False)
    return float(s.sum() - s[:TRUNCATION_RANK].sum())


def majorizer_factors(X):
    """Factors of the truncated-nuclear-norm majorizer at X."""
    U, _, Vt = np.linalg.svd(np.asarray(X, dtype=float), full_matrices=False)
    return MajorizerFactors(U3=U[:, :TRUNCATION_RANK].copy(),
                            V3=Vt[:TRUNCATION_RANK].T.copy())


def majorizer_value(X, factors):
    """Value of the majorizer ||X||_* - trace(U3^T X V3).

    Upper-bounds tnn(X) for every X and touches it at the matrix the factors
    were computed from.
    """
    X = np.asarray(X, dtype=float)
    U3, V3 = factors.U3, factors.V3
    if U3.shape[0] != X.shape[0] or V3.shape[0] != X.shape[1]:
        raise ValueError("majorizer factors do not match matrix shape")
    s = np.linalg.svd(X, compute_uv=False)
    return float(s.sum() - np.trace(U3.T @ X @ V3))


def shrink(C, t):
    """Singular-value shrinkage D_t(C): soft-threshold every singular value
    by t. For t > 0 this is the unique minimizer of
    ||Y||_* + (1/2t) ||Y - C||_F^2."""
    if t < 0:
        raise ValueError("shrinkage threshold must be non-negative")
    C = np.asarray(C, dtype=float)
    U, s, Vt = np.linalg.svd(C, full_matrices=False)
    s = np.maximum(s - t, 0.0)
    nz = s > 0
    return (U[:, nz] * s[nz]) @ Vt[nz]


def numerical_rank(X, eps=RANK_EPS):
    """Number of singular values above eps * sigma_1."""
    s = np.linalg.svd(np.asarray(X, dtype=float), compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int((s > eps * s[0]).sum())
