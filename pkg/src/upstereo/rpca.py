"""Robust PCA (low rank + sparse) via an inexact augmented-Lagrangian
iteration, used both as a comparison method and as the joint solver's
initializer."""

from dataclasses import dataclass, field

import numpy as np

from .lowrank import shrink
from .baseline import run_baseline
from .photometric import ObservationSet

# penalty schedule of the inexact ALM
MU_GROWTH = 1.5
MU_CAP_FACTOR = 1e7

# sparsity weight used when RPCA preprocesses photometric-stereo matrices.
# The canonical 1/sqrt(max(m, p)) rule sits below the dual-certificate level
# of extremely flat matrices (few images, many pixels), so the convex optimum
# then shaves real rank-3 signal into E even on clean input; doubling the
# weight keeps clean measurement matrices intact while leaving
# shadow/specularity outliers well inside the detectable range.
PS_LAMBDA_FACTOR = 2.0


def ps_lambda(m, p):
    """Default sparsity weight for photometric-stereo preprocessing."""
    return PS_LAMBDA_FACTOR / np.sqrt(max(m, p))


@dataclass
class RpcaResult:
    A: np.ndarray  # low-rank component
    E: np.ndarray  # sparse error component
    iterations: int
    converged: bool
    objective_trace: list = field(default_factory=list)


def _soft(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def rpca(M, W=None, lambda_r=None, tol=1e-7, max_iter=500):
    """Decompose M into low-rank A plus sparse E on the observed entries.

    Approximately solves min ||A||_* + lambda_r ||E||_1 subject to
    W.M = W.(A+E). Unobserved entries carry no L1 penalty and absorb the
    residual exactly, leaving A free there. lambda_r defaults to
    1/sqrt(max(m, p)).
    """
    M = np.asarray(M, dtype=float)
    m, p = M.shape
    if W is None:
        W = np.ones_like(M, dtype=bool)
    else:
        W = np.asarray(W, dtype=bool)
    if lambda_r is None:
        lambda_r = 1.0 / np.sqrt(max(m, p))
    if lambda_r <= 0:
        raise ValueError("lambda_r must be positive")

    Mw = np.where(W, M, 0.0)
    norm_obs = np.linalg.norm(Mw)
    if norm_obs == 0:
        return RpcaResult(np.zeros_like(M), np.zeros_like(M), 0, True, [0.0])

    sigma1 = np.linalg.svd(Mw, compute_uv=False)[0]
    mu = 1.25 / sigma1
    mu_cap = MU_CAP_FACTOR * mu

    A = np.zeros_like(M)
    E = np.zeros_like(M)
    Y = np.zeros_like(M)
    trace = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        U, s, Vt = np.linalg.svd(Mw - E + Y / mu, full_matrices=False)
        s = np.maximum(s - 1.0 / mu, 0.0)
        A = (U * s) @ Vt

        G = Mw - A + Y / mu
        E = np.where(W, _soft(G, lambda_r / mu), G)

        trace.append(float(s.sum() + lambda_r * np.abs(E[W]).sum()))

        R = Mw - A - E
        Y += mu * R
        mu = min(mu * MU_GROWTH, mu_cap)
        if np.linalg.norm(R[W]) <= tol * norm_obs:
            converged = True
            break
    return RpcaResult(A=A, E=E, iterations=it, converged=converged,
                      objective_trace=trace)


def run_rpca_baseline(obs, ops=None, lambda_r=None, tol=1e-7, max_iter=500):
    """RPCA preprocessing followed by the baseline pipeline on the recovered
    low-rank component. Returns (DepthMap, S, L).

    lambda_r defaults to the photometric-stereo rule ps_lambda(m, p) rather
    than rpca's generic one; see PS_LAMBDA_FACTOR.
    """
    empty = ~obs.W.any(axis=0)
    if empty.any():
        raise ValueError(
            f"{int(empty.sum())} pixel column(s) have no observed entries"
        )
    if lambda_r is None:
        lambda_r = ps_lambda(*obs.M.shape)
    result = rpca(obs.M, obs.W, lambda_r=lambda_r, tol=tol, max_iter=max_iter)
    cleaned = ObservationSet(M=result.A, W=np.ones_like(obs.W), grid=obs.grid)
    return run_baseline(cleaned, ops=ops)
