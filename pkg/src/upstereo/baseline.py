"""Classical sequential pipeline: rank-3 SVD factorization, integrability
based ambiguity reduction, and depth reconstruction."""

from dataclasses import dataclass

import numpy as np

from .grid import build_derivative_operators, integrate_gradients

# relative singular-value cutoff below which the input is treated as rank
# deficient (e.g. coplanar lights)
RANK3_EPS = 1e-10

# pixels with |third normal row| below this are excluded from integration
GRAZING_EPS = 1e-8


class RankDeficientError(ValueError):
    """Measurements do not span three dimensions."""


class AmbiguousIntegrabilityError(ValueError):
    """The integrability system has more than one small singular value, so
    the ambiguity cannot be reduced to a GBR."""


@dataclass(frozen=True)
class Factorization:
    """Rank-3 split of the measurements: pseudo-lights (m x 3) times scaled
    pseudo-normals (3 x p), determined up to a 3 x 3 ambiguity."""

    lights: np.ndarray
    normals: np.ndarray


@dataclass(frozen=True)
class AmbiguityMatrix:
    """Invertible 3 x 3 matrix mapping pseudo-normals to (approximately)
    integrable ones."""

    A: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        if abs(np.linalg.det(A)) <= 1e-10 * np.linalg.norm(A) ** 3:
            raise AmbiguousIntegrabilityError("ambiguity matrix is singular")
        object.__setattr__(self, "A", A)


def factorize_rank3(M):
    """Best rank-3 factorization via SVD, split symmetrically.

    Any other split of the three dominant singular directions differs only by
    an invertible 3 x 3 ambiguity, which downstream steps resolve.
    """
    M = np.asarray(M, dtype=float)
    m, p = M.shape
    if m < 3 or p < 3:
        raise ValueError("need at least 3 images and 3 pixels")
    if np.any(~M.any(axis=1)):
        raise ValueError("measurement matrix has an all-zero image row")
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    if s[2] < RANK3_EPS * s[0]:
        raise RankDeficientError(
            f"third singular value {s[2]:.3e} is below {RANK3_EPS} * sigma_1"
        )
    root = np.sqrt(s[:3])
    return Factorization(lights=U[:, :3] * root, normals=root[:, None] * Vt[:3])


def _integrability_system(St, grid, ops):
    """Per-pixel linear constraints on the two cross forms (v1, v2).

    Writing the candidate rows a_k of the ambiguity as v1 = a1 x a3 and
    v2 = a2 x a3, the per-pixel zero-curl condition on A @ St becomes
    -v1 . (s x s_y) + v2 . (s x s_x) = 0 with s the pseudo-normal column.
    Rows are kept only where every stencil involved is a plain forward
    difference (the 2 x 2 pixel quad lies inside the mask), where the
    discrete condition is exact for integrable inputs.
    """
    Sx = St @ ops.dx.T
    Sy = St @ ops.dy.T
    keep = grid.quad_mask()
    cross_y = np.cross(St.T, Sy.T)
    cross_x = np.cross(St.T, Sx.T)
    return np.hstack([-cross_y[keep], cross_x[keep]])


def resolve_integrability(fact, grid, ops):
    """Reduce the factorization ambiguity to a GBR using integrability.

    Solves the homogeneous per-pixel curl system for the cross forms
    (v1, v2), reconstructs one representative ambiguity matrix (the additive
    multiples of a3 and the overall scale left free are exactly the GBR
    freedom), and returns it together with S = A @ St, sign-fixed and scaled
    so the third row of S has mean +1.
    """
    St = np.asarray(fact.normals, dtype=float)
    B = _integrability_system(St, grid, ops)
    if B.shape[0] < 6:
        raise AmbiguousIntegrabilityError(
            "fewer than six usable pixels for the integrability system"
        )
    _, s, Vt = np.linalg.svd(B, full_matrices=False)
    if s[4] - s[5] <= 1e-6 * s[0]:
        raise AmbiguousIntegrabilityError(
            "integrability system has a (near) two-dimensional nullspace: "
            f"sigma_5={s[4]:.3e}, sigma_6={s[5]:.3e}"
        )
    v1, v2 = Vt[-1, :3], Vt[-1, 3:]

    a3 = np.cross(v1, v2)
    n3 = np.linalg.norm(a3)
    if n3 < 1e-12 * (np.linalg.norm(v1) * np.linalg.norm(v2) + 1e-300):
        raise AmbiguousIntegrabilityError("cross forms are parallel")
    a3 /= n3
    a1 = np.cross(v1, a3)
    a2 = np.cross(v2, a3)
    A = np.vstack([a1, a2, a3])

    S = A @ St
    mean3 = S[2].mean()
    if mean3 < 0:
        S, A, mean3 = -S, -A, -mean3
    if mean3 < 1e-12:
        raise AmbiguousIntegrabilityError("normals are grazing on average")
    # canonical scale: mean of the third row is +1 (a GBR degree of freedom)
    S /= mean3
    A /= mean3
    return AmbiguityMatrix(A=A), S


def run_baseline(obs, ops=None):
    """Factorize, resolve integrability, and integrate normals to depth.

    No completion is performed: the measurements are used as-is, whatever the
    observation mask says. Pixels with grazing normals (|S_3j| < 1e-8 after
    the canonical scaling) are excluded from the integration data term.
    Returns (DepthMap, S, L) with S defined up to a GBR and L = pseudo-lights
    mapped through the resolved ambiguity.
    """
    grid = obs.grid
    if ops is None:
        ops = build_derivative_operators(grid)
    fact = factorize_rank3(obs.M)
    amb, S = resolve_integrability(fact, grid, ops)
    L = fact.lights @ np.linalg.inv(amb.A)

    valid = np.abs(S[2]) >= GRAZING_EPS
    p_target = np.zeros(grid.n_pixels)
    q_target = np.zeros(grid.n_pixels)
    p_target[valid] = -S[0, valid] / S[2, valid]
    q_target[valid] = -S[1, valid] / S[2, valid]
    pixel_mask = valid if not valid.all() else None
    depth = integrate_gradients(grid, ops, p_target, q_target, pixel_mask=pixel_mask)
    return depth, S, L
