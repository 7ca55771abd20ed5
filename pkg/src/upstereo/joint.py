"""Joint low-rank / integrability solver.

Minimizes the masked data misfit plus a truncated-nuclear-norm penalty over
the block matrix

    X = [ XI  XN ]        XI : 3 x 3   (pinned to the identity)
        [ XL  XM ]        XN : 3 x p   (gradient form [Dx z; Dy z; -1])
                          XL : m x 3   (lights)
                          XM : m x p   (measurements over the column scales)

together with the per-pixel scales lambda_j in [-1, 0] and the depth vector
z itself. The outer loop freezes the top-three singular vectors of X and
majorizes the truncated nuclear norm by ||X||_* - trace(U3^T X V3); the inner
loop runs scaled ADMM on an auxiliary copy Y with dual matrix Gamma: block
updates of (X, Lambda, z), singular-value shrinkage for Y, then a dual ascent
step. Every iterate satisfies the structural constraints exactly by
construction.
"""

from dataclasses import dataclass, field

import numpy as np

from .baseline import factorize_rank3, resolve_integrability
from .grid import DepthMap, GradientIntegrator, build_derivative_operators
from .lowrank import MajorizerFactors, majorizer_factors, shrink, tnn
from .photometric import ObservationSet
from .rpca import ps_lambda, rpca

# pixels whose initializing normals are closer than this to grazing are
# seeded with the flat gradient (0, 0)
SEED_GRAZING_EPS = 1e-6


class DivergenceError(RuntimeError):
    """Objective blew up; carries the partial SolverReport as .report."""

    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


@dataclass
class JointConfig:
    """Solver knobs; defaults follow the reference formulation (c = tau = 1)
    with this artifact's stopping thresholds."""

    c: float = 1.0
    tau: float = 1.0
    admm_tol: float = 1e-6
    admm_max: int = 500
    outer_tol: float = 1e-7
    outer_max: int = 50
    inner_tol: float = 1e-8
    inner_max: int = 10
    mode: str = "mc"
    init: str = "rpca"

    def to_dict(self):
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown solver keys: {sorted(extra)}")
        return cls(**d)


@dataclass
class FactorState:
    """The block unknown, the column scales, and the depth vector."""

    XI: np.ndarray
    XL: np.ndarray
    XN: np.ndarray
    XM: np.ndarray
    Lambda: np.ndarray
    z: DepthMap

    @property
    def m(self):
        return self.XL.shape[0]

    @property
    def p(self):
        return self.XN.shape[1]

    def assemble(self):
        """The (3+m) x (3+p) block matrix."""
        top = np.hstack([self.XI, self.XN])
        bottom = np.hstack([self.XL, self.XM])
        return np.vstack([top, bottom])


def split_blocks(X, m, p):
    """Inverse of FactorState.assemble for a (3+m) x (3+p) matrix."""
    if X.shape != (3 + m, 3 + p):
        raise ValueError("matrix does not match the block layout")
    return X[:3, :3], X[3:, :3], X[:3, 3:], X[3:, 3:]


@dataclass
class AdmmState:
    """Auxiliary copy, scaled dual matrix, penalty, TNN weight, and the frozen
    majorizer factors of the current outer iteration."""

    Y: np.ndarray
    Gamma: np.ndarray
    tau: float
    c: float
    maj: MajorizerFactors

    def blocks(self, which, m, p):
        Z = self.Y if which == "Y" else self.Gamma
        return split_blocks(Z, m, p)


@dataclass
class SolverReport:
    """Per-iteration traces and convergence flags of one solve."""

    outer_iterations: int = 0
    inner_iterations: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    f_data_trace: list = field(default_factory=list)
    f_tnn_trace: list = field(default_factory=list)
    augmented_lagrangian: list = field(default_factory=list)
    primal_residual: list = field(default_factory=list)
    admm_converged: list = field(default_factory=list)
    outer_converged: bool = False
    init_fdata: float = 0.0
    init_model_fdata: float = 0.0
    zero_norm_columns: int = 0


def f_data(state, obs):
    """Masked data misfit 0.5 ||W . (M - XM diag(Lambda))||_F^2."""
    resid = obs.M - state.XM * state.Lambda[None, :]
    if obs.W.all():
        return 0.5 * float(np.sum(resid * resid))
    return 0.5 * float(np.sum((resid[obs.W]) ** 2))


def update_XI(state):
    """The identity block is pinned."""
    state.XI = np.eye(3)
    return state


def update_XL(state, admm):
    """Unconstrained quadratic block: XL = Y^L + Gamma^L."""
    _, YL, _, _ = admm.blocks("Y", state.m, state.p)
    _, GL, _, _ = admm.blocks("Gamma", state.m, state.p)
    state.XL = YL + GL
    return state


def update_XN_and_z(state, admm, integrator, ops):
    """Project the normal-block target onto gradient form.

    The target is T = Y^N + Gamma^N; the depth is the least-squares solution
    of Dx z = T_1, Dy z = T_2, and XN is rebuilt from it so rows one and two
    are exactly a gradient field and row three is exactly -1.
    """
    _, _, YN, _ = admm.blocks("Y", state.m, state.p)
    _, _, GN, _ = admm.blocks("Gamma", state.m, state.p)
    T = YN + GN
    z = integrator.solve(T[0], T[1])
    state.z = DepthMap(z, state.z.grid, max(integrator.n_components, 1))
    state.XN = np.vstack([ops.dx @ z, ops.dy @ z, -np.ones_like(z)])
    return state


class _DataContext:
    """Mask-dependent constants of one solve, hoisted out of the inner loop."""

    def __init__(self, obs):
        self.W = obs.W
        self.all_observed = bool(obs.W.all())
        self.Mt = obs.M if self.all_observed else np.where(obs.W, obs.M, 0.0)
        self.has_obs = obs.W.any(axis=0)


def _alternate_xm_lambda(ctx, target, tau, lam0, x0, inner_tol, inner_max):
    """Core alternation on the observed entries; see update_XM_and_Lambda."""
    At = target if ctx.all_observed else np.where(ctx.W, target, 0.0)
    lam = lam0.copy()
    X_obs = x0
    zero_norm = np.zeros(lam.size, dtype=bool)
    for _ in range(inner_max):
        X_new = (lam[None, :] * ctx.Mt + tau * At) / (lam**2 + tau)[None, :]
        if not ctx.all_observed:
            X_new[~ctx.W] = 0.0
        den = np.einsum("ij,ij->j", X_new, X_new)
        num = np.einsum("ij,ij->j", X_new, ctx.Mt)
        lam_new = lam.copy()
        upd = ctx.has_obs & (den > 0)
        zero_norm = ctx.has_obs & (den == 0)
        lam_new[upd] = np.clip(num[upd] / den[upd], -1.0, 0.0)
        delta = max(np.abs(X_new - X_obs).max(), np.abs(lam_new - lam).max())
        X_obs, lam = X_new, lam_new
        if delta < inner_tol:
            break
    return X_obs, lam, int(zero_norm.sum())


def update_XM_and_Lambda(state, admm, obs, inner_tol=1e-8, inner_max=10):
    """Alternate the closed-form column updates of XM and Lambda.

    On observed entries the two exact minimizers
        XM_j    = (lambda_j M_j + tau A_j) / (lambda_j^2 + tau)
        lambda_j = clip(XM_j . M_j / ||XM_j||^2, -1, 0)
    are applied in turn until the largest entry change drops below inner_tol
    or inner_max sweeps elapse; the updates are simultaneous across columns,
    so the result does not depend on any column ordering. Fully unobserved
    entries take the unconstrained value Y^M + Gamma^M. Columns with observed
    entries but a zero-norm update keep their scale; their count is stored on
    the returned state as .zero_norm_columns.
    """
    _, _, _, YM = admm.blocks("Y", state.m, state.p)
    _, _, _, GM = admm.blocks("Gamma", state.m, state.p)
    target = YM + GM
    ctx = _DataContext(obs)
    x0 = state.XM if ctx.all_observed else np.where(ctx.W, state.XM, 0.0)
    X_obs, lam, flagged = _alternate_xm_lambda(
        ctx, target, admm.tau, state.Lambda, x0, inner_tol, inner_max
    )
    state.XM = X_obs if ctx.all_observed else np.where(ctx.W, X_obs, target)
    state.Lambda = lam
    state.zero_norm_columns = flagged
    return state


def update_Y(state, admm):
    """Closed-form shrinkage step for the auxiliary copy."""
    X = state.assemble()
    ratio = admm.c / admm.tau
    admm.Y = shrink(X - admm.Gamma + ratio * (admm.maj.U3 @ admm.maj.V3.T), ratio)
    return admm


def update_Gamma(state, admm):
    """Dual ascent on the consensus constraint."""
    admm.Gamma = admm.Gamma + (admm.Y - state.assemble())
    return admm


def _initial_factors(obs, cfg, ops):
    """(L, S) seeds from the configured initializer."""
    if cfg.init == "baseline":
        fact = factorize_rank3(obs.M)
    elif cfg.init == "rpca":
        res = rpca(obs.M, obs.W, lambda_r=ps_lambda(*obs.M.shape))
        fact = factorize_rank3(res.A)
    else:
        raise ValueError(f"unknown initializer: {cfg.init!r}")
    amb, S = resolve_integrability(fact, obs.grid, ops)
    L = fact.lights @ np.linalg.inv(amb.A)
    return L, S


def _seed_state(obs, L, S, integrator, ops):
    """Build the starting FactorState from initial lights and normals.

    XN is seeded from the integrability-resolved normals converted to
    gradient form (then projected so the gradient rows are an exact gradient
    field); grazing pixels fall back to flat. XM = -M and Lambda = -1
    throughout, per the reference initialization.
    """
    p = obs.grid.n_pixels
    XN = np.tile(np.array([[0.0], [0.0], [-1.0]]), (1, p))
    ok = np.abs(S[2]) >= SEED_GRAZING_EPS
    XN[:, ok] = -S[:, ok] / S[2, ok]
    XN[2] = -1.0
    z = integrator.solve(XN[0], XN[1])
    XN = np.vstack([ops.dx @ z, ops.dy @ z, -np.ones(p)])
    return FactorState(
        XI=np.eye(3),
        XL=np.asarray(L, dtype=float).copy(),
        XN=XN,
        XM=-obs.M.copy(),
        Lambda=-np.ones(p),
        z=DepthMap(z, obs.grid),
    )


def solve_joint(obs, init=None, mode=None, cfg=None, iteration_hook=None):
    """Run the nested majorization / ADMM loops on an observation set.

    init may be an explicit (L, S) pair; otherwise it is computed by the
    initializer named in cfg.init. Mode "nc" forces the observation mask to
    all-ones (no completion); "mc" uses the mask as given. Returns the final
    FactorState (depth included — z is an optimization variable, no separate
    integration step) and a SolverReport.

    iteration_hook(state, admm, outer, inner), when given, is called after
    every inner iteration; intended for instrumentation.
    """
    cfg = cfg if cfg is not None else JointConfig()
    mode = (mode or cfg.mode).lower()
    if mode not in ("mc", "nc"):
        raise ValueError(f"unknown mode: {mode!r}")

    grid = obs.grid
    ops = build_derivative_operators(grid)
    integrator = GradientIntegrator(grid, ops)
    if mode == "nc":
        eff = ObservationSet(M=obs.M, W=np.ones_like(obs.W), grid=grid)
    else:
        eff = obs

    if init is None:
        L, S = _initial_factors(eff, cfg, ops)
    else:
        L, S = init
    state = _seed_state(eff, L, S, integrator, ops)

    report = SolverReport()
    report.init_fdata = f_data(state, eff)
    model_resid = eff.M - state.XL @ S
    report.init_model_fdata = 0.5 * float(np.sum(model_resid[eff.W] ** 2))

    X = state.assemble()
    admm = AdmmState(Y=X.copy(), Gamma=np.zeros_like(X), tau=cfg.tau, c=cfg.c,
                     maj=majorizer_factors(X))
    f_init = f_data(state, eff) + cfg.c * tnn(X)
    blowup = 1e3 * max(f_init, 1e-12)
    f_prev = f_init
    ctx = _DataContext(eff)
    ratio = cfg.c / cfg.tau

    for outer in range(cfg.outer_max):
        admm.maj = majorizer_factors(state.assemble())
        UV3 = admm.maj.U3 @ admm.maj.V3.T
        inner_count = 0
        converged = False
        for inner in range(cfg.admm_max):
            update_XI(state)
            update_XL(state, admm)
            update_XN_and_z(state, admm, integrator, ops)
            # XM / Lambda alternation (same math as update_XM_and_Lambda,
            # with the mask constants hoisted out of the loop)
            YM = admm.Y[3:, 3:]
            GM = admm.Gamma[3:, 3:]
            target = YM + GM
            x0 = state.XM if ctx.all_observed else np.where(ctx.W, state.XM, 0.0)
            X_obs, lam, flagged = _alternate_xm_lambda(
                ctx, target, cfg.tau, state.Lambda, x0,
                cfg.inner_tol, cfg.inner_max,
            )
            state.XM = X_obs if ctx.all_observed else np.where(ctx.W, X_obs, target)
            state.Lambda = lam
            report.zero_norm_columns = max(report.zero_norm_columns, flagged)

            X = state.assemble()
            # shrinkage step, singular values kept for the Lagrangian trace;
            # LAPACK handles the tall transpose markedly faster than the wide
            # row-major original, so factor that and transpose back
            Ut, sy, Vtt = np.linalg.svd((X - admm.Gamma + ratio * UV3).T,
                                        full_matrices=False)
            sy = np.maximum(sy - ratio, 0.0)
            admm.Y = ((Ut * sy) @ Vtt).T
            admm.Gamma = admm.Gamma + (admm.Y - X)
            inner_count = inner + 1

            s_x = np.linalg.svd(X.T, compute_uv=False)
            fd = f_data(state, eff)
            ft = float(s_x[3:].sum())
            obj = fd + cfg.c * ft
            gap = float(np.linalg.norm(admm.Y - X))
            aug = (fd + cfg.c * (sy.sum() - np.trace(
                admm.maj.U3.T @ admm.Y @ admm.maj.V3))
                + 0.5 * cfg.tau * np.linalg.norm(admm.Y - X + admm.Gamma) ** 2)
            report.f_data_trace.append(fd)
            report.f_tnn_trace.append(ft)
            report.objective.append(obj)
            report.augmented_lagrangian.append(float(aug))
            report.primal_residual.append(gap)
            if iteration_hook is not None:
                iteration_hook(state, admm, outer, inner)
            if obj > blowup:
                report.outer_iterations = outer + 1
                report.inner_iterations.append(inner_count)
                raise DivergenceError(
                    f"objective {obj:.3e} exceeded 1e3 x initial {f_init:.3e}",
                    report,
                )
            if gap <= cfg.admm_tol * max(1.0, float(np.sqrt((s_x * s_x).sum()))):
                converged = True
                break
        report.inner_iterations.append(inner_count)
        report.admm_converged.append(converged)
        report.outer_iterations = outer + 1

        f_now = report.objective[-1]
        if abs(f_now - f_prev) <= cfg.outer_tol * max(1.0, abs(f_prev)):
            report.outer_converged = True
            break
        f_prev = f_now

    return state, report
