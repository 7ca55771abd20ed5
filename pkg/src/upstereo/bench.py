"""GBR fitting against ground truth, depth-error metrics, and the randomized
trial harness."""

import csv
import io
import json
import traceback
from dataclasses import dataclass, field, asdict
from itertools import product

import numpy as np

from .grid import DepthMap
from .joint import JointConfig, solve_joint
from .photometric import SceneSpec, generate_scene
from .baseline import run_baseline
from .rpca import run_rpca_baseline

METHODS = ("baseline", "rpca", "joint-mc", "joint-nc")


@dataclass
class GbrTransform:
    """Depth-space generalized bas-relief fit z' = lam z + mu x + nu y + c0.

    x and y are mean-centered pixel coordinates. degenerate flags a fit where
    lam was unidentifiable (constant recovered depth); the least-squares fit
    still proceeds, minimum-norm.
    """

    lam: float
    mu: float
    nu: float
    c0: float = 0.0
    degenerate: bool = False

    def apply(self, depth):
        grid = depth.grid
        x = grid.x - grid.x.mean()
        y = grid.y - grid.y.mean()
        z = self.lam * depth.z + self.mu * x + self.nu * y + self.c0
        return DepthMap(z, grid)


def fit_gbr_depth(z_rec, z_true, grid=None):
    """Least-squares GBR aligning a recovered depth to ground truth.

    Returns the transform and the aligned DepthMap. Pixel coordinates are
    centered before fitting to condition the normal equations.
    """
    if grid is None:
        grid = z_true.grid
    if z_rec.grid.mask.shape != grid.mask.shape or not np.array_equal(
        z_rec.grid.mask, grid.mask
    ):
        raise ValueError("recovered and ground-truth depths use different masks")
    x = grid.x - grid.x.mean()
    y = grid.y - grid.y.mean()
    design = np.column_stack([z_rec.z, x, y, np.ones(grid.n_pixels)])
    degenerate = float(np.std(z_rec.z)) < 1e-12 * max(1.0, np.abs(z_rec.z).max())
    coef, *_ = np.linalg.lstsq(design, z_true.z, rcond=None)
    aligned = DepthMap(design @ coef, grid)
    lam, mu, nu, c0 = (float(c) for c in coef)
    return GbrTransform(lam=lam, mu=mu, nu=nu, c0=c0, degenerate=degenerate), aligned


def z_err(z_aligned, z_true):
    """Depth error percentage 100 ||z_true - z_aligned|| / ||z_true|| over
    the object pixels."""
    za = z_aligned.z if isinstance(z_aligned, DepthMap) else np.asarray(z_aligned)
    zt = z_true.z if isinstance(z_true, DepthMap) else np.asarray(z_true)
    denom = np.linalg.norm(zt)
    if denom == 0:
        raise ValueError("ground-truth depth has zero norm")
    return 100.0 * float(np.linalg.norm(zt - za) / denom)


def relative_improvement(errs_a, errs_b):
    """Mean of (e_b - e_a)/e_b in percent; positive when method a has the
    lower errors."""
    a = np.asarray(errs_a, dtype=float)
    b = np.asarray(errs_b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("error lists must have equal length")
    if np.any(b <= 0):
        raise ValueError("reference errors must be positive")
    return 100.0 * float(np.mean((b - a) / b))


def percent_improved_trials(errs_a, errs_b):
    """Percentage of trials with e_a strictly below e_b (ties do not count)."""
    a = np.asarray(errs_a, dtype=float)
    b = np.asarray(errs_b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("error lists must have equal length")
    return 100.0 * float(np.mean(a < b))


@dataclass
class TrialPlan:
    """Grid of benchmark cells: shapes x image counts x noise levels x
    trial repeats, each solved with every listed method."""

    shapes: list = field(default_factory=lambda: ["sphere"])
    m_values: list = field(default_factory=lambda: [4, 10])
    noises: list = field(default_factory=lambda: [0.03])
    methods: list = field(default_factory=lambda: ["baseline", "rpca", "joint-mc"])
    n_trials: int = 5
    base_seed: int = 0
    height: int = 64
    width: int = 64
    phong: bool = True
    k_s: float = 0.2
    alpha: float = 10.0
    albedo: str = "smooth"
    init: str = "rpca"

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown plan keys: {sorted(extra)}")
        plan = cls(**d)
        for name in plan.methods:
            if name not in METHODS:
                raise ValueError(f"unknown method: {name!r}")
        return plan

    def cells(self):
        """Deterministic enumeration of (shape, m, noise, trial, seed)."""
        for shape_idx, shape in enumerate(self.shapes):
            for m, noise, trial in product(self.m_values, self.noises,
                                           range(self.n_trials)):
                entropy = (self.base_seed, shape_idx, m,
                           int(round(noise * 10000)), trial)
                seed = int(np.random.SeedSequence(entropy).generate_state(1)[0])
                yield shape, m, noise, trial, seed


@dataclass
class TrialRecord:
    method: str
    m: int
    noise: float
    seed: int
    z_err: float  # NaN when the trial failed
    shape: str = ""
    trial: int = 0
    error: str = ""

    def key(self):
        return (self.shape, self.m, self.noise, self.trial, self.method)


@dataclass
class EvalReport:
    """Per-trial records plus the aggregate statistics per method pair and
    image count (recomputable from the records)."""

    records: list = field(default_factory=list)
    aggregates: list = field(default_factory=list)

    def compute_aggregates(self, methods=None):
        """Pairwise aggregates over trials where both methods succeeded."""
        if methods is None:
            methods = sorted({r.method for r in self.records})
        by_key = {r.key(): r for r in self.records}
        cells = sorted({(r.shape, r.m, r.noise, r.trial) for r in self.records})
        m_values = sorted({r.m for r in self.records})
        self.aggregates = []
        for m in m_values:
            for a, b in product(methods, methods):
                if a == b:
                    continue
                ea, eb = [], []
                for shape, cm, noise, trial in cells:
                    if cm != m:
                        continue
                    ra = by_key.get((shape, m, noise, trial, a))
                    rb = by_key.get((shape, m, noise, trial, b))
                    if ra is None or rb is None:
                        continue
                    if np.isnan(ra.z_err) or np.isnan(rb.z_err):
                        continue
                    ea.append(ra.z_err)
                    eb.append(rb.z_err)
                if not ea:
                    continue
                self.aggregates.append({
                    "method_a": a,
                    "method_b": b,
                    "m": m,
                    "n_trials": len(ea),
                    "relative_improvement": relative_improvement(ea, eb),
                    "percent_improved_trials": percent_improved_trials(ea, eb),
                })
        return self.aggregates

    def records_csv(self):
        """Canonical CSV of the per-trial records (RFC 4180, sorted rows)."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\r\n")
        writer.writerow(["method", "m", "noise", "seed", "z_err"])
        rows = sorted(
            self.records, key=lambda r: (r.method, r.m, r.noise, r.seed)
        )
        for r in rows:
            writer.writerow([r.method, r.m, repr(r.noise), r.seed,
                             "nan" if np.isnan(r.z_err) else repr(r.z_err)])
        return buf.getvalue()

    def aggregates_json(self):
        return json.dumps({"aggregates": self.aggregates}, indent=2,
                          sort_keys=True) + "\n"


def _solve_method(method, obs, init_name):
    if method == "baseline":
        return run_baseline(obs)[0]
    if method == "rpca":
        return run_rpca_baseline(obs)[0]
    if method in ("joint-mc", "joint-nc"):
        cfg = JointConfig(init=init_name, mode=method.split("-")[1])
        state, _ = solve_joint(obs, cfg=cfg)
        return state.z
    raise ValueError(f"unknown method: {method!r}")


def run_trial(plan, shape, m, noise, trial, seed):
    """All method records for one benchmark cell."""
    spec = SceneSpec(shape=shape, height=plan.height, width=plan.width, m=m,
                     noise=noise, phong=plan.phong, k_s=plan.k_s,
                     alpha=plan.alpha, albedo=plan.albedo, seed=seed)
    surface, _, obs = generate_scene(spec)
    records = []
    for method in plan.methods:
        rec = TrialRecord(method=method, m=m, noise=noise, seed=seed,
                          z_err=np.nan, shape=shape, trial=trial)
        try:
            depth = _solve_method(method, obs, plan.init)
            _, aligned = fit_gbr_depth(depth, surface.depth)
            rec.z_err = z_err(aligned, surface.depth)
        except Exception as exc:  # individual failures never abort the grid
            rec.error = f"{type(exc).__name__}: {exc}"
        records.append(rec)
    return records


def run_trial_grid(plan, completed=None, on_records=None):
    """Execute a benchmark plan and aggregate the results.

    completed maps record keys to already-finished TrialRecords (resume
    support); on_records, when given, is called with each cell's fresh
    records as they complete.
    """
    completed = completed or {}
    report = EvalReport()
    for shape, m, noise, trial, seed in plan.cells():
        cell_keys = [(shape, m, noise, trial, meth) for meth in plan.methods]
        if all(k in completed for k in cell_keys):
            report.records.extend(completed[k] for k in cell_keys)
            continue
        records = run_trial(plan, shape, m, noise, trial, seed)
        report.records.extend(records)
        if on_records is not None:
            on_records(records)
    report.compute_aggregates(plan.methods)
    return report
