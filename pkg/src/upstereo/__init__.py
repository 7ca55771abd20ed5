"""Uncalibrated photometric stereo: classical SVD pipeline, Robust-PCA
preprocessing, and a joint low-rank / integrability solver, with a synthetic
benchmark harness."""

from .grid import (DepthMap, DerivativeOperators, GradientIntegrator,
                   PixelGrid, build_derivative_operators, integrate_gradients)
from .lowrank import MajorizerFactors, majorizer_factors, majorizer_value, shrink, tnn
from .photometric import (Lighting, ObservationSet, PhongParams, SceneSpec,
                          Surface, add_gaussian_noise, detect_missing,
                          generate_scene, render_lambertian, render_phong,
                          sample_lights)
from .baseline import (AmbiguityMatrix, AmbiguousIntegrabilityError,
                       Factorization, RankDeficientError, factorize_rank3,
                       resolve_integrability, run_baseline)
from .rpca import RpcaResult, rpca, run_rpca_baseline
from .joint import (AdmmState, DivergenceError, FactorState, JointConfig,
                    SolverReport, f_data, solve_joint, split_blocks)
from .bench import (EvalReport, GbrTransform, TrialPlan, TrialRecord,
                    fit_gbr_depth, percent_improved_trials,
                    relative_improvement, run_trial_grid, z_err)

__version__ = "0.1.0"
