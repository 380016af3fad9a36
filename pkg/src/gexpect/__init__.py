"""Numerical G-expectation: sublinear expectations, G-normal one-step
operators, G-Brownian cylinder functionals and their scenario-measure
representation, and Lipschitz approximation of path functionals."""

__version__ = "0.1.0"

from .errors import (BudgetExhaustedError, CapabilityError, EvaluationError, GExpectError,
                     GridTooNarrowError, GrowthClassError, InputError, ParseError)
from .sublinear import (AxiomReport, CovarianceSet, GFunction, ScenarioFamily, g_axiom_check,
                        g_eval, scenario_sup, truncate)
from .dsl import FunctionalSpec, evaluate, format_expr, growth_diagnostic, parse
from .gnormal import (GNormalSpec, StepResult, ValueFunction1D, abs_moment, one_step_expectation,
                      scaling_identity_check)
from .engine import (CylinderFunctional, PathBatch, PathSample, VolatilityScenario,
                     capacity_estimate, constant_family, cylinder_expectation,
                     cylinder_expectation_report, dp_feedback_scenario, increment_moment_check,
                     induce_measure, lp_norm, max_abs_exceeds, monotone_convergence_demo,
                     piecewise_family, representation_gap, scenario_expectation)
from .paths import (DiscretePath, PathFunctional, PipelineConfig, lip_approx_pipeline, lip_mollify,
                    pl_project, rho_distance, sup_norm)
