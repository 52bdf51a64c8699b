"""Discounted / total / average policy optimization on exactly solvable problems."""
from .errors import (DegenerateGradient, EmptyBatch, NonErgodicChain, NonFiniteValue,
                     SingularCovariance, SingularSystem, TooLarge, UnstableGains,
                     UnsupportedAction, ValidationError)
from .mdp import (DeterministicTablePolicy, Setup, SoftmaxPolicy, TabularMdp, ValueBundle,
                  grad_log_pi, load_mdp, objective, random_mdp, terminalize, value_functions)
from .measures import (Measure, Trajectory, discounted_measure, rollout, rollouts, space_average,
                       stationary_measure, time_estimate)
from .optimizers import (GradientReport, TrustRegionConfig, kl_metric, natural_gradient_step,
                         performance_difference, policy_curvature, policy_gradient,
                         policy_iteration, policy_iteration_step, ppo_clip_surrogate,
                         trust_region_step)

__version__ = "0.1.0"
