"""Tabular offline RL laboratory.

Minimax value estimation from offline data with a covering distribution,
policy extraction by density-ratio reweighting, and exact oracles that verify
the supporting identities and bounds on exactly solvable models.
"""

from .dataset import Dataset, DatasetError, sample_dataset
from .function_classes import (FiniteFunctionClass, UnrealizableError,
                               build_realizable_classes, optimal_density_ratio,
                               optimal_policy_ratio)
from .harness import (ConfigError, ExperimentConfig, build_counterexample,
                      build_setup, config_from_dict, load_config, random_mdp,
                      run_experiment)
from .kernels import BACKEND
from .mdp import (NonStationaryPolicy, Policy, QFunction, TabularMDP,
                  ValidationError, expected_return, greedy_policy, optimal_q,
                  performance_difference, policy_q_values, validate_mdp,
                  value_iteration)
from .occupancy import (SADistribution, StateDistribution, density_ratio,
                        occupancy_measure, sup_ratio, truncated_occupancy)
from .oracle import (ConcentrabilityReport, EnumerationCapError,
                     covering_concentrability, data_concentrability,
                     mixture_covering, near_optimal_policies,
                     verify_advantage_to_suboptimality, verify_l1_advantage,
                     verify_q_error)
from .solver import (SolveReport, empirical_loss, extract_policy,
                     hoeffding_error, population_loss, solve_q,
                     suboptimality_bound)

__version__ = "0.1.0"
