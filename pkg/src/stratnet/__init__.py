"""Simulation and stabilization diagnostics for sparse strategic network formation.

Nodes sit at uniform positions in the unit cube; links form when a latent
index (homophily in scaled distance, attributes, a strategic network
statistic and a pair shock) is positive.  Period 0 is a pairwise-stable or
dyadic network and later periods respond myopically to the previous one.
"""

__version__ = "0.1.0"

from .errors import (ConfigError, ContractViolation, Degenerate, InsufficientData, NeighborhoodTooLarge,
                     NonConvergence, QuadratureFailure, Separation, StratnetError, SupercriticalSuspected,
                     TooFewNetworks, TooLarge, ZeroDenominator)
from .model import (AttributeLaw, LatentParams, ModelSpec, Primitives, ShockLaw, SparsityScale, dumps_spec,
                    loads_spec, sample_primitives, spec_from_dict, spec_to_dict)
from .network import Net, NetSeries
from .formation import (classify_robustness, enumerate_pairwise_stable, generate, simulate, solve_pairwise_stable,
                        strategic_neighborhoods)
from .moments import StatSpec, asf_bounds, asf_stats, compute_stat, count_stat, graham_fit, graham_score
from .stabilization import construct_Ji, j_simple, stabilization_report, tail_fit, verify_stabilization
from .branching import BranchingConfig, compare_domination, h_D_norm, simulate_branching, simulate_branching_batch
from .inference import im_t_test, mc_clt, moment_inequality_stat, poisson_variance_decomp, randomization_test
