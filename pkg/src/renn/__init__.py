"""Approximate inference and learning for pairwise Markov random fields.

Region graphs, mean field, loopy and generalized belief propagation, and
direct region free-energy minimization with a small trainable network, all
checked against brute-force enumeration.
"""
from .classic import InferenceResult, bethe_free_energy, loopy_bp, mean_field
from .errors import (CapacityError, ContractViolation, ModelDomainError, ModelParseError,
                     NumericFault, QueryError)
from .estimators import IsingMRFLearner, MarginalInference
from .exact import ExactResult, exact_inference, exact_sample, gibbs_sample, nll_exact
from .gbp import build_message_sets, gbp_run
from .harness import compute_metrics, parse_sweep_config, run_benchmark, run_method
from .learn import LearnConfig, learn_mrf, nll_eval
from .model import (FactorGraph, PairwiseMRF, parse_model, random_ising, read_dataset,
                    read_model, serialize_model, write_dataset, write_model)
from .regiongraph import (bethe_region_graph, build_region_graph, check_validity,
                          cluster_variation, faces_planar_grid, region_free_energy,
                          root_regions_general, star_cycle_basis_complete)
from .renn import RennConfig, renn_infer, select_lambda

__version__ = "0.1.0"
