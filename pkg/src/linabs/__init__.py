"""Linear causal abstraction: verification, concretization sampling and Abs-LiNGAM."""

from .abstraction import (
    AbstractionMap,
    brute_force_consistency,
    check_block_abstraction,
    concrete_blocks,
    exogenous_map,
    implied_abstract_graph,
    relevant_sets,
)
from .concretize import ConcretizeConfig, sample_concretization
from .discovery import DiscoveryConfig, PriorKnowledge, direct_lingam
from .evaluate import pk_scores, roc_auc_edges, run_benchmark, t_support_metrics
from .pipeline import PipelineConfig, TStrategy, abs_lingam, abs_lingam_oracle
from .scenario import Scenario, ScenarioConfig, generate
from .scm import Intervention, LinearScm, NoiseSpec, make_rng, reduced_form, simulate

__version__ = "0.1.0"
