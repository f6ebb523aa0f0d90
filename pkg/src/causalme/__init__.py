"""Causal discovery for linear models observed through additive measurement error."""

from causalme.errors import (
    AmbiguityError,
    CausalmeError,
    ConfigError,
    ConvergenceError,
    GraphError,
    InconsistencyError,
)
from causalme.factor import FaFit, fa_fit, identifiability_thresholds, select_num_factors
from causalme.graphs import (
    CanonicalRep,
    Cpdag,
    Dag,
    NoiseSpec,
    NoisyModel,
    WeightedDag,
    build_canonical,
    cpdag_of,
    d_separated,
    leaf_augmented_cpdag,
    leaf_nodes,
    meek_closure,
    mixing_matrix,
    model_from_json,
    model_to_json,
    observed_cov,
    topological_order,
    v_structures,
)
from causalme.oica import MixingEstimate, SourceMixture, align_columns, oica_fit
from causalme.pipelines import (
    DiscoveryResult,
    RgdResult,
    fa_dpc,
    fa_dpc_oracle,
    fa_equvar,
    fa_equvar_oracle,
    oica_rgd,
    oica_rgd_oracle,
)
from causalme.simulate import Dataset, random_model, sample_observations

__version__ = "0.1.0"

__all__ = [
    "AmbiguityError",
    "CausalmeError",
    "ConfigError",
    "ConvergenceError",
    "GraphError",
    "InconsistencyError",
    "CanonicalRep",
    "Cpdag",
    "Dag",
    "Dataset",
    "DiscoveryResult",
    "FaFit",
    "MixingEstimate",
    "NoiseSpec",
    "NoisyModel",
    "RgdResult",
    "SourceMixture",
    "WeightedDag",
    "align_columns",
    "build_canonical",
    "cpdag_of",
    "d_separated",
    "fa_dpc",
    "fa_dpc_oracle",
    "fa_equvar",
    "fa_equvar_oracle",
    "fa_fit",
    "identifiability_thresholds",
    "leaf_augmented_cpdag",
    "leaf_nodes",
    "meek_closure",
    "mixing_matrix",
    "model_from_json",
    "model_to_json",
    "observed_cov",
    "oica_fit",
    "oica_rgd",
    "oica_rgd_oracle",
    "random_model",
    "sample_observations",
    "select_num_factors",
    "topological_order",
    "v_structures",
    "__version__",
]
