"""Mixed-membership relational blockmodel with metadata regression.

Directed multi-relational binary networks; an unbounded community set via
logistic stick-breaking over Gaussian scores regressed on node metadata;
collapsed retrospective MCMC for inference; posterior-predictive link
probabilities and AUC evaluation under random masks.
"""

from .errors import DataError, NumericalError
from .model import (
    ABSENT,
    PRESENT,
    UNOBSERVED,
    AssignmentState,
    EdgeData,
    GlobalState,
    HyperParams,
    LatentRecord,
    Metadata,
    NodeState,
    StickWeights,
    SynthMixedConfig,
    SynthSingleConfig,
    log_logistic,
    logistic,
    simulate_network,
    stick_log_matrix,
    stick_matrix,
    stick_weights,
    synth_mixed,
    synth_single,
)
from .inference import (
    ChainState,
    FitResult,
    PosteriorSample,
    SweepReport,
    check_consistency,
    collapsed_edge_term,
    fit_chain,
    indicator_posterior,
    init_chain,
    load_checkpoint,
    load_samples,
    log_joint,
    prune_communities,
    rebuild_counts,
    resample_eta,
    resample_indicator,
    resample_mu,
    resample_precisions,
    resample_v,
    resimulate_edges,
    save_checkpoint,
    save_samples,
    sweep,
)
from .predict import (
    Mask,
    PredictionTable,
    affinity_graph,
    auc,
    auc_scores,
    make_mask,
    predict_links,
    sample_membership,
    variational_distance,
    write_auc_report,
)
from .dataio import load_edges, load_metadata, write_edges, write_metadata
from .experiment import RunConfig, apply_mask, derive_seed, run_experiment

__version__ = "0.1.0"
