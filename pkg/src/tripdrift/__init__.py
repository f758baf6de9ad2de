"""Detect unseen malware families in a triplet-trained autoencoder's latent space."""

from .clusterer import (
    DBSCAN,
    NOISE,
    ClusterAssignment,
    ClusterSummary,
    FamilyModel,
    build_family_model,
    compute_centroid,
    compute_threshold,
    dbscan,
    estimate_eps,
    estimate_min_pts,
)
from .dataio import (
    CsvSchema,
    DriftScenario,
    FeatureMask,
    LabeledDataset,
    SyntheticSpec,
    VarianceMask,
    apply_mask,
    build_drift_scenario,
    fit_variance_mask,
    generate_synthetic,
    load_dataset,
    save_dataset,
    temporal_split,
)
from .detector import (
    DRIFT,
    KNOWN,
    CentroidDriftDetector,
    DetectionVerdict,
    MadModel,
    classify,
    classify_batch,
    classify_mad,
    mad_fit,
    nearest_centroid,
)
from .harness import DriftMetrics, EvalConfig, EvalReport, report_render, run_leave_one_out, score_drift
from .metric import (
    TrainConfig,
    TrainedModel,
    Triplet,
    TripletAutoencoder,
    batch_triplet_loss,
    embed,
    sample_triplets,
    train_triplet,
    train_vanilla,
    triplet_loss,
)
from .neuralnet import NetworkParams, adam_step, backward, forward, grad_check, init_network, mse_loss
from .serialization import deserialize_model, serialize_model

__version__ = "0.1.0"
