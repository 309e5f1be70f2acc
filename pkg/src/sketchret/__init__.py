"""sketchret: a feature-space laboratory for zero-shot sketch-based image
retrieval.

Trains conditional generative models (CVAE, CAAE) and classic baselines on
paired sketch/image feature vectors from seen classes, then retrieves
database features for unseen-class queries via stochastic generation,
k-means clustering and cosine ranking, reporting Precision@K and mAP@K.
"""

from .baselines import (
    DshLossInputs,
    EmbedConfig,
    EmbeddingPair,
    LinearMap,
    dsh_loss_eval,
    embedding_loss_and_grads,
    eszsl_objective,
    fit_direct_regression,
    fit_eszsl,
    fit_sae,
    sae_objective,
    sample_triplets,
    siamese_loss_v1,
    siamese_loss_v2,
    train_embedding,
    triplet_loss,
)
from .checkpoints import load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint
from .data import (
    FeatureStore,
    PairedDataset,
    SyntheticConfig,
    ZeroShotSplit,
    load_features,
    load_feature_matrix,
    load_labels,
    load_manifest,
    make_zero_shot_split,
    save_features,
    save_labels,
    save_manifest,
    split_from_manifest,
    synth_generate,
)
from .generative import (
    CaaeModel,
    CvaeModel,
    GenerativeConfig,
    TrainConfig,
    caae_generate,
    caae_losses,
    caae_losses_and_grads,
    cvae_generate,
    cvae_loss,
    cvae_loss_and_grads,
    init_caae,
    init_cvae,
    train_caae,
    train_cvae,
)
from .gradcheck import run_gradcheck
from .linalg import (
    cosine_similarity,
    gaussian_sample,
    kmeans,
    kron_solve_oracle,
    make_rng,
    solve_sylvester,
    sym_eig,
)
from .nn import (
    AdamState,
    Mlp,
    MlpGrads,
    adam_init,
    adam_step,
    finite_difference_grads,
    gaussian_kl,
    mlp_backprop,
    mlp_forward,
    mlp_init,
)
from .retrieval import (
    EvalConfig,
    MetricsReport,
    QueryRepresentation,
    RankedList,
    average_precision_at_k,
    build_query_representation,
    evaluate_run,
    precision_at_k,
    rank_top_k,
    render_report,
    score_database,
    write_report,
)

__version__ = "0.1.0"
