"""Classical transforms: LDA, exact optimal transport and low-dimensional embeddings."""

from .embedding import (
    TSNE,
    ClassicalMDS,
    EmbeddingResult,
    LocallyLinearEmbedding,
    conditional_probabilities,
    lle_embed,
    lle_weights,
    mds_embed,
    save_embedding,
    tsne_embed,
    tsne_gradient,
    tsne_objective,
)
from .lda import LdaModel, LinearDiscriminant, lda_apply, lda_fit, rayleigh_ratio, scatter_matrices
from .ot import OptimalTransport, TransportPlan, ot_gradient_targets, ot_solve, squared_euclidean_cost

__all__ = [
    "TSNE", "ClassicalMDS", "EmbeddingResult", "LocallyLinearEmbedding", "conditional_probabilities",
    "lle_embed", "lle_weights", "mds_embed", "save_embedding", "tsne_embed", "tsne_gradient", "tsne_objective",
    "LdaModel", "LinearDiscriminant", "lda_apply", "lda_fit", "rayleigh_ratio", "scatter_matrices",
    "OptimalTransport", "TransportPlan", "ot_gradient_targets", "ot_solve", "squared_euclidean_cost",
]
