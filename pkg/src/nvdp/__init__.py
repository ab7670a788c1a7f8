"""Privacy-preserving sharing of multivector embeddings.

Train a stochastic bottleneck that maps embedding sequences to
Dirichlet-Process posteriors, release noisy weighted-vector samples from
those posteriors, and audit the release mechanism with closed-form Renyi
divergences plus a Bayesian-DP accountant.
"""

from .errors import FormatError, NumericalAbort
from .rng import RngState, sample_dirichlet, sample_gamma, sample_gaussian
from .posterior import (
    DPPosterior,
    PriorParams,
    WeightedVectorSample,
    build_posterior,
    deserialize_posterior,
    pad_to_length,
    prior_reference,
    sample_embedding,
    serialize_posterior,
)
from .renyi import (
    KL_ORDER,
    RenyiOrder,
    RenyiResult,
    kl_dirichlet,
    kl_dp_posteriors,
    kl_gaussian_diag,
    rd_dp_log_density,
    rd_dp_posteriors,
    rd_gaussian_diag,
    rd_gaussian_isotropic,
    rd_gaussian_learned,
    rd_monte_carlo,
)
from .accountant import (
    DEFAULT_LAMBDA_GRID,
    PairwiseRDMatrix,
    PrivacyReport,
    bdp_epsilon,
    bdp_optimize,
    build_pairwise_matrix,
    rdp_summary,
)
from .dataio import (
    EmbeddingRecord,
    SanitizedRecord,
    SyntheticConfig,
    generate_synthetic,
    read_embeddings,
    read_sanitized,
    write_embeddings,
    write_sanitized,
)

__version__ = "0.1.0"
