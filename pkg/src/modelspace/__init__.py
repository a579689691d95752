"""Label-free transferability estimation for pre-trained vision encoders.

Models are embedded as points in a shared model space by computing gradient
attribution maps over one unlabeled probe set; attribution-map distances then
rank candidate source models for any target, with an SVD-truncated CCA
baseline and retrieval/clustering evaluation tools alongside.
"""

from .attribution import (
    ELRP,
    GRAD_X_INPUT,
    METHODS,
    SALIENCY,
    AttributionMap,
    AttributionSet,
    attribute_image_exact,
    attribute_per_unit,
    attribute_probe,
    attribute_single_pass,
)
from .bundle import (
    ModelSpec,
    PreprocSpec,
    bilinear_resize,
    load_model,
    preprocess,
    save_model,
    unpreprocess_attribution,
)
from .cluster import Dendrogram, agglomerate, cut, parse_newick, to_newick
from .errors import ModelSpaceError
from .evaluation import (
    CurvePoints,
    OracleRelevance,
    build_relevance,
    cpc,
    pearson,
    precision_at_k,
    priority,
    recall_at_k,
    retrieval_curves,
    spearman,
)
from .graph import Graph, LayerSpec, TapeState, backward, backward_modified, forward, infer_shapes
from .kernels import backend as kernel_backend
from .probe import ProbeSet, load_probe, read_pnm, sample_probe, write_pnm
from .space import (
    AffinityMatrix,
    RankingTable,
    affinity_matrix,
    cosine_similarity,
    distance,
    rank_all,
    rank_sources,
)
from .svcca import ActivationMatrix, collect_activations, correlation_matrix, svcca_correlation

__version__ = "0.1.0"
