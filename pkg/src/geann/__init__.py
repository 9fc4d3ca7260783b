"""Multi-horizon quantile forecasting with graph ensemble augmentation.

A numpy implementation of an encoder-decoder quantile forecaster whose
encoder states are enriched by an ensemble of graph-convolution stacks over
fixed sparse graphs, together with scalable mini-batch training over
hop-limited subgraphs, data-driven graph construction, and neighbor
stability analysis.
"""

from .autodiff import (
    ComputeGraph,
    GraphError,
    backward,
    evaluate,
    finite_diff_oracle,
    gradcheck,
)
from .data import TimeSeriesDataset, load_dataset, save_dataset
from .graph_build import (
    cooccurrence_graph,
    knn_stability,
    neighbor_score_stats,
    neighbor_sets_from_graph,
    pearson_knn_graph,
    random_stability_baseline,
    stability_table,
)
from .graphs import (
    EdgeListError,
    SparseGraph,
    SubgraphBatch,
    full_batch,
    gcn_coefficients,
    hop_subgraph,
    identity_graph,
    load_edge_list,
    random_graph,
    save_edge_list,
    top_k_sparsify,
)
from .model import (
    EncoderConfig,
    GemConfig,
    ModelConfig,
    QuantileForecast,
    dataset_loss,
    decode,
    encode_static,
    encode_temporal,
    forecast,
    gcn_layer,
    gem_forward,
    init_parameters,
    quantile_loss,
)
from .synthetic import (
    SeriesSegment,
    SyntheticBundle,
    SyntheticSpec,
    generate,
    pretrain_embeddings,
    pretrain_on_dataset,
)
from .tensor import ParameterStore, Tensor
from .training import (
    AdamWOptimizer,
    EvalReport,
    SgdOptimizer,
    TrainConfig,
    TrainResult,
    TrainingError,
    evaluate_weighted_ql,
    make_optimizer,
    partition_batches,
    train,
)

__version__ = "0.1.0"
