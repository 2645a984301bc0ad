"""dts-forge: compress per-task weight deltas into tiny bit-packed archives.

Pipeline: truncated SVD of each delta matrix, four-group sign/median
thresholding of the factors, per-group RMS scaling, exact singular values.
Archives reconstruct per-task models from a shared base and can be fused,
data-free, for unseen tasks via embedding similarity.
"""

from .archive_io import (
    StorageReport,
    analytic_amr,
    choose_budget_ratio,
    read_archive,
    storage_report,
    write_archive,
)
from .codec import (
    DtsArchive,
    GroupCodes,
    LayerRecord,
    ScaleSet,
    apply_codes,
    decode_layer,
    encode_layer,
    encode_task,
    reconstruct_model,
    threshold_codes,
)
from .lowrank import CodecConfig, CodecMode, SvdFactors, rank_for_ratio, truncated_svd
from .merging import (
    MergeSpec,
    binarize_baseline,
    difference_vectors,
    task_arithmetic_merge,
    task_vector,
    weight_average,
)
from .tensor_store import (
    DeltaMap,
    TensorMap,
    as_matrix,
    content_fingerprint,
    from_matrix,
    linear_combine,
    load_tensor_map,
    save_tensor_map,
)
from .unseen import (
    MergeWeights,
    TaskEmbedding,
    load_embeddings,
    merge_for_unseen,
    similarity_weights,
)

__version__ = "0.1.0"
