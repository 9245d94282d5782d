"""Visual memory: exact KNN classification over embedding stores, with
unlearning, privacy auditing, patch-level segmentation probes, and a
procedural image pipeline.
"""
from . import procgen
from .errors import (
    BadMagicError,
    DimensionMismatchError,
    FormatError,
    GeometryError,
    InvariantError,
    TruncatedError,
    UnlabeledError,
    VimemError,
    ZeroNormError,
)
from .governance import (
    EMPTY_PREDICTION,
    CurvePoint,
    MemoryHandle,
    PrivacyAuditReport,
    add_records,
    audit_privacy_fast,
    audit_privacy_naive,
    curve_to_csv,
    new_memory,
    privacy_accuracy_curve,
    remove_records,
)
from .kmeans import KMeansResult, kmeans
from .knn import (
    DEFAULT_K,
    ClassificationReport,
    NeighborList,
    Prediction,
    TwoAfcTrial,
    classify,
    evaluate_classification,
    knn_search,
    load_trials_jsonl,
    proportion_se,
    two_afc_alignment,
    two_afc_judge,
    two_proportion_ztest,
    vote,
)
from .segmentation import (
    IGNORE,
    LabelMask,
    PcaModel,
    downsample_mask,
    fit_pca,
    in_context_prototype,
    in_context_segment,
    in_context_similarity,
    kmeans_segment,
    knn_segment,
    make_mask,
    pca_rgb,
    project,
    project_grid,
    r2_report,
    r2_report_json,
    r2_score,
    read_mask_png,
    write_mask_png,
)
from .store import (
    UNLABELED,
    EmbeddingRecord,
    EmbeddingStore,
    PatchGrid,
    from_records,
    l2_normalize,
    make_grid,
    make_store,
    read_grid,
    read_manifest,
    read_store,
    validate_store,
    write_grid,
    write_manifest,
    write_store,
)

__version__ = "0.1.0"
