"""Matrix factorization regularized by co-liked, co-disliked and user co-occurrence embeddings."""

from .cooccur import PairCounts, SppmiMatrix, build_sppmi, build_x, build_y, build_z, generate_pairs, pmi
from .evaluation import EvalReport, UserGroupSpec, evaluate, map_at, ndcg_at, recall_at, significance
from .ingest import (
    Cell,
    Explicit,
    Implicit,
    InteractionMatrix,
    Label,
    RawEvent,
    SplitSpec,
    binarize,
    kcore_filter,
    parse_events,
    split,
)
from .model import (
    VARIANTS,
    Hyperparams,
    ModelState,
    load_model,
    objective,
    predict_scores,
    save_model,
    train,
)
from .negsample import NegSampleConfig, draw_negatives, em_train, sampling_prior

__version__ = "0.1.0"
