"""
Evaluation Package
Oracle-scored metrics, perplexity probes, the conflict sweep, ablations and retrieval
"""

from .ablations import (
    ORDERINGS,
    ablation_grid,
    budget_hash,
    check_budget,
    evaluate,
    ordering_claims,
    run_ablation,
    run_variant,
    trained_budget,
)
from .eval_config import SUITES, EvalConfig
from .metrics import (
    MetricReport,
    RandomEditor,
    caption_perplexity,
    eval_caption,
    eval_edit,
    eval_identity,
    eval_recon,
    eval_t2i,
    pixel_l1,
    reconstruct,
)
from .probes import (
    TEXT_ONLY,
    compare_probes,
    conflict_sweep,
    curve_auc,
    perplexity_probe,
    summarize_sweep,
    text_only_baseline,
)
from .retrieval import RetrievalProbe, image_features, info_nce, recall_at_k, retrieval_probe

__all__ = [
    "ORDERINGS",
    "ablation_grid",
    "budget_hash",
    "check_budget",
    "evaluate",
    "ordering_claims",
    "run_ablation",
    "run_variant",
    "trained_budget",
    "SUITES",
    "EvalConfig",
    "MetricReport",
    "RandomEditor",
    "caption_perplexity",
    "eval_caption",
    "eval_edit",
    "eval_identity",
    "eval_recon",
    "eval_t2i",
    "pixel_l1",
    "reconstruct",
    "TEXT_ONLY",
    "compare_probes",
    "conflict_sweep",
    "curve_auc",
    "perplexity_probe",
    "summarize_sweep",
    "text_only_baseline",
    "RetrievalProbe",
    "image_features",
    "info_nce",
    "recall_at_k",
    "retrieval_probe",
]
