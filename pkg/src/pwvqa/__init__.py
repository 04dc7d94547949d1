"""Counterfactual explain-away fusion and total-indirect-effect inference.

Subpackages:
    fusion   -- branch-score fusion strategies and their gradients
    causal   -- counterfactual realization, effect decomposition, inference
    model    -- three-branch encoders, losses, training loop, checkpoints
    datagen  -- synthetic changing-priors benchmark and interchange files
    metrics  -- accuracy and answer-distribution reports
    cli      -- command-line harness (gen-data / train / eval / sweep / fuse)
    backend  -- compiled kernel core with pure-NumPy fallback
"""

from .causal import BranchLogits, EffectDecomposition, decompose, infer_answer
from .fusion import CfMode, FusionConfig, Strategy, fuse, fuse_grad
from .metrics import EvalReport, evaluate, js_divergence

__version__ = "0.1.0"

__all__ = [
    "BranchLogits",
    "CfMode",
    "EffectDecomposition",
    "EvalReport",
    "FusionConfig",
    "Strategy",
    "decompose",
    "evaluate",
    "fuse",
    "fuse_grad",
    "infer_answer",
    "js_divergence",
    "__version__",
]
