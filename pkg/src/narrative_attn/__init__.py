"""Inference-time attention mechanisms for multi-frame, multi-subject story generation.

Gaussian-centred IP attention (``gca``), action-boost singular-value
reweighting of token embeddings (``absvr``) and a selective forgetting KV
cache (``sfc``), composed by a deterministic frame-loop simulator
(``pipeline``) over synthetic workloads.
"""

from .absvr import AbsvrParams, absvr_apply, band_recommendation, detect_knees, select_rank, trunk_projector
from .gca import AttentionConfig, gca_forward, ip_branch, text_branch
from .grounding import GcaParams, GroundingBox, MaskStrategy, PatchGrid, build_subject_mask, mask_variant
from .numkernel import nn_resize, row_softmax, thin_svd, top_k_indices
from .pipeline import StoryConfig, ablation_matrix, run_story
from .sfc import CacheKey, SelectiveForgettingCache, SfcParams

__version__ = "0.1.0"
