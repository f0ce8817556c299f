"""Two-branch cross-attention with a Gaussian-centred IP-branch bias.

The text branch is plain scaled dot-product attention; the IP branch adds a
per-subject logit bias built from soft subject masks whose radii follow the
text branch's attention inside each subject's box.
"""

from dataclasses import dataclass, field

import numpy as np

from . import prng
from .errors import ConfigurationError, DimensionError
from .grounding import (
    GroundingBox,
    MaskStrategy,
    assemble_bias,
    box_footprint,
    influence_strength,
    mask_variant,
)
from .numkernel import scaled_scores, softmax_

__all__ = [
    "AttentionConfig",
    "EncoderStates",
    "SubjectGrounding",
    "ProjectionWeights",
    "GcaOutput",
    "text_branch",
    "ip_branch",
    "influence_strength",
    "gca_forward",
]


@dataclass(frozen=True)
class AttentionConfig:
    heads: int
    head_dim: int
    patches: int
    text_tokens: int = 77
    ip_tokens_per_subject: int = 4
    n_dummy: int = 1
    subject_factor: float = 0.6

    def __post_init__(self):
        bad = [
            name
            for name in ("heads", "head_dim", "patches", "text_tokens", "ip_tokens_per_subject", "n_dummy")
            if getattr(self, name) < 1
        ]
        if self.subject_factor < 0:
            bad.append("subject_factor")
        if bad:
            raise ConfigurationError(f"invalid attention config: {', '.join(bad)}", bad)

    @property
    def inner_dim(self):
        return self.heads * self.head_dim


@dataclass(frozen=True)
class EncoderStates:
    text: np.ndarray  # T_t x d_enc
    ip: np.ndarray  # N_ip x d_enc, dummy rows not included

    def __post_init__(self):
        if self.text.ndim != 2 or self.ip.ndim != 2 or self.text.shape[1] != self.ip.shape[1]:
            raise DimensionError(f"text {self.text.shape} and ip {self.ip.shape} widths differ")


@dataclass(frozen=True)
class SubjectGrounding:
    box: GroundingBox
    ip_span: tuple  # [start, stop) within the IP token rows
    token_indices: tuple = None  # text columns used for influence strength; None = all


@dataclass(frozen=True)
class ProjectionWeights:
    """Fixed projections standing in for learned attention weights."""

    q: np.ndarray  # d_model x inner
    k_text: np.ndarray  # d_enc x inner
    v_text: np.ndarray
    k_ip: np.ndarray
    v_ip: np.ndarray
    out: np.ndarray  # inner x d_model

    @classmethod
    def generate(cls, seed, layer_id, d_model, d_enc, inner):
        rng = prng.stream(seed, prng.ROLE_WEIGHTS, layer_id)
        q = rng.normal((d_model, inner))
        k_text = rng.normal((d_enc, inner))
        v_text = rng.normal((d_enc, inner))
        k_ip = rng.normal((d_enc, inner))
        v_ip = rng.normal((d_enc, inner))
        out = rng.normal((inner, d_model)) / inner
        return cls(q, k_text, v_text, k_ip, v_ip, out)


@dataclass
class GcaOutput:
    hidden: np.ndarray
    update: np.ndarray  # merged H_text + s_ip * H_ip before the residual add
    alpha_text: np.ndarray  # head-averaged, P x (history + T_t)
    alpha_ip: np.ndarray  # head-averaged, P x (N_ip + N_dummy)
    masks: list
    bias: object
    strengths: list
    n_history: int = 0
    extras: dict = field(default_factory=dict)


def _split_heads(x, heads):
    n, inner = x.shape
    return np.ascontiguousarray(x.reshape(n, heads, inner // heads).transpose(1, 0, 2))


def _merge_heads(x):
    h, n, d = x.shape
    return x.transpose(1, 0, 2).reshape(n, h * d)


def text_branch(Q, K, V):
    """``alpha = softmax(Q K^T / sqrt(d))``, ``H = alpha V``.

    Accepts 2-D matrices or stacks of heads with a leading batch axis.
    """
    Q, K, V = (np.asarray(a, dtype=np.float64) for a in (Q, K, V))
    if Q.shape[-1] != K.shape[-1] or K.shape[-2] != V.shape[-2]:
        raise DimensionError(f"Q {Q.shape}, K {K.shape}, V {V.shape} are inconsistent")
    alpha = softmax_(scaled_scores(Q, K))
    return alpha @ V, alpha


def ip_branch(Q, K, V, bias):
    """Biased IP-branch attention; returns ``(H_ip, alpha_ip)``."""
    Q, K, V = (np.asarray(a, dtype=np.float64) for a in (Q, K, V))
    B = bias.matrix if hasattr(bias, "matrix") else np.asarray(bias, dtype=np.float64)
    if Q.shape[-1] != K.shape[-1] or K.shape[-2] != V.shape[-2]:
        raise DimensionError(f"Q {Q.shape}, K {K.shape}, V {V.shape} are inconsistent")
    if B.shape != (Q.shape[-2], K.shape[-2]):
        raise DimensionError(f"bias {B.shape} does not match logits ({Q.shape[-2]}, {K.shape[-2]})")
    alpha = softmax_(scaled_scores(Q, K) + B)
    return alpha @ V, alpha


def gca_forward(
    hidden,
    states,
    subjects,
    cfg,
    params,
    step,
    *,
    weights,
    grid,
    strategy=MaskStrategy.GCA,
    force_strengths=None,
    attend_text=None,
):
    """One cross-attention layer update.

    ``attend_text(Q, K, V) -> (H, alpha, n_history)`` replaces the plain text
    branch (head-stacked inputs); the selective forgetting cache plugs in here.
    Step 0 uses strength 0.5 for every subject; later steps use the current
    step's text attention unless ``force_strengths`` is given.
    """
    hidden = np.asarray(hidden, dtype=np.float64)
    if hidden.shape[0] != grid.size:
        raise DimensionError(f"hidden has {hidden.shape[0]} rows, grid has {grid.size} patches")
    H = cfg.heads
    Q = _split_heads(hidden @ weights.q, H)
    K_t = _split_heads(states.text @ weights.k_text, H)
    V_t = _split_heads(states.text @ weights.v_text, H)

    if attend_text is None:
        H_text, alpha_t = text_branch(Q, K_t, V_t)
        n_hist = 0
    else:
        H_text, alpha_t, n_hist = attend_text(Q, K_t, V_t)
    alpha_mean = alpha_t.mean(axis=0)
    update = _merge_heads(H_text) @ weights.out

    boxes = [s.box for s in subjects]
    if force_strengths is not None:
        strengths = list(force_strengths)
    elif step == 0:
        strengths = [0.5] * len(subjects)
    else:
        current = alpha_mean[:, n_hist:]
        strengths = [
            influence_strength(current, box_footprint(s.box, grid), s.token_indices) for s in subjects
        ]
    masks = mask_variant(strategy, boxes, grid, params, strengths=strengths)
    bias = assemble_bias(masks, [s.ip_span for s in subjects], cfg.n_dummy, params.bias_scale)

    n_ip = bias.matrix.shape[1] - cfg.n_dummy
    ip_rows = states.ip[:n_ip]
    if ip_rows.shape[0] != n_ip:
        raise DimensionError(f"IP spans need {n_ip} rows, states have {states.ip.shape[0]}")
    # dummy tokens are zero rows: zero keys and values, logit 0 before bias
    ip_all = np.vstack([ip_rows, np.zeros((cfg.n_dummy, ip_rows.shape[1]))])
    K_ip = _split_heads(ip_all @ weights.k_ip, H)
    V_ip = _split_heads(ip_all @ weights.v_ip, H)
    H_ip, alpha_ip = ip_branch(Q, K_ip, V_ip, bias)
    if cfg.subject_factor != 0:
        update = update + cfg.subject_factor * (_merge_heads(H_ip) @ weights.out)

    return GcaOutput(
        hidden=hidden + update,
        update=update,
        alpha_text=alpha_mean,
        alpha_ip=alpha_ip.mean(axis=0),
        masks=masks,
        bias=bias,
        strengths=strengths,
        n_history=n_hist,
    )
