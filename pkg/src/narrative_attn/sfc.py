"""Selective forgetting cache: cross-frame KV history and background context mixing.

Keys and values may be 2-D (``L x d_h``) or head-stacked (``H x L x d_h``);
history rows are always shared across heads so one arrival counter per row
suffices.
"""

import hashlib
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import prng
from .errors import ConfigurationError, DimensionError, InvalidParameterError
from .grounding import PatchGrid
from .numkernel import nn_resize, scaled_scores, softmax_, top_k_indices


class Branch(str, Enum):
    CONDITIONAL = "Conditional"
    UNCONDITIONAL = "Unconditional"


class CapPolicy(str, Enum):
    FIFO = "Fifo"
    RESERVOIR = "Reservoir"


@dataclass(frozen=True)
class CacheKey:
    layer_id: int
    step_id: int
    branch: Branch = Branch.CONDITIONAL


@dataclass(frozen=True)
class KVEntry:
    K: np.ndarray
    V: np.ndarray
    arrival: np.ndarray

    def __post_init__(self):
        if self.K.shape[-2] != self.V.shape[-2] or self.K.shape[-2] != self.arrival.size:
            raise DimensionError("K, V and arrival disagree on row count")

    @property
    def rows(self):
        return int(self.arrival.size)

    def take(self, idx):
        return KVEntry(self.K[..., idx, :], self.V[..., idx, :], self.arrival[idx])


@dataclass(frozen=True)
class SfcParams:
    k_h: int = 128  # None disables top-k filtering
    delta_h: float = -0.1
    L_max: int = 512
    policy: CapPolicy = CapPolicy.FIFO
    alpha: float = 0.6
    mix_patch_threshold: int = 1024
    accumulate: bool = True
    mix: bool = True
    seed: int = 0

    def __post_init__(self):
        bad = []
        if self.k_h is not None and self.k_h < 1:
            bad.append("k_h")
        if self.L_max < 1:
            bad.append("L_max")
        if not 0 <= self.alpha <= 1:
            bad.append("alpha")
        if self.mix_patch_threshold < 0:
            bad.append("mix_patch_threshold")
        if bad:
            raise ConfigurationError(f"invalid SFC parameters: {', '.join(bad)}", bad)
        object.__setattr__(self, "policy", CapPolicy(self.policy))


@dataclass(frozen=True)
class ContextEntry:
    C_bar: np.ndarray
    grid: PatchGrid


@dataclass(frozen=True)
class AccumulateResult:
    K_cat: np.ndarray
    V_cat: np.ndarray
    n_history: int
    wrote: bool
    rows_before: int
    rows_selected: int
    rows_after: int


def topk_history(Q, K_h, k_h):
    """Rows of ``K_h`` with the highest max-over-queries unbiased score.

    With head-stacked inputs the max also runs over heads.
    """
    K_h = np.asarray(K_h, dtype=np.float64)
    L = K_h.shape[-2]
    if L == 0:
        return np.zeros(0, dtype=np.intp)
    if k_h is None or k_h >= L:
        return np.arange(L)
    scores = scaled_scores(np.asarray(Q, dtype=np.float64), K_h)
    per_token = scores.reshape(-1, L).max(axis=0)
    return top_k_indices(per_token, k_h)


def history_logits(Q, K_sel, delta_h):
    return scaled_scores(np.asarray(Q, dtype=np.float64), np.asarray(K_sel, dtype=np.float64)) + delta_h


def concat_attend(Q, K_sel, V_sel, K, V, delta_h):
    """One softmax over ``[history; current]`` columns.

    Returns ``(H, history_mass, alpha)``; ``history_mass`` is the per-query
    probability on historical columns.
    """
    Q, K, V = (np.asarray(a, dtype=np.float64) for a in (Q, K, V))
    if Q.shape[-1] != K.shape[-1] or K.shape[-2] != V.shape[-2]:
        raise DimensionError(f"Q {Q.shape}, K {K.shape}, V {V.shape} are inconsistent")
    d = Q.shape[-1]
    n_hist = 0 if K_sel is None else np.asarray(K_sel).shape[-2]
    if n_hist:
        if np.asarray(K_sel).shape[-1] != d:
            raise DimensionError("history keys have the wrong head dimension")
        keys = np.concatenate([np.asarray(K_sel, dtype=np.float64), K], axis=-2)
        values = np.concatenate([np.asarray(V_sel, dtype=np.float64), V], axis=-2)
    else:
        keys, values = K, V
    logits = scaled_scores(Q, keys)
    logits[..., :n_hist] += delta_h
    alpha = softmax_(logits)
    mass = alpha[..., :n_hist].sum(axis=-1)
    return alpha @ values, mass, alpha


def cap_cache(entry, L_max, policy, rng=None):
    """Trim ``entry`` to at most ``L_max`` rows, keeping arrival order."""
    if L_max < 1:
        raise InvalidParameterError("L_max must be >= 1")
    n = entry.rows
    if n <= L_max:
        return entry
    order = np.argsort(entry.arrival, kind="stable")
    if CapPolicy(policy) is CapPolicy.FIFO:
        keep = order[n - L_max:]
    else:
        if rng is None:
            raise InvalidParameterError("reservoir policy needs a PRNG stream")
        # Algorithm R over rows in arrival order: row i (i >= L_max) replaces
        # slot j ~ U[0, i] when j < L_max; a slot keeps its last writer
        i = np.arange(L_max, n, dtype=np.int64)
        j = rng.bounded(i + 1).astype(np.int64)
        res = np.arange(L_max, dtype=np.int64)
        hit = j < L_max
        np.maximum.at(res, j[hit], i[hit])
        keep = order[np.sort(res)]
    return entry.take(keep)


def context_mix(C, grid, prev, M_b, mask_grid, alpha, P_threshold):
    """Blend the previous frame's context into background positions.

    Returns ``(C_tilde, ContextEntry)``; the entry always stores the unmixed
    ``C``.
    """
    C = np.asarray(C, dtype=np.float64)
    if not 0 <= alpha <= 1:
        raise InvalidParameterError("alpha must lie in [0, 1]")
    if C.shape[0] != grid.size:
        raise DimensionError(f"context has {C.shape[0]} rows, grid has {grid.size}")
    entry = ContextEntry(C_bar=C.copy(), grid=grid)
    if prev is None or grid.size > P_threshold:
        return C, entry
    mb = nn_resize(M_b, mask_grid.hw, grid.hw)
    prev_c = prev.C_bar
    if prev.grid != grid:
        idx = nn_resize(np.arange(prev.grid.size, dtype=np.float64), prev.grid.hw, grid.hw).astype(np.intp)
        prev_c = prev_c[idx]
    if prev_c.shape != C.shape:
        raise DimensionError(f"cached context {prev_c.shape} cannot mix into {C.shape}")
    w = alpha * mb[:, None]
    out = C.copy()
    sel = mb > 0
    out[sel] = C[sel] * (1.0 - w[sel]) + prev_c[sel] * w[sel]
    return out, entry


class SelectiveForgettingCache:
    """Per-(layer, step, branch) KV history plus per-(layer, step) context store."""

    def __init__(self, params=SfcParams()):
        self.params = params
        self.entries = {}
        self.contexts = {}
        self._arrival = 0
        self._streams = {}
        self.frame_id = 0

    def begin_frame(self, frame_id):
        self.frame_id = frame_id

    def _stream(self, layer_id):
        key = (layer_id, self.frame_id)
        if key not in self._streams:
            self._streams[key] = prng.stream(self.params.seed, prng.ROLE_RESERVOIR, layer_id, self.frame_id)
        return self._streams[key]

    def history(self, key):
        return self.entries.get(CacheKey(key.layer_id, key.step_id, Branch.CONDITIONAL))

    def kv_accumulate(self, key, Q, K, V):
        """Prepend selected history to ``K, V`` and write the capped result back.

        Unconditional-branch calls read history but never write. IP-token
        keys must not be passed here.
        """
        p = self.params
        K = np.asarray(K, dtype=np.float64)
        V = np.asarray(V, dtype=np.float64)
        T = K.shape[-2]
        if not p.accumulate:
            return AccumulateResult(K, V, 0, False, 0, 0, 0)
        hist = self.history(key)
        rows_before = 0 if hist is None else hist.rows
        if hist is not None and hist.rows:
            if hist.K.shape[:-2] != K.shape[:-2] or hist.K.shape[-1] != K.shape[-1]:
                raise DimensionError(f"history {hist.K.shape} incompatible with keys {K.shape}")
            sel = hist.take(topk_history(Q, hist.K, p.k_h))
        else:
            sel = None
        n_sel = 0 if sel is None else sel.rows
        arrival = np.arange(self._arrival, self._arrival + T, dtype=np.int64)
        if sel is None:
            cat = KVEntry(K, V, arrival)
        else:
            cat = KVEntry(
                np.concatenate([sel.K, K], axis=-2),
                np.concatenate([sel.V, V], axis=-2),
                np.concatenate([sel.arrival, arrival]),
            )
        wrote = key.branch is not Branch.UNCONDITIONAL
        rows_after = rows_before
        if wrote:
            self._arrival += T
            stored = cap_cache(cat, p.L_max, p.policy, self._stream(key.layer_id))
            self.entries[CacheKey(key.layer_id, key.step_id, Branch.CONDITIONAL)] = stored
            rows_after = stored.rows
        return AccumulateResult(cat.K, cat.V, n_sel, wrote, rows_before, n_sel, rows_after)

    def attend(self, key, Q, K, V):
        """``kv_accumulate`` followed by :func:`concat_attend`."""
        acc = self.kv_accumulate(key, Q, K, V)
        n = acc.n_history
        K_sel = acc.K_cat[..., :n, :] if n else None
        V_sel = acc.V_cat[..., :n, :] if n else None
        H, mass, alpha = concat_attend(Q, K_sel, V_sel, K, V, self.params.delta_h)
        return H, alpha, mass, acc

    def mix(self, layer_id, step_id, C, grid, M_b, mask_grid):
        p = self.params
        if not (p.accumulate and p.mix):
            return np.asarray(C, dtype=np.float64)
        key = (layer_id, step_id)
        prev = self.contexts.get(key)
        out, entry = context_mix(C, grid, prev, M_b, mask_grid, p.alpha, p.mix_patch_threshold)
        self.contexts[key] = entry
        return out

    def occupancy(self, key):
        e = self.history(key)
        return 0 if e is None else e.rows

    def digest(self):
        h = hashlib.sha256()
        for key in sorted(self.entries, key=lambda k: (k.layer_id, k.step_id, k.branch.value)):
            e = self.entries[key]
            h.update(repr((key.layer_id, key.step_id, key.branch.value, e.K.shape)).encode())
            h.update(np.ascontiguousarray(e.K).tobytes())
            h.update(np.ascontiguousarray(e.V).tobytes())
            h.update(e.arrival.tobytes())
        for key in sorted(self.contexts):
            h.update(repr(key).encode())
            h.update(np.ascontiguousarray(self.contexts[key].C_bar).tobytes())
        return h.hexdigest()
