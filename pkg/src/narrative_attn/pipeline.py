"""Deterministic frame-loop simulator: AB-SVR -> GCA -> SFC over synthetic stories.

The "denoiser" is a stack of independent cross-attention layers, each with its
own patch grid and residual hidden state, applied once per step. There is no
noise schedule; every tensor comes from SplitMix64 streams keyed by the story
seed, so a run is a pure function of its :class:`StoryConfig`.
"""

import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import prng
from .absvr import AbsvrParams, FrameSegments, absvr_apply, write_spectrum_csv
from .errors import ConfigurationError
from .gca import AttentionConfig, EncoderStates, ProjectionWeights, SubjectGrounding, gca_forward
from .grounding import (
    GcaParams,
    GroundingBox,
    MaskStrategy,
    PatchGrid,
    background_mask,
    box_footprint,
    mask_to_pgm,
)
from .sfc import Branch, CacheKey, SelectiveForgettingCache, SfcParams

STATS_COLUMNS = "frame,layer,step,mask_cov,entropy,history_mass,occupancy,k,knees,ms"
TRACE_COLUMNS = "frame,layer,step,rows_before,rows_selected,rows_after,history_mass_mean,wrote"
DEFAULT_BOXES = ((0.2, 0.2, 0.6, 0.6), (0.45, 0.20, 0.8, 0.60))


@dataclass(frozen=True)
class LayerSpec:
    grid: PatchGrid
    d_model: int = 64
    heads: int = 4

    def __post_init__(self):
        if self.d_model < 1 or self.heads < 1 or self.d_model % self.heads:
            raise ConfigurationError("d_model must be a positive multiple of heads", ["layers"])

    @property
    def head_dim(self):
        return self.d_model // self.heads


@dataclass(frozen=True)
class SubjectSpec:
    boxes: tuple  # one GroundingBox per frame; the last one repeats
    ip_tokens: int = 4
    token_indices: tuple = None  # indices inside the frame's token block

    def box_for(self, frame):
        return self.boxes[min(frame, len(self.boxes) - 1)]


@dataclass(frozen=True)
class TokenSpec:
    D: int = 64
    per_frame: int = 4


@dataclass(frozen=True)
class StoryConfig:
    seed: int = 0
    frames: int = 20
    steps: int = 30
    layers: tuple = (
        LayerSpec(PatchGrid(64, 64)),
        LayerSpec(PatchGrid(32, 32)),
        LayerSpec(PatchGrid(16, 16)),
    )
    subjects: tuple = (
        SubjectSpec((GroundingBox(*DEFAULT_BOXES[0]),)),
        SubjectSpec((GroundingBox(*DEFAULT_BOXES[1]),)),
    )
    tokens: TokenSpec = TokenSpec()
    gca: GcaParams = GcaParams()
    absvr: AbsvrParams = AbsvrParams()
    sfc: SfcParams = SfcParams()
    strategy: MaskStrategy = MaskStrategy.GCA
    subject_factor: float = 0.6
    n_dummy: int = 1

    def __post_init__(self):
        bad = []
        if self.frames < 1:
            bad.append("frames")
        if self.steps < 1:
            bad.append("steps")
        if not self.layers:
            bad.append("layers")
        if self.subject_factor < 0:
            bad.append("subject_factor")
        if self.n_dummy < 1:
            bad.append("n_dummy")
        if bad:
            raise ConfigurationError(f"invalid story config: {', '.join(bad)}", bad)
        object.__setattr__(self, "strategy", MaskStrategy.parse(self.strategy))


@dataclass
class Story:
    blocks: tuple  # per-frame D x per_frame token blocks
    ip: np.ndarray  # N_ip x D
    groundings: list  # per frame, list of SubjectGrounding
    hidden: dict  # (frame, layer) -> P x d_model


@dataclass
class FrameStats:
    frame: int
    mask_coverage: list
    entropy: list
    history_mass: list
    occupancy: list
    k: int
    knees: tuple
    ms: float
    out_of_box_mass: float = 0.0
    coactivation: float = 0.0
    rows: list = field(default_factory=list, repr=False)
    trace: list = field(default_factory=list, repr=False)
    masks: list = field(default_factory=list, repr=False)
    report: object = field(default=None, repr=False)
    hidden: dict = field(default_factory=dict, repr=False)


@dataclass
class StoryState:
    story: Story
    weights: list
    cache: SelectiveForgettingCache = None


def synth_story(config):
    """Synthetic token blocks, IP states, per-frame groundings and latents."""
    D, T = config.tokens.D, config.tokens.per_frame
    scale = 1.0 / math.sqrt(D)
    blocks = tuple(prng.stream(config.seed, prng.ROLE_TOKENS, f).normal((D, T)) * scale for f in range(config.frames))
    ip_rows = [
        prng.stream(config.seed, prng.ROLE_IP, i).normal((s.ip_tokens, D)) * scale
        for i, s in enumerate(config.subjects)
    ]
    ip = np.vstack(ip_rows) if ip_rows else np.zeros((0, D))
    groundings = []
    for f in range(config.frames):
        start, subs = 0, []
        for s in config.subjects:
            toks = None
            if s.token_indices is not None:
                toks = tuple(f * T + int(t) for t in s.token_indices)
            subs.append(SubjectGrounding(s.box_for(f), (start, start + s.ip_tokens), toks))
            start += s.ip_tokens
        groundings.append(subs)
    hidden = {}
    for f in range(config.frames):
        for l, layer in enumerate(config.layers):
            rng = prng.stream(config.seed, prng.ROLE_HIDDEN, f, l)
            hidden[(f, l)] = rng.normal((layer.grid.size, layer.d_model)) / math.sqrt(layer.d_model)
    return Story(blocks, ip, groundings, hidden)


def init_state(config, with_sfc=True):
    story = synth_story(config)
    weights = [
        ProjectionWeights.generate(config.seed, l, layer.d_model, config.tokens.D, layer.d_model)
        for l, layer in enumerate(config.layers)
    ]
    cache = SelectiveForgettingCache(replace(config.sfc, seed=prng.derive_seed(config.seed, config.sfc.seed))) if with_sfc else None
    return StoryState(story, weights, cache)


def _entropy(alpha):
    a = np.clip(alpha, 1e-300, None)
    h = -(alpha * np.log(a)).sum(axis=-1)
    return float(np.clip(h, 0.0, math.log(alpha.shape[-1])).mean())


def out_of_box_mass(alpha_ip, owners, boxes, grid):
    """Mean IP attention a subject's columns receive at patches outside its box."""
    vals = []
    for i, b in enumerate(boxes):
        cols = np.flatnonzero(owners == i)
        outside = np.ones(grid.size, dtype=bool)
        outside[box_footprint(b, grid)] = False
        if cols.size and outside.any():
            vals.append(float(alpha_ip[outside][:, cols].sum(axis=1).mean()))
    return float(np.mean(vals)) if vals else 0.0


def coactivation(masks):
    """Mean over patches of the summed pairwise mask products."""
    total = 0.0
    for i in range(len(masks)):
        for j in range(i + 1, len(masks)):
            total += float(np.mean(masks[i].values * masks[j].values))
    return total


def run_frame(frame_idx, state, config, timing=True):
    """Render one frame: reweight its tokens, then run every step and layer."""
    t_frame = time.perf_counter()
    story = state.story
    segments, report = absvr_apply(FrameSegments(story.blocks, frame_idx), config.absvr)
    states = EncoderStates(segments.stacked().T, story.ip)
    subjects = story.groundings[frame_idx]
    boxes = [s.box for s in subjects]
    cache = state.cache
    if cache is not None:
        cache.begin_frame(frame_idx)

    n_layers = len(config.layers)
    hidden = {l: story.hidden[(frame_idx, l)].copy() for l in range(n_layers)}
    cov = np.zeros(n_layers)
    ent = np.zeros(n_layers)
    hmass = np.zeros(n_layers)
    occ = [0] * n_layers
    oob, coact = [], []
    rows, trace, top_masks = [], [], []
    knees = ";".join(str(k) for k in report.knees)

    for step in range(config.steps):
        mb, mask_grid = None, None
        for l, layer in enumerate(config.layers):
            t0 = time.perf_counter()
            cfg = AttentionConfig(
                heads=layer.heads,
                head_dim=layer.head_dim,
                patches=layer.grid.size,
                text_tokens=states.text.shape[0],
                ip_tokens_per_subject=max(1, max((s.ip_tokens for s in config.subjects), default=1)),
                n_dummy=config.n_dummy,
                subject_factor=config.subject_factor,
            )
            key = CacheKey(l, step, Branch.CONDITIONAL)
            seen = {}
            hook = None
            if cache is not None:

                def hook(Q, K, V, key=key, seen=seen):
                    H, alpha, mass, acc = cache.attend(key, Q, K, V)
                    seen["mass"], seen["acc"] = mass, acc
                    return H, alpha, acc.n_history

            out = gca_forward(
                hidden[l], states, subjects, cfg, config.gca, step,
                weights=state.weights[l], grid=layer.grid, strategy=config.strategy, attend_text=hook,
            )
            if l == 0:
                mb, mask_grid = background_mask(out.masks, layer.grid.size), layer.grid
                if step == config.steps - 1:
                    top_masks = out.masks
            C = out.update
            if cache is not None:
                C = cache.mix(l, step, C, layer.grid, mb, mask_grid)
            hidden[l] = hidden[l] + C

            m_cov = float(np.mean([m.values.mean() for m in out.masks])) if out.masks else 0.0
            m_ent = _entropy(out.alpha_text)
            m_hist = float(seen["mass"].mean()) if seen else 0.0
            m_occ = cache.occupancy(key) if cache is not None else 0
            ms = (time.perf_counter() - t0) * 1e3 if timing else 0.0
            cov[l] += m_cov
            ent[l] += m_ent
            hmass[l] += m_hist
            occ[l] = m_occ
            oob.append(out_of_box_mass(out.alpha_ip, out.bias.owners, boxes, layer.grid))
            coact.append(coactivation(out.masks))
            rows.append((frame_idx, l, step, m_cov, m_ent, m_hist, m_occ, report.k, knees, ms))
            if seen:
                acc = seen["acc"]
                trace.append((frame_idx, l, step, acc.rows_before, acc.rows_selected, acc.rows_after, m_hist, int(acc.wrote)))

    n = config.steps
    stats = FrameStats(
        frame=frame_idx,
        mask_coverage=list(cov / n),
        entropy=list(ent / n),
        history_mass=list(hmass / n),
        occupancy=occ,
        k=report.k,
        knees=report.knees,
        ms=(time.perf_counter() - t_frame) * 1e3 if timing else 0.0,
        out_of_box_mass=float(np.mean(oob)),
        coactivation=float(np.mean(coact)),
        rows=rows,
        trace=trace,
        masks=top_masks,
        report=report,
        hidden=hidden,
    )
    return state, stats


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_artifacts(out_dir, config, stats):
    out = Path(out_dir)
    try:
        (out / "masks").mkdir(parents=True, exist_ok=True)
        (out / "spectra").mkdir(parents=True, exist_ok=True)
        stats_lines = [STATS_COLUMNS]
        trace_lines = [TRACE_COLUMNS]
        for fs in stats:
            stats_lines.extend(",".join(_fmt(v) for v in row) for row in fs.rows)
            trace_lines.extend(",".join(_fmt(v) for v in row) for row in fs.trace)
        paths = {"stats": out / "stats.csv", "trace": out / "cache_trace.csv", "masks": [], "spectra": []}
        paths["stats"].write_text("\n".join(stats_lines) + "\n", encoding="utf-8")
        paths["trace"].write_text("\n".join(trace_lines) + "\n", encoding="utf-8")
        grid = config.layers[0].grid
        for fs in stats:
            for i, m in enumerate(fs.masks):
                p = out / "masks" / f"frame_{fs.frame:02d}_subject_{i}.pgm"
                p.write_bytes(mask_to_pgm(m.values, grid))
                paths["masks"].append(p)
            p = out / "spectra" / f"frame_{fs.frame:02d}.csv"
            write_spectrum_csv(p, fs.report)
            paths["spectra"].append(p)
    except OSError as exc:
        raise OSError(f"failed writing artifacts under {out}: {exc}") from exc
    return paths


def run_story(config, out_dir=None, timing=True, with_sfc=True):
    """Render every frame in order; optionally write the artifact set."""
    state = init_state(config, with_sfc=with_sfc)
    stats = []
    for f in range(config.frames):
        state, fs = run_frame(f, state, config, timing=timing)
        stats.append(fs)
    artifacts = write_artifacts(out_dir, config, stats) if out_dir is not None else {}
    return stats, artifacts


def ablation_matrix(config, strategies, out_dir=None):
    """Run the same story under each mask strategy and compare.

    Rows report the out-of-box IP attention mass (background drag analogue)
    and the overlap co-activation of subject masks (confusion analogue).
    """
    strategies = [MaskStrategy.parse(s) for s in strategies]
    if len(strategies) < 2:
        raise ConfigurationError("ablation needs at least two strategies", ["strategies"])
    table = []
    for s in strategies:
        stats, _ = run_story(replace(config, strategy=s), timing=False)
        table.append(
            {
                "strategy": s.value,
                "out_of_box_mass": float(np.mean([fs.out_of_box_mass for fs in stats])),
                "coactivation": float(np.mean([fs.coactivation for fs in stats])),
                "entropy": float(np.mean([np.mean(fs.entropy) for fs in stats])),
                "history_mass": float(np.mean([np.mean(fs.history_mass) for fs in stats])),
            }
        )
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        cols = ["strategy", "out_of_box_mass", "coactivation", "entropy", "history_mass"]
        lines = [",".join(cols)] + [",".join(_fmt(r[c]) for c in cols) for r in table]
        (out / "ablation.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return table
