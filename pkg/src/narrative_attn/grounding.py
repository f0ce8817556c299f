"""Patch grids, grounding boxes, Gaussian subject masks and the IP logit bias."""

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigurationError, InvalidInputError, InvalidParameterError


@dataclass(frozen=True)
class PatchGrid:
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise InvalidParameterError(f"grid must be at least 1x1, got {self.width}x{self.height}")

    @property
    def size(self):
        return self.width * self.height

    @property
    def hw(self):
        return (self.height, self.width)

    def centers(self):
        """Normalized patch centres ``(xs, ys)`` in row-major order."""
        xs = (np.arange(self.width) + 0.5) / self.width
        ys = (np.arange(self.height) + 0.5) / self.height
        gx, gy = np.meshgrid(xs, ys)
        return gx.ravel(), gy.ravel()

    @classmethod
    def parse(cls, text):
        """Parse ``"WxH"``."""
        try:
            w, h = (int(t) for t in str(text).lower().split("x"))
        except ValueError as exc:
            raise ConfigurationError(f"grid must look like WxH, got {text!r}", ["grid"]) from exc
        return cls(w, h)

    def __str__(self):
        return f"{self.width}x{self.height}"


@dataclass(frozen=True)
class GroundingBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (0.0 <= self.x1 < self.x2 <= 1.0 and 0.0 <= self.y1 < self.y2 <= 1.0):
            raise InvalidInputError(f"invalid box {self.as_tuple()}")

    @property
    def width(self):
        return self.x2 - self.x1

    @property
    def height(self):
        return self.y2 - self.y1

    @property
    def area(self):
        return self.width * self.height

    @property
    def centroid(self):
        return ((self.x1 + self.x2) / 2, (self.y1 + self.y2) / 2)

    def as_tuple(self):
        return (self.x1, self.y1, self.x2, self.y2)

    def intersect(self, other):
        x1, y1 = max(self.x1, other.x1), max(self.y1, other.y1)
        x2, y2 = min(self.x2, other.x2), min(self.y2, other.y2)
        if x1 < x2 and y1 < y2:
            return GroundingBox(x1, y1, x2, y2)
        return None

    @classmethod
    def from_any(cls, obj):
        """Accept ``{"x1":..}`` dicts or 4-sequences."""
        if isinstance(obj, dict):
            return cls(*(float(obj[k]) for k in ("x1", "y1", "x2", "y2")))
        x1, y1, x2, y2 = obj
        return cls(float(x1), float(y1), float(x2), float(y2))


@dataclass(frozen=True)
class GcaParams:
    r1: float = 0.35
    r2: float = 0.70
    sigma_min: float = 0.20
    sigma_max: float = 0.50
    rho: float = 2.0
    fuse_weight: float = 0.5
    bias_scale: float = 6.0
    overlap_damping: float = 0.5

    def __post_init__(self):
        bad = []
        if not 0 < self.sigma_min <= self.sigma_max:
            bad.append("sigma_min")
        if not self.rho > 1:
            bad.append("rho")
        if not self.r1 < self.r2:
            bad.append("r1")
        if not 0 <= self.fuse_weight <= 1:
            bad.append("fuse_weight")
        if not self.bias_scale > 0:
            bad.append("bias_scale")
        if not 0 <= self.overlap_damping <= 1:
            bad.append("overlap_damping")
        if bad:
            raise ConfigurationError(f"invalid GCA parameters: {', '.join(bad)}", bad)


@dataclass(frozen=True)
class SubjectMask:
    values: np.ndarray
    centers: tuple = ()


@dataclass(frozen=True)
class AttentionBias:
    """``P x (N_ip + N_dummy)`` additive logit bias.

    ``owners[j]`` is the subject index owning column ``j`` or ``-1`` for dummy
    (and otherwise unowned) columns.
    """

    matrix: np.ndarray
    owners: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.intp))


class MaskStrategy(str, Enum):
    BOX_BINARY = "BoxBinary"
    XOR_SPLIT = "XorSplit"
    STATIC_TWO_STAGE = "StaticTwoStage"
    SINGLE_STAGE = "SingleStage"
    GCA = "Gca"
    # all-ones masks, i.e. zero bias; the unguided baseline
    NONE = "None"

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        for s in cls:
            if s.value.lower() == str(name).lower():
                return s
        raise ConfigurationError(f"unknown mask strategy {name!r}", ["strategy"])


def split_box_centers(box, grid=None):
    """Halve ``box`` across its longer side and return the two half centroids.

    Squares split along x. Lengths are compared in normalized coordinates;
    ``grid`` is accepted for call-site symmetry and unused.
    """
    cy = (box.y1 + box.y2) / 2
    cx = (box.x1 + box.x2) / 2
    if box.width >= box.height:
        return (box.x1 + box.width / 4, cy), (box.x1 + 3 * box.width / 4, cy)
    return (cx, box.y1 + box.height / 4), (cx, box.y1 + 3 * box.height / 4)


def radii_from_strength(p, box, params, overlap=0.0):
    """Map influence strength to ``(s_x_in, s_y_in, s_x_out, s_y_out)``."""
    if not 0.0 <= overlap <= 1.0:
        raise InvalidParameterError(f"overlap must lie in [0, 1], got {overlap}")
    w, h = box.width, box.height
    m = min(w, h)
    p = min(max(p, 0.0), 1.0)
    # convex form so both endpoints are hit exactly
    s_in = ((1.0 - p) * params.sigma_min + p * params.sigma_max) * m
    s_out = params.rho * s_in * (1.0 - params.overlap_damping * overlap)
    ax, ay = w / m, h / m  # the short axis gets exactly 1
    return s_in * ax, s_in * ay, s_out * ax, s_out * ay


def gaussian_field(center, s_x, s_y, grid):
    if s_x <= 0 or s_y <= 0:
        raise InvalidParameterError(f"Gaussian scales must be positive, got ({s_x}, {s_y})")
    xs, ys = grid.centers()
    dx = (xs - center[0]) / s_x
    dy = (ys - center[1]) / s_y
    return np.exp(-0.5 * (dx * dx + dy * dy))


def _normalize(field_):
    peak = field_.max() if field_.size else 0.0
    if peak > 0:
        return field_ / peak
    return np.zeros_like(field_)


def build_subject_mask(box, grid, params, p=0.5, overlap=0.0):
    """Two-centroid fused inner/outer Gaussian mask, normalized to peak 1."""
    sxi, syi, sxo, syo = radii_from_strength(p, box, params, overlap)
    centers = split_box_centers(box, grid)
    lam = params.fuse_weight
    fused = None
    for c in centers:
        g = lam * gaussian_field(c, sxi, syi, grid)
        if lam < 1.0:
            g = g + (1.0 - lam) * gaussian_field(c, sxo, syo, grid)
        fused = g if fused is None else np.maximum(fused, g)
    return SubjectMask(values=_normalize(fused), centers=tuple(centers))


def _snap(v):
    # 0.7 * 10 == 7.000000000000001 must still count as the integer edge 7
    r = round(v)
    return float(r) if abs(v - r) < 1e-9 else v


def box_footprint(box, grid):
    """Row-major patch indices covered by ``box``."""
    x0 = min(max(math.floor(_snap(box.x1 * grid.width)), 0), grid.width)
    x1 = min(max(math.ceil(_snap(box.x2 * grid.width)), 0), grid.width)
    y0 = min(max(math.floor(_snap(box.y1 * grid.height)), 0), grid.height)
    y1 = min(max(math.ceil(_snap(box.y2 * grid.height)), 0), grid.height)
    ys, xs = np.meshgrid(np.arange(y0, y1), np.arange(x0, x1), indexing="ij")
    return (ys * grid.width + xs).ravel()


def _union_area(rects):
    """Exact area of a union of axis-aligned rectangles (coordinate compression)."""
    if not rects:
        return 0.0
    xs = sorted({r.x1 for r in rects} | {r.x2 for r in rects})
    ys = sorted({r.y1 for r in rects} | {r.y2 for r in rects})
    area = 0.0
    for i in range(len(xs) - 1):
        mx = (xs[i] + xs[i + 1]) / 2
        for j in range(len(ys) - 1):
            my = (ys[j] + ys[j + 1]) / 2
            if any(r.x1 <= mx < r.x2 and r.y1 <= my < r.y2 for r in rects):
                area += (xs[i + 1] - xs[i]) * (ys[j + 1] - ys[j])
    return area


def overlap_fraction(boxes, i):
    """Fraction of box ``i``'s area covered by the other boxes."""
    me = boxes[i]
    parts = [me.intersect(b) for j, b in enumerate(boxes) if j != i]
    covered = _union_area([p for p in parts if p is not None])
    return min(max(covered / me.area, 0.0), 1.0)


def influence_strength(alpha_text, region, token_indices=None):
    """Mean text attention over ``region`` patches (and tokens), clipped to [0, 1]."""
    region = np.asarray(region, dtype=np.intp)
    if region.size == 0:
        raise InvalidInputError("influence region is empty")
    a = np.asarray(alpha_text, dtype=np.float64)
    if token_indices is not None:
        a = a[:, np.asarray(token_indices, dtype=np.intp)]
    if a.shape[1] == 0:
        return 0.0
    p = float(a[region].mean())
    return min(max(p, 0.0), 1.0)


def mask_variant(strategy, boxes, grid, params, text_attention=None, strengths=None, token_indices=None):
    """Subject masks for every box under one of the ablation strategies.

    Attention-driven strategies take per-subject strengths from ``strengths``
    if given, else from ``text_attention`` averaged over each box footprint,
    else fall back to 0.5.
    """
    strategy = MaskStrategy.parse(strategy)
    boxes = list(boxes)
    n = len(boxes)

    def strength(i):
        if strengths is not None:
            return float(strengths[i])
        if text_attention is not None:
            toks = None if token_indices is None else token_indices[i]
            return influence_strength(text_attention, box_footprint(boxes[i], grid), toks)
        return 0.5

    if strategy is MaskStrategy.NONE:
        return [SubjectMask(np.ones(grid.size), (b.centroid,)) for b in boxes]

    if strategy in (MaskStrategy.BOX_BINARY, MaskStrategy.XOR_SPLIT):
        masks = np.zeros((n, grid.size))
        for i, b in enumerate(boxes):
            masks[i, box_footprint(b, grid)] = 1.0
        if strategy is MaskStrategy.XOR_SPLIT:
            masks[:, masks.sum(axis=0) >= 2] = 0.0
        return [SubjectMask(masks[i], (b.centroid,)) for i, b in enumerate(boxes)]

    out = []
    for i, b in enumerate(boxes):
        ov = overlap_fraction(boxes, i)
        if strategy is MaskStrategy.STATIC_TWO_STAGE:
            out.append(build_subject_mask(b, grid, params, 0.5, ov))
        elif strategy is MaskStrategy.GCA:
            out.append(build_subject_mask(b, grid, params, strength(i), ov))
        else:  # SINGLE_STAGE
            sxi, syi, _, _ = radii_from_strength(strength(i), b, params, ov)
            s = min(sxi, syi)
            g = gaussian_field(b.centroid, s, s, grid)
            out.append(SubjectMask(_normalize(g), (b.centroid,)))
    return out


def assemble_bias(masks, ip_spans, n_dummy, beta):
    """IP-branch logit bias ``beta * (M_i - 1)`` on each subject's columns.

    Columns not covered by a span, and the ``n_dummy`` trailing dummy
    columns, stay exactly zero.
    """
    if beta <= 0:
        raise InvalidParameterError("bias scale must be positive")
    if len(masks) != len(ip_spans):
        raise ConfigurationError("one IP span per subject mask is required", ["ip_spans"])
    spans = sorted((int(a), int(b), i) for i, (a, b) in enumerate(ip_spans))
    for (a0, b0, _), (a1, _, _) in zip(spans, spans[1:]):
        if a1 < b0:
            raise ConfigurationError("IP spans overlap", ["ip_spans"])
    if any(a < 0 or b <= a for a, b, _ in spans):
        raise ConfigurationError("IP spans must be non-empty and non-negative", ["ip_spans"])
    n_ip = max((b for _, b, _ in spans), default=0)
    P = masks[0].values.size if masks else 0
    B = np.zeros((P, n_ip + n_dummy))
    owners = np.full(n_ip + n_dummy, -1, dtype=np.intp)
    for a, b, i in spans:
        col = beta * (np.asarray(masks[i].values, dtype=np.float64) - 1.0)
        B[:, a:b] = col[:, None]
        owners[a:b] = i
    return AttentionBias(matrix=B, owners=owners)


def background_mask(masks, size=None, binarize_threshold=None):
    """``clip(1 - max_i M_i, 0, 1)``; all ones when there are no subjects."""
    if not masks:
        if size is None:
            raise InvalidInputError("size is required when no masks are given")
        mb = np.ones(size)
    else:
        stack = np.vstack([np.asarray(m.values, dtype=np.float64) for m in masks])
        mb = np.clip(1.0 - stack.max(axis=0), 0.0, 1.0)
    if binarize_threshold is not None:
        mb = (mb >= binarize_threshold).astype(np.float64)
    return mb


def mask_to_pgm(values, grid):
    """Binary PGM (P5, maxval 255) bytes for a mask on ``grid``."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    pix = np.floor(255.0 * v + 0.5).astype(np.uint8)
    header = f"P5\n{grid.width} {grid.height}\n255\n".encode("ascii")
    return header + pix.tobytes()


def read_pgm(data):
    """Parse P5 bytes written by :func:`mask_to_pgm`; returns ``(w, h, pixels)``."""
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise InvalidInputError("not a binary PGM")
    w, h = (int(t) for t in parts[1].split())
    pix = np.frombuffer(parts[3], dtype=np.uint8)
    if pix.size != w * h:
        raise InvalidInputError("PGM payload size mismatch")
    return w, h, pix.reshape(h, w)
