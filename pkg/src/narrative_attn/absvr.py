"""Action-boost singular-value reweighting of frame-level token blocks.

Blocks are oriented features x tokens (``D x T``), so projectors are ``D x D``
and act from the left.
"""

from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DimensionError, InvalidInputError, InvalidParameterError
from .numkernel import as_matrix, thin_svd


@dataclass(frozen=True)
class AbsvrParams:
    tau: float = 0.85
    gain_exp: float = 1.1
    gain_sup: float = 0.9
    zero_energy_epsilon: float = 1e-12

    def __post_init__(self):
        bad = []
        if not 0 < self.tau <= 1:
            bad.append("tau")
        if not self.gain_exp >= 1:
            bad.append("gain_exp")
        if not 0 <= self.gain_sup <= 1:
            bad.append("gain_sup")
        if not self.zero_energy_epsilon >= 0:
            bad.append("zero_energy_epsilon")
        if bad:
            raise ConfigurationError(f"invalid AB-SVR parameters: {', '.join(bad)}", bad)


@dataclass(frozen=True)
class FrameSegments:
    frames: tuple
    current_index: int

    def __post_init__(self):
        if not self.frames:
            raise InvalidInputError("no frames")
        dims = {f.shape[0] for f in self.frames}
        if len(dims) != 1:
            raise DimensionError(f"frames disagree on feature dimension: {sorted(dims)}")
        if not 0 <= self.current_index < len(self.frames):
            raise InvalidInputError(f"current index {self.current_index} out of range")

    @property
    def express(self):
        return self.frames[self.current_index]

    def stacked(self):
        """All blocks side by side, ``D x sum(T_f)``."""
        return np.hstack(self.frames)


@dataclass(frozen=True)
class SpectralReport:
    sigma: np.ndarray
    cumulative_energy: np.ndarray
    k: int
    knees: tuple


class Emphasis(str, Enum):
    IDENTITY = "Identity"
    ACTIONS = "Actions"
    BACKGROUND = "Background"
    STYLE = "Style"
    DETAILS = "Details"


# recommended cumulative-energy thresholds per emphasis
_BANDS = {
    Emphasis.IDENTITY: 0.60,
    Emphasis.ACTIONS: 0.80,
    Emphasis.BACKGROUND: 0.90,
    Emphasis.STYLE: 0.93,
    Emphasis.DETAILS: 0.98,
}


def band_recommendation(emphasis):
    return _BANDS[Emphasis(emphasis)]


def cumulative_energy(sigma):
    s2 = np.asarray(sigma, dtype=np.float64) ** 2
    total = s2.sum()
    if total <= 0:
        return np.zeros_like(s2)
    e = np.minimum(np.cumsum(s2) / total, 1.0)
    e[-1] = 1.0
    return e


def select_rank(sigma, tau, eps=1e-12):
    """Smallest ``r`` with cumulative energy ``E(r) >= tau``; 0 for zero energy."""
    if not 0 < tau <= 1:
        raise ConfigurationError(f"tau must lie in (0, 1], got {tau}", ["tau"])
    s = np.asarray(sigma, dtype=np.float64)
    if s.size == 0 or float(np.sum(s * s)) <= eps:
        return 0
    e = cumulative_energy(s)
    if np.any(np.abs(e - tau) <= 1e-9):
        # too close to call in floating point: decide with exact rationals
        s2 = [Fraction(float(v)) ** 2 for v in s]
        target = Fraction(float(tau)) * sum(s2)
        acc = Fraction(0)
        for r, v in enumerate(s2, start=1):
            acc += v
            if acc >= target:
                return r
        return s.size
    return int(np.argmax(e >= tau)) + 1


def trunk_projector(svd, k):
    m = svd.sigma.size
    if not 0 <= k <= m:
        raise InvalidParameterError(f"rank {k} outside [0, {m}]")
    Uk = svd.U[:, :k]
    return Uk @ Uk.T


def detect_knees(sigma, count=3):
    """Indices ``i`` of the largest drops ``sigma_i^2 - sigma_{i+1}^2``, ascending."""
    s = np.asarray(sigma, dtype=np.float64)
    if s.size < 2:
        return ()
    drops = s[:-1] ** 2 - s[1:] ** 2
    order = np.argsort(-drops, kind="stable")[:count]
    return tuple(int(i) for i in np.sort(order))


def spectral_report(sigma, tau, eps=1e-12):
    sigma = np.asarray(sigma, dtype=np.float64)
    return SpectralReport(
        sigma=sigma,
        cumulative_energy=cumulative_energy(sigma),
        k=select_rank(sigma, tau, eps),
        knees=detect_knees(sigma),
    )


def absvr_apply(segments, params=AbsvrParams()):
    """Boost the express block's energy trunk and notch it out of the others.

    Returns ``(FrameSegments, SpectralReport)``; the input is not modified.
    """
    X = as_matrix(segments.express, "express block")
    if X.size == 0:
        raise InvalidInputError("express block is empty")
    svd = thin_svd(X)
    k = select_rank(svd.sigma, params.tau, params.zero_energy_epsilon)
    report = SpectralReport(svd.sigma, cumulative_energy(svd.sigma), k, detect_knees(svd.sigma))
    Uk = svd.U[:, :k]
    exp_new = (Uk * (params.gain_exp * svd.sigma[:k])) @ svd.Vt[:k]
    frames = []
    for i, f in enumerate(segments.frames):
        if i == segments.current_index:
            frames.append(exp_new)
        else:
            f = np.asarray(f, dtype=np.float64)
            frames.append(params.gain_sup * (f - Uk @ (Uk.T @ f)))
    return FrameSegments(tuple(frames), segments.current_index), report


def plain_svr(express, suppress, gain_up, gain_down):
    """Uniform scaling of express and suppress blocks, no projection."""
    if gain_up <= 0 or gain_down <= 0:
        raise InvalidParameterError("gains must be positive")
    return gain_up * np.asarray(express, dtype=np.float64), [
        gain_down * np.asarray(s, dtype=np.float64) for s in suppress
    ]


def segment_frames(tokens, boundaries, current):
    """Slice ``D x T`` token columns at ``boundaries`` into frame blocks."""
    tokens = as_matrix(tokens, "tokens")
    T = tokens.shape[1]
    b = [int(x) for x in boundaries]
    if any(x <= 0 or x >= T for x in b) or any(b1 <= b0 for b0, b1 in zip(b, b[1:])):
        raise InvalidInputError(f"boundaries {b} must be strictly increasing inside (0, {T})")
    edges = [0, *b, T]
    frames = tuple(tokens[:, a:c] for a, c in zip(edges, edges[1:]))
    if not 0 <= current < len(frames):
        raise InvalidInputError(f"current frame {current} out of range for {len(frames)} frames")
    return FrameSegments(frames, current)


def write_spectrum_csv(path, report):
    knees = set(report.knees)
    lines = ["i,sigma,energy_cum,is_knee,k_selected"]
    for i, (s, e) in enumerate(zip(report.sigma, report.cumulative_energy)):
        lines.append(f"{i},{float(s)!r},{float(e)!r},{int(i in knees)},{int(i < report.k)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
