"""Puncturing, sub-block interleaving, circular-buffer selection and their inverses.

De-rate-matching always returns full-length LLR arrays with zeros where a coded
bit was never transmitted, together with a 0/1 indicator of the same shape
(1 = transmitted at least once).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from .codec import CodewordStreams
from .errors import ConfigurationError, FramingError, UnsupportedRateError


@dataclass(frozen=True)
class PuncturingPattern:
    """Periodic keep/steal mask over the mother-code output streams."""

    name: str
    keep_mask: np.ndarray = field(repr=False)
    mother_rate: Fraction = Fraction(1, 2)

    def __post_init__(self):
        mask = np.asarray(self.keep_mask, dtype=np.int8)
        if mask.ndim != 2 or not np.isin(mask, (0, 1)).all():
            raise ConfigurationError(f"pattern {self.name!r}: keep mask must be a 0/1 matrix")
        if not mask.any(axis=0).all():
            raise ConfigurationError(f"pattern {self.name!r}: every period column must keep a bit")
        mask.setflags(write=False)
        object.__setattr__(self, "keep_mask", mask)

    @property
    def period(self) -> int:
        return self.keep_mask.shape[1]

    @property
    def n_streams(self) -> int:
        return self.keep_mask.shape[0]

    @property
    def rate(self) -> Fraction:
        return Fraction(self.n_streams * self.period, 1) * self.mother_rate / int(self.keep_mask.sum())

    def mask_for(self, n_steps: int) -> np.ndarray:
        """``[n_steps, streams]`` keep mask, tiling the period (a partial last period is allowed)."""
        cols = np.arange(n_steps) % self.period
        return self.keep_mask[:, cols].T

    def transmitted_length(self, n_steps: int) -> int:
        return int(self.mask_for(n_steps).sum())


STANDARD_PATTERNS: dict[str, PuncturingPattern] = {
    "1/2": PuncturingPattern("1/2", np.array([[1], [1]])),
    "2/3": PuncturingPattern("2/3", np.array([[1, 1], [1, 0]])),
    "3/4": PuncturingPattern("3/4", np.array([[1, 1, 0], [1, 0, 1]])),
    "5/6": PuncturingPattern("5/6", np.array([[1, 1, 0, 1, 0], [1, 0, 1, 0, 1]])),
}


def _parse_fraction(value) -> Fraction:
    return Fraction(str(value))


def load_patterns(path: str | Path | None = None) -> dict[str, PuncturingPattern]:
    """Read a pattern file (YAML list of name / mother_rate / period / masks)."""
    if path is None:
        text = resources.files("cnedec.data").joinpath("patterns.yaml").read_text()
    else:
        text = Path(path).read_text()
    entries = (yaml.safe_load(text) or {}).get("patterns", [])
    out = {}
    for entry in entries:
        masks = [[int(c) for c in str(m)] for m in entry["masks"]]
        if any(len(m) != int(entry["period"]) for m in masks):
            raise ConfigurationError(f"pattern {entry['name']!r}: mask length != period")
        out[str(entry["name"])] = PuncturingPattern(
            str(entry["name"]), np.array(masks), _parse_fraction(entry.get("mother_rate", "1/2"))
        )
    return out


def get_pattern(rate: str | Fraction | PuncturingPattern) -> PuncturingPattern:
    if isinstance(rate, PuncturingPattern):
        return rate
    key = str(Fraction(str(rate)))
    if key not in STANDARD_PATTERNS:
        raise UnsupportedRateError(f"no puncturing pattern for rate {key}")
    return STANDARD_PATTERNS[key]


def puncture_conv(streams, pattern: PuncturingPattern) -> np.ndarray:
    """Serialize ``streams[..., n_steps, 2]`` (z before z') keeping only unmasked bits."""
    streams = np.asarray(streams)
    n_steps, n_str = streams.shape[-2:]
    if n_str != pattern.n_streams:
        raise FramingError(f"expected {pattern.n_streams} streams, got {n_str}")
    keep = pattern.mask_for(n_steps).reshape(-1).astype(bool)
    flat = streams.reshape(streams.shape[:-2] + (n_steps * n_str,))
    return flat[..., keep]


def derate_conv(received, pattern: PuncturingPattern, n_steps: int) -> tuple[np.ndarray, np.ndarray]:
    """Reinsert zeros at stolen positions.

    Returns ``(L_m[..., n_steps, 2], P[..., n_steps, 2])``.
    """
    received = np.asarray(received, dtype=np.float64)
    mask = pattern.mask_for(n_steps)
    E = int(mask.sum())
    if received.shape[-1] != E:
        raise FramingError(
            f"pattern {pattern.name} over {n_steps} steps transmits {E} bits, got {received.shape[-1]}"
        )
    batch = received.shape[:-1]
    keep = mask.reshape(-1).astype(bool)
    flat = np.zeros(batch + (keep.size,), dtype=received.dtype)
    flat[..., keep] = received
    L = flat.reshape(batch + mask.shape)
    P = np.broadcast_to(mask.astype(received.dtype), L.shape).copy()
    return L, P


# 3GPP TS 36.212 sub-block interleaver column permutation (32 columns).
SUBBLOCK_COLUMNS = 32
SUBBLOCK_PERMUTATION = np.array(
    [0, 16, 8, 24, 4, 20, 12, 28, 2, 18, 10, 26, 6, 22, 14, 30,
     1, 17, 9, 25, 5, 21, 13, 29, 3, 19, 11, 27, 7, 23, 15, 31]
)


@dataclass(frozen=True)
class RateMatchPlan:
    """Circular-buffer bit selection for one (K, E) pair, redundancy version 0.

    ``selected[e]`` is the flat coded-bit index (``stream * K + k``, streams in
    systematic / parity0 / parity1 order) sent as the e-th transmitted bit.
    """

    K: int
    E: int
    rows: int
    n_filler: int
    k0: int
    subblock_index: np.ndarray = field(repr=False)  # [3, K_pi], -1 for filler
    selected: np.ndarray = field(repr=False)

    @property
    def n_coded(self) -> int:
        return 3 * self.K

    def indicator(self) -> np.ndarray:
        """``[3, K]`` 0/1 array, 1 where a coded bit is sent at least once."""
        p = np.zeros(self.n_coded, dtype=np.int8)
        p[self.selected] = 1
        return p.reshape(3, self.K)


def _subblock_interleave_index(D: int, third: bool) -> tuple[np.ndarray, int, int]:
    C = SUBBLOCK_COLUMNS
    R = -(-D // C)
    K_pi = R * C
    n_filler = K_pi - D
    y = np.concatenate([np.full(n_filler, -1, dtype=np.int64), np.arange(D, dtype=np.int64)])
    k = np.arange(K_pi)
    if not third:
        src = SUBBLOCK_PERMUTATION[k // R] + C * (k % R)
    else:
        src = (SUBBLOCK_PERMUTATION[k // R] + C * (k % R) + 1) % K_pi
    return y[src], R, n_filler


def rate_match_plan(K: int, E: int) -> RateMatchPlan:
    if K < 1:
        raise ConfigurationError(f"K must be positive, got {K}")
    if E < K:
        raise UnsupportedRateError(f"E={E} < K={K}: code rate above 1 is not supported")
    v0, R, n_filler = _subblock_interleave_index(K, third=False)
    v1, _, _ = _subblock_interleave_index(K, third=False)
    v2, _, _ = _subblock_interleave_index(K, third=True)
    K_pi = v0.size
    # Offsets into the flat (systematic, parity0, parity1) coded-bit array.
    s0 = np.where(v0 >= 0, v0, -1)
    s1 = np.where(v1 >= 0, v1 + K, -1)
    s2 = np.where(v2 >= 0, v2 + 2 * K, -1)
    w = np.empty(3 * K_pi, dtype=np.int64)
    w[:K_pi] = s0
    w[K_pi::2] = s1
    w[K_pi + 1::2] = s2
    k0 = 2 * R  # rv_idx = 0, no soft-buffer limitation
    valid = w[np.r_[k0:w.size, 0:k0]]
    valid = valid[valid >= 0]
    reps = -(-E // valid.size)
    selected = np.tile(valid, reps)[:E]
    index = np.stack([s0, s1, s2])
    index.setflags(write=False)
    selected.setflags(write=False)
    return RateMatchPlan(K, E, R, n_filler, k0, index, selected)


def turbo_block_length(K: int, rate: str | Fraction) -> int:
    """Rate-matched length E = K / R, rounded to the nearest integer."""
    r = Fraction(str(rate))
    if not (0 < r <= 1):
        raise UnsupportedRateError(f"rate {r} out of (0, 1]")
    return int(round(K / r))


def turbo_rate_match(streams: CodewordStreams, E: int) -> tuple[np.ndarray, RateMatchPlan]:
    """Select ``E`` bits from the circular buffer of an (unterminated) Turbo codeword."""
    if streams.tail is not None:
        raise ConfigurationError("rate matching supports unterminated Turbo codewords only")
    plan = rate_match_plan(streams.K, E)
    flat = streams.stacked().reshape(streams.systematic.shape[:-1] + (3 * streams.K,))
    return flat[..., plan.selected], plan


def derate_turbo(received, plan: RateMatchPlan) -> tuple[np.ndarray, ...]:
    """Invert rate matching.

    Returns ``(llr_s, llr_z, llr_z2, p_s, p_z, p_z2)``, each ``[..., K]``.
    Bits received more than once are combined by LLR addition.
    """
    received = np.asarray(received, dtype=np.float64)
    if received.shape[-1] != plan.E:
        raise FramingError(f"plan expects E={plan.E} received values, got {received.shape[-1]}")
    batch = received.shape[:-1]
    flat = np.zeros(batch + (plan.n_coded,), dtype=received.dtype)
    # Any n_coded consecutive selections are distinct, so chunked += is exact.
    step = int((plan.subblock_index >= 0).sum())
    for start in range(0, plan.E, step):
        idx = plan.selected[start:start + step]
        flat[..., idx] += received[..., start:start + step]
    llr = flat.reshape(batch + (3, plan.K))
    ind = np.broadcast_to(plan.indicator().astype(received.dtype), llr.shape).copy()
    return (llr[..., 0, :], llr[..., 1, :], llr[..., 2, :],
            ind[..., 0, :], ind[..., 1, :], ind[..., 2, :])


def pattern_rates(patterns: Sequence[PuncturingPattern]) -> list[Fraction]:
    return [p.rate for p in patterns]
