"""End-to-end link: encode, rate-match, modulate, channel, demap, de-rate-match.

Received blocks come back in decoder layout:

* ``conv``:  ``llr``/``ind`` of shape ``[B, K + 6, 2]`` (terminated code, z and z').
* ``turbo``: ``llr``/``ind`` of shape ``[B, 3, K]`` (systematic, parity0, parity1;
  the second parity stream in interleaved order).
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .channel import awgn, constellation, demap_llr, modulate, normalize_llr, rayleigh_receive, snr_to_sigma2
from .codec import QppInterleaver, conv_encode, default_interleaver, load_qpp_table, named_trellis, qpp_build, turbo_encode
from .errors import ConfigurationError, UnsupportedRateError
from .ratematch import derate_conv, derate_turbo, get_pattern, puncture_conv, rate_match_plan, turbo_block_length

CODES = ("conv", "turbo")
MOTHER_RATE = {"conv": Fraction(1, 2), "turbo": Fraction(1, 3)}


def parse_rate(rate) -> Fraction:
    try:
        r = Fraction(str(rate))
    except (ValueError, ZeroDivisionError):
        raise UnsupportedRateError(f"cannot parse code rate {rate!r}") from None
    if not (0 < r <= 1):
        raise UnsupportedRateError(f"rate {r} out of (0, 1]")
    return r


def check_code(code: str) -> str:
    if code not in CODES:
        raise ConfigurationError(f"unknown code {code!r}; expected one of {CODES}")
    return code


def make_interleaver(K: int, qpp: tuple[int, int] | None = None) -> QppInterleaver:
    """Table interleaver for ``K`` unless explicit ``(f1, f2)`` coefficients are given."""
    if qpp is not None:
        return qpp_build(K, int(qpp[0]), int(qpp[1]))
    return default_interleaver(K, _qpp_table())


@lru_cache(maxsize=1)
def _qpp_table():
    return load_qpp_table()


@dataclass
class Received:
    bits: np.ndarray  # [B, K] transmitted information bits
    llr: np.ndarray
    ind: np.ndarray


def n_positions(code: str, K: int) -> int:
    """Sequence length seen by a decoder for one block."""
    return K + named_trellis("wifi-cc-k7").memory if code == "conv" else K


def encode_and_select(bits: np.ndarray, code: str, rate, interleaver: QppInterleaver | None):
    """Coded bits actually transmitted, ``[B, E]``, and the inverse mapping."""
    r = parse_rate(rate)
    if r < MOTHER_RATE[code]:
        raise UnsupportedRateError(f"{code} codes support rates >= {MOTHER_RATE[code]}, got {r}")
    if code == "conv":
        pattern = get_pattern(r)
        streams = conv_encode(bits, terminate=True)
        n = streams.shape[-2]
        return puncture_conv(streams, pattern), lambda llr: derate_conv(llr, pattern, n)
    if interleaver is None:
        raise ConfigurationError("turbo codes need an interleaver")
    streams = turbo_encode(bits, interleaver, terminate=False)
    plan = rate_match_plan(streams.K, turbo_block_length(streams.K, r))
    flat = streams.stacked().reshape(bits.shape[0], -1)[:, plan.selected]

    def derate(llr):
        s, z, z2, ps, pz, pz2 = derate_turbo(llr, plan)
        return np.stack([s, z, z2], axis=-2), np.stack([ps, pz, pz2], axis=-2)

    return flat, derate


def transmit(
    bits,
    code: str,
    rate,
    snr_db: float,
    rng: np.random.Generator,
    interleaver: QppInterleaver | None = None,
    channel: str = "awgn",
    modulation: str | None = None,
    normalize: bool = True,
    n_antennas: int = 4,
    n_taps: int = 3,
    csi: str = "ls",
) -> Received:
    """Send ``bits[B, K]`` over the link and return de-rate-matched LLRs.

    AWGN uses BPSK with exact LLRs by default.  ``rayleigh`` spreads each
    block over ``n_antennas`` transmit antennas of a fresh multi-tap channel,
    detects with LS estimation plus MMSE, and demaps with the distance metric
    (16-QAM by default).  With ``normalize`` each received block is
    standardized before de-rate-matching.
    """
    check_code(code)
    bits = np.asarray(bits, dtype=np.int8)
    coded, derate = encode_and_select(bits, code, rate, interleaver)
    sigma2 = snr_to_sigma2(snr_db)
    if channel == "awgn":
        const = constellation(modulation or "bpsk")
        E = coded.shape[-1]
        pad = (-E) % const.bits_per_symbol
        c = np.concatenate([coded, rng.integers(0, 2, (coded.shape[0], pad), dtype=np.int8)], axis=-1)
        y = awgn(modulate(c, const), sigma2, rng)
        llr = demap_llr(y, const, sigma2)[..., :E]
    elif channel == "rayleigh":
        llr = _rayleigh_llrs(coded, sigma2, rng, modulation or "16qam", n_antennas, n_taps, csi)
    else:
        raise ConfigurationError(f"unknown channel {channel!r}")
    if normalize:
        llr = normalize_llr(llr)
    L, P = derate(llr)
    return Received(bits, L, P)


def _rayleigh_llrs(coded, sigma2, rng, modulation, n_ant, n_taps, csi):
    const = constellation(modulation)
    B, E = coded.shape
    per_slot = const.bits_per_symbol * n_ant
    pad = (-E) % per_slot
    out = np.empty((B, E))
    for b in range(B):
        c = np.concatenate([coded[b], rng.integers(0, 2, pad, dtype=np.int8)])
        sym = modulate(c, const).reshape(n_ant, -1)
        x_hat = rayleigh_receive(sym, rng, sigma2, n_taps=n_taps, csi=csi)
        out[b] = demap_llr(x_hat.reshape(-1), const, sigma2)[:E]
    return out
