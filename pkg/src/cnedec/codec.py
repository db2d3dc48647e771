"""Convolutional and Turbo (PCCC) encoders, trellis construction and QPP interleaving.

Octal generators follow the 802.11 convention: the most significant tap of a
``constraint_length``-bit generator multiplies the current input bit, the least
significant tap the oldest register bit.  A trellis state is the register
content without the current bit, most recent bit in the high position.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from math import gcd
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import yaml

from .errors import ConfigurationError


def _parity(x: int) -> int:
    return bin(x).count("1") & 1


@dataclass(frozen=True)
class Trellis:
    """State-transition table of a binary rate-1/n convolutional code.

    ``next_state[s, u]`` and ``branch_output[s, u, j]`` (output of generator
    ``j``) are numpy tables.  For recursive systematic codes ``feedback`` is
    set and the systematic output is the input bit itself; it is not part of
    ``branch_output``.
    """

    constraint_length: int
    generators: tuple[int, ...]
    feedback: int | None
    next_state: np.ndarray = field(repr=False)
    branch_output: np.ndarray = field(repr=False)

    @property
    def memory(self) -> int:
        return self.constraint_length - 1

    @property
    def num_states(self) -> int:
        return 1 << self.memory

    @property
    def n_outputs(self) -> int:
        return len(self.generators)

    @property
    def recursive(self) -> bool:
        return self.feedback is not None

    def prev_transitions(self) -> tuple[np.ndarray, np.ndarray]:
        """Incoming transitions: ``(prev_state[s, k], input[s, k])`` for k in {0, 1}."""
        S = self.num_states
        prev = np.full((S, 2), -1, dtype=np.int64)
        inp = np.full((S, 2), -1, dtype=np.int64)
        fill = np.zeros(S, dtype=np.int64)
        for s in range(S):
            for u in (0, 1):
                ns = self.next_state[s, u]
                prev[ns, fill[ns]] = s
                inp[ns, fill[ns]] = u
                fill[ns] += 1
        return prev, inp

    def tail_input(self, state: np.ndarray) -> np.ndarray:
        """Input bits that drive the register towards the all-zero state."""
        if self.feedback is None:
            return np.zeros_like(state)
        fb_low = self.feedback & (self.num_states - 1)
        table = np.array([_parity(s & fb_low) for s in range(self.num_states)], dtype=np.int64)
        return table[state]


def build_trellis(
    generators: Sequence[int], constraint_length: int, feedback: int | None = None
) -> Trellis:
    """Enumerate the trellis of a (possibly recursive) convolutional encoder.

    ``generators`` and ``feedback`` are integers whose binary expansion gives the
    taps; write them as octal literals (``0o133``).  The feedback polynomial
    must have its top tap set (it multiplies the newly computed register bit).
    """
    if constraint_length < 2:
        raise ConfigurationError(f"constraint_length must be >= 2, got {constraint_length}")
    if not generators:
        raise ConfigurationError("at least one generator is required")
    width = 1 << constraint_length
    for g in list(generators) + ([feedback] if feedback is not None else []):
        if g <= 0 or g >= width:
            raise ConfigurationError(
                f"generator {g:o} (octal) does not fit in constraint length {constraint_length}"
            )
    m = constraint_length - 1
    if feedback is not None and not (feedback >> m) & 1:
        raise ConfigurationError(f"feedback {feedback:o} (octal) lacks the current-bit tap")

    S = 1 << m
    next_state = np.zeros((S, 2), dtype=np.int64)
    branch_output = np.zeros((S, 2, len(generators)), dtype=np.int8)
    fb_low = feedback & (S - 1) if feedback is not None else 0
    for s in range(S):
        for u in (0, 1):
            a = u ^ _parity(s & fb_low) if feedback is not None else u
            reg = (a << m) | s
            next_state[s, u] = reg >> 1
            for j, g in enumerate(generators):
                branch_output[s, u, j] = _parity(reg & g)
    next_state.setflags(write=False)
    branch_output.setflags(write=False)
    return Trellis(constraint_length, tuple(int(g) for g in generators), feedback, next_state, branch_output)


TRELLIS_DEFINITIONS: dict[str, dict] = {
    "wifi-cc-k7": {"generators": (0o133, 0o171), "constraint_length": 7, "feedback": None},
    "lte-turbo-constituent": {"generators": (0o15,), "constraint_length": 4, "feedback": 0o13},
}


def named_trellis(name: str) -> Trellis:
    try:
        spec = TRELLIS_DEFINITIONS[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown trellis {name!r}; known: {sorted(TRELLIS_DEFINITIONS)}"
        ) from None
    return build_trellis(**spec)


def _check_bits(bits: np.ndarray) -> np.ndarray:
    bits = np.asarray(bits)
    if bits.size and not np.isin(bits, (0, 1)).all():
        raise ValueError("input must contain only 0/1 bits")
    return bits.astype(np.int64)


def _run_encoder(bits: np.ndarray, trellis: Trellis, terminate: bool):
    """Shared shift-register loop; returns (outputs, tail_inputs, final_state)."""
    batch_shape = bits.shape[:-1]
    K = bits.shape[-1]
    n_tail = trellis.memory if terminate else 0
    out = np.zeros(batch_shape + (K + n_tail, trellis.n_outputs), dtype=np.int8)
    tail_in = np.zeros(batch_shape + (n_tail,), dtype=np.int8)
    state = np.zeros(batch_shape, dtype=np.int64)
    for t in range(K):
        u = bits[..., t]
        out[..., t, :] = trellis.branch_output[state, u]
        state = trellis.next_state[state, u]
    for t in range(n_tail):
        u = trellis.tail_input(state)
        tail_in[..., t] = u
        out[..., K + t, :] = trellis.branch_output[state, u]
        state = trellis.next_state[state, u]
    return out, tail_in, state


def conv_encode(bits, trellis: Trellis | None = None, terminate: bool = True) -> np.ndarray:
    """Encode ``bits[..., K]`` with a feed-forward convolutional code.

    Returns an int8 array ``[..., K + tail, n_outputs]``: column 0 is ``z``,
    column 1 is ``z'``.  Flattening the last two axes gives the serialized
    order (``z`` before ``z'`` at every time step).  With ``terminate`` the
    encoder is flushed with ``memory`` zero bits.
    """
    trellis = trellis or named_trellis("wifi-cc-k7")
    if trellis.recursive:
        raise ConfigurationError("conv_encode expects a feed-forward trellis")
    out, _, _ = _run_encoder(_check_bits(bits), trellis, terminate)
    return out


@dataclass(frozen=True)
class QppInterleaver:
    """Quadratic permutation polynomial interleaver, pi(i) = (f1*i + f2*i^2) mod K.

    ``interleave(x)[i] = x[pi(i)]`` along the last axis.
    """

    K: int
    f1: int
    f2: int
    table: np.ndarray = field(repr=False)
    inverse: np.ndarray = field(repr=False)

    def interleave(self, x):
        x = np.asarray(x)
        if x.shape[-1] != self.K:
            raise ConfigurationError(f"sequence length {x.shape[-1]} != interleaver K={self.K}")
        return x[..., self.table]

    def deinterleave(self, x):
        x = np.asarray(x)
        if x.shape[-1] != self.K:
            raise ConfigurationError(f"sequence length {x.shape[-1]} != interleaver K={self.K}")
        return x[..., self.inverse]


def qpp_build(K: int, f1: int, f2: int) -> QppInterleaver:
    if K < 1:
        raise ConfigurationError(f"K must be positive, got {K}")
    i = np.arange(K, dtype=np.int64)
    table = (f1 * i + f2 * i * i) % K
    seen = np.full(K, -1, dtype=np.int64)
    for idx, v in enumerate(table):
        if seen[v] >= 0:
            raise ConfigurationError(
                f"QPP (K={K}, f1={f1}, f2={f2}) is not a permutation: "
                f"pi({seen[v]}) = pi({idx}) = {v}"
            )
        seen[v] = idx
    inverse = np.empty(K, dtype=np.int64)
    inverse[table] = i
    table.setflags(write=False)
    inverse.setflags(write=False)
    return QppInterleaver(K, f1, f2, table, inverse)


def load_qpp_table(path: str | Path | None = None) -> dict[int, tuple[int, int]]:
    """Read per-K QPP coefficients from a YAML mapping ``K: [f1, f2]``."""
    if path is None:
        text = resources.files("cnedec.data").joinpath("qpp.yaml").read_text()
    else:
        text = Path(path).read_text()
    raw = yaml.safe_load(text) or {}
    table = raw.get("qpp", raw)
    return {int(k): (int(v[0]), int(v[1])) for k, v in table.items()}


def default_interleaver(K: int, table: Mapping[int, tuple[int, int]] | None = None) -> QppInterleaver:
    table = load_qpp_table() if table is None else table
    if K not in table:
        raise ConfigurationError(f"no QPP coefficients for K={K}; known: {sorted(table)}")
    f1, f2 = table[K]
    return qpp_build(K, f1, f2)


def identity_interleaver(K: int) -> QppInterleaver:
    return qpp_build(K, 1, 0)


def random_qpp(K: int, rng: np.random.Generator, max_tries: int = 10000) -> QppInterleaver:
    """Draw a valid QPP for an arbitrary K (used for lengths without a table entry)."""
    for _ in range(max_tries):
        f1 = int(rng.integers(1, K)) if K > 1 else 1
        f2 = int(rng.integers(0, K)) if K > 1 else 0
        if gcd(f1, K) != 1:
            continue
        try:
            return qpp_build(K, f1, f2)
        except ConfigurationError:
            continue
    raise ConfigurationError(f"could not find a QPP for K={K}")


@dataclass(frozen=True)
class CodewordStreams:
    """Turbo codeword: systematic and two parity streams, each ``[..., K]``.

    ``tail`` (terminated encoding only) has shape ``[..., 2, memory, 2]``:
    encoder index, tail step, (systematic, parity).
    """

    systematic: np.ndarray
    parity0: np.ndarray
    parity1: np.ndarray
    tail: np.ndarray | None = None

    @property
    def K(self) -> int:
        return self.systematic.shape[-1]

    def stacked(self) -> np.ndarray:
        """``[..., 3, K]`` array of (systematic, parity0, parity1)."""
        return np.stack([self.systematic, self.parity0, self.parity1], axis=-2)


def turbo_encode(
    bits, interleaver: QppInterleaver, terminate: bool = False, trellis: Trellis | None = None
) -> CodewordStreams:
    """Rate-1/3 PCCC encoder with two identical recursive constituents."""
    trellis = trellis or named_trellis("lte-turbo-constituent")
    if not trellis.recursive:
        raise ConfigurationError("turbo constituents must be recursive")
    bits = _check_bits(bits)
    if bits.shape[-1] != interleaver.K:
        raise ConfigurationError(
            f"block length {bits.shape[-1]} does not match interleaver K={interleaver.K}"
        )
    out0, tin0, _ = _run_encoder(bits, trellis, terminate)
    out1, tin1, _ = _run_encoder(interleaver.interleave(bits), trellis, terminate)
    K = bits.shape[-1]
    tail = None
    if terminate:
        tail = np.stack(
            [
                np.stack([tin0, out0[..., K:, 0]], axis=-1),
                np.stack([tin1, out1[..., K:, 0]], axis=-1),
            ],
            axis=-3,
        ).astype(np.int8)
    return CodewordStreams(
        systematic=bits.astype(np.int8),
        parity0=out0[..., :K, 0],
        parity1=out1[..., :K, 0],
        tail=tail,
    )
