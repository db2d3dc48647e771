"""Soft-input Viterbi, max-log-MAP SISO and the iterative classical Turbo decoder.

All decoders accept a leading batch of independent blocks.  Branch metrics use
the correlation form ``0.5 * sum(llr * (2c - 1))`` so a zero (punctured) LLR
contributes nothing to any branch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codec import QppInterleaver, Trellis, named_trellis

NEG_INF = -np.inf


def _branch_metrics(llrs: np.ndarray, trellis: Trellis) -> np.ndarray:
    """``[B, n, S, 2]`` correlation metrics for every branch of every step."""
    signs = 2.0 * trellis.branch_output.astype(np.float64) - 1.0  # [S, 2, n_out]
    return 0.5 * np.einsum("bnj,suj->bnsu", llrs, signs)


def viterbi_decode(
    L_m,
    trellis: Trellis | None = None,
    traceback_depth: int = 120,
    terminated: bool = True,
) -> np.ndarray:
    """Decode ``L_m[..., n_steps, n_out]`` (zeros at punctures) into information bits.

    Decisions are made in continuous mode: once ``traceback_depth`` further
    steps have been observed, the oldest undecided bit is read off the
    survivor path ending in the currently best state.  The final
    ``traceback_depth`` bits are flushed from state 0 when ``terminated`` and
    from the best state otherwise.  Returns ``[..., n_steps - tail]`` bits.
    """
    trellis = trellis or named_trellis("wifi-cc-k7")
    L_m = np.asarray(L_m, dtype=np.float64)
    batch_shape = L_m.shape[:-2]
    n = L_m.shape[-2]
    L = L_m.reshape((-1,) + L_m.shape[-2:])
    B = L.shape[0]
    S = trellis.num_states
    prev, inp = trellis.prev_transitions()
    bm = _branch_metrics(L, trellis)

    metric = np.full((B, S), NEG_INF)
    metric[:, 0] = 0.0
    choice = np.zeros((B, n, S), dtype=np.int8)
    best = np.zeros((B, n), dtype=np.int64)
    for t in range(n):
        c0 = metric[:, prev[:, 0]] + bm[:, t, prev[:, 0], inp[:, 0]]
        c1 = metric[:, prev[:, 1]] + bm[:, t, prev[:, 1], inp[:, 1]]
        pick = c1 > c0
        metric = np.where(pick, c1, c0)
        metric -= metric.max(axis=1, keepdims=True)
        choice[:, t] = pick
        best[:, t] = metric.argmax(axis=1)

    rows = np.arange(B)
    decided = np.zeros((B, n), dtype=np.int8)
    D = max(int(traceback_depth), 1)
    if n > D:
        # Windowed decisions for bits 0 .. n-D-1, traced from best[t] at t = bit + D.
        starts = np.arange(D, n)
        s = best[:, starts]
        for j in range(D):
            t = starts - j
            c = choice[rows[:, None], t[None, :], s]
            s = prev[s, c]
        # s is the state reached after step ``bit``; its survivor branch holds the bit.
        c = choice[rows[:, None], (starts - D)[None, :], s]
        decided[:, : n - D] = inp[s, c]
    # Flush the remaining steps from the end state.
    s = np.zeros(B, dtype=np.int64) if terminated else metric.argmax(axis=1)
    for t in range(n - 1, max(n - D, 0) - 1, -1):
        c = choice[rows, t, s]
        decided[:, t] = inp[s, c]
        s = prev[s, c]
    tail = trellis.memory if terminated else 0
    return decided[:, : n - tail].reshape(batch_shape + (n - tail,))


@dataclass
class SisoBeliefs:
    alpha: np.ndarray  # [..., n+1, S]
    beta: np.ndarray  # [..., n+1, S]
    llr_app: np.ndarray  # [..., K]
    llr_ext: np.ndarray  # [..., K]


def maxlog_siso(
    llr_sys,
    llr_par,
    llr_prior=None,
    trellis: Trellis | None = None,
    terminated: bool = False,
    tail=None,
) -> SisoBeliefs:
    """Max-log-MAP over a recursive systematic constituent code.

    ``llr_app[k] = max_{u_k=1} M - max_{u_k=0} M`` with path metric
    ``M = 0.5 * sum_k [(2u_k-1)(Ls_k + La_k) + (2p_k-1) Lp_k]``.  Unterminated
    blocks leave the end state free.  With ``terminated`` the path must end in
    state 0; ``tail`` (``[..., memory, 2]`` systematic/parity LLRs of the tail
    steps) may be supplied.  No extrinsic scaling is applied.
    """
    trellis = trellis or named_trellis("lte-turbo-constituent")
    Ls = np.asarray(llr_sys, dtype=np.float64)
    Lp = np.asarray(llr_par, dtype=np.float64)
    La = np.zeros_like(Ls) if llr_prior is None else np.asarray(llr_prior, dtype=np.float64)
    batch_shape = Ls.shape[:-1]
    K = Ls.shape[-1]
    Ls2, Lp2, La2 = (a.reshape(-1, K) for a in (Ls, Lp, La))
    if tail is not None:
        tl = np.asarray(tail, dtype=np.float64).reshape(-1, trellis.memory, 2)
        Ls2 = np.concatenate([Ls2, tl[..., 0]], axis=1)
        Lp2 = np.concatenate([Lp2, tl[..., 1]], axis=1)
        La2 = np.concatenate([La2, np.zeros_like(tl[..., 0])], axis=1)
    B, n = Ls2.shape
    S = trellis.num_states
    u_sign = np.array([-1.0, 1.0])
    p_sign = 2.0 * trellis.branch_output[..., 0].astype(np.float64) - 1.0  # [S, 2]
    # gamma[b, k, s, u]
    gamma = 0.5 * (
        (Ls2 + La2)[:, :, None, None] * u_sign[None, None, None, :]
        + Lp2[:, :, None, None] * p_sign[None, None, :, :]
    )
    nxt = trellis.next_state
    prev, inp = trellis.prev_transitions()

    alpha = np.full((B, n + 1, S), NEG_INF)
    alpha[:, 0, 0] = 0.0
    for k in range(n):
        a = alpha[:, k]
        c0 = a[:, prev[:, 0]] + gamma[:, k, prev[:, 0], inp[:, 0]]
        c1 = a[:, prev[:, 1]] + gamma[:, k, prev[:, 1], inp[:, 1]]
        nxt_a = np.maximum(c0, c1)
        alpha[:, k + 1] = nxt_a - nxt_a.max(axis=1, keepdims=True)

    beta = np.full((B, n + 1, S), NEG_INF)
    if terminated:
        beta[:, n, 0] = 0.0
    else:
        beta[:, n, :] = 0.0
    for k in range(n - 1, -1, -1):
        b = beta[:, k + 1]
        c = gamma[:, k] + b[:, nxt]  # [B, S, 2]
        m = c.max(axis=2)
        beta[:, k] = m - m.max(axis=1, keepdims=True)

    tot = alpha[:, :K, :, None] + gamma[:, :K] + beta[:, 1:K + 1][:, :, nxt]  # [B, K, S, 2]
    m = tot.max(axis=2)
    app = m[..., 1] - m[..., 0]
    ext = app - La2[:, :K] - Ls2[:, :K]
    return SisoBeliefs(
        alpha=alpha.reshape(batch_shape + (n + 1, S)),
        beta=beta.reshape(batch_shape + (n + 1, S)),
        llr_app=app.reshape(batch_shape + (K,)),
        llr_ext=ext.reshape(batch_shape + (K,)),
    )


@dataclass
class TurboResult:
    bits: np.ndarray
    llr_app: list  # per-iteration de-interleaved a-posteriori LLRs


def turbo_decode_classical(
    llr_s,
    llr_z,
    llr_z2,
    interleaver: QppInterleaver,
    n_iter: int = 6,
    trellis: Trellis | None = None,
    tail=None,
) -> TurboResult:
    """Iterative max-log-MAP Turbo decoding with unscaled extrinsic exchange.

    ``tail`` (``[..., 2, memory, 2]`` as produced by terminated encoding) switches
    both constituents to terminated mode.
    """
    trellis = trellis or named_trellis("lte-turbo-constituent")
    llr_s = np.asarray(llr_s, dtype=np.float64)
    terminated = tail is not None
    t0 = t1 = None
    if terminated:
        tail = np.asarray(tail, dtype=np.float64)
        t0, t1 = tail[..., 0, :, :], tail[..., 1, :, :]
    pi_s = interleaver.interleave(llr_s)
    ext1_deint = np.zeros_like(llr_s)
    history = []
    for _ in range(n_iter):
        b0 = maxlog_siso(llr_s, llr_z, ext1_deint, trellis, terminated, t0)
        prior1 = interleaver.interleave(b0.llr_ext)
        b1 = maxlog_siso(pi_s, llr_z2, prior1, trellis, terminated, t1)
        ext1_deint = interleaver.deinterleave(b1.llr_ext)
        history.append(interleaver.deinterleave(b1.llr_app))
    bits = (history[-1] > 0).astype(np.int8)
    return TurboResult(bits, history)


# --- exhaustive references (exponential in K; used by the test-suite) ----------------------


def enumerate_inputs(K: int) -> np.ndarray:
    """All ``2**K`` bit sequences as a ``[2**K, K]`` array."""
    idx = np.arange(1 << K)[:, None]
    return ((idx >> np.arange(K - 1, -1, -1)) & 1).astype(np.int8)
