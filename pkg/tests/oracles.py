"""Brute-force references, independent of the trellis recursions under test."""

import numpy as np

from cnedec.classical import enumerate_inputs
from cnedec.codec import conv_encode


def rsc_parity(bits):
    """Direct LFSR model of (1+D+D^3)/(1+D^2+D^3); bits is [N, K]."""
    bits = np.asarray(bits)
    a1 = a2 = a3 = np.zeros(bits.shape[0], dtype=np.int64)
    out = np.zeros(bits.shape, dtype=np.int64)
    for k in range(bits.shape[1]):
        a = bits[:, k] ^ a2 ^ a3
        out[:, k] = a ^ a1 ^ a3
        a1, a2, a3 = a, a1, a2
    return out


def maxlog_oracle(Ls, Lp, La):
    """Signed max-metric difference over all 2**K information sequences."""
    K = Ls.size
    U = enumerate_inputs(K).astype(np.int64)
    P = rsc_parity(U)
    M = 0.5 * ((2 * U - 1) @ (Ls + La) + (2 * P - 1) @ Lp)
    app = np.empty(K)
    for k in range(K):
        app[k] = M[U[:, k] == 1].max() - M[U[:, k] == 0].max()
    return app


def viterbi_oracle(L_m, K):
    """Exhaustive maximum-correlation search over terminated 802.11 codewords.

    Returns (best_bits, unique_flag).
    """
    U = enumerate_inputs(K)
    C = conv_encode(U, terminate=True).astype(np.float64)  # [2**K, K+6, 2]
    M = np.einsum("nkj,kj->n", 2 * C - 1, L_m)
    order = np.argsort(M)
    unique = M[order[-1]] - M[order[-2]] > 1e-9
    return U[order[-1]], unique
