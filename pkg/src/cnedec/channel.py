"""Modulation, AWGN and multi-tap Rayleigh MIMO channels, LS/MMSE receiver, LLR demapping.

Conventions used throughout:

* ``snr_db`` is referenced to unit symbol energy, ``sigma2 = 10**(-snr_db/10)``.
  Real channels draw noise of variance ``sigma2``; complex channels split
  ``sigma2`` equally between the real and imaginary parts.
* BPSK maps bit 0 to -1 and bit 1 to +1.
* Positive LLR favours bit 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import EstimationError, FramingError


@dataclass(frozen=True)
class NoiseSpec:
    snr_db: float

    @property
    def sigma2(self) -> float:
        return float(10.0 ** (-self.snr_db / 10.0))


def snr_to_sigma2(snr_db: float) -> float:
    return NoiseSpec(snr_db).sigma2


def ebn0_to_snr(ebn0_db: float, rate: float, bits_per_symbol: int = 1, real: bool = True) -> float:
    """Convert Eb/N0 to the simulator's ``snr_db``.

    For real BPSK the noise power per dimension is N0/2, so ``1/sigma2 = 2 R Eb/N0``;
    complex constellations carry ``R * log2(M)`` information bits per symbol and
    ``1/sigma2 = Es/N0``.
    """
    factor = 2.0 * rate if real else rate * bits_per_symbol
    return float(ebn0_db + 10.0 * np.log10(factor))


def snr_to_ebn0(snr_db: float, rate: float, bits_per_symbol: int = 1, real: bool = True) -> float:
    factor = 2.0 * rate if real else rate * bits_per_symbol
    return float(snr_db - 10.0 * np.log10(factor))


@dataclass(frozen=True)
class Constellation:
    """Gray-labelled constellation; ``points[label]`` is the symbol for integer label."""

    name: str
    points: np.ndarray = field(repr=False)

    @property
    def order(self) -> int:
        return self.points.size

    @property
    def bits_per_symbol(self) -> int:
        return int(np.log2(self.order))

    @property
    def is_real(self) -> bool:
        return not np.iscomplexobj(self.points)

    def labels(self) -> np.ndarray:
        """``[M, m]`` bit matrix, MSB first."""
        m = self.bits_per_symbol
        return (np.arange(self.order)[:, None] >> np.arange(m - 1, -1, -1)) & 1


def _gray_pam(n_bits: int) -> np.ndarray:
    """Amplitude for every label of a 2**n_bits Gray-coded PAM (unnormalized)."""
    M = 1 << n_bits
    levels = np.arange(-(M - 1), M, 2, dtype=np.float64)
    gray = np.arange(M) ^ (np.arange(M) >> 1)
    amp = np.empty(M)
    amp[gray] = levels
    return amp


@lru_cache(maxsize=None)
def constellation(name: str) -> Constellation:
    """``bpsk``, ``qpsk``, ``16qam`` or ``64qam``; average energy normalized to 1."""
    key = name.lower().replace("-", "")
    if key == "bpsk":
        pts = np.array([-1.0, 1.0])
    else:
        order = {"qpsk": 4, "4qam": 4, "16qam": 16, "64qam": 64}.get(key)
        if order is None:
            raise ValueError(f"unsupported constellation {name!r}")
        half = int(np.log2(order)) // 2
        pam = _gray_pam(half)
        lab = np.arange(order)
        i_part = pam[lab >> half]
        q_part = pam[lab & ((1 << half) - 1)]
        pts = i_part + 1j * q_part
        pts = pts / np.sqrt(np.mean(np.abs(pts) ** 2))
    pts.setflags(write=False)
    return Constellation(key, pts)


def modulate(bits, const: Constellation | str = "bpsk") -> np.ndarray:
    """Map ``bits[..., n*m]`` to ``symbols[..., n]``."""
    const = constellation(const) if isinstance(const, str) else const
    bits = np.asarray(bits).astype(np.int64)
    m = const.bits_per_symbol
    if bits.shape[-1] % m:
        raise FramingError(f"{bits.shape[-1]} bits not divisible by {m} bits/symbol")
    groups = bits.reshape(bits.shape[:-1] + (-1, m))
    labels = groups @ (1 << np.arange(m - 1, -1, -1))
    return const.points[labels]


def awgn(x, sigma2: float, rng: np.random.Generator) -> np.ndarray:
    """y = x + n with i.i.d. zero-mean Gaussian noise of total variance ``sigma2``."""
    x = np.asarray(x)
    if np.iscomplexobj(x):
        s = np.sqrt(sigma2 / 2.0)
        n = s * (rng.standard_normal(x.shape) + 1j * rng.standard_normal(x.shape))
    else:
        n = np.sqrt(sigma2) * rng.standard_normal(x.shape)
    return x + n


def demap_llr(x_hat, const: Constellation | str = "bpsk", sigma2: float = 1.0, mode: str = "auto") -> np.ndarray:
    """Per-bit LLRs (positive favours 1), ``[..., n] -> [..., n*m]``.

    Modes: ``exact`` (BPSK only, ``2y/sigma2``), ``distance`` (difference of
    minimum Euclidean distances to the bit-0 and bit-1 symbol subsets) and
    ``maxlog`` (squared distances scaled by ``1/sigma2``).  ``auto`` picks
    ``exact`` for BPSK and ``distance`` otherwise.
    """
    const = constellation(const) if isinstance(const, str) else const
    x_hat = np.asarray(x_hat)
    if mode == "auto":
        mode = "exact" if const.name == "bpsk" else "distance"
    if mode == "exact":
        if const.name != "bpsk":
            raise ValueError("exact LLRs are only implemented for BPSK")
        return 2.0 * np.real(x_hat) / sigma2
    d = np.abs(x_hat[..., None] - const.points)  # [..., n, M]
    if mode == "maxlog":
        d = d ** 2 / sigma2
    elif mode != "distance":
        raise ValueError(f"unknown demapping mode {mode!r}")
    labels = const.labels()  # [M, m]
    m = const.bits_per_symbol
    out = np.empty(x_hat.shape + (m,))
    for i in range(m):
        d0 = d[..., labels[:, i] == 0].min(axis=-1)
        d1 = d[..., labels[:, i] == 1].min(axis=-1)
        out[..., i] = d0 - d1
    return out.reshape(x_hat.shape[:-1] + (-1,))


def normalize_llr(llr, eps: float = 1e-6, axis: int = -1) -> np.ndarray:
    """Standardize a demodulated block while keeping every LLR's sign.

    Mean and variance are taken over ``axis`` (the whole block, before
    de-rate-matching).
    """
    llr = np.asarray(llr, dtype=np.float64)
    mu = llr.mean(axis=axis, keepdims=True)
    var = llr.var(axis=axis, keepdims=True)
    return np.abs((llr - mu) / np.sqrt(var + eps)) * np.sign(llr)


# --- Rayleigh MIMO -------------------------------------------------------------------------


@dataclass(frozen=True)
class ChannelRealization:
    """Time-domain taps ``[L, N_R, N_T]`` and their per-subcarrier response."""

    taps: np.ndarray = field(repr=False)
    fft_size: int = 64

    @property
    def n_taps(self) -> int:
        return self.taps.shape[0]

    @property
    def freq(self) -> np.ndarray:
        """``H_f[k]`` for every subcarrier, shape ``[fft_size, N_R, N_T]``."""
        return np.fft.fft(self.taps, n=self.fft_size, axis=0)


def draw_rayleigh(
    rng: np.random.Generator, n_rx: int = 4, n_tx: int = 4, n_taps: int = 3, fft_size: int = 64
) -> ChannelRealization:
    """Independent CN(0, 1/L) taps so that the L tap powers sum to one."""
    s = np.sqrt(1.0 / (2.0 * n_taps))
    shape = (n_taps, n_rx, n_tx)
    taps = s * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    return ChannelRealization(taps, fft_size)


def rayleigh_mimo(symbols, realization: ChannelRealization, sigma2: float, rng: np.random.Generator) -> np.ndarray:
    """Apply ``y_k = H_f[k] x_k + n_k`` with symbol j on subcarrier ``j % fft_size``.

    ``symbols`` is ``[N_T, n]`` (one row per transmit antenna); returns ``[N_R, n]``.
    """
    x = np.asarray(symbols)
    Hf = realization.freq
    if x.ndim != 2 or x.shape[0] != Hf.shape[2]:
        raise FramingError(f"expected symbols of shape [{Hf.shape[2]}, n], got {x.shape}")
    sc = np.arange(x.shape[1]) % realization.fft_size
    y = np.einsum("nrt,tn->rn", Hf[sc], x)
    return awgn(y, sigma2, rng) if sigma2 > 0 else y


def default_pilots(n_tx: int) -> np.ndarray:
    """Orthogonal unit-modulus pilot matrix (DFT), rows = antennas, columns = pilot slots."""
    k = np.arange(n_tx)
    return np.exp(-2j * np.pi * np.outer(k, k) / n_tx)


def ls_estimate(received_pilots, pilots) -> np.ndarray:
    """Least-squares channel estimate ``Y Omega^+`` with ``Omega^+ = (Omega^H Omega)^-1 Omega^H``.

    ``received_pilots`` is ``[..., N_R, N_T]``.
    """
    Om = np.asarray(pilots)
    if Om.ndim != 2 or Om.shape[0] != Om.shape[1]:
        raise EstimationError(f"pilot matrix must be square, got {Om.shape}")
    gram = Om.conj().T @ Om
    if np.linalg.matrix_rank(gram) < Om.shape[0]:
        raise EstimationError("pilot matrix is singular")
    pinv = np.linalg.solve(gram, Om.conj().T)
    return np.asarray(received_pilots) @ pinv


def mmse_detect(y, H_hat, sigma2: float, lam: float = 1e-6) -> np.ndarray:
    """Regularized MMSE detection on the extended channel ``[H_hat; sigma2 I]``.

    ``y`` is ``[..., N_R]`` and ``H_hat`` is ``[..., N_R, N_T]`` (leading axes
    broadcast).  The filter is the first ``N_R`` columns of
    ``(Hbar^H Hbar + lam I)^-1 Hbar^H``.
    """
    H = np.asarray(H_hat)
    n_r, n_t = H.shape[-2:]
    eye = np.broadcast_to(np.eye(n_t), H.shape[:-2] + (n_t, n_t))
    Hbar = np.concatenate([H, sigma2 * eye], axis=-2)
    HbH = np.conj(np.swapaxes(Hbar, -1, -2))
    W = np.linalg.solve(HbH @ Hbar + lam * np.eye(n_t), HbH)[..., :, :n_r]
    return np.einsum("...tr,...r->...t", W, np.asarray(y))


def rayleigh_receive(
    symbols,
    rng: np.random.Generator,
    sigma2: float,
    n_taps: int = 3,
    fft_size: int = 64,
    csi: str = "ls",
    pilots: np.ndarray | None = None,
) -> np.ndarray:
    """Send ``symbols[N_T, n]`` through a fresh Rayleigh draw and return MMSE estimates.

    With ``csi="ls"`` each subcarrier is estimated from one block of orthogonal
    pilots (``N_T`` slots) through the same noisy channel; ``"perfect"`` uses
    the true response.
    """
    x = np.asarray(symbols)
    n_tx = x.shape[0]
    real = draw_rayleigh(rng, n_tx, n_tx, n_taps, fft_size)
    y = rayleigh_mimo(x, real, sigma2, rng)
    Hf = real.freq
    if csi == "perfect":
        H_hat = Hf
    elif csi == "ls":
        Om = default_pilots(n_tx) if pilots is None else pilots
        Yp = Hf @ Om
        if sigma2 > 0:
            Yp = awgn(Yp, sigma2, rng)
        H_hat = ls_estimate(Yp, Om)
    else:
        raise ValueError(f"unknown csi mode {csi!r}")
    sc = np.arange(x.shape[1]) % fft_size
    return mmse_detect(y.T, H_hat[sc], sigma2).T
