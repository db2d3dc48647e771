"""Monte-Carlo BER sweeps for the classical and neural decoders."""

from __future__ import annotations

from dataclasses import dataclass, fields
from fractions import Fraction

import numpy as np

from .channel import constellation, ebn0_to_snr, snr_to_ebn0
from .classical import turbo_decode_classical, viterbi_decode
from .cne import CneParameters, load_model
from .errors import CheckpointError, ConfigurationError
from .link import check_code, make_interleaver, parse_rate, transmit
from .report import BerReport, BerRow
from .training import TEST_STREAM, cne_decode_bits

DECODERS = ("viterbi", "bcjr", "cne")


@dataclass
class SweepConfig:
    """One sweep: every (length, rate, SNR) cell is simulated with its own seeds.

    Give SNR points either as ``snr_db`` (per-symbol, the channel's native
    axis) or as ``eb_n0_db``.  ``min_errors`` stops a cell early once that
    many bit errors are collected (``0`` runs the full block budget).
    """

    code: str = "conv"
    decoder: str = "viterbi"
    channel: str = "awgn"
    lengths: tuple = (120,)
    rates: tuple = ("1/2",)
    snr_db: tuple | None = None
    eb_n0_db: tuple | None = None
    blocks: int = 1000
    batch_blocks: int = 250
    min_errors: int = 500
    seed: int = 0
    n_iter: int = 3
    traceback_depth: int = 120
    modulation: str | None = None
    qpp: tuple | None = None
    checkpoint: str | None = None
    normalize: bool | None = None
    out: str | None = None
    plot_data: str | None = None

    def __post_init__(self):
        check_code(self.code)
        if self.decoder not in DECODERS:
            raise ConfigurationError(f"unknown decoder {self.decoder!r}; expected one of {DECODERS}")
        if self.decoder == "viterbi" and self.code != "conv":
            raise ConfigurationError("the Viterbi decoder handles convolutional codes only")
        if self.decoder == "bcjr" and self.code != "turbo":
            raise ConfigurationError("the BCJR decoder handles Turbo codes only")
        if self.channel not in ("awgn", "rayleigh"):
            raise ConfigurationError(f"unknown channel {self.channel!r}")
        if (self.snr_db is None) == (self.eb_n0_db is None):
            raise ConfigurationError("give exactly one of snr_db and eb_n0_db")
        self.lengths = tuple(int(k) for k in np.atleast_1d(self.lengths))
        self.rates = tuple(str(parse_rate(r)) for r in np.atleast_1d(self.rates))
        if self.snr_db is not None:
            self.snr_db = tuple(float(s) for s in np.atleast_1d(self.snr_db))
        if self.eb_n0_db is not None:
            self.eb_n0_db = tuple(float(s) for s in np.atleast_1d(self.eb_n0_db))
        if self.blocks < 1 or self.batch_blocks < 1:
            raise ConfigurationError("blocks and batch_blocks must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "SweepConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown sweep fields: {sorted(unknown)}")
        return cls(**d)

    @property
    def modulation_name(self) -> str:
        return self.modulation or ("bpsk" if self.channel == "awgn" else "16qam")

    def points(self, rate: str) -> list[tuple[float, float]]:
        """``(snr_db, eb_n0_db)`` pairs for one rate."""
        const = constellation(self.modulation_name)
        kw = dict(rate=float(Fraction(rate)), bits_per_symbol=const.bits_per_symbol, real=const.is_real)
        if self.snr_db is not None:
            return [(s, snr_to_ebn0(s, **kw)) for s in self.snr_db]
        return [(ebn0_to_snr(e, **kw), e) for e in self.eb_n0_db]


def cell_seed(seed: int, K: int, rate: str, snr_db: float, batch: int) -> np.random.SeedSequence:
    r = Fraction(rate)
    snr_code = int(round(snr_db * 1000)) + 1_000_000
    return np.random.SeedSequence([int(seed), TEST_STREAM, K, r.numerator, r.denominator, snr_code, batch])


def run_sweep(config: SweepConfig, params: CneParameters | None = None) -> BerReport:
    """Simulate every cell; deterministic for a fixed ``config.seed``."""
    if config.decoder == "cne" and params is None:
        if not config.checkpoint:
            raise CheckpointError("the cne decoder needs a checkpoint")
        params, _, _ = load_model(config.checkpoint)
    normalize = config.normalize if config.normalize is not None else config.decoder == "cne"
    report = BerReport()
    for K in config.lengths:
        interleaver = make_interleaver(K, config.qpp) if config.code == "turbo" else None
        for rate in config.rates:
            for snr, ebn0 in config.points(rate):
                bit_err = blk_err = done = 0
                batch = 0
                while done < config.blocks:
                    n = min(config.batch_blocks, config.blocks - done)
                    rng = np.random.default_rng(cell_seed(config.seed, K, rate, snr, batch))
                    bits = rng.integers(0, 2, (n, K), dtype=np.int8)
                    rec = transmit(bits, config.code, rate, snr, rng, interleaver, channel=config.channel,
                                   modulation=config.modulation, normalize=normalize)
                    hard = decode(config, rec, interleaver, params)
                    wrong = hard != bits
                    bit_err += int(wrong.sum())
                    blk_err += int(wrong.any(axis=1).sum())
                    done += n
                    batch += 1
                    if config.min_errors and bit_err >= config.min_errors:
                        break
                report.rows.append(BerRow.from_counts(
                    code=config.code, K=K, rate=rate, channel=config.channel, snr_db=snr, eb_n0_db=ebn0,
                    blocks=done, bit_errors=bit_err, block_errors=blk_err, decoder=_label(config),
                    seed=config.seed,
                ))
    report = report.sorted()
    if config.out:
        report.write_csv(config.out)
    if config.plot_data:
        report.write_plot_data(config.plot_data)
    return report


def _label(config: SweepConfig) -> str:
    if config.decoder in ("bcjr", "cne") and config.code == "turbo":
        return f"{config.decoder}-{config.n_iter}it"
    return config.decoder


def decode(config: SweepConfig, rec, interleaver, params: CneParameters | None) -> np.ndarray:
    if config.decoder == "viterbi":
        return viterbi_decode(rec.llr, traceback_depth=config.traceback_depth, terminated=True)
    if config.decoder == "bcjr":
        L = rec.llr
        return turbo_decode_classical(L[:, 0], L[:, 1], L[:, 2], interleaver, n_iter=config.n_iter).bits
    return cne_decode_bits(params, rec, config.code, interleaver, n_iter=config.n_iter)
