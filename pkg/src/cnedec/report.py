"""BER report rows, binomial confidence intervals and CSV / plot-data output."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

Z95 = 1.959963984540054


def binomial_ci(errors: int, trials: int, z: float = Z95) -> tuple[float, float]:
    """Normal-approximation interval ``p +- z sqrt(p (1 - p) / n)`` clipped to [0, 1]."""
    if trials <= 0:
        return 0.0, 1.0
    p = errors / trials
    half = z * np.sqrt(p * (1 - p) / trials)
    return float(max(0.0, p - half)), float(min(1.0, p + half))


@dataclass
class BerRow:
    code: str
    K: int
    rate: str
    channel: str
    snr_db: float
    eb_n0_db: float
    blocks: int
    bit_errors: int
    ber: float
    ci_low: float
    ci_high: float
    decoder: str
    seed: int
    block_errors: int = 0
    bler: float = 0.0

    @classmethod
    def from_counts(cls, *, bit_errors: int, block_errors: int, blocks: int, K: int, **kw) -> "BerRow":
        n = blocks * K
        lo, hi = binomial_ci(bit_errors, n)
        return cls(
            K=K, blocks=blocks, bit_errors=bit_errors, ber=bit_errors / n if n else 0.0,
            ci_low=lo, ci_high=hi, block_errors=block_errors,
            bler=block_errors / blocks if blocks else 0.0, **kw,
        )


COLUMNS = [f.name for f in fields(BerRow)]


def _rate_key(rate: str) -> float:
    num, _, den = rate.partition("/")
    return float(num) / float(den or 1)


@dataclass
class BerReport:
    rows: list[BerRow] = field(default_factory=list)

    def sorted(self) -> "BerReport":
        return BerReport(sorted(self.rows, key=lambda r: (r.decoder, _rate_key(r.rate), r.K, r.snr_db)))

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=COLUMNS)
            w.writeheader()
            for r in self.rows:
                w.writerow(asdict(r))

    @classmethod
    def read_csv(cls, path: str | Path) -> "BerReport":
        types = {f.name: f.type for f in fields(BerRow)}
        conv = {"int": int, "float": float, "str": str}
        rows = []
        with open(path, newline="") as fh:
            for rec in csv.DictReader(fh):
                rows.append(BerRow(**{k: conv[types[k]](v) for k, v in rec.items()}))
        return cls(rows)

    def write_plot_data(self, path: str | Path) -> None:
        """Long-format series for plotting: ``x`` = Eb/N0, ``y`` = BER, ``series`` = decoder/rate."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "series"])
            for r in self.rows:
                w.writerow([r.eb_n0_db, r.ber, f"{r.decoder}/{r.rate}/K{r.K}"])
