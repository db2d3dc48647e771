"""Dataset generation, per-rate SNR scheduling, Adam with cosine decay, and the training loop.

Every batch is generated from its own seed, derived from
``(seed, stream, epoch, batch)`` where ``stream`` separates training,
validation and test data.  Resuming from a checkpoint therefore regenerates
exactly the batches an uninterrupted run would have seen.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, fields, replace
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import bce_with_logits, no_grad
from .checkpoint import read_checkpoint
from .cne import CneConfig, CneParameters, cne_forward, cne_turbo_decode, init_params, params_from_arrays, save_model
from .codec import QppInterleaver
from .errors import CheckpointError, ConfigurationError, UnsupportedRateError
from .link import MOTHER_RATE, Received, check_code, make_interleaver, parse_rate, transmit

TRAIN_STREAM, VALIDATION_STREAM, TEST_STREAM = 0, 1, 2


def bbt_snr(rate, offset_db: float) -> float:
    """Per-rate training SNR ``offset + 10 log10(2 R)``."""
    r = float(parse_rate(rate))
    return float(offset_db + 10.0 * math.log10(2.0 * r))


def bce_loss(logits, bits) -> float:
    """Mean binary cross entropy of ``sigmoid(logits)`` against ``bits`` (plain numpy)."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(bits, dtype=np.float64)
    return float(np.mean(np.maximum(z, 0) - y * z + np.log1p(np.exp(-np.abs(z)))))


def cosine_lr(step: int, total_steps: int, lr_initial: float, lr_final: float) -> float:
    """Cosine decay from ``lr_initial`` at step 0 to ``lr_final`` at the last step."""
    if total_steps <= 1:
        return float(lr_initial)
    return float(lr_final + 0.5 * (lr_initial - lr_final) * (1.0 + math.cos(math.pi * step / (total_steps - 1))))


class Adam:
    """Adam with bias correction; moments live in the parameters' dtype."""

    def __init__(self, params, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)


@dataclass
class TrainConfig:
    phase: str = "pretrain"
    code: str = "conv"
    K: int = 64
    rates: tuple = ("1/2",)
    epochs: int = 30
    batches_per_epoch: int = 64
    batch_size: int = 64
    lr_initial: float = 1e-3
    lr_final: float = 1e-6
    snr_offset_db: float = 0.0
    seed: int = 0
    val_blocks: int = 256
    qpp: tuple | None = None
    init_checkpoint: str | None = None
    model: CneConfig = field(default_factory=CneConfig)

    def __post_init__(self):
        if self.phase not in ("pretrain", "finetune"):
            raise ConfigurationError(f"phase must be pretrain or finetune, got {self.phase!r}")
        check_code(self.code)
        self.rates = tuple(str(parse_rate(r)) for r in self.rates)
        if not self.rates:
            raise ConfigurationError("at least one training rate is required")
        if self.phase == "pretrain" and len(self.rates) != 1:
            raise ConfigurationError("pre-training uses a single rate")
        for r in self.rates:
            if Fraction(r) < MOTHER_RATE[self.code]:
                raise UnsupportedRateError(f"rate {r} below the {self.code} mother rate")
        for name in ("K", "epochs", "batches_per_epoch", "batch_size"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if isinstance(self.model, dict):
            self.model = CneConfig.from_dict(self.model)
        if self.qpp is not None:
            self.qpp = tuple(int(v) for v in self.qpp)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown training fields: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rates"] = list(self.rates)
        d["qpp"] = list(self.qpp) if self.qpp is not None else None
        return d

    @property
    def total_steps(self) -> int:
        return self.epochs * self.batches_per_epoch

    def snr_for(self, rate) -> float:
        """Pre-training runs at the fixed offset SNR; fine-tuning uses per-rate offsets."""
        if self.phase == "pretrain":
            return float(self.snr_offset_db)
        return bbt_snr(rate, self.snr_offset_db)

    def interleaver(self) -> QppInterleaver | None:
        return make_interleaver(self.K, self.qpp) if self.code == "turbo" else None


def batch_seed(seed: int, stream: int, epoch: int, batch: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(stream), int(epoch), int(batch)])


@dataclass
class Batch:
    received: Received
    rates: np.ndarray  # per-sample rate tag (string)
    snr_db: np.ndarray  # per-sample channel SNR

    @property
    def bits(self) -> np.ndarray:
        return self.received.bits


def generate_blocks(
    code: str,
    K: int,
    rates: Sequence[str],
    snr_of_rate,
    n: int,
    rng: np.random.Generator,
    interleaver: QppInterleaver | None = None,
    **link,
) -> Batch:
    """``n`` blocks with per-sample rates drawn uniformly from ``rates``."""
    rates = list(rates)
    tags = np.asarray(rates)[rng.integers(0, len(rates), n)] if len(rates) > 1 else np.full(n, rates[0])
    bits = rng.integers(0, 2, (n, K), dtype=np.int8)
    llr = ind = None
    snrs = np.empty(n)
    for r in rates:
        sel = np.flatnonzero(tags == r)
        if sel.size == 0:
            continue
        snr = snr_of_rate(r)
        rec = transmit(bits[sel], code, r, snr, rng, interleaver, **link)
        if llr is None:
            llr = np.empty((n,) + rec.llr.shape[1:])
            ind = np.empty_like(llr)
        llr[sel] = rec.llr
        ind[sel] = rec.ind
        snrs[sel] = snr
    return Batch(Received(bits, llr, ind), tags, snrs)


def make_batch(config: TrainConfig, rng: np.random.Generator, interleaver: QppInterleaver | None = None) -> Batch:
    interleaver = interleaver if interleaver is not None else config.interleaver()
    return generate_blocks(config.code, config.K, config.rates, config.snr_for, config.batch_size, rng, interleaver)


# --- model application -------------------------------------------------------------------------


def cne_logits(params: CneParameters, rec: Received, code: str, interleaver=None, training: bool = False,
               n_iter: int | None = None):
    """Differentiable per-information-bit logits ``[B, K]`` for a received batch."""
    K = rec.bits.shape[-1]
    if code == "conv":
        return cne_forward(rec.llr, rec.ind, params, training)[:, :K]
    L, P = rec.llr, rec.ind
    return cne_turbo_decode(L[:, 0], L[:, 1], L[:, 2], P[:, 0], P[:, 1], P[:, 2], interleaver, params,
                            n_iter=n_iter, training=training)


def cne_decode_bits(params: CneParameters, rec: Received, code: str, interleaver=None, chunk: int = 512,
                    n_iter: int | None = None) -> np.ndarray:
    """Hard decisions of a trained model in inference mode."""
    out = np.empty(rec.bits.shape, dtype=np.int8)
    with no_grad():
        for s in range(0, rec.bits.shape[0], chunk):
            part = Received(rec.bits[s:s + chunk], rec.llr[s:s + chunk], rec.ind[s:s + chunk])
            out[s:s + chunk] = cne_logits(params, part, code, interleaver, n_iter=n_iter).data > 0
    return out


def validation_ber(params: CneParameters, config: TrainConfig, interleaver=None) -> float:
    """Mean BER over the training rates at their training SNRs, on the validation stream."""
    errs = []
    for i, r in enumerate(config.rates):
        rng = np.random.default_rng(batch_seed(config.seed, VALIDATION_STREAM, i, 0))
        b = generate_blocks(config.code, config.K, [r], config.snr_for, config.val_blocks, rng, interleaver)
        errs.append(np.mean(cne_decode_bits(params, b.received, config.code, interleaver) != b.bits))
    return float(np.mean(errs))


# --- training loop -----------------------------------------------------------------------------


@dataclass
class TrainResult:
    params: CneParameters  # best-validation parameters
    last: CneParameters
    history: list = field(default_factory=list)
    best_val_ber: float = float("inf")


def _state_arrays(params: CneParameters, opt: Adam, best: CneParameters):
    names = [n for n, _ in params.named_parameters()]
    arrs = []
    for n, m, v in zip(names, opt.m, opt.v):
        arrs += [(f"adam.m.{n}", m), (f"adam.v.{n}", v)]
    arrs += [(f"best.{n}", t.data) for n, t in best.named_parameters()]
    arrs += [(f"best.{n}", a) for n, a in best.buffers()]
    return arrs


def load_pretrained(path, config: TrainConfig) -> CneParameters:
    meta, arrays = read_checkpoint(path)
    if meta.get("kind") != "cne":
        raise CheckpointError(f"{path} does not hold a CNE model")
    stored = CneConfig.from_dict(meta["config"])
    if stored != config.model:
        raise CheckpointError(f"{path}: model config {stored} does not match {config.model}")
    return params_from_arrays(stored, arrays, meta.get("bn"))


def train(
    config: TrainConfig,
    init: CneParameters | None = None,
    out_dir: str | Path | None = None,
    resume: str | Path | None = None,
    stop_after_epoch: int | None = None,
) -> TrainResult:
    """Run (or resume) a training phase.

    Fine-tuning starts from ``init`` or ``config.init_checkpoint``.  With
    ``out_dir`` the loop writes ``last.ckpt`` (full training state) after
    every epoch, ``best.ckpt`` (lowest validation BER) and ``train_log.csv``.
    ``stop_after_epoch`` interrupts the run early (used to exercise resume).
    """
    interleaver = config.interleaver()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    start_epoch = 0
    history: list[dict] = []
    best_val = float("inf")
    if resume is not None:
        meta, arrays = read_checkpoint(resume)
        if meta.get("train_config") != config.to_dict():
            raise CheckpointError(f"{resume}: training config differs from the resumed run")
        params = params_from_arrays(CneConfig.from_dict(meta["config"]), arrays, meta.get("bn"))
        opt = Adam(params.parameters())
        for i, (n, _) in enumerate(params.named_parameters()):
            opt.m[i][...] = arrays[f"adam.m.{n}"]
            opt.v[i][...] = arrays[f"adam.v.{n}"]
        opt.t = int(meta["adam_step"])
        best = params_from_arrays(params.config, {k[5:]: v for k, v in arrays.items() if k.startswith("best.")},
                                  meta.get("bn"))
        start_epoch = int(meta["epoch"])
        history = list(meta["history"])
        best_val = float(meta["best_val_ber"])
    else:
        if config.phase == "finetune":
            if init is None:
                if config.init_checkpoint is None:
                    raise CheckpointError("fine-tuning needs a pre-trained checkpoint")
                init = load_pretrained(config.init_checkpoint, config)
            params = init.copy()
        else:
            params = init.copy() if init is not None else init_params(
                config.model, np.random.default_rng(np.random.SeedSequence([config.seed, 99]))
            )
        opt = Adam(params.parameters())
        best = params.copy()

    S = config.total_steps
    for epoch in range(start_epoch, config.epochs):
        losses = []
        lr = config.lr_initial
        for b in range(config.batches_per_epoch):
            step = epoch * config.batches_per_epoch + b
            lr = cosine_lr(step, S, config.lr_initial, config.lr_final)
            rng = np.random.default_rng(batch_seed(config.seed, TRAIN_STREAM, epoch, b))
            batch = make_batch(config, rng, interleaver)
            params.zero_grad()
            logits = cne_logits(params, batch.received, config.code, interleaver, training=True)
            loss = bce_with_logits(logits, batch.bits)
            loss.backward()
            opt.step(lr)
            losses.append(float(loss.data))
        val = validation_ber(params, config, interleaver)
        history.append({"epoch": epoch + 1, "loss": float(np.mean(losses)), "lr": lr, "val_ber": val})
        if val < best_val:
            best_val = val
            best = params.copy()
        if out is not None:
            _write_log(out / "train_log.csv", history)
            meta = {
                "train_config": config.to_dict(),
                "epoch": epoch + 1,
                "adam_step": opt.t,
                "history": history,
                "best_val_ber": best_val,
            }
            save_model(out / "last.ckpt", params, meta, _state_arrays(params, opt, best))
            save_model(out / "best.ckpt", best, {"train_config": config.to_dict(), "val_ber": best_val})
        if stop_after_epoch is not None and epoch + 1 >= stop_after_epoch:
            break
    return TrainResult(best, params, history, best_val)


def _write_log(path: Path, history: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["epoch", "loss", "lr", "val_ber"])
        w.writeheader()
        w.writerows(history)


def finetune_config(pre: TrainConfig, **overrides) -> TrainConfig:
    """Fine-tuning phase derived from a pre-training config."""
    defaults = {
        "phase": "finetune",
        "rates": ("1/2", "2/3", "3/4") if pre.code == "conv" else ("1/3", "1/2", "2/3", "3/4"),
        "lr_initial": 1e-4,
        "snr_offset_db": 2.5 if pre.code == "conv" else 1.5,
        "init_checkpoint": None,
    }
    defaults.update(overrides)
    return replace(pre, **defaults)


def evaluate(params: CneParameters, spec) -> "object":
    """BER of a trained model on the test stream; ``spec`` is a sweep configuration."""
    from .sweep import run_sweep

    return run_sweep(replace(spec, decoder="cne"), params=params)
