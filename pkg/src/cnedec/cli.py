"""Command-line entry point: ``cnedec <subcommand> [options]``.

Exit codes:

    0  success
    2  usage error (unknown flag, missing argument)
    3  config or checkpoint path missing or unreadable
    4  invalid configuration contents
    5  checkpoint incompatible with the configuration, or corrupt
    6  unsupported code rate
    7  other input error (framing, estimation)
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .cne import CneConfig, load_model
from .cost import cost_model
from .errors import CheckpointError, ConfigurationError, UnsupportedRateError
from .link import encode_and_select, make_interleaver, parse_rate
from .sweep import SweepConfig, run_sweep
from .training import TrainConfig, finetune_config, train

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_UNREADABLE = 3
EXIT_CONFIG = 4
EXIT_CHECKPOINT = 5
EXIT_RATE = 6
EXIT_INPUT = 7


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(EXIT_USAGE, message)


def bundled_configs() -> dict[str, Path]:
    root = resources.files("cnedec.configs")
    return {Path(p.name).stem: Path(str(p)) for p in root.iterdir() if p.name.endswith(".yaml")}


def read_config(path: str) -> dict:
    """Load a YAML config; an unknown path falls back to a bundled config of the same stem."""
    p = Path(path)
    if not p.exists():
        bundled = bundled_configs().get(p.stem) if p.parent == Path(".") else None
        if bundled is None:
            raise CliError(EXIT_UNREADABLE, f"config file not found: {path}")
        p = bundled
    try:
        data = yaml.safe_load(p.read_text())
    except OSError as exc:
        raise CliError(EXIT_UNREADABLE, f"cannot read config {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise CliError(EXIT_CONFIG, f"config {path} is not valid YAML: {str(exc).splitlines()[0]}") from None
    if not isinstance(data, dict):
        raise CliError(EXIT_CONFIG, f"config {path} must be a mapping of sections")
    return data


def _section(cfg: dict, name: str, path: str) -> dict:
    sec = cfg.get(name)
    if not isinstance(sec, dict):
        raise CliError(EXIT_CONFIG, f"config {path} has no '{name}' section")
    return dict(sec)


def _model(cfg: dict) -> CneConfig:
    return CneConfig.from_dict(cfg.get("model") or {})


def _sweep_config(args, cfg: dict) -> SweepConfig:
    d = _section(cfg, "sweep", args.config)
    if args.decoder:
        d["decoder"] = args.decoder
    if args.snr is not None:
        d["snr_db"], d["eb_n0_db"] = args.snr, None
    if args.rate is not None:
        d["rates"] = args.rate
    if args.blocks is not None:
        d["blocks"] = args.blocks
    if args.seed is not None:
        d["seed"] = args.seed
    if args.out is not None:
        d["out"] = args.out
    if getattr(args, "checkpoint", None):
        d["checkpoint"] = args.checkpoint
    return SweepConfig.from_dict(d)


def _print_report(report) -> None:
    print(f"{'decoder':<12}{'K':>6}{'rate':>6}{'snr_db':>8}{'eb_n0':>8}{'blocks':>8}{'errors':>9}{'ber':>12}")
    for r in report.rows:
        print(f"{r.decoder:<12}{r.K:>6}{r.rate:>6}{r.snr_db:>8.2f}{r.eb_n0_db:>8.2f}{r.blocks:>8}"
              f"{r.bit_errors:>9}{r.ber:>12.4e}")


# --- subcommands -------------------------------------------------------------------------------


def cmd_sweep(args) -> int:
    cfg = read_config(args.config)
    sweep = _sweep_config(args, cfg)
    if sweep.decoder == "cne" and "model" in cfg and sweep.checkpoint:
        _check_model(sweep.checkpoint, _model(cfg))
    if sweep.out is None:
        sweep = replace(sweep, out=f"{Path(args.config).stem}.csv")
    report = run_sweep(sweep)
    _print_report(report)
    print(f"wrote {sweep.out}" + (f" and {sweep.plot_data}" if sweep.plot_data else ""))
    return EXIT_OK


def cmd_simulate(args) -> int:
    """A single operating point: one rate, one SNR."""
    cfg = read_config(args.config)
    sweep = _sweep_config(args, cfg)
    if len(sweep.rates) != 1 or len(sweep.snr_db or sweep.eb_n0_db) != 1 or len(sweep.lengths) != 1:
        raise CliError(EXIT_CONFIG, "simulate needs exactly one rate, one SNR and one length (use --rate/--snr)")
    report = run_sweep(sweep)
    _print_report(report)
    if sweep.out:
        print(f"wrote {sweep.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    if not args.checkpoint:
        raise CliError(EXIT_USAGE, "evaluate needs --checkpoint")
    cfg = read_config(args.config)
    args.decoder = "cne"
    sweep = _sweep_config(args, cfg)
    if "model" in cfg:
        _check_model(args.checkpoint, _model(cfg))
    if sweep.out is None:
        sweep = replace(sweep, out="evaluation.csv")
    report = run_sweep(sweep)
    _print_report(report)
    print(f"wrote {sweep.out}")
    return EXIT_OK


def _check_model(checkpoint: str, expected: CneConfig) -> None:
    if not Path(checkpoint).exists():
        raise CliError(EXIT_UNREADABLE, f"checkpoint not found: {checkpoint}")
    load_model(checkpoint, expected)


def cmd_train(args) -> int:
    cfg = read_config(args.config)
    d = _section(cfg, "train", args.config)
    d["model"] = _model(cfg)
    if args.seed is not None:
        d["seed"] = args.seed
    pre = TrainConfig.from_dict(d)
    out = Path(args.out or "runs")
    phases = []
    if pre.phase == "pretrain":
        phases.append(("pretrain", pre))
    if pre.phase == "finetune" or "finetune" in cfg:
        overrides = dict(cfg.get("finetune") or {})
        if pre.phase == "finetune":
            ft = pre
        else:
            ft = finetune_config(pre, **overrides)
        phases.append(("finetune", ft))
    init = None
    for name, tc in phases:
        run_dir = out / name
        last = run_dir / "last.ckpt"
        resume = last if args.resume and last.exists() else None
        print(f"[{name}] code={tc.code} K={tc.K} rates={','.join(tc.rates)} epochs={tc.epochs} -> {run_dir}")
        result = train(tc, init=init, out_dir=run_dir, resume=resume)
        for h in result.history[-3:]:
            print(f"  epoch {h['epoch']:>4}  loss {h['loss']:.4f}  lr {h['lr']:.2e}  val_ber {h['val_ber']:.4f}")
        init = result.params
    print(f"wrote checkpoints under {out}")
    return EXIT_OK


def cmd_cost(args) -> int:
    path = args.model or args.config
    if not path:
        raise CliError(EXIT_USAGE, "cost needs --model (or --config)")
    cfg = read_config(path)
    model = _model(cfg)
    c = dict(cfg.get("cost") or {})
    try:
        report = cost_model(model, **c)
    except TypeError as exc:
        raise CliError(EXIT_CONFIG, f"bad cost section in {path}: {exc}") from None
    for line in report.lines():
        print(line)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["term", "value"])
            w.writerow(["trainable_parameter_count", report.trainable_parameter_count])
            w.writerow(["macs_per_decoded_bit", report.macs_per_decoded_bit])
            for name, _, n in report.parameter_breakdown:
                w.writerow([f"params.{name}", n])
            for term, n in report.mac_breakdown.items():
                w.writerow([f"macs.{term}", n])
            w.writerow(["macs.formula_per_position", report.formula_macs_per_position])
            if report.instrumented_macs_per_position is not None:
                w.writerow(["macs.instrumented_per_position", report.instrumented_macs_per_position])
            for k, v in report.classical_op_counts.items():
                w.writerow([k, v])
            for k, v in report.latency_terms.items():
                w.writerow([f"latency.{k}", v])
        print(f"wrote {args.out}")
    return EXIT_OK


def cmd_encode(args) -> int:
    cfg = read_config(args.config)
    d = cfg.get("encode") or cfg.get("sweep") or {}
    code = d.get("code", "conv")
    K = int(args.length or (d.get("lengths") or [d.get("K", 120)])[0])
    rates = args.rate or d.get("rates") or ["1/2"]
    if len(rates) != 1:
        raise CliError(EXIT_CONFIG, "encode needs exactly one rate (use --rate)")
    rate = str(parse_rate(rates[0]))
    blocks = args.blocks or int(d.get("blocks", 1))
    rng = np.random.default_rng(args.seed if args.seed is not None else int(d.get("seed", 0)))
    bits = rng.integers(0, 2, (blocks, K), dtype=np.int8)
    interleaver = make_interleaver(K, d.get("qpp")) if code == "turbo" else None
    coded, _ = encode_and_select(bits, code, rate, interleaver)
    out = args.out or "encoded.csv"
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["block", "code", "rate", "info_bits", "coded_bits"])
        for i in range(blocks):
            w.writerow([i, code, rate, "".join(map(str, bits[i])), "".join(map(str, coded[i]))])
    print(f"{blocks} {code} block(s), K={K}, rate {rate}: {coded.shape[1]} coded bits each; wrote {out}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="cnedec", description="Channel decoding experiments")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="YAML config path or bundled config name")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        return p

    def point_flags(p):
        p.add_argument("--decoder", choices=["viterbi", "bcjr", "cne"])
        p.add_argument("--snr", type=float, nargs="+", help="per-symbol SNR points in dB")
        p.add_argument("--rate", nargs="+")
        p.add_argument("--blocks", type=int)
        p.add_argument("--checkpoint")

    point_flags(common(sub.add_parser("sweep", help="BER sweep over the configured grid")))
    point_flags(common(sub.add_parser("simulate", help="BER at a single operating point")))
    point_flags(common(sub.add_parser("evaluate", help="BER of a trained checkpoint")))
    t = common(sub.add_parser("train", help="pre-train and optionally fine-tune"))
    t.add_argument("--resume", action="store_true", help="continue from last.ckpt when present")
    c = common(sub.add_parser("cost", help="parameter, MAC and latency accounting"), config_required=False)
    c.add_argument("--model", help="model config (same as --config)")
    e = common(sub.add_parser("encode", help="encode random blocks to CSV"))
    e.add_argument("--rate", nargs="+")
    e.add_argument("--blocks", type=int)
    e.add_argument("--length", type=int)
    return parser


COMMANDS = {
    "sweep": cmd_sweep,
    "simulate": cmd_simulate,
    "evaluate": cmd_evaluate,
    "train": cmd_train,
    "cost": cmd_cost,
    "encode": cmd_encode,
}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except CliError as exc:
        code, msg = exc.code, str(exc)
    except CheckpointError as exc:
        code, msg = EXIT_CHECKPOINT, str(exc)
    except UnsupportedRateError as exc:
        code, msg = EXIT_RATE, str(exc)
    except ConfigurationError as exc:
        code, msg = EXIT_CONFIG, str(exc)
    except (ValueError, KeyError) as exc:
        code, msg = EXIT_INPUT, str(exc)
    print(f"cnedec: error: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
