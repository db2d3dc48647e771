"""Parameter counts, multiply-accumulate accounting and symbolic latency terms.

MACs per position follow the convention of common PyTorch profilers:

* dense layer: ``in * out``
* LSTM cell step: ``4 ((d + H) H + 3 H) + 4 H`` (four gate products with both
  biases, three elementwise updates for the cell and one for the output)
* normalization layer with affine: ``4 * features``
* activations and free-standing elementwise products: not counted

An instrumented count of the multiply-accumulates actually executed by the
forward pass, and the closed-form per-position complexity term, are reported
next to it so differences between conventions are visible term by term.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import count_ops, no_grad
from .cne import CneConfig, cne_forward, init_params, layer_input_width, parameter_shapes
from .codec import named_trellis
from .errors import ConfigurationError
from .link import check_code, n_positions

WEIGHT_SETS = ("tied", "per_iteration")


@dataclass
class CostReport:
    code: str
    config: CneConfig
    K: int
    weight_sets: int
    parameter_breakdown: list = field(repr=False)  # (name, shape, count) for one weight set
    per_engine_parameters: int
    trainable_parameter_count: int
    mac_breakdown: dict = field(repr=False)  # term -> MACs per position per engine call
    macs_per_position: int
    engine_calls: int
    profile_length: int
    macs_per_decoded_bit: float
    formula_macs_per_position: int
    instrumented_macs_per_position: float | None
    classical_op_counts: dict
    latency_terms: dict

    def lines(self) -> list[str]:
        out = [f"code: {self.code}  K={self.K}  weight sets: {self.weight_sets}"]
        out.append("parameters (one weight set):")
        for name, shape, n in self.parameter_breakdown:
            out.append(f"  {name:<16} {'x'.join(map(str, shape)):>10}  {n:>10,}")
        out.append(f"  per engine: {self.per_engine_parameters:,}")
        out.append(f"trainable parameters: {self.trainable_parameter_count:,}")
        out.append("MACs per position per engine call:")
        for term, n in self.mac_breakdown.items():
            out.append(f"  {term:<16} {n:>12,}")
        out.append(f"  total: {self.macs_per_position:,}")
        out.append(
            f"MACs/decoded bit: {round(self.macs_per_decoded_bit):,}"
            f"  ({self.engine_calls} calls x {self.macs_per_position:,} x {self.profile_length}/{self.K})"
        )
        out.append(f"closed-form term per position: {self.formula_macs_per_position:,}")
        if self.instrumented_macs_per_position is not None:
            out.append(f"instrumented MACs per position: {self.instrumented_macs_per_position:,.0f}")
        for k, v in self.classical_op_counts.items():
            out.append(f"{k}: {v:,}")
        out.append("latency terms:")
        for k, v in self.latency_terms.items():
            out.append(f"  {k} = {v}")
        return out


def mac_breakdown(config: CneConfig) -> dict[str, int]:
    E, H, D = config.d_embed, config.d_hidden, config.d_in
    terms = {"proj": D * E}
    if config.puncture_embedding_enabled:
        terms["punc"] = D * E
    terms["bn"] = 4 * E
    for li in range(config.n_layers):
        d = layer_input_width(config, li)
        terms[f"lstm{li}"] = 2 * (4 * ((d + H) * H + 3 * H) + 4 * H)
    terms["out"] = 2 * H
    return terms


def formula_macs(config: CneConfig) -> int:
    """Closed-form per-position term ``8H^2 + 8 H E + 2 D_in E + 2 E + 16 H`` (first layer only)."""
    E, H, D = config.d_embed, config.d_hidden, config.d_in
    return 8 * H * H + 8 * H * E + 2 * D * E + 2 * E + 16 * H


def instrumented_macs(config: CneConfig, length: int = 16) -> float:
    """MACs per position executed by one inference forward pass on random input."""
    params = init_params(config, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    L = rng.standard_normal((1, length, config.d_in)).astype(np.float32)
    P = rng.integers(0, 2, (1, length, config.d_in)).astype(np.float32)
    with no_grad(), count_ops() as c:
        cne_forward(L, P, params, training=False)
    return c.macs / length


def latency_terms(config: CneConfig, code: str, K: int, n_iter: int) -> dict[str, str]:
    E, H, D = config.d_embed, config.d_hidden, config.d_in
    n = n_positions(code, K)
    lstm = " + ".join(f"{n}*t_lstm({H}, {layer_input_width(config, li)})" for li in range(config.n_layers))
    terms = {
        "T_proj": f"t_mat({E}, {D})",
        "T_BN": f"t_bn({E})",
        "T_LSTM": lstm,
        "T_out": f"t_mat(1, {2 * H})",
        "T_CNE": "T_proj + T_BN + T_LSTM + T_out",
    }
    if code == "turbo":
        terms["T_total"] = f"{2 * n_iter}*T_CNE"
        L = named_trellis("lte-turbo-constituent").constraint_length
        terms["T_BCJR"] = f"2*{n_iter}*{K}*t_state({2 ** (L - 1)})"
    else:
        L = named_trellis("wifi-cc-k7").constraint_length
        terms["T_total"] = "T_CNE"
        terms["T_Viterbi"] = f"{K}*t_state({2 ** (L - 1)})"
    return terms


def cost_model(
    config: CneConfig,
    code: str = "conv",
    K: int = 120,
    weight_sets: str = "tied",
    profile_length: int | None = None,
    instrument: bool = True,
) -> CostReport:
    """Cost of the engine (conv) or of the iterative decoder (turbo).

    ``weight_sets="per_iteration"`` counts one parameter set per Turbo
    iteration (both calls of an iteration share it).  ``profile_length``
    is the number of positions per profiled block (default: the decoder's
    sequence length); MACs per decoded bit scale by ``profile_length / K``.
    """
    check_code(code)
    if weight_sets not in WEIGHT_SETS:
        raise ConfigurationError(f"weight_sets must be one of {WEIGHT_SETS}")
    n_sets = config.n_iter if (code == "turbo" and weight_sets == "per_iteration") else 1
    shapes = parameter_shapes(config)
    breakdown = [(name, shape, int(np.prod(shape))) for name, shape in shapes]
    per_engine = sum(n for _, _, n in breakdown)
    macs = mac_breakdown(config)
    per_pos = sum(macs.values())
    calls = 2 * config.n_iter if code == "turbo" else 1
    length = profile_length if profile_length is not None else n_positions(code, K)
    if code == "turbo":
        L = named_trellis("lte-turbo-constituent").constraint_length
        classical = {"bcjr_state_updates_per_bit": config.n_iter * 2 ** (L + 1)}
    else:
        L = named_trellis("wifi-cc-k7").constraint_length
        classical = {"viterbi_state_updates_per_bit": 2 ** (L - 1)}
    return CostReport(
        code=code,
        config=config,
        K=K,
        weight_sets=n_sets,
        parameter_breakdown=breakdown,
        per_engine_parameters=per_engine,
        trainable_parameter_count=per_engine * n_sets,
        mac_breakdown=macs,
        macs_per_position=per_pos,
        engine_calls=calls,
        profile_length=length,
        macs_per_decoded_bit=calls * per_pos * length / K,
        formula_macs_per_position=formula_macs(config),
        instrumented_macs_per_position=instrumented_macs(config) if instrument else None,
        classical_op_counts=classical,
        latency_terms=latency_terms(config, code, K, config.n_iter),
    )
