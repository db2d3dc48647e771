"""The neural decoding engine and its iterative Turbo wrapper.

Per block of ``K`` positions with two LLR inputs and two puncture indicators:

    E_l   = W_proj L + b_proj
    E_p   = sigmoid(W_punc P + b_punc)        (constant 1 when the gate is disabled)
    E     = BN(E_l * E_p)                     statistics over batch and positions
    S     = bidirectional LSTM stack (E)
    llr_u = W_out S + b_out                   one logit per position; > 0 favours bit 1
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import (
    BatchNormState,
    Tensor,
    affine,
    as_tensor,
    batchnorm,
    concat,
    lstm,
    parameter,
    sigmoid,
    stack,
    take,
)
from .checkpoint import read_checkpoint, write_checkpoint
from .codec import QppInterleaver
from .errors import CheckpointError, ConfigurationError


@dataclass(frozen=True)
class CneConfig:
    d_in: int = 2
    d_embed: int = 64
    d_hidden: int = 256
    n_layers: int = 2
    n_iter: int = 3
    puncture_embedding_enabled: bool = True

    def __post_init__(self):
        for f in ("d_in", "d_embed", "d_hidden", "n_layers", "n_iter"):
            if int(getattr(self, f)) < 1:
                raise ConfigurationError(f"{f} must be >= 1, got {getattr(self, f)}")

    @classmethod
    def from_dict(cls, d: dict) -> "CneConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown model fields: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LstmDirection:
    W: Tensor  # [4H, H + D_layer], gate row blocks (i, f, candidate, o), columns (h, x)
    b_x: Tensor
    b_h: Tensor


@dataclass
class LstmLayer:
    forward: LstmDirection
    backward: LstmDirection


@dataclass
class CneParameters:
    config: CneConfig
    w_proj: Tensor
    b_proj: Tensor
    w_punc: Tensor | None
    b_punc: Tensor | None
    bn: BatchNormState
    layers: list[LstmLayer]
    w_out: Tensor  # [1, 2H]
    b_out: Tensor  # [1]

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        """Trainable tensors in a fixed order (also the checkpoint order)."""
        out = [("proj.W", self.w_proj), ("proj.b", self.b_proj)]
        if self.w_punc is not None:
            out += [("punc.W", self.w_punc), ("punc.b", self.b_punc)]
        out += [("bn.gamma", self.bn.gamma), ("bn.beta", self.bn.beta)]
        for li, layer in enumerate(self.layers):
            for dname, d in (("fw", layer.forward), ("bw", layer.backward)):
                pre = f"lstm{li}.{dname}"
                out += [(f"{pre}.W", d.W), (f"{pre}.b_x", d.b_x), (f"{pre}.b_h", d.b_h)]
        out += [("out.W", self.w_out), ("out.b", self.b_out)]
        return out

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def buffers(self) -> list[tuple[str, np.ndarray]]:
        return [("bn.running_mean", self.bn.running_mean), ("bn.running_var", self.bn.running_var)]

    def count(self) -> int:
        return int(sum(t.data.size for t in self.parameters()))

    def zero_grad(self) -> None:
        for t in self.parameters():
            t.grad = None

    def astype(self, dtype) -> "CneParameters":
        """Deep copy with every array cast to ``dtype``."""
        cast = _Caster(dtype)
        return CneParameters(
            config=self.config,
            w_proj=cast(self.w_proj),
            b_proj=cast(self.b_proj),
            w_punc=cast(self.w_punc),
            b_punc=cast(self.b_punc),
            bn=BatchNormState(
                cast(self.bn.gamma), cast(self.bn.beta),
                self.bn.running_mean.astype(dtype), self.bn.running_var.astype(dtype),
                self.bn.momentum, self.bn.eps,
            ),
            layers=[
                LstmLayer(*(LstmDirection(cast(d.W), cast(d.b_x), cast(d.b_h)) for d in (l.forward, l.backward)))
                for l in self.layers
            ],
            w_out=cast(self.w_out),
            b_out=cast(self.b_out),
        )

    def copy(self) -> "CneParameters":
        return self.astype(self.w_proj.data.dtype)


class _Caster:
    def __init__(self, dtype):
        self.dtype = dtype

    def __call__(self, t: Tensor | None) -> Tensor | None:
        if t is None:
            return None
        return parameter(t.data.astype(self.dtype, copy=True), t.name)


def layer_input_width(config: CneConfig, layer: int) -> int:
    return config.d_embed if layer == 0 else 2 * config.d_hidden


def parameter_shapes(config: CneConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Declared shape of every trainable tensor (no allocation)."""
    E, H, D = config.d_embed, config.d_hidden, config.d_in
    shapes = [("proj.W", (E, D)), ("proj.b", (E,))]
    if config.puncture_embedding_enabled:
        shapes += [("punc.W", (E, D)), ("punc.b", (E,))]
    shapes += [("bn.gamma", (E,)), ("bn.beta", (E,))]
    for li in range(config.n_layers):
        d_layer = layer_input_width(config, li)
        for dname in ("fw", "bw"):
            pre = f"lstm{li}.{dname}"
            shapes += [(f"{pre}.W", (4 * H, H + d_layer)), (f"{pre}.b_x", (4 * H,)), (f"{pre}.b_h", (4 * H,))]
    shapes += [("out.W", (1, 2 * H)), ("out.b", (1,))]
    return shapes


def init_params(config: CneConfig, rng: np.random.Generator, dtype=np.float32) -> CneParameters:
    """Fan-in uniform initialization.

    LSTM weights and biases are uniform in ``+-1/sqrt(d_hidden)``; the
    input-side forget-gate bias block is set to +1 and the recurrent-side bias
    starts at zero, so the effective forget bias is exactly +1.  Affine layers
    use ``+-1/sqrt(fan_in)``.  Batch-norm starts at ``gamma=1, beta=0``.
    """
    E, H, D = config.d_embed, config.d_hidden, config.d_in

    def unif(bound, *shape, name):
        return parameter(rng.uniform(-bound, bound, size=shape).astype(dtype), name)

    w_proj = unif(1 / np.sqrt(D), E, D, name="proj.W")
    b_proj = unif(1 / np.sqrt(D), E, name="proj.b")
    w_punc = b_punc = None
    if config.puncture_embedding_enabled:
        w_punc = unif(1 / np.sqrt(D), E, D, name="punc.W")
        b_punc = unif(1 / np.sqrt(D), E, name="punc.b")
    bn = BatchNormState.create(E, dtype=dtype)
    k = 1 / np.sqrt(H)
    layers = []
    for li in range(config.n_layers):
        d_layer = layer_input_width(config, li)
        dirs = []
        for dname in ("fw", "bw"):
            pre = f"lstm{li}.{dname}"
            W = unif(k, 4 * H, H + d_layer, name=f"{pre}.W")
            b_x = unif(k, 4 * H, name=f"{pre}.b_x")
            b_x.data[H:2 * H] = 1.0
            b_h = parameter(np.zeros(4 * H, dtype=dtype), f"{pre}.b_h")
            dirs.append(LstmDirection(W, b_x, b_h))
        layers.append(LstmLayer(*dirs))
    w_out = unif(1 / np.sqrt(2 * H), 1, 2 * H, name="out.W")
    b_out = unif(1 / np.sqrt(2 * H), 1, name="out.b")
    return CneParameters(config, w_proj, b_proj, w_punc, b_punc, bn, layers, w_out, b_out)


def zero_params(config: CneConfig, dtype=np.float64) -> CneParameters:
    """Every trainable tensor zero (batch-norm gamma included)."""
    params = init_params(config, np.random.default_rng(0), dtype)
    for t in params.parameters():
        t.data[...] = 0
    return params


# --- forward ----------------------------------------------------------------------------------


def puncture_gate(P, params: CneParameters) -> Tensor | None:
    """``sigmoid(W_punc P + b_punc)``, or None when the gate is disabled."""
    if params.w_punc is None:
        return None
    P = np.asarray(P, dtype=params.w_punc.data.dtype)
    return sigmoid(affine(Tensor(P), params.w_punc, params.b_punc))


def embed(L_m, P, params: CneParameters) -> Tensor:
    """Gated embedding ``E_l * E_p`` before normalization, ``[B, K, d_embed]``."""
    E_l = affine(as_tensor(L_m), params.w_proj, params.b_proj)
    gate = puncture_gate(P, params)
    return E_l if gate is None else E_l * gate


def bidirectional(x: Tensor, layer: LstmLayer) -> Tensor:
    f = layer.forward
    b = layer.backward
    return concat([lstm(x, f.W, f.b_x, f.b_h), lstm(x, b.W, b.b_x, b.b_h, reverse=True)], axis=-1)


def cne_forward(L_m, P, params: CneParameters | None, training: bool = False) -> Tensor:
    """Per-position logits for ``L_m[B, K, d_in]`` with indicators ``P[B, K, d_in]``.

    Unbatched ``[K, d_in]`` inputs return ``[K]``.
    """
    if params is None:
        raise ConfigurationError("CNE parameters are not initialized")
    L_m = as_tensor(L_m)
    dtype = params.w_proj.data.dtype
    if L_m.data.dtype != dtype:
        L_m = Tensor(L_m.data.astype(dtype)) if not L_m.requires_grad else L_m
    P = np.asarray(P)
    cfg = params.config
    if L_m.shape[-1] != cfg.d_in or P.shape != L_m.shape:
        raise ConfigurationError(
            f"CNE expects L_m and P of shape [..., K, {cfg.d_in}], got {L_m.shape} and {P.shape}"
        )
    single = L_m.ndim == 2
    if single:
        L_m = L_m.reshape(1, *L_m.shape)
        P = P[None]
    x = batchnorm(embed(L_m, P, params), params.bn, training)
    for layer in params.layers:
        x = bidirectional(x, layer)
    y = affine(x, params.w_out, params.b_out)
    y = y.reshape(y.shape[:-1])
    return y.reshape(y.shape[1:]) if single else y


def _iteration_params(params, n_iter: int) -> list[CneParameters]:
    if isinstance(params, CneParameters):
        return [params] * n_iter
    params = list(params)
    if len(params) != n_iter:
        raise ConfigurationError(f"{len(params)} parameter sets for {n_iter} iterations")
    return params


def cne_turbo_decode(
    llr_s, llr_z, llr_z2, p_s, p_z, p_z2,
    interleaver: QppInterleaver,
    params: CneParameters | Sequence[CneParameters],
    n_iter: int | None = None,
    training: bool = False,
    return_history: bool = False,
):
    """Iterate two engine calls per round, exchanging extrinsic LLRs.

    ``llr_z2``/``p_z2`` belong to the second encoder and are already in
    interleaved order.  ``params`` is either one parameter set reused by every
    call or one set per iteration (shared by both calls of that iteration).
    Returns the de-interleaved output of the last second-engine call
    (intrinsic information included), ``[..., K]``; with ``return_history``
    also the per-iteration outputs.
    """
    first = params if isinstance(params, CneParameters) else list(params)[0]
    n_iter = first.config.n_iter if n_iter is None else n_iter
    sets = _iteration_params(params, n_iter)
    dtype = first.w_proj.data.dtype
    arrs = [np.asarray(a.data if isinstance(a, Tensor) else a, dtype=dtype) for a in (llr_s, llr_z, llr_z2)]
    inds = [np.asarray(a, dtype=dtype) for a in (p_s, p_z, p_z2)]
    K = arrs[0].shape[-1]
    if K != interleaver.K:
        raise ConfigurationError(f"sequence length {K} != interleaver K={interleaver.K}")
    for a in arrs + inds:
        if a.shape != arrs[0].shape:
            raise ConfigurationError("all six decoder inputs must share one shape")
    s, z, z2 = (Tensor(a) for a in arrs)
    pi, inv = interleaver.table, interleaver.inverse
    P0 = np.stack([inds[0], inds[1]], axis=-1)
    P1 = np.stack([inds[0][..., pi], inds[2]], axis=-1)
    ext1 = Tensor(np.zeros_like(arrs[0]))
    history = []
    out = None
    for p in sets:
        l0 = cne_forward(stack([s + ext1, z], axis=-1), P0, p, training)
        int0 = take(l0 - ext1, pi, axis=-1)
        l1 = cne_forward(stack([int0, z2], axis=-1), P1, p, training)
        ext1 = take(l1 - int0, inv, axis=-1)
        out = take(l1, inv, axis=-1)
        history.append(out)
    return (out, history) if return_history else out


# --- persistence ------------------------------------------------------------------------------


def model_arrays(params: CneParameters) -> list[tuple[str, np.ndarray]]:
    return [(n, t.data) for n, t in params.named_parameters()] + params.buffers()


def save_model(path: str | Path, params: CneParameters, meta: dict | None = None,
               extra_arrays: list[tuple[str, np.ndarray]] | None = None) -> None:
    header = {
        "kind": "cne",
        "config": params.config.to_dict(),
        "trainable": [n for n, _ in params.named_parameters()],
        "bn": {"momentum": params.bn.momentum, "eps": params.bn.eps},
    }
    header.update(meta or {})
    write_checkpoint(path, header, model_arrays(params) + list(extra_arrays or []))


def params_from_arrays(config: CneConfig, arrays: dict[str, np.ndarray], bn: dict | None = None,
                       dtype=np.float32) -> CneParameters:
    params = init_params(config, np.random.default_rng(0), dtype)
    for name, t in params.named_parameters():
        if name not in arrays:
            raise CheckpointError(f"checkpoint lacks parameter {name!r}")
        if arrays[name].shape != t.shape:
            raise CheckpointError(f"{name}: checkpoint shape {arrays[name].shape} != model shape {t.shape}")
        t.data[...] = arrays[name]
    params.bn.running_mean = arrays["bn.running_mean"].astype(dtype)
    params.bn.running_var = arrays["bn.running_var"].astype(dtype)
    if bn:
        params.bn.momentum = float(bn["momentum"])
        params.bn.eps = float(bn["eps"])
    return params


def load_model(path: str | Path, expected: CneConfig | None = None, dtype=np.float32):
    """Load ``(params, meta, arrays)``; ``expected`` is compared against the stored config."""
    meta, arrays = read_checkpoint(path)
    if meta.get("kind") != "cne":
        raise CheckpointError(f"{path} does not hold a CNE model")
    config = CneConfig.from_dict(meta["config"])
    if expected is not None and expected != config:
        diff = {k: (v, getattr(config, k)) for k, v in expected.to_dict().items() if getattr(config, k) != v}
        raise CheckpointError(f"checkpoint/config mismatch (expected, stored): {diff}")
    return params_from_arrays(config, arrays, meta.get("bn"), dtype), meta, arrays
