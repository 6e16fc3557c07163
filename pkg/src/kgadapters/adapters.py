"""Bottleneck adapters, attention fusion over adapter outputs, and budgets.

An adapter at layer m computes h + W_up . gelu(W_down . h + b_down) + b_up
(residual added so a zero up-projection is the exact identity). The fusion
layer scores the identity path and every adapter output against the input
with a bilinear form <hQ, A_n(h)K>, softmaxes the scores and mixes the
V-projected outputs. Parameters are shared across token positions within a
layer. Checkpoint tensor names follow adapter.<kind>.<layer>.<matrix> and
fusion.<layer>.<Q|K|V>.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import AdapterHook, EncoderConfig
from .params import ParamSet

KINDS = ("EP", "TP", "ES", "TS")
LARGE = "LARGE"

W_UP_INIT_STD = 1e-4
FUSION_QK_INIT_STD = 1e-3
FUSION_V_NOISE_STD = 1e-3


@dataclass
class AdaptedEncoder:
    """Backbone plus an ordered adapter set and optional fusion parameters."""

    config: EncoderConfig
    params: ParamSet
    kinds: list[str]
    bottlenecks: dict[str, int]
    mode: str = "none"                # none | single | fusion
    single_kind: str | None = None

    def __post_init__(self):
        if self.mode not in ("none", "single", "fusion"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "single" and self.single_kind not in self.kinds:
            raise ValueError(f"single mode needs an inserted kind, got {self.single_kind!r}")
        if self.mode == "fusion" and not self.kinds:
            raise ValueError("fusion mode requires at least one adapter")

    @property
    def has_fusion(self) -> bool:
        return bool(self.params.names("fusion."))

    def with_mode(self, mode: str, kind: str | None = None) -> "AdaptedEncoder":
        if mode == "fusion" and not self.has_fusion:
            raise ValueError("fusion parameters not initialized")
        return replace(self, mode=mode, single_kind=kind)


@dataclass
class ParamBudget:
    backbone: int
    per_adapter: dict[str, int]
    fusion: int

    @property
    def adapter_total(self) -> int:
        return sum(self.per_adapter.values())

    @property
    def ratio(self) -> float:
        return (self.adapter_total + self.fusion) / self.backbone


def adapter_param_count(layers: int, d: int, bottleneck: int) -> int:
    """Closed form L*(2*d*b + b + d) for one adapter across all layers."""
    return layers * (2 * d * bottleneck + bottleneck + d)


def fusion_param_count(layers: int, d: int) -> int:
    return layers * 3 * d * d


def _init_adapter(params: ParamSet, kind: str, config: EncoderConfig,
                  bottleneck: int, rng: np.random.Generator) -> None:
    if bottleneck < 1:
        raise ValueError(f"bottleneck must be >= 1, got {bottleneck}")
    d = config.d_model
    for m in range(config.layers):
        pre = f"adapter.{kind}.{m}"
        params.add(f"{pre}.W_down", (rng.standard_normal((d, bottleneck)) * 0.02).astype(np.float32))
        params.add(f"{pre}.b_down", np.zeros(bottleneck, dtype=np.float32))
        params.add(f"{pre}.W_up", (rng.standard_normal((bottleneck, d)) * W_UP_INIT_STD).astype(np.float32))
        params.add(f"{pre}.b_up", np.zeros(d, dtype=np.float32))


def insert_adapters(backbone: ParamSet, kinds: list[str], bottleneck: int,
                    seed: int, config: EncoderConfig) -> AdaptedEncoder:
    """Attach one freshly initialized adapter per kind to a copy of the backbone."""
    if not kinds:
        raise ValueError("insert_adapters: kinds must be non-empty")
    if len(set(kinds)) != len(kinds):
        raise ValueError(f"insert_adapters: duplicate kinds in {kinds}")
    params = backbone.copy()
    rng = np.random.default_rng(seed)
    for kind in kinds:
        _init_adapter(params, kind, config, bottleneck, rng)
    return AdaptedEncoder(config=config, params=params, kinds=list(kinds),
                          bottlenecks={k: bottleneck for k in kinds})


def init_fusion(adapted: AdaptedEncoder, seed: int) -> AdaptedEncoder:
    """Add per-layer Q/K/V fusion parameters; V starts near the identity."""
    if not adapted.kinds:
        raise ValueError("init_fusion: no adapters inserted")
    if adapted.has_fusion:
        raise ValueError("init_fusion: fusion parameters already present")
    d = adapted.config.d_model
    rng = np.random.default_rng(seed)
    params = adapted.params.copy()
    for m in range(adapted.config.layers):
        pre = f"fusion.{m}"
        params.add(f"{pre}.Q", (rng.standard_normal((d, d)) * FUSION_QK_INIT_STD).astype(np.float32))
        params.add(f"{pre}.K", (rng.standard_normal((d, d)) * FUSION_QK_INIT_STD).astype(np.float32))
        v = np.eye(d) + rng.standard_normal((d, d)) * FUSION_V_NOISE_STD
        params.add(f"{pre}.V", v.astype(np.float32))
    return replace(adapted, params=params)


# ---------------------------------------------------------------------------
# forward passes (graph ops; public vector wrappers below)
# ---------------------------------------------------------------------------

def adapter_apply(x: Tensor, leaves: dict[str, Tensor], kind: str, layer: int) -> Tensor:
    """Residual bottleneck transform of [..., d] states at one layer."""
    pre = f"adapter.{kind}.{layer}"
    z = ad.gelu(ad.add(ad.matmul(x, leaves[f"{pre}.W_down"]), leaves[f"{pre}.b_down"]))
    return ad.add(x, ad.add(ad.matmul(z, leaves[f"{pre}.W_up"]), leaves[f"{pre}.b_up"]))


def fusion_apply(x: Tensor, outputs: list[Tensor], leaves: dict[str, Tensor],
                 layer: int) -> tuple[Tensor, Tensor]:
    """Attention over [identity] + adapter outputs; returns (mixed, weights).

    Scores are <xQ, A_n(x)K> per position; weights softmax over the N+1
    paths; the mix is sum_n a_n * (A_n(x) V) with A_0(x) = x.
    """
    pre = f"fusion.{layer}"
    q = ad.matmul(x, leaves[f"{pre}.Q"])
    paths = [x] + list(outputs)
    scores = []
    for out in paths:
        k = ad.matmul(out, leaves[f"{pre}.K"])
        s = ad.tsum(ad.mul(q, k), axis=-1, keepdims=True)   # [..., 1]
        scores.append(s)
    a = ad.softmax(ad.concat(scores, axis=-1), axis=-1)     # [..., N+1]
    parts = ad.split(a, [1] * len(paths), axis=-1)
    mixed = None
    for w, out in zip(parts, paths):
        term = ad.mul(w, ad.matmul(out, leaves[f"{pre}.V"]))
        mixed = term if mixed is None else ad.add(mixed, term)
    return mixed, a


def build_hook(adapted: AdaptedEncoder, leaves: dict[str, Tensor],
               fusion_record: dict[int, np.ndarray] | None = None) -> AdapterHook | None:
    """Adapter hook for encode() according to the model's mode."""
    if adapted.mode == "none":
        return None
    if adapted.mode == "single":
        kind = adapted.single_kind

        def single_hook(x: Tensor, layer: int) -> Tensor:
            return adapter_apply(x, leaves, kind, layer)

        return single_hook

    if not adapted.has_fusion:
        raise ValueError("fusion mode without fusion parameters")

    def fusion_hook(x: Tensor, layer: int) -> Tensor:
        outputs = [adapter_apply(x, leaves, kind, layer) for kind in adapted.kinds]
        mixed, a = fusion_apply(x, outputs, leaves, layer)
        if fusion_record is not None:
            fusion_record[layer] = a.data.copy()
        return mixed

    return fusion_hook


# ---------------------------------------------------------------------------
# public single-vector ops
# ---------------------------------------------------------------------------

def adapter_forward(h: np.ndarray, weights: dict[str, np.ndarray]) -> np.ndarray:
    """Apply one layer slice {W_down, b_down, W_up, b_up} to a vector."""
    leaves = {f"adapter.X.0.{k}": Tensor(np.asarray(v)) for k, v in weights.items()}
    return adapter_apply(Tensor(np.asarray(h)), leaves, "X", 0).data


def fusion_forward(h: np.ndarray, adapter_outputs: list[np.ndarray],
                   qkv: dict[str, np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Fuse a vector with its adapter outputs; returns (output, weights)."""
    leaves = {f"fusion.0.{k}": Tensor(np.asarray(v)) for k, v in qkv.items()}
    x = Tensor(np.asarray(h).reshape(1, -1))
    outs = [Tensor(np.asarray(o).reshape(1, -1)) for o in adapter_outputs]
    mixed, a = fusion_apply(x, outs, leaves, 0)
    return mixed.data.reshape(-1), a.data.reshape(-1)


# ---------------------------------------------------------------------------
# parameter accounting
# ---------------------------------------------------------------------------

def param_counts(adapted: AdaptedEncoder) -> ParamBudget:
    """Exhaustive enumeration of named tensors, grouped by role."""
    p = adapted.params
    per_adapter = {kind: p.count(f"adapter.{kind}.") for kind in adapted.kinds}
    return ParamBudget(backbone=p.count("encoder."), per_adapter=per_adapter,
                       fusion=p.count("fusion."))


def large_adapter_bottleneck(reference_total: int, d: int, layers: int) -> int:
    """Largest b' with L*(2*d*b' + b' + d) <= reference_total."""
    b = (reference_total // layers - d) // (2 * d + 1)
    if b < 1:
        raise ValueError(
            f"reference budget {reference_total} too small for a bottleneck of 1")
    return int(b)


def make_large_adapter(reference: AdaptedEncoder, backbone: ParamSet,
                       seed: int) -> AdaptedEncoder:
    """Single LARGE adapter sized to the reference adapter-set + fusion budget."""
    budget = param_counts(reference)
    total = budget.adapter_total + budget.fusion
    b = large_adapter_bottleneck(total, reference.config.d_model, reference.config.layers)
    return insert_adapters(backbone, [LARGE], b, seed, reference.config)
