"""InfoNCE with in-batch negatives and the four knowledge batch builders.

Each sampler yields text pairs; encoding happens in one fused forward pass
(anchors and positives concatenated into a single batch) so a training step
is one graph. The loss is the softmax form exp(cos/tau): the raw log-ratio
of cosines is undefined for negative similarities, so the temperatured
exponent is used with tau configurable (default 0.05). Negatives for an
anchor are the other positives in the batch.

Samplers are pure in (data, seed): the same seed reproduces the same pair
sequence. Code-switching draws each slot's language independently with
probability p_cs, otherwise the whole item shares one language.

Within one batch the positive-side entities are distinct: a duplicated
entity would put a copy of an anchor's own positive among its negatives,
which at a few hundred entities happens constantly and poisons the loss
(at millions of entities random batches are distinct anyway).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace as dc_replace
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .adapters import AdaptedEncoder, build_hook
from .autodiff import Tensor
from .data import MLKG, TaggedSentence, Triple, TripleSentence
from .encoder import (encode, mask_span, pad_batch, pool,
                      sentence_pool_weights, span_pool_weights)
from .errors import ConfigError, ContractViolation
from .hyper import TrainHyper
from .optim import adam_step, init_adam, warmup_lr
from .params import ParamSet
from .vocab import SEP, TokenSeq, Vocab

log = logging.getLogger(__name__)


@dataclass
class ContrastiveBatch:
    """Paired anchor/positive representations feeding InfoNCE."""

    anchors: Tensor
    positives: Tensor
    provenance: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.anchors.shape != self.positives.shape or self.anchors.shape[0] < 1:
            raise ValueError(
                f"anchor/positive shapes differ: {self.anchors.shape} vs {self.positives.shape}")


def infonce(batch: ContrastiveBatch, tau: float) -> Tensor:
    """-mean_i log softmax_j(cos(a_i, p_j)/tau) at j=i; negatives are in-batch."""
    if tau <= 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    if not (np.isfinite(batch.anchors.data).all() and np.isfinite(batch.positives.data).all()):
        raise ad.NumericError("infonce: non-finite representations")
    b = batch.anchors.shape[0]
    cos = ad.cosine_rows(batch.anchors, batch.positives)        # [B,B]
    logp = ad.log_softmax(ad.mul(cos, 1.0 / tau), axis=-1)
    eye = np.eye(b, dtype=logp.dtype)
    diag = ad.tsum(ad.mul(logp, Tensor(eye)), axis=-1)          # [B]
    return ad.mul(ad.mean(diag), -1.0)


@dataclass
class PairItem:
    """One sampled anchor/positive text pair before tokenization."""

    anchor_tokens: list[str]
    anchor_lang: str
    positive_tokens: list[str]
    positive_lang: str
    anchor_span: tuple[int, int] | None = None      # span pooling if set
    anchor_mask_span: tuple[int, int] | None = None  # masked before encoding
    provenance: str = ""


Sampler = Callable[[int, np.random.Generator], list[PairItem]]


# ---------------------------------------------------------------------------
# batch builders
# ---------------------------------------------------------------------------

def ep_pair_universe(mlkg: MLKG, langs: Sequence[str]) -> list[tuple[str, str, str]]:
    """All ordered (entity, lang, lang') label pairs within permitted languages."""
    allowed = list(langs)
    pairs = []
    for eid in sorted(mlkg.entities):
        available = [l for l in allowed if l in mlkg.entities[eid].labels]
        for l1 in available:
            for l2 in available:
                if l1 != l2:
                    pairs.append((eid, l1, l2))
    return pairs


def _distinct_draws(universe_size: int, batch_size: int, key_of, rng: np.random.Generator,
                    on_skip=None) -> list[int]:
    """Sample indexes whose keys are pairwise distinct within the batch."""
    picked: list[int] = []
    seen: set = set()
    guard = 0
    limit = max(batch_size * 50, 1000)
    while len(picked) < batch_size and guard < limit:
        guard += 1
        i = int(rng.integers(universe_size))
        key = key_of(i)
        if key is None:
            if on_skip:
                on_skip(i)
            continue
        if key in seen:
            continue
        seen.add(key)
        picked.append(i)
    if len(picked) < batch_size:
        raise ConfigError(
            f"could not fill a batch of {batch_size} with distinct entities "
            f"(universe yields only {len(picked)}); lower the batch size")
    return picked


def sample_ep_batch(mlkg: MLKG, langs: Sequence[str], batch_size: int,
                    rng: np.random.Generator) -> list[PairItem]:
    """Uniform over cross-lingual label alignment pairs (bare labels)."""
    universe = ep_pair_universe(mlkg, langs)
    if not universe:
        raise ConfigError("sample_ep_batch: no entity with labels in two permitted languages")
    picked = _distinct_draws(len(universe), batch_size,
                             lambda i: universe[i][0], rng)
    out = []
    for k in picked:
        eid, l1, l2 = universe[k]
        out.append(PairItem(
            anchor_tokens=mlkg.entities[eid].labels[l1].split(), anchor_lang=l1,
            positive_tokens=mlkg.entities[eid].labels[l2].split(), positive_lang=l2,
            provenance=f"ep:{eid}:{l1}->{l2}"))
    return out


def _slot_lang(labels: dict[str, str], langs: Sequence[str],
               rng: np.random.Generator) -> str | None:
    available = [l for l in langs if l in labels]
    if not available:
        return None
    return available[int(rng.integers(len(available)))]


def sample_tp_batch(mlkg: MLKG, triples: Sequence[Triple], langs: Sequence[str],
                    batch_size: int, p_cs: float, rng: np.random.Generator) -> list[PairItem]:
    """Anchor = subject <sep> relation, positive = object label, code-switched."""
    if not triples:
        raise ConfigError("sample_tp_batch: no triples")

    def tail_of(i: int):
        t = triples[i]
        labels = mlkg.entities[t.tail].labels
        if not any(l in labels for l in langs):
            return None
        return t.tail

    def warn_skip(i: int):
        log.warning("sample_tp_batch: skipping %s (missing label in permitted languages)",
                    triples[i])

    picked = _distinct_draws(len(triples), batch_size, tail_of, rng, warn_skip)
    out = []
    for i in picked:
        t = triples[i]
        head = mlkg.entities[t.head].labels
        rel = mlkg.relations[t.rel].labels
        tail = mlkg.entities[t.tail].labels
        if rng.random() < p_cs:
            lh = _slot_lang(head, langs, rng)
            lr = _slot_lang(rel, langs, rng)
            lt = _slot_lang(tail, langs, rng)
        else:
            common = [l for l in langs if l in head and l in rel and l in tail]
            lh = lr = lt = (common[int(rng.integers(len(common)))] if common else None)
        if None in (lh, lr, lt):
            log.warning("sample_tp_batch: skipping %s (no usable language)", t)
            continue
        out.append(PairItem(
            anchor_tokens=head[lh].split() + [SEP] + rel[lr].split(), anchor_lang=lh,
            positive_tokens=tail[lt].split(), positive_lang=lt,
            provenance=f"tp:{t.head}:{t.rel}:{t.tail}:{lh}/{lr}/{lt}"))
    if not out:
        raise ConfigError("sample_tp_batch: could not fill a batch from permitted languages")
    return out


def sample_es_batch(c1: Sequence[TaggedSentence], mlkg: MLKG, langs: Sequence[str],
                    batch_size: int, rng: np.random.Generator) -> list[PairItem]:
    """Anchor = contextualized entity span, positive = label in another language."""
    eligible = []
    for idx, r in enumerate(c1):
        if r.lang not in langs:
            continue
        others = [l for l in langs if l != r.lang and l in mlkg.entities[r.entity_id].labels]
        if others:
            eligible.append((idx, others))
    if not eligible:
        raise ConfigError("sample_es_batch: no tagged sentence with a cross-lingual label")
    picked = _distinct_draws(len(eligible), batch_size,
                             lambda i: c1[eligible[i][0]].entity_id, rng)
    out = []
    for k in picked:
        idx, others = eligible[k]
        r = c1[idx]
        other = others[int(rng.integers(len(others)))]
        out.append(PairItem(
            anchor_tokens=list(r.tokens), anchor_lang=r.lang, anchor_span=r.span,
            positive_tokens=mlkg.entities[r.entity_id].labels[other].split(),
            positive_lang=other,
            provenance=f"es:{r.entity_id}:{r.lang}->{other}"))
    return out


def ts_ingest(c2: Sequence[TripleSentence]) -> list[TripleSentence]:
    """Reject records whose masked sentence would have no unmasked context."""
    kept = []
    for r in c2:
        span_len = r.obj_span[1] - r.obj_span[0] + 1
        if span_len >= len(r.tokens):
            log.warning("ts_ingest: rejecting record equal to its object label")
            continue
        kept.append(r)
    return kept


def sample_ts_batch(c2: Sequence[TripleSentence], base_lang: str, batch_size: int,
                    rng: np.random.Generator) -> list[PairItem]:
    """Anchor = sentence with the object span masked, positive = object label."""
    pool_records = ts_ingest(c2)
    if not pool_records:
        raise ConfigError("sample_ts_batch: no usable triple sentences")
    picked = _distinct_draws(len(pool_records), batch_size,
                             lambda i: pool_records[i].triple.tail, rng)
    out = []
    for k in picked:
        r = pool_records[k]
        i, j = r.obj_span
        out.append(PairItem(
            anchor_tokens=list(r.tokens), anchor_lang=base_lang,
            anchor_mask_span=(i, j),
            positive_tokens=list(r.tokens[i:j + 1]), positive_lang=base_lang,
            provenance=f"ts:{r.triple.head}:{r.triple.rel}:{r.triple.tail}"))
    return out


# ---------------------------------------------------------------------------
# pair encoding and adapter training
# ---------------------------------------------------------------------------

def _item_to_seq(tokens: list[str], lang: str, vocab: Vocab, max_len: int,
                 mask_at: tuple[int, int] | None) -> TokenSeq:
    seq = TokenSeq(ids=[vocab.id(t) for t in tokens][:max_len], lang=lang)
    if mask_at is not None:
        if mask_at[1] >= len(seq.ids):
            raise ConfigError(
                f"mask span {mask_at} truncated away at max_seq_len={max_len}")
        seq = mask_span(seq, mask_at)
    return seq


def encode_pair_batch(leaves: dict[str, Tensor], adapted: AdaptedEncoder,
                      items: Sequence[PairItem], vocab: Vocab) -> ContrastiveBatch:
    """One fused forward over anchors + positives, pooled to [B,d] each."""
    cfg = adapted.config
    anchor_seqs, spans = [], []
    for it in items:
        seq = _item_to_seq(it.anchor_tokens, it.anchor_lang, vocab, cfg.max_seq_len,
                           it.anchor_mask_span)
        anchor_seqs.append(seq)
        spans.append(it.anchor_span)
    positive_seqs = [_item_to_seq(it.positive_tokens, it.positive_lang, vocab,
                                  cfg.max_seq_len, None) for it in items]
    seqs = anchor_seqs + positive_seqs
    ids, mask = pad_batch(seqs, cfg)
    hook = build_hook(adapted, leaves)
    states = encode(leaves, ids, mask, cfg, hook)

    b = len(items)
    weights = np.zeros_like(mask)
    for row, span in enumerate(spans):
        if span is not None:
            weights[row] = span_pool_weights([span], mask[row:row + 1])[0]
        else:
            weights[row] = sentence_pool_weights(ids[row:row + 1], mask[row:row + 1])[0]
    weights[b:] = sentence_pool_weights(ids[b:], mask[b:])
    pooled = pool(states.final, weights)
    anchors, positives = ad.split(pooled, [b, b], axis=0)
    return ContrastiveBatch(anchors=anchors, positives=positives,
                            provenance=[it.provenance for it in items])


def mean_positive_cosine(adapted: AdaptedEncoder, items: Sequence[PairItem],
                         vocab: Vocab) -> float:
    """Diagnostic: mean cos(anchor_i, positive_i) under the current parameters."""
    leaves = ad.make_leaves(adapted.params, grad=False)
    batch = encode_pair_batch(leaves, adapted, items, vocab)
    cos = ad.cosine_rows(batch.anchors, batch.positives).data
    return float(np.mean(np.diag(cos)))


def train_adapter(adapted: AdaptedEncoder, kind: str, sampler: Sampler,
                  vocab: Vocab, hyper: TrainHyper
                  ) -> tuple[AdaptedEncoder, list[tuple[int, float, float]]]:
    """Stage-2 integration: train one adapter with the backbone frozen.

    Only parameters named adapter.<kind>.* may change; backbone, fusion and
    sibling adapters are checksum-verified before and after.
    """
    if kind not in adapted.kinds:
        raise ConfigError(f"adapter kind {kind!r} not inserted (have {adapted.kinds})")
    model = dc_replace(adapted, params=adapted.params.copy(),
                       mode="single", single_kind=kind)
    params = model.params
    params.set_trainable("encoder.", False)
    params.set_trainable("adapter.", False)
    params.set_trainable("fusion.", False)
    params.set_trainable(f"adapter.{kind}.", True)

    frozen_groups = ["encoder.", "fusion."] + [f"adapter.{k}." for k in model.kinds
                                               if k != kind]
    before = {g: params.checksum(g) for g in frozen_groups}

    rng = np.random.default_rng(hyper.seed)
    state = init_adam(params)
    curve = []
    for step in range(1, hyper.steps + 1):
        items = sampler(hyper.batch_size, rng)

        def loss_fn(leaves):
            return infonce(encode_pair_batch(leaves, model, items, vocab), hyper.tau)

        loss, grads = ad.grad_eval(loss_fn, params)
        lr = warmup_lr(step, hyper.base_lr, hyper.warmup_steps)
        adam_step(params, grads, state, lr)
        curve.append((step, lr, loss))

    after = {g: params.checksum(g) for g in frozen_groups}
    for g in frozen_groups:
        if before[g] != after[g]:
            raise ContractViolation(f"frozen parameter group {g!r} changed during training")
    return model, curve
