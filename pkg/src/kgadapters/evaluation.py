"""Cosine-retrieval evaluation (KG completion, entity alignment) and the
contrastive task-finetuning used in the last workflow stages.

Ranking is raw: a query is scored against every entity label of the target
language by cosine similarity, descending, ties broken by ascending entity
id. A gold entity missing from the candidate set counts as rank infinity
(misses every Hit@k, contributes 0 to MRR) and logs a loud warning.
Category aggregates are unweighted means over the category's languages.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .adapters import AdaptedEncoder, build_hook
from .data import LanguageSplit, MLKG, Triple
from .encoder import encode, pad_batch, pool, sentence_pool_weights
from .errors import ConfigError, ContractViolation
from .hyper import TrainHyper
from .objectives import PairItem, _distinct_draws, encode_pair_batch, infonce
from .optim import adam_step, init_adam, warmup_lr
from .vocab import SEP, TokenSeq, Vocab

log = logging.getLogger(__name__)


@dataclass
class CandidateIndex:
    """All entity-label embeddings of one language, rows ordered by entity id."""

    lang: str
    entity_ids: list[str]
    matrix: np.ndarray

    def __post_init__(self):
        if len(self.entity_ids) != self.matrix.shape[0]:
            raise ValueError("CandidateIndex rows do not match ids")
        if not self.entity_ids:
            raise ValueError("empty candidate index")


@dataclass
class LanguageResult:
    n: int
    hit1: float
    hitk: float
    mrr: float


@dataclass
class MetricReport:
    task: str
    variant: str
    k: int
    per_language: dict[str, LanguageResult] = field(default_factory=dict)
    seed: int = 0
    profile: str = ""
    checkpoint_hash: str = ""
    config_hash: str = ""

    def category_aggregate(self, split: LanguageSplit, category: str) -> LanguageResult:
        langs = {"sup": split.sup, "zs_in": split.zs_in, "zs_un": split.zs_un}[category]
        rows = [self.per_language[l] for l in langs if l in self.per_language]
        if not rows:
            return LanguageResult(n=0, hit1=0.0, hitk=0.0, mrr=0.0)
        return LanguageResult(
            n=sum(r.n for r in rows),
            hit1=float(np.mean([r.hit1 for r in rows])),
            hitk=float(np.mean([r.hitk for r in rows])),
            mrr=float(np.mean([r.mrr for r in rows])))

    def overall(self) -> LanguageResult:
        rows = list(self.per_language.values())
        return LanguageResult(
            n=sum(r.n for r in rows),
            hit1=float(np.mean([r.hit1 for r in rows])),
            hitk=float(np.mean([r.hitk for r in rows])),
            mrr=float(np.mean([r.mrr for r in rows])))

    def to_dict(self, split: LanguageSplit | None = None) -> dict:
        out = {
            "task": self.task, "variant": self.variant, "k": self.k,
            "seed": self.seed, "profile": self.profile,
            "checkpoint_hash": self.checkpoint_hash, "config_hash": self.config_hash,
            "per_language": {l: vars(r) for l, r in sorted(self.per_language.items())},
        }
        if split is not None:
            out["categories"] = {c: vars(self.category_aggregate(split, c))
                                 for c in ("sup", "zs_in", "zs_un")}
        out["overall"] = vars(self.overall())
        return out


# ---------------------------------------------------------------------------
# embedding, ranking, metrics
# ---------------------------------------------------------------------------

def _pooled_encodings(adapted: AdaptedEncoder, seqs: Sequence[TokenSeq],
                      batch_size: int = 64) -> np.ndarray:
    """Sentence-pooled encodings (PAD/SEP/MASK excluded), batched, no tape."""
    rows = []
    leaves = ad.make_leaves(adapted.params, grad=False)
    hook = build_hook(adapted, leaves)
    for lo in range(0, len(seqs), batch_size):
        chunk = seqs[lo:lo + batch_size]
        ids, mask = pad_batch(chunk, adapted.config)
        states = encode(leaves, ids, mask, adapted.config, hook)
        weights = sentence_pool_weights(ids, mask)
        rows.append(pool(states.final, weights).data)
    return np.concatenate(rows, axis=0)


def label_seq(text: str, lang: str, vocab: Vocab, max_len: int) -> TokenSeq:
    return TokenSeq(ids=[vocab.id(t) for t in text.split()][:max_len], lang=lang)


def embed_labels(adapted: AdaptedEncoder, mlkg: MLKG, lang: str,
                 vocab: Vocab, batch_size: int = 64) -> CandidateIndex:
    """Embed every entity's label in one language, ordered by entity id."""
    ids, seqs = [], []
    for eid in sorted(mlkg.entities):
        label = mlkg.entities[eid].labels.get(lang)
        if label is None:
            log.warning("embed_labels: entity %s has no label in %s, excluded", eid, lang)
            continue
        ids.append(eid)
        seqs.append(label_seq(label, lang, vocab, adapted.config.max_seq_len))
    if not ids:
        raise ConfigError(f"no entity has a label in language {lang!r}")
    return CandidateIndex(lang=lang, entity_ids=ids,
                          matrix=_pooled_encodings(adapted, seqs, batch_size))


def rank(query: np.ndarray, index: CandidateIndex) -> list[str]:
    """Entity ids by descending cosine to the query; ties by ascending id."""
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    if q.shape[0] != index.matrix.shape[1]:
        raise ValueError(
            f"query dim {q.shape[0]} != index dim {index.matrix.shape[1]}")
    m = index.matrix.astype(np.float64)
    qn = np.linalg.norm(q)
    mn = np.linalg.norm(m, axis=1)
    scores = (m @ q) / np.where(mn * qn == 0.0, 1.0, mn * qn)
    # entity_ids are ascending, so stable sort on -score preserves the tie rule
    order = np.argsort(-scores, kind="stable")
    return [index.entity_ids[i] for i in order]


def gold_rank(ranked_ids: Sequence[str], gold: str) -> float:
    """1-based rank of the gold id, or infinity if absent (with a warning)."""
    try:
        return ranked_ids.index(gold) + 1
    except ValueError:
        log.warning("gold entity %s missing from candidate set: counted as rank inf", gold)
        return math.inf


def hits_at_k(ranks: Sequence[float], k: int) -> float:
    if not ranks:
        raise ValueError("hits_at_k: empty rank list")
    return sum(1 for r in ranks if r <= k) / len(ranks)


def mrr(ranks: Sequence[float]) -> float:
    if not ranks:
        raise ValueError("mrr: empty rank list")
    return sum(0.0 if math.isinf(r) else 1.0 / r for r in ranks) / len(ranks)


def _language_result(ranks: list[float], k: int) -> LanguageResult:
    return LanguageResult(n=len(ranks), hit1=hits_at_k(ranks, 1),
                          hitk=hits_at_k(ranks, k), mrr=mrr(ranks))


# ---------------------------------------------------------------------------
# task evaluation
# ---------------------------------------------------------------------------

def completion_query_seq(mlkg: MLKG, triple: Triple, lang: str, vocab: Vocab,
                         max_len: int) -> TokenSeq:
    """Encode "subject <sep> relation" in one language (never code-switched)."""
    subj = mlkg.entities[triple.head].labels[lang]
    rel = mlkg.relations[triple.rel].labels[lang]
    tokens = subj.split() + [SEP] + rel.split()
    return TokenSeq(ids=[vocab.id(t) for t in tokens][:max_len], lang=lang)


def eval_completion(adapted: AdaptedEncoder, mlkg: MLKG,
                    test_items: dict[str, list[tuple[str, Triple]]],
                    vocab: Vocab, k: int = 10,
                    indexes: dict[str, CandidateIndex] | None = None) -> MetricReport:
    """Rank the gold object among all entities of the query language."""
    report = MetricReport(task="completion", variant="", k=k)
    for lang in sorted(test_items):
        items = test_items[lang]
        if not items:
            continue
        index = (indexes or {}).get(lang) or embed_labels(adapted, mlkg, lang, vocab)
        queries = [completion_query_seq(mlkg, t, lang, vocab, adapted.config.max_seq_len)
                   for _, t in items]
        qmat = _pooled_encodings(adapted, queries)
        ranks = [gold_rank(rank(qmat[i], index), items[i][1].tail)
                 for i in range(len(items))]
        report.per_language[lang] = _language_result(ranks, k)
    return report


def eval_alignment(adapted: AdaptedEncoder, mlkg: MLKG,
                   test_pairs: dict[str, list[tuple[str, str, str]]],
                   vocab: Vocab, k: int = 10,
                   indexes: dict[str, CandidateIndex] | None = None) -> MetricReport:
    """Retrieve each source-language entity among the target language's labels."""
    report = MetricReport(task="alignment", variant="", k=k)
    for tgt in sorted(test_pairs):
        pairs = test_pairs[tgt]
        if not pairs:
            continue
        index = (indexes or {}).get(tgt) or embed_labels(adapted, mlkg, tgt, vocab)
        queries = [label_seq(mlkg.entities[eid].labels[src], src, vocab,
                             adapted.config.max_seq_len)
                   for src, _, eid in pairs]
        qmat = _pooled_encodings(adapted, queries)
        ranks = [gold_rank(rank(qmat[i], index), pairs[i][2])
                 for i in range(len(pairs))]
        report.per_language[tgt] = _language_result(ranks, k)
    return report


# ---------------------------------------------------------------------------
# task finetuning (workflow stages 3 and 4)
# ---------------------------------------------------------------------------

ItemSampler = Callable[[int, np.random.Generator], list[PairItem]]


def completion_item_sampler(mlkg: MLKG, train_items: list[tuple[str, Triple]]) -> ItemSampler:
    if not train_items:
        raise ConfigError("no completion training items in supervised languages")

    def sampler(batch_size: int, rng: np.random.Generator) -> list[PairItem]:
        picked = _distinct_draws(len(train_items), batch_size,
                                 lambda i: train_items[i][1].tail, rng)
        out = []
        for j in picked:
            lang, t = train_items[j]
            subj = mlkg.entities[t.head].labels[lang]
            rel = mlkg.relations[t.rel].labels[lang]
            out.append(PairItem(
                anchor_tokens=subj.split() + [SEP] + rel.split(), anchor_lang=lang,
                positive_tokens=mlkg.entities[t.tail].labels[lang].split(),
                positive_lang=lang,
                provenance=f"comp:{t.head}:{t.rel}:{t.tail}:{lang}"))
        return out

    return sampler


def alignment_item_sampler(mlkg: MLKG, train_pairs: list[tuple[str, str, str]]) -> ItemSampler:
    if not train_pairs:
        raise ConfigError("no alignment training pairs in supervised languages")

    def sampler(batch_size: int, rng: np.random.Generator) -> list[PairItem]:
        picked = _distinct_draws(len(train_pairs), batch_size,
                                 lambda i: train_pairs[i][2], rng)
        out = []
        for j in picked:
            src, tgt, eid = train_pairs[j]
            out.append(PairItem(
                anchor_tokens=mlkg.entities[eid].labels[src].split(), anchor_lang=src,
                positive_tokens=mlkg.entities[eid].labels[tgt].split(),
                positive_lang=tgt,
                provenance=f"align:{eid}:{src}->{tgt}"))
        return out

    return sampler


def finetune_contrastive(adapted: AdaptedEncoder, sampler: ItemSampler, vocab: Vocab,
                         hyper: TrainHyper, train_groups: Sequence[str]
                         ) -> tuple[AdaptedEncoder, list[tuple[int, float, float]]]:
    """Train only the given parameter groups on task pairs with InfoNCE.

    Groups not listed are frozen and checksum-verified afterwards.
    """
    from dataclasses import replace as dc_replace
    model = dc_replace(adapted, params=adapted.params.copy())
    params = model.params
    params.set_trainable("", False)
    for g in train_groups:
        params.set_trainable(g, True)
    trainable = set(params.trainable_names())
    if not trainable:
        raise ConfigError(f"no parameters match train groups {list(train_groups)}")
    frozen = [n for n in params if n not in trainable]
    before = {n: params.checksum(n) for n in frozen}

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

    for n in frozen:
        if params.checksum(n) != before[n]:
            raise ContractViolation(f"frozen parameter {n!r} changed during finetuning")
    return model, curve


def finetune_completion(adapted: AdaptedEncoder, mlkg: MLKG,
                        train_items: list[tuple[str, Triple]], vocab: Vocab,
                        hyper: TrainHyper, train_groups: Sequence[str]):
    return finetune_contrastive(adapted, completion_item_sampler(mlkg, train_items),
                                vocab, hyper, train_groups)


def finetune_alignment(adapted: AdaptedEncoder, mlkg: MLKG,
                       train_pairs: list[tuple[str, str, str]], vocab: Vocab,
                       hyper: TrainHyper, train_groups: Sequence[str]):
    return finetune_contrastive(adapted, alignment_item_sampler(mlkg, train_pairs),
                                vocab, hyper, train_groups)
