"""Small pre-norm transformer encoder with mean-pool spans and MLM pretraining.

The encoder is deliberately ordinary: learned token + position embeddings,
multi-head self-attention, GELU feed-forward, pre-norm residuals, final
layer norm. Every batch is padded internally to config.max_seq_len so that
identical inputs produce bitwise identical states regardless of how much
padding the caller added. An optional adapter hook transforms the
post-feed-forward output of every layer.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .hyper import TrainHyper
from .optim import adam_step, init_adam, warmup_lr
from .params import ParamSet
from .vocab import Vocab, TokenSeq

PAD_ID, UNK_ID, MASK_ID, SEP_ID = 0, 1, 2, 3
SPECIAL_ID_RANGE = (PAD_ID, UNK_ID, MASK_ID, SEP_ID)

AdapterHook = Callable[[Tensor, int], Tensor]


@dataclass
class EncoderConfig:
    layers: int = 2
    d_model: int = 64
    n_heads: int = 4
    ff_dim: int = 128
    max_seq_len: int = 24
    vocab_size: int = 0

    def __post_init__(self):
        for name in ("layers", "d_model", "n_heads", "ff_dim", "max_seq_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"EncoderConfig.{name} must be positive")
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"n_heads ({self.n_heads}) must divide d_model ({self.d_model})")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads


@dataclass
class HiddenStates:
    """Per-layer token representations; `final` is after the closing layer norm."""

    embeddings: Tensor
    layers: list[Tensor]
    final: Tensor


def init_encoder_params(config: EncoderConfig, rng: np.random.Generator,
                        scale: float = 0.02) -> ParamSet:
    """Backbone parameters under the `encoder.` prefix (includes the MLM head)."""
    if config.vocab_size < 5:
        raise ValueError("vocab_size must cover the special tokens")
    p = ParamSet()

    def normal(shape):
        return (rng.standard_normal(shape) * scale).astype(np.float32)

    d, ff, v = config.d_model, config.ff_dim, config.vocab_size
    p.add("encoder.emb.tok", normal((v, d)))
    p.add("encoder.emb.pos", normal((config.max_seq_len, d)))
    for m in range(config.layers):
        pre = f"encoder.{m}"
        for w in ("wq", "wk", "wv", "wo"):
            p.add(f"{pre}.attn.{w}", normal((d, d)))
        for b in ("bq", "bk", "bv", "bo"):
            p.add(f"{pre}.attn.{b}", np.zeros(d, dtype=np.float32))
        p.add(f"{pre}.ln1.g", np.ones(d, dtype=np.float32))
        p.add(f"{pre}.ln1.b", np.zeros(d, dtype=np.float32))
        p.add(f"{pre}.ln2.g", np.ones(d, dtype=np.float32))
        p.add(f"{pre}.ln2.b", np.zeros(d, dtype=np.float32))
        p.add(f"{pre}.ff.w1", normal((d, ff)))
        p.add(f"{pre}.ff.b1", np.zeros(ff, dtype=np.float32))
        p.add(f"{pre}.ff.w2", normal((ff, d)))
        p.add(f"{pre}.ff.b2", np.zeros(d, dtype=np.float32))
    p.add("encoder.ln_f.g", np.ones(d, dtype=np.float32))
    p.add("encoder.ln_f.b", np.zeros(d, dtype=np.float32))
    # MLM head is tied to the token embedding; only the bias is separate
    p.add("encoder.mlm.b", np.zeros(v, dtype=np.float32))
    return p


def pad_batch(seqs: Sequence[TokenSeq], config: EncoderConfig) -> tuple[np.ndarray, np.ndarray]:
    """Pad a batch to the model's fixed max_seq_len; oversize sequences error."""
    t = config.max_seq_len
    ids = np.full((len(seqs), t), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(seqs), t), dtype=np.float32)
    for i, s in enumerate(seqs):
        n = len(s.ids)
        if n > t:
            raise ValueError(f"sequence of length {n} exceeds max_seq_len {t}")
        if n == 0:
            raise ValueError("empty sequence in batch")
        ids[i, :n] = s.ids
        mask[i, :n] = s.mask
    return ids, mask


def encode(leaves: dict[str, Tensor], ids: np.ndarray, mask: np.ndarray,
           config: EncoderConfig, adapter_hook: AdapterHook | None = None) -> HiddenStates:
    """Run the encoder over a padded id batch, returning all layer states."""
    if ids.max(initial=0) >= config.vocab_size:
        raise ValueError("token id out of vocabulary range")
    b, t = ids.shape
    if t != config.max_seq_len:
        raise ValueError(f"batch must be padded to max_seq_len={config.max_seq_len}, got {t}")
    d, h, dh = config.d_model, config.n_heads, config.head_dim

    tok = ad.gather(leaves["encoder.emb.tok"], ids)                     # [B,T,d]
    pos = ad.reshape(leaves["encoder.emb.pos"], (1, t, d))
    x = ad.add(tok, pos)
    embeddings = x

    # additive attention bias: 0 on real keys, -inf on PAD keys
    key_bias = np.where(mask > 0, 0.0, -np.inf).astype(np.float32)
    key_bias = Tensor(key_bias.reshape(b, 1, 1, t))
    inv_sqrt_dh = float(1.0 / np.sqrt(dh))

    states: list[Tensor] = []
    for m in range(config.layers):
        pre = f"encoder.{m}"
        xn = ad.layer_norm(x, leaves[f"{pre}.ln1.g"], leaves[f"{pre}.ln1.b"])

        def heads(t_in: Tensor) -> Tensor:
            return ad.swapaxes(ad.reshape(t_in, (b, t, h, dh)), 1, 2)   # [B,H,T,dh]

        q = heads(ad.add(ad.matmul(xn, leaves[f"{pre}.attn.wq"]), leaves[f"{pre}.attn.bq"]))
        k = heads(ad.add(ad.matmul(xn, leaves[f"{pre}.attn.wk"]), leaves[f"{pre}.attn.bk"]))
        v = heads(ad.add(ad.matmul(xn, leaves[f"{pre}.attn.wv"]), leaves[f"{pre}.attn.bv"]))
        scores = ad.add(ad.mul(ad.matmul(q, ad.swapaxes(k, 2, 3)), inv_sqrt_dh), key_bias)
        ctx = ad.matmul(ad.softmax(scores, axis=-1), v)                 # [B,H,T,dh]
        ctx = ad.reshape(ad.swapaxes(ctx, 1, 2), (b, t, d))
        attn_out = ad.add(ad.matmul(ctx, leaves[f"{pre}.attn.wo"]), leaves[f"{pre}.attn.bo"])
        x = ad.add(x, attn_out)

        xn2 = ad.layer_norm(x, leaves[f"{pre}.ln2.g"], leaves[f"{pre}.ln2.b"])
        ff = ad.matmul(ad.gelu(ad.add(ad.matmul(xn2, leaves[f"{pre}.ff.w1"]),
                                      leaves[f"{pre}.ff.b1"])),
                       leaves[f"{pre}.ff.w2"])
        x = ad.add(x, ad.add(ff, leaves[f"{pre}.ff.b2"]))

        if adapter_hook is not None:
            x = adapter_hook(x, m)
        states.append(x)

    final = ad.layer_norm(x, leaves["encoder.ln_f.g"], leaves["encoder.ln_f.b"])
    return HiddenStates(embeddings=embeddings, layers=states, final=final)


def encode_seqs(params: ParamSet, seqs: Sequence[TokenSeq], config: EncoderConfig,
                adapter_hook: AdapterHook | None = None,
                grad: bool = False) -> tuple[HiddenStates, np.ndarray, np.ndarray]:
    """Convenience wrapper: pad, build leaves, encode. Returns (states, ids, mask)."""
    ids, mask = pad_batch(seqs, config)
    leaves = ad.make_leaves(params, grad=grad)
    return encode(leaves, ids, mask, config, adapter_hook), ids, mask


def span_pool_weights(spans: Sequence[tuple[int, int]], mask: np.ndarray) -> np.ndarray:
    """Per-example weights averaging an inclusive token span; PAD spans error."""
    b, t = mask.shape
    w = np.zeros((b, t), dtype=np.float32)
    for row, (i, j) in enumerate(spans):
        if not (0 <= i <= j < t):
            raise ValueError(f"span [{i},{j}] out of bounds for length {t}")
        if not np.all(mask[row, i:j + 1] > 0):
            raise ValueError(f"span [{i},{j}] touches PAD positions")
        w[row, i:j + 1] = 1.0 / (j - i + 1)
    return w


def sentence_pool_weights(ids: np.ndarray, mask: np.ndarray,
                          exclude: tuple[int, ...] = (PAD_ID, SEP_ID, MASK_ID)) -> np.ndarray:
    """Whole-sentence pooling weights; PAD, SEP and MASK never contribute."""
    keep = (mask > 0) & ~np.isin(ids, exclude)
    counts = keep.sum(axis=1)
    if np.any(counts == 0):
        raise ValueError("sentence has no poolable tokens (empty context)")
    return (keep / counts[:, None]).astype(np.float32)


def pool(x: Tensor, weights: np.ndarray) -> Tensor:
    """Weighted sum over the token axis: [B,T,d] x [B,T] -> [B,d]."""
    w = Tensor(weights[:, :, None])
    return ad.tsum(ad.mul(x, w), axis=1)


def mean_pool(hidden: np.ndarray, span: tuple[int, int], mask: np.ndarray) -> np.ndarray:
    """Arithmetic mean of final-layer vectors over an inclusive span."""
    h = np.asarray(hidden)
    if h.ndim != 2:
        raise ValueError(f"mean_pool expects [tokens, d], got shape {h.shape}")
    w = span_pool_weights([span], np.asarray(mask, dtype=np.float32).reshape(1, -1))
    i, j = span
    if i == j:
        return h[i].copy()
    return h[i:j + 1].mean(axis=0)


def mask_span(seq: TokenSeq, span: tuple[int, int]) -> TokenSeq:
    """Replace the whole span by exactly one MASK token."""
    i, j = span
    if not (0 <= i <= j < len(seq.ids)):
        raise ValueError(f"span [{i},{j}] invalid for sequence of length {len(seq.ids)}")
    if not all(seq.mask[i:j + 1]):
        raise ValueError(f"span [{i},{j}] touches PAD positions")
    ids = list(seq.ids[:i]) + [MASK_ID] + list(seq.ids[j + 1:])
    mask = list(seq.mask[:i]) + [1] + list(seq.mask[j + 1:])
    return TokenSeq(ids=ids, lang=seq.lang, mask=mask)


# ---------------------------------------------------------------------------
# masked language model pretraining
# ---------------------------------------------------------------------------

def make_mlm_batch(ids: np.ndarray, mask: np.ndarray, vocab_size: int,
                   rng: np.random.Generator, mask_rate: float):
    """Corrupt 80/10/10 over sampled positions; returns (corrupted, rows, cols, targets)."""
    real = mask > 0
    sel = (rng.random(ids.shape) < mask_rate) & real
    if not sel.any():
        rows = np.argwhere(real)
        sel[tuple(rows[0])] = True
    corrupted = ids.copy()
    rows, cols = np.nonzero(sel)
    targets = ids[rows, cols].copy()
    action = rng.random(len(rows))
    rand_tokens = rng.integers(len(SPECIAL_ID_RANGE), vocab_size, size=len(rows))
    corrupted[rows, cols] = np.where(
        action < 0.8, MASK_ID, np.where(action < 0.9, rand_tokens, targets))
    return corrupted, rows, cols, targets


def mlm_loss(leaves: dict[str, Tensor], corrupted: np.ndarray, mask: np.ndarray,
             rows: np.ndarray, cols: np.ndarray, targets: np.ndarray,
             config: EncoderConfig) -> Tensor:
    """Mean cross-entropy over the corrupted positions (tied output embedding)."""
    states = encode(leaves, corrupted, mask, config)
    b, t = corrupted.shape
    flat = ad.reshape(states.final, (b * t, config.d_model))
    picked = ad.gather(flat, rows * t + cols)                        # [S,d]
    logits = ad.add(ad.matmul(picked, ad.swapaxes(leaves["encoder.emb.tok"], 0, 1)),
                    leaves["encoder.mlm.b"])
    logp = ad.log_softmax(logits, axis=-1)
    onehot = np.zeros((len(targets), config.vocab_size), dtype=logp.dtype)
    onehot[np.arange(len(targets)), targets] = 1.0
    return ad.mul(ad.mean(ad.tsum(ad.mul(logp, Tensor(onehot)), axis=-1)), -1.0)


def mlm_pretrain(corpus: list[tuple[str, list[str]]], config: EncoderConfig,
                 hyper: TrainHyper, seed: int, vocab: Vocab
                 ) -> tuple[ParamSet, list[tuple[int, float, float]]]:
    """Train the backbone with MLM on a tokenized corpus; deterministic per seed."""
    if hyper.mask_rate <= 0:
        raise ValueError("MLM masking rate must be positive")
    if not corpus:
        raise ValueError("empty pretraining corpus")
    rng = np.random.default_rng(seed)
    params = init_encoder_params(config, rng)
    state = init_adam(params)
    seqs = [TokenSeq(ids=[vocab.id(t) for t in toks][:config.max_seq_len], lang=lang)
            for lang, toks in corpus]
    all_ids, all_mask = pad_batch(seqs, config)
    curve = []
    for step in range(1, hyper.steps + 1):
        pick = rng.integers(0, len(seqs), size=hyper.batch_size)
        ids, mask = all_ids[pick], all_mask[pick]
        corrupted, rows, cols, targets = make_mlm_batch(
            ids, mask, config.vocab_size, rng, hyper.mask_rate)
        loss, grads = ad.grad_eval(
            lambda lv: mlm_loss(lv, corrupted, mask, rows, cols, targets, config), params)
        lr = warmup_lr(step, hyper.base_lr, hyper.warmup_steps)
        adam_step(params, grads, state, lr)
        curve.append((step, lr, loss))
    return params, curve
