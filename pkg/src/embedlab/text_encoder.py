"""CLIP-style toy transformer text encoder.

Pre-norm residual blocks, multi-head scaled dot-product self-attention,
ReLU feed-forward, final layer norm. The causal mask and the padding mask
are independently toggleable: the CLIP-like configuration is causal=True,
pad_mask=False, which lets PAD rows absorb information from the semantic
tokens. Forward and backward passes are written out by hand so the encoder
can be trained jointly with the denoiser without an autodiff framework.
"""

from dataclasses import dataclass, field

import numpy as np

from .rng import Rng

BOS, EOS, PAD = 0, 1, 2
RESERVED = ("<bos>", "<eos>", "<pad>")
LN_EPS = 1e-5


class VocabularyError(ValueError):
    """A word is missing from the vocabulary."""


@dataclass(frozen=True)
class Vocabulary:
    words: tuple  # non-reserved words, in file order

    def __post_init__(self):
        if len(set(self.words)) != len(self.words):
            raise ValueError("duplicate words in vocabulary")

    @property
    def size(self) -> int:
        return len(RESERVED) + len(self.words)

    def word_id(self, word: str) -> int:
        try:
            return len(RESERVED) + self.words.index(word)
        except ValueError:
            raise VocabularyError(f"unknown word {word!r}") from None

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write("\n".join(self.words) + "\n")

    @staticmethod
    def load(path) -> "Vocabulary":
        with open(path, encoding="utf-8") as f:
            words = tuple(w.strip() for w in f if w.strip())
        return Vocabulary(words)


def default_vocabulary() -> Vocabulary:
    return Vocabulary(
        ("a", "photo", "of", "hbar", "vbar", "cross", "diag", "dim", "bright")
    )


@dataclass(frozen=True)
class TokenSeq:
    ids: tuple
    semantic_len: int  # positions BOS..EOS inclusive

    def __post_init__(self):
        if self.ids[0] != BOS or self.ids[self.semantic_len - 1] != EOS:
            raise ValueError("token sequence must be BOS ... EOS PAD*")
        if any(t != PAD for t in self.ids[self.semantic_len:]):
            raise ValueError("non-PAD token after EOS")


def tokenize(vocab: Vocabulary, text: str, max_len: int) -> TokenSeq:
    words = text.split()
    if len(words) > max_len - 2:
        raise ValueError(f"text has {len(words)} words, max is {max_len - 2}")
    ids = [BOS] + [vocab.word_id(w) for w in words] + [EOS]
    semantic_len = len(ids)
    ids += [PAD] * (max_len - semantic_len)
    return TokenSeq(ids=tuple(ids), semantic_len=semantic_len)


@dataclass(frozen=True)
class EncoderConfig:
    max_len: int = 16
    dim: int = 32
    n_blocks: int = 2
    n_heads: int = 2

    @staticmethod
    def clip_like() -> "EncoderConfig":
        return EncoderConfig(max_len=77, dim=32, n_blocks=2, n_heads=2)


@dataclass(frozen=True)
class TextEmbedding:
    data: np.ndarray  # L x D
    semantic_len: int


def init_encoder_params(cfg: EncoderConfig, vocab_size: int, rng: Rng) -> dict:
    """Gaussian(0, 0.02^2) weights; layer-norm gains 1, biases 0."""
    d = cfg.dim
    p = {
        "tok_emb": 0.02 * rng.normal((vocab_size, d)),
        "pos_emb": 0.02 * rng.normal((cfg.max_len, d)),
        "ln_f_g": np.ones(d),
        "ln_f_b": np.zeros(d),
    }
    for i in range(cfg.n_blocks):
        p[f"b{i}.ln1_g"] = np.ones(d)
        p[f"b{i}.ln1_b"] = np.zeros(d)
        p[f"b{i}.ln2_g"] = np.ones(d)
        p[f"b{i}.ln2_b"] = np.zeros(d)
        for w in ("wq", "wk", "wv", "wo"):
            p[f"b{i}.{w}"] = 0.02 * rng.normal((d, d))
        p[f"b{i}.w1"] = 0.02 * rng.normal((d, 4 * d))
        p[f"b{i}.w2"] = 0.02 * rng.normal((4 * d, d))
    return p


def _layer_norm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return g * xhat + b, (xhat, inv, g)


def _layer_norm_backward(dy, cache):
    xhat, inv, g = cache
    dg = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    db = dy.sum(axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * g
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - m1 - xhat * m2)
    return dx, dg, db


def _attention_allowed(ids: np.ndarray, causal: bool, pad_mask: bool) -> np.ndarray:
    """Boolean (B, L, L): may query position i attend to key position j."""
    b, l = ids.shape
    allowed = np.ones((b, l, l), dtype=bool)
    if causal:
        allowed &= np.tril(np.ones((l, l), dtype=bool))[None, :, :]
    if pad_mask:
        allowed &= (ids != PAD)[:, None, :]
    return allowed


def block_forward(params, cfg: EncoderConfig, i: int, x: np.ndarray,
                  allowed: np.ndarray, need_tape: bool = False):
    """One pre-norm transformer block; x is (B, L, D), allowed is (B, L, L)."""
    h = cfg.n_heads
    dh = cfg.dim // h
    scale = 1.0 / np.sqrt(dh)
    xn, ln1 = _layer_norm(x, params[f"b{i}.ln1_g"], params[f"b{i}.ln1_b"])
    q = xn @ params[f"b{i}.wq"]
    k = xn @ params[f"b{i}.wk"]
    v = xn @ params[f"b{i}.wv"]
    bsz, l, _ = q.shape
    qh = q.reshape(bsz, l, h, dh).transpose(0, 2, 1, 3)
    kh = k.reshape(bsz, l, h, dh).transpose(0, 2, 1, 3)
    vh = v.reshape(bsz, l, h, dh).transpose(0, 2, 1, 3)
    scores = np.einsum("bhid,bhjd->bhij", qh, kh) * scale
    scores = np.where(allowed[:, None, :, :], scores, -1e30)
    scores -= scores.max(axis=-1, keepdims=True)
    w = np.exp(scores)
    w /= w.sum(axis=-1, keepdims=True)
    ctx = np.einsum("bhij,bhjd->bhid", w, vh)
    merged = ctx.transpose(0, 2, 1, 3).reshape(bsz, l, cfg.dim)
    attn_out = merged @ params[f"b{i}.wo"]
    x1 = x + attn_out
    xn2, ln2 = _layer_norm(x1, params[f"b{i}.ln2_g"], params[f"b{i}.ln2_b"])
    pre = xn2 @ params[f"b{i}.w1"]
    act = np.maximum(pre, 0.0)
    out = x1 + act @ params[f"b{i}.w2"]
    if need_tape:
        return out, {"ln1": ln1, "xn": xn, "qh": qh, "kh": kh, "vh": vh,
                     "w": w, "merged": merged, "ln2": ln2, "xn2": xn2,
                     "pre": pre, "act": act}
    return out


def encode_batch(params, cfg: EncoderConfig, ids: np.ndarray,
                 causal: bool = True, pad_mask: bool = False,
                 need_tape: bool = False):
    """Encode a (B, L) id batch to (B, L, D); optionally keep a backprop tape."""
    ids = np.asarray(ids, dtype=np.int64)
    allowed = _attention_allowed(ids, causal, pad_mask)

    x = params["tok_emb"][ids] + params["pos_emb"][None, :, :]
    tape = {"ids": ids, "allowed": allowed, "blocks": []}
    for i in range(cfg.n_blocks):
        if need_tape:
            x, block_tape = block_forward(params, cfg, i, x, allowed,
                                          need_tape=True)
            tape["blocks"].append(block_tape)
        else:
            x = block_forward(params, cfg, i, x, allowed)
    out, ln_f = _layer_norm(x, params["ln_f_g"], params["ln_f_b"])
    if need_tape:
        tape["ln_f"] = ln_f
        return out, tape
    return out


def encode_backward(params, cfg: EncoderConfig, tape, dout) -> dict:
    """Gradients of all encoder parameters given d(loss)/d(output)."""
    h = cfg.n_heads
    dh = cfg.dim // h
    scale = 1.0 / np.sqrt(dh)
    grads = {k: np.zeros_like(v) for k, v in params.items()}

    dx, dg, db = _layer_norm_backward(dout, tape["ln_f"])
    grads["ln_f_g"] += dg
    grads["ln_f_b"] += db

    for i in reversed(range(cfg.n_blocks)):
        t = tape["blocks"][i]
        bsz, l, _ = dx.shape
        # feed-forward
        dact = dx @ params[f"b{i}.w2"].T
        grads[f"b{i}.w2"] += t["act"].reshape(-1, 4 * cfg.dim).T @ dx.reshape(-1, cfg.dim)
        dpre = dact * (t["pre"] > 0.0)
        grads[f"b{i}.w1"] += t["xn2"].reshape(-1, cfg.dim).T @ dpre.reshape(-1, 4 * cfg.dim)
        dxn2 = dpre @ params[f"b{i}.w1"].T
        dx1, dg, db = _layer_norm_backward(dxn2, t["ln2"])
        grads[f"b{i}.ln2_g"] += dg
        grads[f"b{i}.ln2_b"] += db
        dx1 += dx  # residual
        # attention
        dattn_out = dx1
        grads[f"b{i}.wo"] += t["merged"].reshape(-1, cfg.dim).T @ dattn_out.reshape(-1, cfg.dim)
        dmerged = dattn_out @ params[f"b{i}.wo"].T
        dctx = dmerged.reshape(bsz, l, h, dh).transpose(0, 2, 1, 3)
        dw = np.einsum("bhid,bhjd->bhij", dctx, t["vh"])
        dvh = np.einsum("bhij,bhid->bhjd", t["w"], dctx)
        w = t["w"]
        dscores = (dw - (dw * w).sum(axis=-1, keepdims=True)) * w
        dqh = np.einsum("bhij,bhjd->bhid", dscores, t["kh"]) * scale
        dkh = np.einsum("bhij,bhid->bhjd", dscores, t["qh"]) * scale
        dq = dqh.transpose(0, 2, 1, 3).reshape(bsz, l, cfg.dim)
        dk = dkh.transpose(0, 2, 1, 3).reshape(bsz, l, cfg.dim)
        dv = dvh.transpose(0, 2, 1, 3).reshape(bsz, l, cfg.dim)
        xn_flat = t["xn"].reshape(-1, cfg.dim)
        grads[f"b{i}.wq"] += xn_flat.T @ dq.reshape(-1, cfg.dim)
        grads[f"b{i}.wk"] += xn_flat.T @ dk.reshape(-1, cfg.dim)
        grads[f"b{i}.wv"] += xn_flat.T @ dv.reshape(-1, cfg.dim)
        dxn = (dq @ params[f"b{i}.wq"].T + dk @ params[f"b{i}.wk"].T
               + dv @ params[f"b{i}.wv"].T)
        dx0, dg, db = _layer_norm_backward(dxn, t["ln1"])
        grads[f"b{i}.ln1_g"] += dg
        grads[f"b{i}.ln1_b"] += db
        dx = dx0 + dx1  # residual

    ids = tape["ids"]
    np.add.at(grads["tok_emb"], ids.ravel(), dx.reshape(-1, cfg.dim))
    grads["pos_emb"] += dx.sum(axis=0)
    return grads


def encode(params, cfg: EncoderConfig, tokens: TokenSeq,
           causal: bool = True, pad_mask: bool = False) -> TextEmbedding:
    ids = np.asarray([tokens.ids], dtype=np.int64)
    out = encode_batch(params, cfg, ids, causal=causal, pad_mask=pad_mask)
    return TextEmbedding(data=out[0], semantic_len=tokens.semantic_len)
