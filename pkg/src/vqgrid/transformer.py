"""Decoder-only causal transformer over codebook-index sequences.

Pre-norm residual blocks with learned absolute positional embeddings. One
shared embedding table covers the concatenated vocabulary: data codes,
spatial-condition codes, class tokens, a beginning-of-sequence token, and
(optionally) window-coordinate tokens — disjoint index ranges, so tokens
never collide. The output head starts at zero, making an untrained model
exactly uniform over the vocabulary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError
from .layers import Embedding, Layer, LayerNorm, Linear, collect
from .quantizer import IndexGrid
from .scan_orders import ScanOrder, flatten
from .tensor import Tensor

COORD_BUCKETS = 32


@dataclass
class TransformerConfig:
    K: int = 256
    seq_len: int = 257
    n_layers: int = 8
    n_heads: int = 8
    d_model: int = 256
    d_ff: int = 1024
    dropout: float = 0.0
    K_cond: int = 0
    n_classes: int = 0
    use_coords: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ConfigError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.K < 1 or self.seq_len < 2:
            raise ConfigError("need K >= 1 and seq_len >= 2")

    @property
    def class_base(self) -> int:
        return self.K + self.K_cond

    @property
    def bos_token(self) -> int:
        return self.class_base + self.n_classes

    @property
    def coord_base(self) -> int:
        return self.bos_token + 1

    @property
    def vocab_size(self) -> int:
        return self.coord_base + (2 * COORD_BUCKETS if self.use_coords else 0)

    def class_token(self, label: int) -> int:
        if not 0 <= label < self.n_classes:
            raise ConfigError(
                f"class label {label} overflows the {self.n_classes}-class vocabulary")
        return self.class_base + label

    def coord_tokens(self, r_bucket: int, c_bucket: int) -> tuple[int, int]:
        if not self.use_coords:
            raise ConfigError("coordinate tokens requested but use_coords is off")
        return self.coord_base + r_bucket, self.coord_base + COORD_BUCKETS + c_bucket

    def to_mapping(self) -> dict:
        return {"K": self.K, "seq_len": self.seq_len, "n_layers": self.n_layers,
                "n_heads": self.n_heads, "d_model": self.d_model, "d_ff": self.d_ff,
                "dropout": self.dropout, "K_cond": self.K_cond,
                "n_classes": self.n_classes, "use_coords": self.use_coords,
                "seed": self.seed}

    @classmethod
    def from_mapping(cls, d: dict) -> "TransformerConfig":
        return cls(**dict(d))


@dataclass
class TokenSequence:
    """Tokens plus per-token condition/data tags and grid bookkeeping."""

    tokens: np.ndarray
    data_mask: np.ndarray  # True where the token is a data (grid) token
    grid_shape: tuple[int, int]
    order_kind: str | None = None

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        self.data_mask = np.asarray(self.data_mask, dtype=bool)
        if self.tokens.shape != self.data_mask.shape or self.tokens.ndim != 1:
            raise ContractError("tokens and data_mask must be equal-length 1-D arrays")
        in_data = False
        for is_data in self.data_mask:
            if in_data and not is_data:
                raise ContractError("condition tokens must form a contiguous prefix")
            in_data = in_data or is_data

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def prefix_len(self) -> int:
        return int(np.argmax(self.data_mask)) if self.data_mask.any() else len(self.tokens)


def make_unconditional(data: IndexGrid, order: ScanOrder,
                       cfg: TransformerConfig) -> TokenSequence:
    """BOS token followed by the flattened grid; every grid token counts."""
    if data.K > cfg.K:
        raise ConfigError(f"grid vocabulary {data.K} exceeds configured K={cfg.K}")
    seq = flatten(data, order)
    tokens = np.concatenate([[cfg.bos_token], seq])
    mask = np.concatenate([[False], np.ones(len(seq), dtype=bool)])
    return TokenSequence(tokens, mask, (data.h, data.w), order.kind)


def make_conditional(cond, data: IndexGrid, data_order: ScanOrder,
                     cond_order: ScanOrder | None, cfg: TransformerConfig) -> TokenSequence:
    """Prefix the condition (class token or flattened spatial grid) to the data.

    Spatial-condition indices are offset into their own vocabulary range; the
    likelihood later excludes every prefix position.
    """
    if isinstance(cond, (int, np.integer)):
        prefix = np.array([cfg.class_token(int(cond))], dtype=np.int64)
    elif isinstance(cond, IndexGrid):
        if cond.K > cfg.K_cond:
            raise ConfigError(
                f"condition vocabulary {cond.K} exceeds configured K_cond={cfg.K_cond}")
        if cond_order is None:
            raise ContractError("spatial condition needs its own scan order")
        if cond_order.kind != data_order.kind:
            raise ContractError(
                f"condition and data must share one scan-order kind; "
                f"got {cond_order.kind} vs {data_order.kind}")
        prefix = flatten(cond, cond_order) + cfg.K
    else:
        raise ContractError(f"condition must be an int label or IndexGrid, got {type(cond)}")
    seq = flatten(data, data_order)
    tokens = np.concatenate([prefix, seq])
    mask = np.concatenate([np.zeros(len(prefix), dtype=bool),
                           np.ones(len(seq), dtype=bool)])
    return TokenSequence(tokens, mask, (data.h, data.w), data_order.kind)


def causal_mask(n: int) -> np.ndarray:
    """(n, n) additive mask: 0 where j <= i, -inf where j > i (future)."""
    m = np.zeros((n, n))
    m[np.triu_indices(n, k=1)] = -np.inf
    return m


def causal_attention(Q: Tensor, K: Tensor, V: Tensor) -> Tensor:
    """softmax(Q K^t / sqrt(d_k) + M) V with future positions masked out."""
    if Q.ndim != 2 or K.ndim != 2 or V.ndim != 2:
        raise ContractError("causal_attention expects 2-D Q, K, V")
    n, d_k = Q.shape
    scores = (Q @ T.transpose(K)) * (1.0 / np.sqrt(d_k)) + Tensor(causal_mask(n))
    return T.softmax(scores, axis=-1) @ V


class Block(Layer):
    def __init__(self, cfg: TransformerConfig, rng):
        d = cfg.d_model
        self.ln1 = LayerNorm(d)
        self.wq = Linear(d, d, rng, scale=0.02)
        self.wk = Linear(d, d, rng, scale=0.02)
        self.wv = Linear(d, d, rng, scale=0.02)
        self.wo = Linear(d, d, rng, scale=0.02)
        self.ln2 = LayerNorm(d)
        self.fc1 = Linear(d, cfg.d_ff, rng, scale=0.02)
        self.fc2 = Linear(cfg.d_ff, d, rng, scale=0.02)
        self.n_heads = cfg.n_heads
        self.head_dim = d // cfg.n_heads

    def _heads(self, x: Tensor, B: int, N: int) -> Tensor:
        x = T.reshape(x, (B, N, self.n_heads, self.head_dim))
        return T.reshape(T.transpose(x, (0, 2, 1, 3)), (B * self.n_heads, N, self.head_dim))

    def __call__(self, x: Tensor, mask: Tensor, dropout: float = 0.0, rng=None) -> Tensor:
        B, N, D = x.shape
        h = self.ln1(x)
        q = self._heads(self.wq(h), B, N)
        k = self._heads(self.wk(h), B, N)
        v = self._heads(self.wv(h), B, N)
        scores = (q @ T.transpose(k, (0, 2, 1))) * (1.0 / np.sqrt(self.head_dim)) + mask
        att = T.softmax(scores, axis=-1)
        out = att @ v
        out = T.reshape(T.transpose(T.reshape(
            out, (B, self.n_heads, N, self.head_dim)), (0, 2, 1, 3)), (B, N, D))
        out = self.wo(out)
        if dropout > 0.0:
            out = T.dropout(out, dropout, rng)
        x = x + out
        h2 = self.fc2(T.silu(self.fc1(self.ln2(x))))
        if dropout > 0.0:
            h2 = T.dropout(h2, dropout, rng)
        return x + h2

    def named_params(self):
        return collect({"ln1": self.ln1, "wq": self.wq, "wk": self.wk, "wv": self.wv,
                        "wo": self.wo, "ln2": self.ln2, "fc1": self.fc1, "fc2": self.fc2})


class LatentTransformer(Layer):
    def __init__(self, cfg: TransformerConfig):
        self.config = cfg
        rng = np.random.default_rng(cfg.seed)
        self.tok_emb = Embedding(cfg.vocab_size, cfg.d_model, rng)
        self.pos_emb = Embedding(cfg.seq_len, cfg.d_model, rng)
        self.blocks = [Block(cfg, rng) for _ in range(cfg.n_layers)]
        self.ln_f = LayerNorm(cfg.d_model)
        self.head = Linear(cfg.d_model, cfg.vocab_size, rng, zero_init=True)

    def named_params(self):
        children: dict[str, Layer] = {"tok_emb": self.tok_emb, "pos_emb": self.pos_emb}
        for i, b in enumerate(self.blocks):
            children[f"block{i}"] = b
        children["ln_f"] = self.ln_f
        children["head"] = self.head
        return collect(children)

    def trainable_params(self):
        return [p for p in self.named_params().values() if p.requires_grad]

    def forward(self, tokens: np.ndarray, train_rng=None) -> Tensor:
        """Token ids (B, N) to next-token logits (B, N, vocab)."""
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim == 1:
            tokens = tokens[None, :]
        B, N = tokens.shape
        if N > self.config.seq_len:
            raise ContractError(
                f"sequence length {N} exceeds configured seq_len {self.config.seq_len}")
        if tokens.min() < 0 or tokens.max() >= self.config.vocab_size:
            raise ContractError("token id outside the vocabulary")
        x = self.tok_emb(tokens) + self.pos_emb(np.arange(N))
        mask = Tensor(causal_mask(N))
        drop = self.config.dropout if train_rng is not None else 0.0
        for block in self.blocks:
            x = block(x, mask, dropout=drop, rng=train_rng)
        return self.head(self.ln_f(x))


def forward_logits(seq: TokenSequence, model: LatentTransformer) -> Tensor:
    """Logits for one sequence; row i parameterizes p(next | tokens <= i)."""
    out = model.forward(seq.tokens[None, :])
    return T.reshape(out, (len(seq), model.config.vocab_size))


def _stack(seqs: list[TokenSequence]) -> tuple[np.ndarray, np.ndarray]:
    lengths = {len(s) for s in seqs}
    if len(lengths) != 1:
        raise ContractError(f"batched sequences must share one length, got {sorted(lengths)}")
    return (np.stack([s.tokens for s in seqs]),
            np.stack([s.data_mask for s in seqs]))


def nll_loss(seqs: TokenSequence | list[TokenSequence], model: LatentTransformer,
             train_rng=None) -> Tensor:
    """Mean negative log-likelihood per data token, as a differentiable scalar.

    Positions whose target lies in the condition prefix are excluded.
    """
    if isinstance(seqs, TokenSequence):
        seqs = [seqs]
    tokens, mask = _stack(seqs)
    if not mask.any():
        raise ContractError("need at least one data token")
    logits = model.forward(tokens, train_rng=train_rng)
    # position t predicts token t+1; a target counts if it is a data token
    targets = np.roll(tokens, -1, axis=1)
    tmask = np.roll(mask, -1, axis=1).astype(float)
    tmask[:, -1] = 0.0
    logp = T.take_along_last(T.log_softmax(logits, axis=-1), targets)
    return -(logp * Tensor(tmask)).sum() / float(tmask.sum())


def nll(seqs, model: LatentTransformer) -> float:
    """Evaluation-only mean NLL in nats per data token."""
    with T.no_grad():
        return float(nll_loss(seqs, model).data)


def format_token_sequence(seq: TokenSequence) -> str:
    """Text export: one int per line, a lone '|' closing the condition prefix."""
    lines = [str(int(t)) for t in seq.tokens[:seq.prefix_len]]
    lines.append("|")
    lines += [str(int(t)) for t in seq.tokens[seq.prefix_len:]]
    return "\n".join(lines) + "\n"


def parse_token_sequence(text: str, grid_shape: tuple[int, int],
                         order_kind: str | None = None) -> TokenSequence:
    prefix: list[int] = []
    data: list[int] = []
    seen_bar = False
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line == "|":
            if seen_bar:
                raise ContractError("token sequence text has two '|' delimiters")
            seen_bar = True
            continue
        (data if seen_bar else prefix).append(int(line))
    if not seen_bar:
        raise ContractError("token sequence text is missing the '|' delimiter")
    tokens = np.array(prefix + data, dtype=np.int64)
    mask = np.array([False] * len(prefix) + [True] * len(data), dtype=bool)
    return TokenSequence(tokens, mask, grid_shape, order_kind)


# -- incremental decoding -------------------------------------------------


def _ln_np(x, gamma, beta, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    c = x - mu
    var = (c * c).mean(axis=-1, keepdims=True)
    return c / np.sqrt(var + eps) * gamma + beta


def _silu_np(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = x[pos] / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = x[~pos] * ex / (1.0 + ex)
    return out


class CachedDecoder:
    """Append-only token decoding with per-layer key/value caches.

    Pure-numpy inference path mirroring ``LatentTransformer.forward`` one
    position at a time; per-step cost grows linearly in the prefix instead of
    re-running the whole sequence.
    """

    def __init__(self, model: LatentTransformer):
        self.model = model
        self.cfg = model.config
        self.reset()

    def reset(self) -> None:
        self.t = 0
        H = self.cfg.n_heads
        hd = self.cfg.d_model // H
        self._k = [np.empty((H, 0, hd)) for _ in self.model.blocks]
        self._v = [np.empty((H, 0, hd)) for _ in self.model.blocks]

    def append(self, token: int) -> np.ndarray:
        """Feed one token; returns the next-token logits at this position."""
        if self.t >= self.cfg.seq_len:
            raise ContractError(f"decode position {self.t} exceeds seq_len {self.cfg.seq_len}")
        m = self.model
        H = self.cfg.n_heads
        hd = self.cfg.d_model // H
        x = m.tok_emb.table.data[int(token)] + m.pos_emb.table.data[self.t]
        x = x[None, :]  # (1, d)
        for i, b in enumerate(m.blocks):
            h = _ln_np(x, b.ln1.gamma.data, b.ln1.beta.data)
            q = (h @ b.wq.w.data + b.wq.b.data).reshape(H, 1, hd)
            k = (h @ b.wk.w.data + b.wk.b.data).reshape(H, 1, hd)
            v = (h @ b.wv.w.data + b.wv.b.data).reshape(H, 1, hd)
            self._k[i] = np.concatenate([self._k[i], k], axis=1)
            self._v[i] = np.concatenate([self._v[i], v], axis=1)
            scores = (q @ self._k[i].transpose(0, 2, 1)) / np.sqrt(hd)  # (H, 1, t+1)
            scores -= scores.max(axis=-1, keepdims=True)
            w = np.exp(scores)
            w /= w.sum(axis=-1, keepdims=True)
            out = (w @ self._v[i]).reshape(1, H * hd)
            x = x + out @ b.wo.w.data + b.wo.b.data
            h2 = _ln_np(x, b.ln2.gamma.data, b.ln2.beta.data)
            h2 = _silu_np(h2 @ b.fc1.w.data + b.fc1.b.data) @ b.fc2.w.data + b.fc2.b.data
            x = x + h2
        self.t += 1
        x = _ln_np(x, m.ln_f.gamma.data, m.ln_f.beta.data)
        return (x @ m.head.w.data + m.head.b.data)[0]

    def prefill(self, tokens) -> np.ndarray:
        """Feed a whole prefix; returns the logits after its last token."""
        logits = None
        for tok in tokens:
            logits = self.append(int(tok))
        if logits is None:
            raise ContractError("prefill needs at least one token")
        return logits
