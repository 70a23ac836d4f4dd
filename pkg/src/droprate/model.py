"""Minimal decoder-only transformer with one mutable dropout rate.

The architecture is the small-GPT standard: learned token + position
embeddings, pre-norm blocks of causal self-attention and a GELU MLP,
weight-tied output head. Dropout appears at 1 + 3*n_layer sites (embedding
sum, attention probabilities, attention residual, MLP residual) and every
site always carries the model's single current rate; `update_dropout`
rewrites them all at once, which is the whole trick that makes per-iteration
rate schedules possible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContextOverflowError, InvalidRateError, VocabularyError
from .rng import PURPOSE_INIT, RngState, stream_id
from .tensor import ParamStore, Tensor


@dataclass(frozen=True)
class ModelConfig:
    n_layer: int = 6
    n_head: int = 6
    n_embd: int = 384
    block_size: int = 256
    vocab_size: int = 65
    dropout_p: float = 0.2

    def __post_init__(self):
        for name in ("n_layer", "n_head", "n_embd"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.block_size < 2:
            raise ConfigError(f"block_size must be >= 2, got {self.block_size}")
        if self.vocab_size < 2:
            raise ConfigError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if self.n_embd % self.n_head != 0:
            raise ConfigError(f"n_embd={self.n_embd} is not divisible by n_head={self.n_head}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")


def _site_paths(n_layer: int) -> list[str]:
    paths = ["embed.drop"]
    for layer in range(n_layer):
        paths += [f"h{layer}.attn.attn_drop", f"h{layer}.attn.resid_drop", f"h{layer}.mlp.drop"]
    return paths


class GptModel:
    """Parameter store + config + the mutable global dropout rate."""

    def __init__(self, config: ModelConfig, seed: int = 0, params: ParamStore | None = None):
        self.config = config
        self.params = params if params is not None else _init_params(config, seed)
        self._rates = {path: config.dropout_p for path in _site_paths(config.n_layer)}
        self.current_dropout = config.dropout_p
        self.dropout_update_count = 0
        # additive causal mask: 0 on and below the diagonal, -1e9 above,
        # large enough that masked probabilities underflow to exactly 0
        mask = np.triu(np.full((config.block_size, config.block_size), -1e9, dtype=np.float32), k=1)
        self._causal_mask = mask

    @property
    def dropout_sites(self) -> int:
        return 1 + 3 * self.config.n_layer

    def update_dropout(self, p: float) -> "GptModel":
        """Set the rate at every dropout site; parameters are untouched."""
        p = float(p)
        if not 0.0 <= p < 1.0:
            raise InvalidRateError(f"dropout rate must be in [0, 1), got {p}")
        for path in self._rates:
            self._rates[path] = p
        self.current_dropout = p
        self.dropout_update_count += 1
        return self

    def site_rates(self) -> list[tuple[str, float]]:
        return list(self._rates.items())

    def _drop(self, x: Tensor, site: str, training: bool, rng: RngState | None) -> Tensor:
        return T.dropout(x, self._rates[site], training, rng)

    def forward(
        self,
        tokens: np.ndarray,
        targets: np.ndarray | None = None,
        training: bool = False,
        rng: RngState | None = None,
    ) -> tuple[Tensor, Tensor | None]:
        """Run the stack; returns (logits [B, S, V], mean loss or None)."""
        cfg = self.config
        tokens = np.asarray(tokens)
        if tokens.ndim != 2:
            raise ConfigError(f"tokens must be [batch, seq], got shape {tokens.shape}")
        b, s = tokens.shape
        if s > cfg.block_size:
            raise ContextOverflowError(f"sequence length {s} exceeds block size {cfg.block_size}")
        if tokens.size and (tokens.min() < 0 or tokens.max() >= cfg.vocab_size):
            raise VocabularyError(f"token id out of range for vocabulary of size {cfg.vocab_size}")

        p = self.params
        hs = cfg.n_embd // cfg.n_head
        tok = T.embedding_lookup(p["wte"], tokens)
        pos = T.embedding_lookup(p["wpe"], np.arange(s))
        x = self._drop(T.add(tok, pos), "embed.drop", training, rng)

        mask = Tensor(self._causal_mask[:s, :s])
        for layer in range(cfg.n_layer):
            pre = f"h{layer}"
            h = T.layer_norm(x, p[f"{pre}.ln1.gain"], p[f"{pre}.ln1.bias"])
            qkv = T.add(T.matmul(h, p[f"{pre}.attn.w_qkv"]), p[f"{pre}.attn.b_qkv"])
            q = T.slice_lastdim(qkv, 0, cfg.n_embd)
            k = T.slice_lastdim(qkv, cfg.n_embd, 2 * cfg.n_embd)
            v = T.slice_lastdim(qkv, 2 * cfg.n_embd, 3 * cfg.n_embd)
            heads = []
            for i in range(cfg.n_head):
                qi = T.slice_lastdim(q, i * hs, (i + 1) * hs)
                ki = T.slice_lastdim(k, i * hs, (i + 1) * hs)
                vi = T.slice_lastdim(v, i * hs, (i + 1) * hs)
                att = T.scale(T.matmul(qi, T.transpose_last2(ki)), 1.0 / math.sqrt(hs))
                att = T.softmax_lastdim(T.add(att, mask))
                att = self._drop(att, f"{pre}.attn.attn_drop", training, rng)
                heads.append(T.matmul(att, vi))
            y = T.concat_lastdim(heads) if len(heads) > 1 else heads[0]
            y = T.add(T.matmul(y, p[f"{pre}.attn.w_proj"]), p[f"{pre}.attn.b_proj"])
            x = T.add(x, self._drop(y, f"{pre}.attn.resid_drop", training, rng))

            h2 = T.layer_norm(x, p[f"{pre}.ln2.gain"], p[f"{pre}.ln2.bias"])
            m = T.gelu(T.add(T.matmul(h2, p[f"{pre}.mlp.w_fc"]), p[f"{pre}.mlp.b_fc"]))
            m = T.add(T.matmul(m, p[f"{pre}.mlp.w_proj"]), p[f"{pre}.mlp.b_proj"])
            x = T.add(x, self._drop(m, f"{pre}.mlp.drop", training, rng))

        x = T.layer_norm(x, p["lnf.gain"], p["lnf.bias"])
        logits = T.matmul(x, T.transpose_last2(p["wte"]))  # tied output head
        loss = T.cross_entropy_mean(logits, targets) if targets is not None else None
        return logits, loss

    def generate(
        self,
        prompt: np.ndarray,
        max_new: int,
        temperature: float = 1.0,
        top_k: int | None = None,
        rng: RngState | None = None,
    ) -> np.ndarray:
        """Autoregressive sampling in eval mode; returns prompt + max_new ids."""
        prompt = np.asarray(prompt).reshape(-1)
        if prompt.size == 0:
            raise ConfigError("prompt must contain at least one token")
        if temperature <= 0.0:
            raise ConfigError(f"temperature must be > 0, got {temperature}")
        if top_k is not None and top_k < 1:
            raise ConfigError(f"top_k must be >= 1, got {top_k}")
        if rng is None:
            rng = RngState(0, stream_id(5))

        out = [int(t) for t in prompt]
        for _ in range(max_new):
            ctx = np.array([out[-self.config.block_size :]], dtype=np.int64)
            logits, _ = self.forward(ctx, training=False)
            last = logits.data[0, -1].astype(np.float64) / temperature
            if top_k == 1:
                out.append(int(np.argmax(last)))
                continue
            if top_k is not None and top_k < last.size:
                cutoff = np.sort(last)[-top_k]
                last = np.where(last < cutoff, -np.inf, last)
            z = last - last.max()
            probs = np.exp(z)
            probs /= probs.sum()
            u = float(rng.uniform(()))
            out.append(int(min(np.searchsorted(np.cumsum(probs), u, side="right"), last.size - 1)))
        return np.array(out, dtype=np.int64)


def _init_params(cfg: ModelConfig, seed: int) -> ParamStore:
    """Gaussian(0, 0.02) weights, residual projections scaled down by sqrt(2L), zero biases."""
    rng = RngState(seed, stream_id(PURPOSE_INIT))
    store = ParamStore()
    c, std = cfg.n_embd, 0.02
    resid_std = std / math.sqrt(2 * cfg.n_layer)

    store.add("wte", rng.normal((cfg.vocab_size, c), std))
    store.add("wpe", rng.normal((cfg.block_size, c), std))
    for layer in range(cfg.n_layer):
        pre = f"h{layer}"
        store.add(f"{pre}.ln1.gain", np.ones(c, dtype=np.float32))
        store.add(f"{pre}.ln1.bias", np.zeros(c, dtype=np.float32))
        store.add(f"{pre}.attn.w_qkv", rng.normal((c, 3 * c), std))
        store.add(f"{pre}.attn.b_qkv", np.zeros(3 * c, dtype=np.float32))
        store.add(f"{pre}.attn.w_proj", rng.normal((c, c), resid_std))
        store.add(f"{pre}.attn.b_proj", np.zeros(c, dtype=np.float32))
        store.add(f"{pre}.ln2.gain", np.ones(c, dtype=np.float32))
        store.add(f"{pre}.ln2.bias", np.zeros(c, dtype=np.float32))
        store.add(f"{pre}.mlp.w_fc", rng.normal((c, 4 * c), std))
        store.add(f"{pre}.mlp.b_fc", np.zeros(4 * c, dtype=np.float32))
        store.add(f"{pre}.mlp.w_proj", rng.normal((4 * c, c), resid_std))
        store.add(f"{pre}.mlp.b_proj", np.zeros(c, dtype=np.float32))
    store.add("lnf.gain", np.ones(c, dtype=np.float32))
    store.add("lnf.bias", np.zeros(c, dtype=np.float32))
    return store
