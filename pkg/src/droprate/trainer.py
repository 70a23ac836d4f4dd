"""Training loop, AdamW, loss estimation, checkpoints, throughput timing.

One iteration = set the scheduled dropout rate, sample a batch, forward in
training mode, backward, clip the global gradient norm, AdamW step. All
randomness is drawn from streams derived from (seed, purpose, iteration),
so a run resumed from a checkpoint replays the exact batches and masks the
uninterrupted run would have seen.
"""

from __future__ import annotations

import json
import math
import struct
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from .data import SplitDataset, Vocab, sample_batch
from .errors import CheckpointError, DivergenceError, StateError
from .model import GptModel, ModelConfig
from .rng import (
    PURPOSE_BATCH,
    PURPOSE_DROPOUT,
    PURPOSE_EVAL_TRAIN,
    PURPOSE_EVAL_VAL,
    RngState,
    stream_id,
)
from .schedule import AdaptiveState, ScheduleConfig, ScheduleKind, adaptive_update, rate_at
from .tensor import ParamStore, backward


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig
    schedule_kind: ScheduleKind = ScheduleKind.CONSTANT
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    batch_size: int = 64
    learning_rate: float = 1e-3
    max_iters: int = 5000
    eval_interval: int = 250
    eval_iters: int = 20
    weight_decay: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.99
    grad_clip: float = 1.0
    seed: int = 1337
    cosine_lr: bool = False  # optional LR anneal, off so dropout effects stay unconfounded

    def __post_init__(self):
        if self.learning_rate <= 0.0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.eval_iters < 1:
            raise ValueError(f"eval_iters must be >= 1, got {self.eval_iters}")
        if not 1 <= self.eval_interval <= self.max_iters:
            raise ValueError(f"need 1 <= eval_interval <= max_iters, got {self.eval_interval} vs {self.max_iters}")
        self.schedule.validate_for(self.schedule_kind)


@dataclass(frozen=True)
class MetricsRecord:
    iter: int
    train_loss: float
    val_loss: float
    dropout_p: float
    elapsed: float


METRICS_CSV_HEADER = "iter,train_loss,val_loss,dropout_p,elapsed_s"


def format_metrics_row(r: MetricsRecord) -> str:
    # losses at 4 decimals, elapsed at 2; dropout_p uses repr so the CSV
    # round-trips the scheduled rate bit-exactly
    return f"{r.iter},{r.train_loss:.4f},{r.val_loss:.4f},{r.dropout_p!r},{r.elapsed:.2f}"


@dataclass
class RunResult:
    metrics: list[MetricsRecord]
    final_train_loss: float
    best_val_loss: float
    total_train_seconds: float
    checkpoint_path: str | None
    update_dropout_calls: int


class AdamW:
    """Decoupled weight decay Adam. Decay skips biases and layer-norm gains."""

    def __init__(self, params: ParamStore, lr: float, beta1: float = 0.9, beta2: float = 0.99,
                 eps: float = 1e-8, weight_decay: float = 0.1):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    @staticmethod
    def decays(name: str) -> bool:
        return not (name.endswith(".bias") or name.endswith(".gain"))

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                raise StateError(f"optimizer step before backward: no gradient for {name!r}")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay and self.decays(name):
                update = update + self.weight_decay * p.data
            p.data -= np.asarray(self.lr * update, dtype=p.data.dtype)


def clip_global_norm(params: ParamStore, max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    total = 0.0
    for _, p in params.items():
        if p.grad is not None:
            total += float(np.sum(np.square(p.grad, dtype=np.float64)))
    norm = math.sqrt(total)
    if max_norm > 0.0 and norm > max_norm:
        factor = np.asarray(max_norm / norm, dtype=np.float32)
        for _, p in params.items():
            if p.grad is not None:
                p.grad *= factor
    return norm


def estimate_loss(model: GptModel, ds: SplitDataset, split: str, eval_iters: int,
                  batch_size: int, rng: RngState) -> float:
    """Mean eval-mode loss over eval_iters independent batches."""
    losses = np.empty(eval_iters, dtype=np.float64)
    for i in range(eval_iters):
        x, y = sample_batch(ds, split, batch_size, model.config.block_size, rng)
        _, loss = model.forward(x, y, training=False)
        losses[i] = float(loss.data)
    return float(losses.mean())


def measure_inference_speed(model: GptModel, prompt: np.ndarray, n_tokens: int, rng: RngState) -> float:
    """Tokens per second of wall-clock generation, model load excluded."""
    t0 = time.perf_counter()
    model.generate(prompt, n_tokens, temperature=1.0, top_k=None, rng=rng)
    return n_tokens / (time.perf_counter() - t0)


def train(
    cfg: TrainConfig,
    ds: SplitDataset,
    sink=None,
    *,
    checkpoint_path: str | None = None,
    resume_from: "Checkpoint | str | None" = None,
) -> RunResult:
    """Run the loop for cfg.max_iters iterations.

    The dropout rate is recomputed and pushed into the model before every
    forward pass. Evaluation happens at every eval_interval-th iteration and
    at the final one, emitting a MetricsRecord to `sink`; the adaptive
    schedule consumes the fresh validation loss at those same boundaries.
    """
    seed = cfg.seed
    adaptive = AdaptiveState.fresh(cfg.schedule) if cfg.schedule_kind is ScheduleKind.VAL_LOSS_ADAPTIVE else None
    start_iter = 0

    if resume_from is not None:
        ckpt = load_checkpoint(resume_from) if isinstance(resume_from, str) else resume_from
        if ckpt.config != cfg.model:
            raise CheckpointError(f"checkpoint model config {ckpt.config} does not match {cfg.model}")
        model = GptModel(cfg.model, params=ckpt.restore_params())
        model.update_dropout(ckpt.current_dropout)
        model.dropout_update_count = 0
        optimizer = AdamW(model.params, cfg.learning_rate, cfg.beta1, cfg.beta2, weight_decay=cfg.weight_decay)
        ckpt.restore_optimizer(optimizer)
        if ckpt.adaptive is not None:
            adaptive = ckpt.adaptive
        start_iter = ckpt.iteration
    else:
        model = GptModel(cfg.model, seed=seed)
        optimizer = AdamW(model.params, cfg.learning_rate, cfg.beta1, cfg.beta2, weight_decay=cfg.weight_decay)

    records: list[MetricsRecord] = []
    start = time.perf_counter()

    for t in range(start_iter, cfg.max_iters):
        p = rate_at(cfg.schedule_kind, t, cfg.schedule, adaptive)
        model.update_dropout(p)
        if cfg.cosine_lr:
            optimizer.lr = cfg.learning_rate * 0.5 * (1.0 + math.cos(math.pi * t / cfg.max_iters))

        if t % cfg.eval_interval == 0 or t == cfg.max_iters - 1:
            train_loss = estimate_loss(model, ds, "train", cfg.eval_iters, cfg.batch_size,
                                       RngState(seed, stream_id(PURPOSE_EVAL_TRAIN, t)))
            val_loss = estimate_loss(model, ds, "val", cfg.eval_iters, cfg.batch_size,
                                     RngState(seed, stream_id(PURPOSE_EVAL_VAL, t)))
            if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
                raise DivergenceError(t, f"non-finite evaluation loss at iteration {t}")
            record = MetricsRecord(t, train_loss, val_loss, p, time.perf_counter() - start)
            records.append(record)
            if sink is not None:
                sink(record)
            if adaptive is not None:
                adaptive, _ = adaptive_update(adaptive, val_loss, cfg.schedule)

        x, y = sample_batch(ds, "train", cfg.batch_size, cfg.model.block_size,
                            RngState(seed, stream_id(PURPOSE_BATCH, t)))
        model.params.zero_grad()
        _, loss = model.forward(x, y, training=True, rng=RngState(seed, stream_id(PURPOSE_DROPOUT, t)))
        if not math.isfinite(float(loss.data)):
            raise DivergenceError(t)
        backward(loss)
        clip_global_norm(model.params, cfg.grad_clip)
        optimizer.step()

    total = time.perf_counter() - start
    if checkpoint_path is not None:
        save_checkpoint(model, optimizer, cfg.max_iters, checkpoint_path,
                        seed=seed, adaptive=adaptive, vocab=ds.vocab)

    return RunResult(
        metrics=records,
        final_train_loss=records[-1].train_loss,
        best_val_loss=min(r.val_loss for r in records),
        total_train_seconds=total,
        checkpoint_path=checkpoint_path,
        update_dropout_calls=model.dropout_update_count,
    )


# ---------------------------------------------------------------------------
# checkpoint format: magic, u32 header length, JSON header, then every tensor
# the header declares, in order, as raw little-endian float32

_MAGIC = b"DDGPT1\x00"
_VERSION = 1


@dataclass
class Checkpoint:
    config: ModelConfig
    iteration: int
    current_dropout: float
    seed: int
    adaptive: AdaptiveState | None
    vocab: Vocab | None
    tensors: dict[str, np.ndarray]  # keys are "role:name" with roles param/adam_m/adam_v
    adam_t: int

    def restore_params(self) -> ParamStore:
        store = ParamStore()
        for key, arr in self.tensors.items():
            role, name = key.split(":", 1)
            if role == "param":
                store.add(name, arr.copy())
        return store

    def restore_optimizer(self, optimizer: AdamW) -> None:
        optimizer.t = self.adam_t
        for key, arr in self.tensors.items():
            role, name = key.split(":", 1)
            if role == "adam_m":
                optimizer.m[name] = arr.copy()
            elif role == "adam_v":
                optimizer.v[name] = arr.copy()


def save_checkpoint(
    model: GptModel,
    optimizer: AdamW | None,
    iteration: int,
    path: str,
    *,
    seed: int = 0,
    adaptive: AdaptiveState | None = None,
    vocab: Vocab | None = None,
) -> None:
    entries = [("param", name, p.data) for name, p in model.params.items()]
    if optimizer is not None:
        entries += [("adam_m", name, optimizer.m[name]) for name, _ in model.params.items()]
        entries += [("adam_v", name, optimizer.v[name]) for name, _ in model.params.items()]

    header = {
        "version": _VERSION,
        "config": asdict(model.config),
        "iteration": int(iteration),
        "current_dropout": float(model.current_dropout),
        "rng": {"seed": int(seed)},
        "adam_t": int(optimizer.t) if optimizer is not None else 0,
        "adaptive": None
        if adaptive is None
        else {"current_p": adaptive.current_p, "best_val_loss": adaptive.best_val_loss, "evals_seen": adaptive.evals_seen},
        "vocab": "".join(vocab.chars) if vocab is not None else None,
        "tensors": [{"role": role, "name": name, "shape": list(arr.shape)} for role, name, arr in entries],
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, _, arr in entries:
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(_MAGIC) + 4 or raw[: len(_MAGIC)] != _MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (hlen,) = struct.unpack_from("<I", raw, len(_MAGIC))
    body = len(_MAGIC) + 4
    if len(raw) < body + hlen:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[body : body + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: unreadable header ({e})") from None
    if header.get("version") != _VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {header.get('version')!r}")

    offset = body + hlen
    tensors: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape)) * 4 if shape else 4
        if len(raw) < offset + nbytes:
            raise CheckpointError(f"{path}: truncated tensor data at {entry['role']}:{entry['name']}")
        arr = np.frombuffer(raw, dtype="<f4", count=nbytes // 4, offset=offset).reshape(shape)
        tensors[f"{entry['role']}:{entry['name']}"] = arr.astype(np.float32)
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} unexpected trailing bytes")

    adaptive = None
    if header.get("adaptive") is not None:
        a = header["adaptive"]
        adaptive = AdaptiveState(current_p=a["current_p"], best_val_loss=a["best_val_loss"], evals_seen=a["evals_seen"])
    vocab = Vocab(chars=tuple(header["vocab"])) if header.get("vocab") else None

    return Checkpoint(
        config=ModelConfig(**header["config"]),
        iteration=int(header["iteration"]),
        current_dropout=float(header["current_dropout"]),
        seed=int(header["rng"]["seed"]),
        adaptive=adaptive,
        vocab=vocab,
        tensors=tensors,
        adam_t=int(header.get("adam_t", 0)),
    )
