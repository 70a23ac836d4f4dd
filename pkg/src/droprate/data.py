"""Character-level corpus handling: vocabulary, split, batches, id cache."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, VocabularyError
from .rng import RngState


@dataclass(frozen=True)
class Vocab:
    """Bijection between characters and ids, ordered by code point."""

    chars: tuple[str, ...]

    @property
    def size(self) -> int:
        return len(self.chars)

    @classmethod
    def from_text(cls, text: str) -> "Vocab":
        return cls(chars=tuple(sorted(set(text))))

    def encode(self, text: str) -> np.ndarray:
        stoi = {ch: i for i, ch in enumerate(self.chars)}
        try:
            return np.array([stoi[ch] for ch in text], dtype=np.uint16)
        except KeyError as e:
            raise VocabularyError(f"character {e.args[0]!r} is not in the vocabulary") from None

    def decode(self, ids) -> str:
        ids = np.asarray(ids).reshape(-1)
        if ids.size and (ids.min() < 0 or ids.max() >= self.size):
            raise VocabularyError(f"id out of range for vocabulary of size {self.size}")
        return "".join(self.chars[int(i)] for i in ids)


@dataclass(frozen=True)
class SplitDataset:
    """Encoded corpus split into a contiguous train prefix and val suffix."""

    train_ids: np.ndarray
    val_ids: np.ndarray
    vocab: Vocab


def build(corpus: str, val_fraction: float = 0.1) -> SplitDataset:
    """Build vocabulary and train/val split from raw text.

    The first (1 - val_fraction) of the encoded ids become the training
    stream, the remainder validation; both ends are kept non-empty.
    """
    if not corpus:
        raise ConfigError("corpus is empty")
    if not 0.0 < val_fraction < 1.0:
        raise ConfigError(f"val_fraction must be in (0, 1), got {val_fraction}")
    vocab = Vocab.from_text(corpus)
    if vocab.size < 2:
        raise ConfigError(f"degenerate vocabulary: corpus has {vocab.size} distinct character(s)")
    ids = vocab.encode(corpus)
    n = len(ids)
    n_val = min(max(int(n * val_fraction), 1), n - 1)
    return SplitDataset(train_ids=ids[: n - n_val], val_ids=ids[n - n_val :], vocab=vocab)


def load_corpus(path: str | Path) -> str:
    return Path(path).read_text(encoding="utf-8")


def sample_batch(ds: SplitDataset, split: str, batch: int, seq: int, rng: RngState):
    """Draw `batch` uniformly random contiguous windows; y is x shifted by one."""
    if split == "train":
        ids = ds.train_ids
    elif split == "val":
        ids = ds.val_ids
    else:
        raise ConfigError(f"split must be 'train' or 'val', got {split!r}")
    if len(ids) < seq + 1:
        raise ConfigError(f"{split} split has {len(ids)} tokens, need at least {seq + 1}")
    starts = rng.integers(0, len(ids) - seq, shape=(batch,))
    offsets = np.arange(seq)
    x = ids[starts[:, None] + offsets].astype(np.int64)
    y = ids[starts[:, None] + offsets + 1].astype(np.int64)
    return x, y


def save_ids_cache(ds: SplitDataset, path: str | Path) -> None:
    """Write encoded ids as little-endian uint16 plus a JSON vocab sidecar."""
    path = Path(path)
    all_ids = np.concatenate([ds.train_ids, ds.val_ids]).astype("<u2")
    path.write_bytes(all_ids.tobytes())
    sidecar = {"chars": "".join(ds.vocab.chars), "n_train": int(len(ds.train_ids))}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar), encoding="utf-8")


def load_ids_cache(path: str | Path) -> SplitDataset:
    path = Path(path)
    sidecar = json.loads(path.with_suffix(path.suffix + ".json").read_text(encoding="utf-8"))
    ids = np.frombuffer(path.read_bytes(), dtype="<u2").astype(np.uint16)
    n_train = int(sidecar["n_train"])
    if not 0 < n_train < len(ids):
        raise ConfigError(f"cache split point {n_train} invalid for {len(ids)} ids")
    vocab = Vocab(chars=tuple(sidecar["chars"]))
    return SplitDataset(train_ids=ids[:n_train], val_ids=ids[n_train:], vocab=vocab)
