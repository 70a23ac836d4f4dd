"""droprate: dynamic dropout scheduling for a minimal character-level GPT."""

from .data import SplitDataset, Vocab, build, load_corpus, sample_batch
from .model import GptModel, ModelConfig
from .rng import RngState
from .schedule import (
    AdaptiveState,
    ScheduleConfig,
    ScheduleKind,
    adaptive_update,
    rate_at,
    rate_cosine,
    rate_exponential,
    rate_linear,
    rate_step,
)
from .tensor import ParamStore, Tensor, backward, gradcheck
from .trainer import (
    AdamW,
    MetricsRecord,
    RunResult,
    TrainConfig,
    estimate_loss,
    load_checkpoint,
    measure_inference_speed,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"
