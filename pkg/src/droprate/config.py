"""Run configuration.

Configs are flat JSON objects with dotted keys ("model.n_layer": 2) plus
command-line --key=value overrides that win over the file. Every key is
declared in a registry with a type and default; unknown keys are rejected
and the fully resolved mapping is echoed to run.json, so a run is always
reproducible from its own artifacts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .model import ModelConfig
from .schedule import ScheduleConfig, ScheduleKind
from .trainer import TrainConfig

# Fixed report labels, one per schedule kind, so comparison tables are
# stable across runs. "baseline" is the constant-rate schedule.
LABEL_TO_KIND = {
    "baseline": ScheduleKind.CONSTANT,
    "linear": ScheduleKind.LINEAR_DECAY,
    "exponential": ScheduleKind.EXPONENTIAL_DECAY,
    "step": ScheduleKind.STEP_DECAY,
    "cosine": ScheduleKind.COSINE_ANNEALING,
    "val_adaptive": ScheduleKind.VAL_LOSS_ADAPTIVE,
}
KIND_TO_LABEL = {kind: label for label, kind in LABEL_TO_KIND.items()}

# The five schedules the comparison protocol covers by default; step decay
# is implemented and can be requested explicitly via --schedules.
DEFAULT_COMPARE_LABELS = ("baseline", "linear", "exponential", "cosine", "val_adaptive")

_INT, _FLOAT, _STR, _BOOL = "int", "float", "str", "bool"
_OPT_INT, _OPT_FLOAT, _OPT_STR = "int?", "float?", "str?"

# key -> (type, default). None defaults marked "derived" are filled in
# during resolution (see _apply_derived).
_REGISTRY: dict[str, tuple[str, object]] = {
    "corpus": (_OPT_STR, None),
    "out_dir": (_STR, "out"),
    "label": (_OPT_STR, None),  # derived: schedule label
    "data.val_fraction": (_FLOAT, 0.1),
    "model.n_layer": (_INT, 6),
    "model.n_head": (_INT, 6),
    "model.n_embd": (_INT, 384),
    "model.block_size": (_INT, 256),
    "model.vocab_size": (_OPT_INT, None),  # derived from the corpus
    "model.dropout_p": (_OPT_FLOAT, None),  # derived: schedule.p0
    "schedule.kind": (_STR, "baseline"),
    "schedule.p0": (_FLOAT, 0.2),
    "schedule.pf": (_FLOAT, 0.0),
    "schedule.total_iters": (_OPT_INT, None),  # derived: train.max_iters
    "schedule.decay_factor": (_FLOAT, 0.5),
    "schedule.step_size": (_INT, 1000),
    "schedule.adapt_delta": (_FLOAT, 0.01),
    "schedule.adapt_p_min": (_FLOAT, 0.0),
    "schedule.adapt_p_max": (_OPT_FLOAT, None),  # derived: schedule.p0
    "schedule.improve_tol": (_FLOAT, 0.0),
    "schedule.exp_floor_eps": (_FLOAT, 1e-3),
    "train.batch_size": (_INT, 64),
    "train.learning_rate": (_FLOAT, 1e-3),
    "train.max_iters": (_INT, 5000),
    "train.eval_interval": (_OPT_INT, None),  # derived: min(250, max_iters)
    "train.eval_iters": (_INT, 20),
    "train.weight_decay": (_FLOAT, 0.1),
    "train.beta1": (_FLOAT, 0.9),
    "train.beta2": (_FLOAT, 0.99),
    "train.grad_clip": (_FLOAT, 1.0),
    "train.seed": (_INT, 1337),
    "train.cosine_lr": (_BOOL, False),
    "bench.n_tokens": (_INT, 500),
    "bench.prompt": (_STR, "\n"),
}

# Short spellings accepted on the command line.
_ALIASES = {
    "schedule": "schedule.kind",
    "p0": "schedule.p0",
    "pf": "schedule.pf",
    "iters": "train.max_iters",
    "seed": "train.seed",
    "out": "out_dir",
}


def _coerce(key: str, value):
    kind, _ = _REGISTRY[key]
    optional = kind.endswith("?")
    if value is None:
        if optional:
            return None
        raise ConfigError(f"{key}: null is not allowed")
    base = kind.rstrip("?")
    if base == _BOOL:
        if isinstance(value, bool):
            return value
    elif base == _INT:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif base == _FLOAT:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif base == _STR:
        if isinstance(value, str):
            return value
    raise ConfigError(f"{key}: expected {base}, got {value!r}")


def parse_override(text: str) -> tuple[str, object]:
    """Parse one 'key=value' override; values are JSON, falling back to string."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, _, raw = text.partition("=")
    key = _ALIASES.get(key, key)
    if key not in _REGISTRY:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, _coerce(key, value)


@dataclass(frozen=True)
class RunSpec:
    """A fully resolved run definition; `values` covers every registry key."""

    values: dict

    def __getitem__(self, key: str):
        return self.values[key]

    @property
    def corpus(self) -> str | None:
        return self.values["corpus"]

    @property
    def out_dir(self) -> Path:
        return Path(self.values["out_dir"])

    @property
    def label(self) -> str:
        return self.values["label"]

    @property
    def val_fraction(self) -> float:
        return self.values["data.val_fraction"]

    @property
    def seed(self) -> int:
        return self.values["train.seed"]

    def schedule_kind(self) -> ScheduleKind:
        return LABEL_TO_KIND[self.values["schedule.kind"]]

    def schedule_config(self) -> ScheduleConfig:
        v = self.values
        return ScheduleConfig(
            p0=v["schedule.p0"],
            pf=v["schedule.pf"],
            total_iters=v["schedule.total_iters"],
            decay_factor=v["schedule.decay_factor"],
            step_size=v["schedule.step_size"],
            adapt_delta=v["schedule.adapt_delta"],
            adapt_p_min=v["schedule.adapt_p_min"],
            adapt_p_max=v["schedule.adapt_p_max"],
            improve_tol=v["schedule.improve_tol"],
            exp_floor_eps=v["schedule.exp_floor_eps"],
        )

    def model_config(self, vocab_size: int | None = None) -> ModelConfig:
        v = self.values
        size = vocab_size if vocab_size is not None else v["model.vocab_size"]
        if size is None:
            raise ConfigError("model.vocab_size: unresolved (no corpus seen yet)")
        if v["model.vocab_size"] is not None and vocab_size is not None and v["model.vocab_size"] != vocab_size:
            raise ConfigError(f"model.vocab_size: configured {v['model.vocab_size']} but corpus has {vocab_size}")
        return ModelConfig(
            n_layer=v["model.n_layer"],
            n_head=v["model.n_head"],
            n_embd=v["model.n_embd"],
            block_size=v["model.block_size"],
            vocab_size=size,
            dropout_p=v["model.dropout_p"],
        )

    def train_config(self, vocab_size: int | None = None) -> TrainConfig:
        v = self.values
        return TrainConfig(
            model=self.model_config(vocab_size),
            schedule_kind=self.schedule_kind(),
            schedule=self.schedule_config(),
            batch_size=v["train.batch_size"],
            learning_rate=v["train.learning_rate"],
            max_iters=v["train.max_iters"],
            eval_interval=v["train.eval_interval"],
            eval_iters=v["train.eval_iters"],
            weight_decay=v["train.weight_decay"],
            beta1=v["train.beta1"],
            beta2=v["train.beta2"],
            grad_clip=v["train.grad_clip"],
            seed=v["train.seed"],
            cosine_lr=v["train.cosine_lr"],
        )

    def with_values(self, **updates) -> "RunSpec":
        """Copy with dotted keys replaced (underscores map to dots)."""
        merged = dict(self.values)
        for key, value in updates.items():
            key = key.replace("__", ".")
            if key not in _REGISTRY:
                raise ConfigError(f"unknown config key {key!r}")
            merged[key] = _coerce(key, value)
        return resolve_values(merged)

    def run_json(self, vocab_size: int | None = None) -> str:
        """The full resolved mapping, ordered as the registry declares it."""
        out = {key: self.values[key] for key in _REGISTRY}
        if vocab_size is not None:
            out["model.vocab_size"] = vocab_size
        return json.dumps(out, indent=2) + "\n"


def _apply_derived(values: dict) -> dict:
    if values["schedule.kind"] not in LABEL_TO_KIND:
        raise ConfigError(
            f"schedule.kind: unknown schedule {values['schedule.kind']!r}, "
            f"expected one of {', '.join(LABEL_TO_KIND)}"
        )
    if values["label"] is None:
        values["label"] = values["schedule.kind"]
    if values["schedule.total_iters"] is None:
        values["schedule.total_iters"] = values["train.max_iters"]
    if values["train.eval_interval"] is None:
        values["train.eval_interval"] = min(250, values["train.max_iters"])
    if values["schedule.adapt_p_max"] is None:
        values["schedule.adapt_p_max"] = values["schedule.p0"]
    if values["model.dropout_p"] is None:
        values["model.dropout_p"] = values["schedule.p0"]
    return values


def resolve_values(values: dict) -> RunSpec:
    """Validate a complete key/value mapping and wrap it as a RunSpec."""
    spec = RunSpec(values=_apply_derived(dict(values)))
    try:
        # Construct all config objects now so bad combinations fail before
        # any compute starts; a placeholder vocabulary stands in when the
        # corpus has not been read yet.
        spec.train_config(vocab_size=spec.values["model.vocab_size"] or 2)
    except (ValueError, TypeError) as e:
        raise ConfigError(str(e)) from None
    return spec


def resolve(config_path: str | None = None, overrides: list[str] | None = None) -> RunSpec:
    """Defaults, then the config file, then --key=value overrides."""
    values = {key: default for key, (_, default) in _REGISTRY.items()}

    if config_path is not None:
        try:
            raw = Path(config_path).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"config file: {e}") from None
        try:
            loaded = json.loads(raw)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {config_path}: invalid JSON ({e})") from None
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {config_path}: expected a JSON object")
        for key, value in loaded.items():
            key = _ALIASES.get(key, key)
            if key not in _REGISTRY:
                raise ConfigError(f"unknown config key {key!r} in {config_path}")
            values[key] = _coerce(key, value)

    for text in overrides or []:
        key, value = parse_override(text)
        values[key] = value

    return resolve_values(values)
