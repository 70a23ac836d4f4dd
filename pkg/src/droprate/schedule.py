"""Dropout-rate schedules.

Five ways to map a training iteration (or validation feedback) onto a
dropout probability: constant, linear decay, exponential decay, step decay,
cosine annealing, and a validation-loss-adaptive controller. The time-based
rules are pure functions of (t, config); the adaptive rule is a small value
object updated once per evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

from .errors import ConfigError, ScheduleRangeError


class ScheduleKind(Enum):
    CONSTANT = "constant"
    LINEAR_DECAY = "linear"
    EXPONENTIAL_DECAY = "exponential"
    STEP_DECAY = "step"
    COSINE_ANNEALING = "cosine"
    VAL_LOSS_ADAPTIVE = "val_adaptive"


# Kinds whose rate decays from p0 toward pf over [0, T].
DECAYING_KINDS = frozenset(
    {ScheduleKind.LINEAR_DECAY, ScheduleKind.EXPONENTIAL_DECAY, ScheduleKind.STEP_DECAY, ScheduleKind.COSINE_ANNEALING}
)


@dataclass(frozen=True)
class ScheduleConfig:
    """All schedule hyperparameters in one place.

    p0/pf are the initial and final dropout rates, total_iters is the decay
    horizon T. decay_factor and step_size drive the step schedule. The
    adapt_* fields belong to the validation-loss controller; adapt_p_max
    defaults to p0. exp_floor_eps replaces pf inside the exponential rule
    when pf is 0, where the published form would collapse to 0 immediately.
    """

    p0: float = 0.2
    pf: float = 0.0
    total_iters: int = 5000
    decay_factor: float = 0.5
    step_size: int = 1000
    adapt_delta: float = 0.01
    adapt_p_min: float = 0.0
    adapt_p_max: float | None = None
    improve_tol: float = 0.0
    exp_floor_eps: float = 1e-3

    def __post_init__(self):
        if self.adapt_p_max is None:
            object.__setattr__(self, "adapt_p_max", self.p0)
        if not 0.0 <= self.p0 < 1.0:
            raise ConfigError(f"p0 must be in [0, 1), got {self.p0}")
        if not 0.0 <= self.pf < 1.0:
            raise ConfigError(f"pf must be in [0, 1), got {self.pf}")
        if self.total_iters < 1:
            raise ConfigError(f"total_iters must be >= 1, got {self.total_iters}")
        if not 0.0 < self.decay_factor <= 1.0:
            raise ConfigError(f"decay_factor must be in (0, 1], got {self.decay_factor}")
        if self.step_size < 1:
            raise ConfigError(f"step_size must be >= 1, got {self.step_size}")
        if self.adapt_delta < 0.0:
            raise ConfigError(f"adapt_delta must be >= 0, got {self.adapt_delta}")
        if not 0.0 <= self.adapt_p_min <= self.adapt_p_max or not self.adapt_p_max < 1.0:
            raise ConfigError(f"need 0 <= adapt_p_min <= adapt_p_max < 1, got [{self.adapt_p_min}, {self.adapt_p_max}]")
        if self.exp_floor_eps < 0.0:
            raise ConfigError(f"exp_floor_eps must be >= 0, got {self.exp_floor_eps}")

    def validate_for(self, kind: ScheduleKind) -> None:
        if kind in DECAYING_KINDS and self.pf > self.p0:
            raise ConfigError(f"decaying schedules need pf <= p0, got pf={self.pf} > p0={self.p0}")


@dataclass(frozen=True)
class AdaptiveState:
    """Validation-loss controller state.

    best_val_loss starts at the +inf sentinel; the first evaluation only
    establishes the baseline, later ones move current_p by adapt_delta.
    """

    current_p: float
    best_val_loss: float = math.inf
    evals_seen: int = 0

    @classmethod
    def fresh(cls, cfg: ScheduleConfig) -> "AdaptiveState":
        return cls(current_p=min(max(cfg.p0, cfg.adapt_p_min), cfg.adapt_p_max))


def _check_range(t: int, total: int) -> None:
    if t < 0 or t > total:
        raise ScheduleRangeError(f"iteration {t} outside schedule domain [0, {total}]")


def rate_linear(t: int, cfg: ScheduleConfig) -> float:
    """Straight-line interpolation from p0 at t=0 to pf at t=T."""
    _check_range(t, cfg.total_iters)
    if t == 0:
        return cfg.p0
    if t == cfg.total_iters:
        return cfg.pf
    # p0 + (pf-p0)*u instead of p0*(1-u) + pf*u: a single monotone term,
    # so float rounding can never make the rate tick upward.
    return cfg.p0 + (cfg.pf - cfg.p0) * (t / cfg.total_iters)


def rate_exponential(t: int, cfg: ScheduleConfig) -> float:
    """Geometric interpolation p0 * (pf/p0)^(t/T), with pf floored at exp_floor_eps."""
    _check_range(t, cfg.total_iters)
    if cfg.p0 == 0.0:
        return 0.0
    pf_eff = max(cfg.pf, cfg.exp_floor_eps)
    if t == 0:
        return cfg.p0
    if t == cfg.total_iters:
        return pf_eff
    return cfg.p0 * (pf_eff / cfg.p0) ** (t / cfg.total_iters)


def rate_step(t: int, cfg: ScheduleConfig) -> float:
    """Piecewise-constant decay: max(pf, p0 * decay_factor^floor(t/step_size))."""
    if t < 0:
        raise ScheduleRangeError(f"iteration {t} is negative")
    return max(cfg.pf, cfg.p0 * cfg.decay_factor ** (t // cfg.step_size))


def rate_cosine(t: int, cfg: ScheduleConfig) -> float:
    """Half-cosine annealing: pf + (p0-pf) * (1 + cos(pi*t/T)) / 2."""
    _check_range(t, cfg.total_iters)
    if t == 0:
        return cfg.p0
    if t == cfg.total_iters:
        return cfg.pf
    return cfg.pf + (cfg.p0 - cfg.pf) * (1.0 + math.cos(math.pi * t / cfg.total_iters)) / 2.0


def adaptive_update(state: AdaptiveState, val_loss: float, cfg: ScheduleConfig) -> tuple[AdaptiveState, float]:
    """Move the rate down on validation improvement, up otherwise.

    The very first call (sentinel best) records the baseline loss without
    touching the rate. Afterwards: strict improvement beyond improve_tol
    lowers current_p by adapt_delta, anything else (ties included) raises
    it, both clamped to [adapt_p_min, adapt_p_max].
    """
    if not math.isfinite(val_loss) or val_loss < 0.0:
        raise ValueError(f"val_loss must be finite and non-negative, got {val_loss}")
    if math.isinf(state.best_val_loss):
        new = replace(state, best_val_loss=val_loss, evals_seen=state.evals_seen + 1)
        return new, new.current_p
    if val_loss < state.best_val_loss - cfg.improve_tol:
        p = max(state.current_p - cfg.adapt_delta, cfg.adapt_p_min)
        best = min(state.best_val_loss, val_loss)
    else:
        p = min(state.current_p + cfg.adapt_delta, cfg.adapt_p_max)
        best = state.best_val_loss
    new = AdaptiveState(current_p=p, best_val_loss=best, evals_seen=state.evals_seen + 1)
    return new, p


_RATE_FNS = {
    ScheduleKind.LINEAR_DECAY: rate_linear,
    ScheduleKind.EXPONENTIAL_DECAY: rate_exponential,
    ScheduleKind.STEP_DECAY: rate_step,
    ScheduleKind.COSINE_ANNEALING: rate_cosine,
}


def rate_at(kind: ScheduleKind, t: int, cfg: ScheduleConfig, state: AdaptiveState | None = None) -> float:
    """Single dispatch point used by the trainer every iteration."""
    if kind is ScheduleKind.VAL_LOSS_ADAPTIVE:
        if state is None:
            raise ConfigError("val_adaptive schedule requires an AdaptiveState")
        return state.current_p
    if state is not None:
        raise ConfigError(f"{kind.value} schedule does not take an AdaptiveState")
    if kind is ScheduleKind.CONSTANT:
        if t < 0:
            raise ScheduleRangeError(f"iteration {t} is negative")
        return cfg.p0
    return _RATE_FNS[kind](t, cfg)
