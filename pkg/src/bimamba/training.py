"""Adam, warmup schedule, and a line-per-step JSONL training log."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Variable
from .errors import ConfigError, DomainError

__all__ = [
    "OptimState",
    "init_optim",
    "zero_grads",
    "adam_step",
    "warmup_lr",
    "TrainLog",
    "read_train_log",
]


@dataclass
class OptimState:
    """First/second moment accumulators keyed like the parameter dict."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def init_optim(params: dict[str, Variable]) -> OptimState:
    state = OptimState()
    for name, p in params.items():
        state.m[name] = np.zeros_like(p.value)
        state.v[name] = np.zeros_like(p.value)
    return state


def zero_grads(params: dict[str, Variable]) -> None:
    for p in params.values():
        p.grad = None


def adam_step(
    params: dict[str, Variable],
    state: OptimState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.98,
    eps: float = 1e-9,
    clip: float = 1.0,
    weight_decay: float = 0.0,
) -> float:
    """One Adam update over ``params`` in place.

    Gradients are clipped elementwise to [-clip, clip] before they touch the
    moment estimates, so a single blown-up coordinate cannot poison the
    running statistics. Weight decay, when nonzero, is decoupled from the
    moments. Returns the pre-clip global gradient L2 norm for logging.
    """
    if not 0.0 <= beta1 < 1.0 or not 0.0 <= beta2 < 1.0:
        raise ConfigError("beta1 and beta2 must lie in [0, 1)")
    if clip <= 0.0:
        raise ConfigError(f"clip must be > 0, got {clip}")
    missing = [n for n, p in params.items() if p.grad is None]
    if missing:
        raise DomainError(f"parameters without gradients: {sorted(missing)[:4]}")
    sq = 0.0
    for p in params.values():
        sq += float(np.sum(p.grad * p.grad))
    norm = float(np.sqrt(sq))

    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name, p in params.items():
        g = np.clip(p.grad, -clip, clip)
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        if weight_decay:
            p.value -= lr * weight_decay * p.value
        p.value -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return norm


def warmup_lr(step: int, d_model: int, warmup: int = 40000) -> float:
    """Inverse-sqrt schedule with linear warmup; peak lands at ``step == warmup``."""
    if step < 1:
        raise DomainError(f"schedule is defined for step >= 1, got {step}")
    if d_model < 1 or warmup < 1:
        raise ConfigError("d_model and warmup must be >= 1")
    return d_model**-0.5 * min(step**-0.5, step * warmup**-1.5)


_LOG_FIELDS = ("step", "lr", "loss", "grad_norm", "wall_ms")


class TrainLog:
    """Append-only JSONL training log; one object per optimizer step."""

    def __init__(self, path):
        self.path = Path(path)
        self._fh = open(self.path, "w", encoding="utf-8")

    def log(self, step: int, lr: float, loss: float, grad_norm: float,
            wall_ms: float) -> None:
        row = {"step": int(step), "lr": float(lr), "loss": float(loss),
               "grad_norm": float(grad_norm), "wall_ms": float(wall_ms)}
        self._fh.write(json.dumps(row) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def read_train_log(path) -> list[dict]:
    rows = []
    with open(Path(path), "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            row = json.loads(line)
            if set(row) != set(_LOG_FIELDS):
                raise ConfigError(f"line {lineno}: expected fields {_LOG_FIELDS}")
            rows.append(row)
    return rows
