"""1cycle learning-rate/momentum schedule and the learning-rate finder."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import torch


@dataclass
class ScheduleConfig:
    """Single-cycle schedule: lr ramps l1 -> l2, then anneals to l1/K.

    Momentum follows the inverse path m_max -> m_min -> m_max. It is a
    function of the current lr alone (affine between l1 and l2, clamped at
    m_max below l1), which makes momentum pointwise inversely ordered with
    lr across the entire cycle, not just within one phase.
    """

    max_lr: float
    total_steps: int
    div: float = 25.0
    final_div: float = 1e4
    pct_ramp: float = 0.25
    m_max: float = 0.95
    m_min: float = 0.85
    interp: str = "cosine"  # or "linear"

    def __post_init__(self):
        if self.max_lr <= 0 or self.final_div < 1:
            raise ValueError("max_lr must be positive and final_div at least 1")
        if self.div <= 1:
            raise ValueError("div must exceed 1 so the ramp starts below max_lr")
        if not 0 < self.pct_ramp < 1:
            raise ValueError("pct_ramp must lie in (0, 1)")
        if self.total_steps < 1:
            raise ValueError("total_steps must be positive")
        if not self.m_min < self.m_max:
            raise ValueError("m_min must be below m_max")
        if self.interp not in ("cosine", "linear"):
            raise ValueError(f"unknown interpolation {self.interp!r}")

    @property
    def start_lr(self) -> float:
        return self.max_lr / self.div

    @property
    def final_lr(self) -> float:
        return self.start_lr / self.final_div


def _ramp(u: float, kind: str) -> float:
    # monotone 0 -> 1 with exact endpoints
    if u <= 0.0:
        return 0.0
    if u >= 1.0:
        return 1.0
    if kind == "cosine":
        return 0.5 * (1.0 - math.cos(math.pi * u))
    return u


def _momentum_at(lr: float, cfg: ScheduleConfig) -> float:
    # one shared decreasing map lr -> momentum keeps the inverse ordering
    # valid across phases; below start_lr (the anneal tail) it clamps to
    # m_max, which also makes the final endpoint exact
    q = (lr - cfg.start_lr) / (cfg.max_lr - cfg.start_lr)
    q = min(1.0, max(0.0, q))
    return (1.0 - q) * cfg.m_max + q * cfg.m_min


def one_cycle(step: float, cfg: ScheduleConfig) -> tuple[float, float]:
    """Learning rate and momentum at ``step``.

    Pure function of (step, cfg). Endpoints are exact: (start_lr, m_max) at
    step 0, (max_lr, m_min) at the ramp boundary, (final_lr, m_max) at
    total_steps.
    """
    if not 0 <= step <= cfg.total_steps:
        raise ValueError(f"step {step} outside [0, {cfg.total_steps}]")
    boundary = cfg.pct_ramp * cfg.total_steps
    if step <= boundary:
        g = _ramp(step / boundary, cfg.interp)
        lr = (1.0 - g) * cfg.start_lr + g * cfg.max_lr
    else:
        g = _ramp((step - boundary) / (cfg.total_steps - boundary), cfg.interp)
        lr = (1.0 - g) * cfg.max_lr + g * cfg.final_lr
    return lr, _momentum_at(lr, cfg)


@dataclass
class LRFindResult:
    """Outcome of an lr sweep: sampled rates, smoothed losses, suggestion.

    ``suggestion`` is None exactly when ``no_valley`` is set (the smoothed
    loss never dropped below its starting value and the caller must pick a
    rate manually).
    """

    lrs: list[float] = field(default_factory=list)
    raw_losses: list[float] = field(default_factory=list)
    smoothed_losses: list[float] = field(default_factory=list)
    suggestion: float | None = None
    no_valley: bool = False
    diverged_at: float | None = None


def lr_find(
    model: torch.nn.Module,
    make_optimizer: Callable[[Iterable[torch.nn.Parameter], float], torch.optim.Optimizer],
    loss_on_batch: Callable[[torch.nn.Module, object, int], torch.Tensor],
    batches: Sequence[object],
    *,
    budget: int = 100,
    lr_start: float = 1e-7,
    lr_end: float = 10.0,
    beta: float = 0.98,
    divergence_factor: float = 4.0,
) -> LRFindResult:
    """Mock training sweep over exponentially increasing learning rates.

    One mini-batch step per rate, cycling through ``batches``. Records the
    bias-corrected exponentially smoothed loss, stops early once it exceeds
    ``divergence_factor`` times the best value seen, and suggests the rate
    of steepest negative smoothed-loss slope. Model parameters and buffers
    are restored bit-exactly afterwards; the optimizer is created locally so
    no caller state is touched.

    ``loss_on_batch(model, batch, iteration)`` must return a scalar loss for
    one step. Only parameters with requires_grad=True are updated.
    """
    if budget < 50:
        raise ValueError("lr_find needs a budget of at least 50 iterations")
    if not batches:
        raise ValueError("lr_find needs at least one batch")

    snapshot = {k: v.detach().clone() for k, v in model.state_dict().items()}
    trainable = [p for p in model.parameters() if p.requires_grad]
    optimizer = make_optimizer(trainable, lr_start)

    result = LRFindResult()
    avg = 0.0
    best = math.inf
    try:
        for i in range(budget):
            lr = lr_start * (lr_end / lr_start) ** (i / (budget - 1))
            for group in optimizer.param_groups:
                group["lr"] = lr
            batch = batches[i % len(batches)]
            loss = loss_on_batch(model, batch, i)
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()

            raw = float(loss.detach())
            avg = beta * avg + (1.0 - beta) * raw
            smoothed = avg / (1.0 - beta ** (i + 1))
            result.lrs.append(lr)
            result.raw_losses.append(raw)
            result.smoothed_losses.append(smoothed)
            if not math.isfinite(smoothed) or smoothed > divergence_factor * best:
                result.diverged_at = lr
                break
            best = min(best, smoothed)
    finally:
        model.load_state_dict(snapshot)

    smoothed = np.asarray(result.smoothed_losses)
    if len(smoothed) < 2 or np.nanmin(smoothed) >= smoothed[0]:
        result.no_valley = True
        return result
    min_idx = int(np.nanargmin(smoothed))
    if min_idx == 0:
        result.no_valley = True
        return result
    # steepest descent of the smoothed curve over log-lr, before the minimum
    seg = smoothed[: min_idx + 1]
    log_lrs = np.log(np.asarray(result.lrs[: min_idx + 1]))
    slopes = np.gradient(seg, log_lrs)
    result.suggestion = result.lrs[int(np.argmin(slopes))]
    return result


def schedule_curve(cfg: ScheduleConfig, num_points: int = 200) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sample (steps, lrs, momenta) across the whole cycle, for plotting."""
    steps = np.linspace(0, cfg.total_steps, num_points)
    pairs = [one_cycle(float(s), cfg) for s in steps]
    lrs = np.array([p[0] for p in pairs])
    momenta = np.array([p[1] for p in pairs])
    return steps, lrs, momenta
