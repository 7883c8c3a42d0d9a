"""Closed-form schedules for ABC's r, scaled tanh's alpha, and the learning rate.

Every value is a pure function of (policy, step), so the trainer and the
tests can evaluate any point independently.  Epochs are 0-based: epoch 0 is
the first epoch and sees no decay.

Built-in policies:

=====================  ==========================================  =====================================
kind                   r                                           lr / alpha
=====================  ==========================================  =====================================
abc-retrieval-cifar    1 * 0.95**epoch, floor 0.002                1e-4 * 0.6 every 4000 iterations
abc-retrieval-nus      1 * 0.94**epoch, floor 0.1662, 1000 it/ep   constant 1e-4
abc-imagenet           0.1 * sqrt(.1) every 4 epochs, 0 from 16    0.01 * sqrt(.1) every 4 epochs
tanh-retrieval         (unused, 1)                                 alpha = (1 + 0.005 i)**0.5
tanh-imagenet          (unused, 1)                                 alpha = (1 + 15 e)**0.4 held 2 epochs,
                                                                   cap 9.401; lr 1e-3, x0.1 at 10 and 16
constant               r0                                          lr0, alpha0
=====================  ==========================================  =====================================
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

from .exceptions import ConfigError, ParameterError

SQRT_TENTH = math.sqrt(0.1)


@dataclass(frozen=True)
class SchedulePolicy:
    kind: str
    # r: r0 * r_factor ** (epoch // r_interval), clamped at r_floor
    r_initial: float = 1.0
    r_factor: float = 1.0
    r_interval: int = 1
    r_floor: float = 0.0
    r_zero_from: int | None = None  # terminal override: r = 0 from this epoch on
    # alpha: (alpha_base + alpha_rate * s) ** alpha_power, s held in windows of alpha_hold
    alpha_base: float = 1.0
    alpha_rate: float = 0.0
    alpha_power: float = 1.0
    alpha_hold: int = 1
    alpha_cap: float | None = None
    alpha_unit: str = "iteration"
    # lr: lr0 * lr_factor ** (step // lr_interval), or one factor per milestone passed
    lr_initial: float = 1e-4
    lr_factor: float = 1.0
    lr_interval: int | None = None
    lr_milestones: tuple[int, ...] = ()
    lr_unit: str = "iteration"
    iterations_per_epoch: int | None = None

    def __post_init__(self):
        problems = []
        if self.r_initial < 0 or self.r_floor < 0:
            problems.append("r_initial/r_floor must be non-negative")
        if not 0 < self.r_factor <= 1:
            problems.append("r_factor must be in (0, 1]")
        if self.r_interval < 1 or self.alpha_hold < 1:
            problems.append("r_interval and alpha_hold must be >= 1")
        if self.alpha_rate < 0 or self.alpha_base <= 0 or self.alpha_power <= 0:
            problems.append("alpha_base, alpha_power must be > 0 and alpha_rate >= 0")
        if self.lr_initial < 0 or not 0 < self.lr_factor <= 1:
            problems.append("lr_initial must be >= 0 and lr_factor in (0, 1]")
        if self.lr_interval is not None and self.lr_interval < 1:
            problems.append("lr_interval must be >= 1")
        if self.alpha_unit not in ("iteration", "epoch") or self.lr_unit not in ("iteration", "epoch"):
            problems.append("units must be 'iteration' or 'epoch'")
        if problems:
            raise ConfigError(f"invalid schedule policy {self.kind!r}: " + "; ".join(problems))

    def with_overrides(self, **overrides) -> "SchedulePolicy":
        known = {f.name for f in fields(self)}
        unknown = sorted(set(overrides) - known)
        if unknown:
            raise ConfigError(f"unknown schedule fields: {', '.join(unknown)}", unknown)
        if "lr_milestones" in overrides:
            overrides["lr_milestones"] = tuple(overrides["lr_milestones"])
        return replace(self, **overrides)


POLICIES: dict[str, SchedulePolicy] = {
    "abc-retrieval-cifar": SchedulePolicy(
        "abc-retrieval-cifar", r_initial=1.0, r_factor=0.95, r_floor=0.002,
        lr_initial=1e-4, lr_factor=0.6, lr_interval=4000),
    "abc-retrieval-nus": SchedulePolicy(
        "abc-retrieval-nus", r_initial=1.0, r_factor=0.94, r_floor=0.1662,
        lr_initial=1e-4, iterations_per_epoch=1000),
    "abc-imagenet": SchedulePolicy(
        "abc-imagenet", r_initial=0.1, r_factor=SQRT_TENTH, r_interval=4, r_zero_from=16,
        lr_initial=0.01, lr_factor=SQRT_TENTH, lr_interval=4, lr_unit="epoch"),
    "tanh-retrieval": SchedulePolicy(
        "tanh-retrieval", alpha_rate=0.005, alpha_power=0.5,
        lr_initial=1e-4, lr_factor=0.6, lr_interval=4000),
    "tanh-imagenet": SchedulePolicy(
        "tanh-imagenet", alpha_rate=15.0, alpha_power=0.4, alpha_hold=2, alpha_cap=9.401,
        alpha_unit="epoch", lr_initial=1e-3, lr_factor=0.1, lr_milestones=(10, 16), lr_unit="epoch"),
    "constant": SchedulePolicy("constant"),
}


def get_policy(kind: str, **overrides) -> SchedulePolicy:
    try:
        base = POLICIES[kind]
    except KeyError:
        raise ConfigError(f"unknown schedule policy {kind!r}; known: {', '.join(POLICIES)}", ["schedule.kind"]) from None
    return base.with_overrides(**overrides) if overrides else base


def _check_step(step: int, what: str) -> None:
    if step < 0:
        raise ParameterError(f"{what} must be >= 0, got {step}")


def r_at(policy: SchedulePolicy, epoch: int) -> float:
    _check_step(epoch, "epoch")
    if policy.r_zero_from is not None and epoch >= policy.r_zero_from:
        return 0.0
    r = policy.r_initial * policy.r_factor ** (epoch // policy.r_interval)
    return max(policy.r_floor, r)


def alpha_at(policy: SchedulePolicy, step: int) -> float:
    _check_step(step, "step")
    s = (step // policy.alpha_hold) * policy.alpha_hold
    alpha = (policy.alpha_base + policy.alpha_rate * s) ** policy.alpha_power
    if policy.alpha_cap is not None:
        alpha = min(policy.alpha_cap, alpha)
    return alpha


def lr_at(policy: SchedulePolicy, step: int) -> float:
    _check_step(step, "step")
    if policy.lr_milestones:
        passed = sum(step >= m for m in policy.lr_milestones)
        return policy.lr_initial * policy.lr_factor ** passed
    if policy.lr_interval is None:
        return policy.lr_initial
    return policy.lr_initial * policy.lr_factor ** (step // policy.lr_interval)


def coupled_decay(k: float) -> tuple[float, float]:
    """(r multiplier, lr multiplier) replacing a plain 1/k learning-rate decay.

    Gradients upstream of ABC scale with r, so shrinking both r and lr by
    sqrt(k) shrinks their effective step by exactly k.
    """
    if not k > 1:
        raise ParameterError(f"decay factor k must be > 1, got {k}")
    m = 1.0 / math.sqrt(k)
    return m, m


@dataclass(frozen=True)
class ScheduleState:
    epoch: int
    iteration: int
    r: float
    alpha: float
    lr: float


def state_at(policy: SchedulePolicy, epoch: int, iteration: int) -> ScheduleState:
    """Schedule values in effect at global ``iteration`` inside ``epoch``."""
    a_step = epoch if policy.alpha_unit == "epoch" else iteration
    l_step = epoch if policy.lr_unit == "epoch" else iteration
    return ScheduleState(epoch, iteration, r_at(policy, epoch), alpha_at(policy, a_step), lr_at(policy, l_step))
