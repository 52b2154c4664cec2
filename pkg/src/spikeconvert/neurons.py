"""Spiking neuron kernels: temporal encoders that trade timesteps for precision.

Four kernels are implemented.

fs_encode    few-step kernel with free per-step parameters. Membrane starts
             at the input, fires whenever it reaches the step threshold,
             subtracts the step reset, and each firing contributes the step
             output weight to the decoded value.
mt_encode    multi-level threshold encoder on a dyadic schedule. At step t
             the threshold is tau * 2^-t and a firing emits one of H signed
             grid levels, so magnitudes halve per step while each event
             carries up to log2(2H) bits.
oat_encode   outlier-aware wrapper: elements are routed by magnitude to one
             of two mt encoders, a fine one for the typical range and a
             coarse one for the rare large values, so outliers stop
             inflating everyone else's quantization step.
hg_apply     gated bank of fitted fs kernels. The input range is split into
             sub-ranges; exactly one sub-kernel is active per element and
             approximates an arbitrary scalar function on its sub-range.

All encoders are deterministic and produce bit-identical trains for
identical inputs and configurations.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NonFiniteError, ShapeError
from .tensors import Matrix

# Scaled-unit snap tolerance for the multi-threshold encoder. Inputs within
# this many grid units of an exact grid point are treated as on-grid, which
# keeps fire-at-threshold semantics robust to float rounding and makes
# encode(decode(encode(x))) reproduce decode(encode(x)) exactly.
_SNAP_UNITS = 1e-6


@dataclass(frozen=True)
class FSParams:
    """Per-step schedule of a few-step kernel: thresholds, resets, weights."""

    theta: tuple[float, ...]
    h: tuple[float, ...]
    d: tuple[float, ...]

    def __post_init__(self) -> None:
        if not (len(self.theta) == len(self.h) == len(self.d)):
            raise ShapeError(
                f"schedule lengths differ: theta={len(self.theta)} "
                f"h={len(self.h)} d={len(self.d)}"
            )
        if len(self.theta) == 0:
            raise ValueError("schedule needs at least one step")
        if any(not t > 0.0 for t in self.theta):
            raise ValueError("every threshold must be positive")

    @property
    def steps(self) -> int:
        return len(self.theta)


@dataclass(frozen=True)
class MTConfig:
    """Dyadic multi-level encoder: tau scale, H levels per step, T steps."""

    tau: float
    H: int
    T: int

    def __post_init__(self) -> None:
        if not self.tau > 0.0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.H < 1:
            raise ValueError(f"H must be at least 1, got {self.H}")
        if self.T < 1:
            raise ValueError(f"T must be at least 1, got {self.T}")


@dataclass(frozen=True)
class OATConfig:
    """Dual-range encoder thresholds: fine scale theta_nor, coarse theta_out."""

    theta_nor: float
    theta_out: float
    H: int
    T: int

    def __post_init__(self) -> None:
        if not 0.0 < self.theta_nor < self.theta_out:
            raise ValueError(
                f"need theta_out > theta_nor > 0, got "
                f"theta_nor={self.theta_nor} theta_out={self.theta_out}"
            )
        if self.H < 1 or self.T < 1:
            raise ValueError("H and T must be at least 1")


@dataclass(frozen=True)
class HGConfig:
    """Gated bank: N+1 sub-range boundaries and one fitted kernel per sub-range."""

    boundaries: tuple[float, ...]
    subneurons: tuple[FSParams, ...]

    def __post_init__(self) -> None:
        if len(self.boundaries) != len(self.subneurons) + 1:
            raise ShapeError(
                f"{len(self.subneurons)} sub-kernels need "
                f"{len(self.subneurons) + 1} boundaries, got {len(self.boundaries)}"
            )
        if len(self.subneurons) == 0:
            raise ValueError("need at least one sub-range")
        bs = self.boundaries
        if any(bs[i] >= bs[i + 1] for i in range(len(bs) - 1)):
            raise ValueError("boundaries must be strictly increasing")


class SpikeTrain:
    """T steps of weighted spike values for a row of elements.

    values[t, j] is the weighted contribution of element j at step t and is
    zero wherever events[t, j] is False.
    """

    __slots__ = ("values", "events")

    def __init__(self, values: np.ndarray, events: np.ndarray) -> None:
        values = np.ascontiguousarray(values, dtype=np.float64)
        events = np.ascontiguousarray(events, dtype=bool)
        if values.ndim != 2:
            raise ShapeError(f"train values must be 2-D, got ndim={values.ndim}")
        if values.shape != events.shape:
            raise ShapeError(
                f"values shape {values.shape} != events shape {events.shape}"
            )
        if values.shape[0] < 1:
            raise ValueError("a train needs at least one step")
        if np.any(values[~events] != 0.0):
            raise ValueError("values must be zero where no event fired")
        values.setflags(write=False)
        events.setflags(write=False)
        self.values = values
        self.events = events

    @property
    def steps(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def decode(s: SpikeTrain) -> Matrix:
    """Accumulated membrane view of a train: the per-element sum over steps."""
    return Matrix._wrap(s.values.sum(axis=0, keepdims=True))


# ---------------------------------------------------------------------------
# few-step kernel


def _fs_run(x: np.ndarray, p: FSParams) -> tuple[np.ndarray, np.ndarray]:
    """Drive the few-step recurrence on a 1-D batch. Returns (values, events)."""
    x = np.asarray(x, dtype=np.float64)
    T = p.steps
    values = np.zeros((T, x.size))
    events = np.zeros((T, x.size), dtype=bool)
    v = x.copy()
    for t in range(T):
        fire = v >= p.theta[t]
        events[t] = fire
        values[t] = np.where(fire, p.d[t], 0.0)
        v = v - p.h[t] * fire
    return values, events


def fs_encode(x: float, p: FSParams) -> SpikeTrain:
    """Encode one scalar through a few-step kernel.

    The membrane starts at x; step t fires when it is at or above theta[t],
    emits weight d[t], and subtracts reset h[t]. Inputs below every
    threshold produce an all-silent train that decodes to zero.
    """
    if not np.isfinite(x):
        raise NonFiniteError(f"fs_encode input must be finite, got {x}")
    values, events = _fs_run(np.array([x]), p)
    return SpikeTrain(values, events)


# ---------------------------------------------------------------------------
# multi-level threshold encoder


def _mt_run(
    x: np.ndarray, tau: float, H: int, T: int
) -> tuple[np.ndarray, np.ndarray]:
    """Signed greedy multi-level encoding of a 1-D batch.

    Works in integer multiples of the finest grid unit tau * 2^-T / H so the
    greedy arithmetic is exact, then converts emissions back to float
    weights. Each step t fires when |v| >= tau * 2^-t and emits the largest
    grid level (H+k)/H * tau * 2^-t at or below |v|, saturating at level
    (2H-1)/H; the emission is subtracted from the membrane.
    """
    unit = tau * 2.0 ** (-T) / H
    W = np.asarray(x, dtype=np.float64) / unit
    Wr = np.rint(W)
    W = np.where(np.abs(W - Wr) <= _SNAP_UNITS, Wr, W)
    sign = np.sign(W)
    a = np.abs(W)
    values = np.zeros((T, a.size))
    events = np.zeros((T, a.size), dtype=bool)
    for t in range(1, T + 1):
        step = 2.0 ** (T - t)  # exact power of two in unit space
        fire = a >= H * step
        m = np.minimum(np.floor(a / step), 2 * H - 1)
        emit = np.where(fire, m * step, 0.0)
        a = a - emit
        events[t - 1] = fire
        values[t - 1] = sign * emit * unit
    return values, events


def mt_encode(x: float, c: MTConfig) -> SpikeTrain:
    """Encode one scalar through the dyadic multi-level encoder."""
    if not np.isfinite(x):
        raise NonFiniteError(f"mt_encode input must be finite, got {x}")
    values, events = _mt_run(np.array([x]), c.tau, c.H, c.T)
    return SpikeTrain(values, events)


# ---------------------------------------------------------------------------
# outlier-aware dual-range encoder


def _oat_run(
    flat: np.ndarray, c: OATConfig, T: int | None = None
) -> tuple[np.ndarray, np.ndarray]:
    T = c.T if T is None else T
    out_mask = np.abs(flat) >= c.theta_nor
    values = np.zeros((T, flat.size))
    events = np.zeros((T, flat.size), dtype=bool)
    for mask, tau in ((~out_mask, c.theta_nor), (out_mask, c.theta_out)):
        idx = np.nonzero(mask)[0]
        if idx.size:
            v, e = _mt_run(flat[idx], tau, c.H, T)
            values[:, idx] = v
            events[:, idx] = e
    return values, events


def oat_encode(x: Matrix, c: OATConfig) -> SpikeTrain:
    """Encode a matrix element-wise, routing by magnitude.

    Elements with |x| < theta_nor take the fine encoder (tau = theta_nor);
    elements at or above theta_nor take the coarse one (tau = theta_out).
    Both trains interleave into a single train over the row-major flattened
    elements.
    """
    flat = x.data
    if flat.size and not np.all(np.isfinite(flat)):
        raise NonFiniteError("oat_encode input contains non-finite values")
    values, events = _oat_run(flat, c)
    return SpikeTrain(values, events)


# ---------------------------------------------------------------------------
# gated bank of fitted kernels


def _hg_guard(p: FSParams) -> float:
    # A fitted schedule that starts with a zero-reset step uses that step as
    # an always-on intercept; its threshold doubles as the input guard so
    # the intercept fires for every in-range input including the floor.
    return p.theta[0] if p.h[0] == 0.0 else 0.0


def _hg_run(flat: np.ndarray, c: HGConfig) -> tuple[np.ndarray, np.ndarray, int]:
    """Returns (values, events, clamped_count) over a flat batch."""
    bs = np.asarray(c.boundaries)
    lo, hi = bs[0], bs[-1]
    clamped = int(np.count_nonzero((flat < lo) | (flat >= hi)))
    x = np.clip(flat, lo, np.nextafter(hi, lo))
    bucket = np.searchsorted(bs, x, side="right") - 1
    bucket = np.clip(bucket, 0, len(c.subneurons) - 1)
    T = c.subneurons[0].steps
    values = np.zeros((T, flat.size))
    events = np.zeros((T, flat.size), dtype=bool)
    for i, p in enumerate(c.subneurons):
        idx = np.nonzero(bucket == i)[0]
        if idx.size == 0:
            continue
        u = x[idx] - bs[i] + _hg_guard(p)
        v, e = _fs_run(u, p)
        values[:, idx] = v
        events[:, idx] = e
    return values, events, clamped


def hg_apply(x: Matrix, c: HGConfig) -> SpikeTrain:
    """Apply the gated kernel bank element-wise.

    Each element falls in exactly one sub-range [b_i, b_{i+1}) and is
    processed by that sub-range's fitted kernel with the membrane seeded
    relative to the sub-range floor. Out-of-range inputs clamp to the
    nearest sub-range edge, so decoding saturates instead of failing.
    """
    flat = x.data
    if flat.size and not np.all(np.isfinite(flat)):
        raise NonFiniteError("hg_apply input contains non-finite values")
    if any(p.steps != c.subneurons[0].steps for p in c.subneurons):
        raise ShapeError("all sub-kernels must share one step count")
    values, events, _ = _hg_run(flat, c)
    return SpikeTrain(values, events)


def hg_eval(c: HGConfig, x: np.ndarray) -> np.ndarray:
    """Decoded outputs of the gated bank on a 1-D batch (fit-time helper)."""
    values, _, _ = _hg_run(np.asarray(x, dtype=np.float64).reshape(-1), c)
    return values.sum(axis=0)


def fs_eval(p: FSParams, lo: float, x: np.ndarray) -> np.ndarray:
    """Decoded outputs of one fitted kernel whose sub-range starts at lo."""
    u = np.asarray(x, dtype=np.float64).reshape(-1) - lo + _hg_guard(p)
    values, _ = _fs_run(u, p)
    return values.sum(axis=0)


def truncate_schedule(p: FSParams, T: int) -> FSParams:
    """First T steps of a fitted schedule; silent padding when T is longer.

    Running a kernel below its fitted depth drops the finest refinement
    steps, which is how timestep sweeps degrade resolution.
    """
    if T == p.steps:
        return p
    if T < p.steps:
        return FSParams(p.theta[:T], p.h[:T], p.d[:T])
    pad = T - p.steps
    big = 1e300  # threshold no finite membrane reaches
    return FSParams(
        p.theta + (big,) * pad, p.h + (0.0,) * pad, p.d + (0.0,) * pad
    )


def hg_at_steps(c: HGConfig, T: int) -> HGConfig:
    if all(p.steps == T for p in c.subneurons):
        return c
    return HGConfig(c.boundaries, tuple(truncate_schedule(p, T) for p in c.subneurons))


TargetFn = Callable[[np.ndarray], np.ndarray]
