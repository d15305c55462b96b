"""Sweep transmitter: per-AP schedules of preamble bits and beam steps.

Each sweep period is an 8-bit OOK preamble identifying the AP followed by a
deterministic sweep of inter-antenna phase offsets. Two sweep modes share
the same slot timing and differ only in the per-step phases:

- "alg1": the steering angle runs over [-pi/2, pi/2) in equal steps and
  antenna i is driven with phase i * 2*pi*spacing * sin(steering).
- "uniform-theta": the inter-antenna phase increment itself runs uniformly
  over [-pi, pi); antenna i is driven with phase i * increment.

The preamble transmits from antenna 0 only, so its coverage has no pattern
nulls; sweep steps drive the whole array.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .scenario import ApConfig, ConfigError

PREAMBLE_PATTERNS: dict[int, tuple[int, ...]] = {
    1: (1, 0, 1, 0, 1, 0, 1, 0),
    2: (1, 1, 0, 0, 1, 1, 0, 0),
}

KIND_PREAMBLE = "preamble"
KIND_SWEEP = "sweep"


@dataclass(frozen=True)
class ScheduleEntry:
    """One transmit slot: which antennas radiate and with what phases.

    value is the preamble bit (0/1) for preamble entries, or the commanded
    sweep value (steering angle for "alg1", phase increment for
    "uniform-theta") for sweep entries.
    """

    start_s: float
    duration_s: float
    kind: str
    value: float
    antennas: tuple[int, ...]
    phases_rad: tuple[float, ...]


@dataclass(frozen=True)
class SweepSchedule:
    """All entries of one AP's sweep period, in time order."""

    ap: ApConfig
    mode: str
    entries: tuple[ScheduleEntry, ...]

    @property
    def period_s(self) -> float:
        return self.ap.sweep_period_s

    @property
    def sweep_entries(self) -> tuple[ScheduleEntry, ...]:
        return tuple(e for e in self.entries if e.kind == KIND_SWEEP)

    @property
    def preamble_entries(self) -> tuple[ScheduleEntry, ...]:
        return tuple(e for e in self.entries if e.kind == KIND_PREAMBLE)

    def step_values(self) -> np.ndarray:
        return np.array([e.value for e in self.sweep_entries])

    def step_start_times(self) -> np.ndarray:
        return np.array([e.start_s for e in self.sweep_entries])


def steering_values(ap: ApConfig, mode: str) -> np.ndarray:
    """Commanded per-step value: steering angle ("alg1") or increment."""
    n = ap.sweep_step_count
    m = np.arange(n)
    if mode == "alg1":
        return -math.pi / 2 + m * ap.sweep_step_rad
    if mode == "uniform-theta":
        return -math.pi + m * (2.0 * math.pi / n)
    raise ConfigError(f"unknown sweep mode {mode!r}")


def step_increments(ap: ApConfig, mode: str) -> np.ndarray:
    """Inter-antenna phase increment commanded at each sweep step."""
    values = steering_values(ap, mode)
    if mode == "alg1":
        return 2.0 * math.pi * ap.spacing_wavelengths * np.sin(values)
    return values


def step_phase_offsets(ap: ApConfig, mode: str) -> np.ndarray:
    """Per-antenna drive phases, shape (step_count, antenna_count)."""
    idx = np.arange(ap.antenna_count)
    return np.mod(np.outer(step_increments(ap, mode), idx), 2.0 * math.pi)


def build_sweep_schedule(ap: ApConfig, mode: str = "alg1") -> SweepSchedule:
    """Lay out one period: 8 preamble bits then the full sweep."""
    pattern = PREAMBLE_PATTERNS[ap.preamble_id]
    bit = ap.preamble_bit_duration_s
    entries: list[ScheduleEntry] = []
    for k, b in enumerate(pattern):
        antennas = (0,) if b else ()
        phases = (0.0,) if b else ()
        entries.append(ScheduleEntry(k * bit, bit, KIND_PREAMBLE, float(b),
                                     antennas, phases))
    values = steering_values(ap, mode)
    phases_all = step_phase_offsets(ap, mode)
    dwell = ap.sweep_dwell_s
    all_idx = tuple(range(ap.antenna_count))
    for m, value in enumerate(values):
        entries.append(ScheduleEntry(ap.preamble_duration_s + m * dwell, dwell,
                                     KIND_SWEEP, float(value), all_idx,
                                     tuple(phases_all[m])))
    return SweepSchedule(ap=ap, mode=mode, entries=tuple(entries))


@dataclass(frozen=True)
class TdmaSlot:
    ap_index: int
    start_s: float
    duration_s: float


@dataclass(frozen=True)
class TdmaPlan:
    """Round-robin AP slots: AP k owns [k*T, (k+1)*T) in every round."""

    slots: tuple[TdmaSlot, ...]
    period_s: float

    @property
    def fix_latency_s(self) -> float:
        # One full round delivers one angle per AP, hence one fix.
        return self.period_s

    def active_ap(self, t: float) -> int:
        phase = math.fmod(t, self.period_s)
        if phase < 0:
            phase += self.period_s
        for slot in self.slots:
            if slot.start_s <= phase < slot.start_s + slot.duration_s:
                return slot.ap_index
        return self.slots[-1].ap_index


def tdma_plan(aps: tuple[ApConfig, ...] | list[ApConfig]) -> TdmaPlan:
    """Build the single-frequency schedule: one sweep period per AP, in order."""
    if len(aps) < 2:
        raise ConfigError("TDMA needs at least two APs")
    periods = {ap.sweep_period_s for ap in aps}
    if len(periods) != 1:
        raise ConfigError("TDMA requires a common sweep period")
    if aps[0].preamble_id == aps[1].preamble_id:
        raise ConfigError("the first two APs must use distinct preamble ids")
    t = aps[0].sweep_period_s
    slots = tuple(TdmaSlot(k, k * t, t) for k in range(len(aps)))
    return TdmaPlan(slots=slots, period_s=len(aps) * t)
