"""Downlink channel: multipath draws, field synthesis, noise, Doppler.

Fields are complex baseband samples in sqrt-milliwatt units, so |s|^2 is
instantaneous received power in mW. The line-of-sight path tracks the
moving receiver; reflected paths keep fixed arrival bearings and excess
phases for the lifetime of one PathSet draw.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .scenario import (ApConfig, ChannelConfig, ConfigError, GeometryError,
                       Position, Trajectory, free_space_loss_db, wrap_angle,
                       SPEED_OF_LIGHT)
from .transmitter import KIND_PREAMBLE, KIND_SWEEP, SweepSchedule

K_SILENCE = 0
K_PREAMBLE = 1
K_SWEEP = 2


def phased_sum(x: np.ndarray | float, n: int) -> np.ndarray:
    """Complex array response sum_{i=0}^{n-1} exp(j*i*x), vectorized.

    Equals exp(j*(n-1)*x/2) * sin(n*x/2) / sin(x/2), with the limit n at
    multiples of 2*pi.
    """
    x = np.asarray(x, dtype=float)
    half = 0.5 * x
    den = np.sin(half)
    near_zero = np.abs(den) < 1e-12
    safe_den = np.where(near_zero, 1.0, den)
    ratio = np.where(near_zero,
                     n * np.cos(n * half) / np.cos(half),
                     np.sin(n * half) / safe_den)
    return np.exp(1j * (n - 1) * half) * ratio


def array_factor_mag(x: np.ndarray | float, n: int) -> np.ndarray:
    """|sum exp(j*i*x)| for i in 0..n-1."""
    return np.abs(phased_sum(x, n))


@dataclass(frozen=True)
class Path:
    """One propagation path: relative amplitude, arrival bearing, phase."""

    amplitude: float
    bearing_rad: float
    excess_phase_rad: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.amplitude) and self.amplitude >= 0):
            raise ConfigError("path amplitude must be finite and >= 0")


@dataclass(frozen=True)
class PathSet:
    """Paths of one channel draw; index 0 is the line-of-sight path.

    The stored LOS bearing is nominal (the bearing at draw time); during
    synthesis the LOS bearing follows the actual receiver position, while
    reflected-path bearings stay fixed.
    """

    paths: tuple[Path, ...]

    def __post_init__(self) -> None:
        if not self.paths:
            raise ConfigError("a path set needs at least the LOS path")
        if self.paths[0].amplitude <= 0:
            raise ConfigError("LOS amplitude must be positive")

    @property
    def los(self) -> Path:
        return self.paths[0]

    @property
    def nlos(self) -> tuple[Path, ...]:
        return self.paths[1:]

    @property
    def ratio(self) -> float:
        return sum(p.amplitude for p in self.nlos) / self.los.amplitude


def draw_multipath(cfg: ChannelConfig, rng: np.random.Generator,
                   los_bearing_rad: float = 0.0) -> PathSet:
    """Draw one PathSet: LOS at unit amplitude plus scaled reflections.

    Reflection amplitudes are U(0,1] draws normalized so their sum equals
    multipath_ratio; bearings are i.i.d. U(-pi/2, pi/2); excess phases
    U[0, 2*pi). Draw order: amplitudes, bearings, phases.
    """
    los = Path(1.0, float(los_bearing_rad), 0.0)
    k = cfg.nlos_path_count
    if k == 0 or cfg.multipath_ratio == 0.0:
        return PathSet((los,))
    raw = 1.0 - rng.uniform(size=k)  # U(0, 1], cannot be zero
    amps = raw / raw.sum() * cfg.multipath_ratio
    bearings = rng.uniform(-math.pi / 2, math.pi / 2, size=k)
    phases = rng.uniform(0.0, 2.0 * math.pi, size=k)
    nlos = tuple(Path(float(a), float(b), float(p))
                 for a, b, p in zip(amps, bearings, phases))
    return PathSet((los,) + nlos)


@dataclass(frozen=True)
class FieldTrace:
    """Sampled complex field at the receiver over one transmit slot.

    samples[s] is the total field at t0_s + s/sample_rate_hz; kinds[s]
    labels the active schedule entry (0 silence, 1 preamble, 2 sweep).
    path_components holds the per-path fields (paths x samples) whose sum
    is the noiseless total; additive noise only affects samples.
    """

    samples: np.ndarray
    sample_rate_hz: float
    t0_s: float
    kinds: np.ndarray
    ap: ApConfig | None = None
    ap_index: int = -1
    paths: PathSet | None = None
    path_components: np.ndarray | None = None

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz

    def times(self) -> np.ndarray:
        return self.t0_s + np.arange(len(self.samples)) / self.sample_rate_hz

    def to_rows(self) -> list[tuple[float, float, float, int]]:
        return [(float(t), float(s.real), float(s.imag), int(k))
                for t, s, k in zip(self.times(), self.samples, self.kinds)]


def _as_trajectory(where: Position | Trajectory) -> Trajectory:
    if isinstance(where, Position):
        return Trajectory.stationary(where)
    return where


def _positions_at(traj: Trajectory, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    times = np.array([w[0] for w in traj.waypoints])
    xs = np.array([w[1].x for w in traj.waypoints])
    ys = np.array([w[1].y for w in traj.waypoints])
    return np.interp(t, times, xs), np.interp(t, times, ys)


def propagate(schedule: SweepSchedule, paths: PathSet,
              where: Position | Trajectory, sample_rate_hz: float,
              t0_s: float = 0.0, ap_index: int = 0) -> FieldTrace:
    """Synthesize the received field for one sweep period of one AP.

    The per-antenna geometry phase at bearing b is i * 2*pi*spacing*sin(b),
    so a sweep entry driving antenna i at phase i*inc contributes
    phased_sum(phi - inc, N) with phi the path's phase increment. Preamble
    bits radiate from antenna 0 only: gain 1 for a one bit, silence for a
    zero bit.
    """
    ap = schedule.ap
    traj = _as_trajectory(where)
    n = round(schedule.period_s * sample_rate_hz)
    t_local = np.arange(n) / sample_rate_hz
    t_abs = t0_s + t_local

    entries = schedule.entries
    starts = np.array([e.start_s for e in entries])
    idx = np.searchsorted(starts, t_local + 1e-12, side="right") - 1
    idx = np.clip(idx, 0, len(entries) - 1)

    kind_codes = np.array([K_PREAMBLE if e.kind == KIND_PREAMBLE else K_SWEEP
                           for e in entries], dtype=np.int8)
    # Sweep drive increment per entry; preamble rows carry the bit instead.
    incs = np.array([e.phases_rad[1] if e.kind == KIND_SWEEP else 0.0
                     for e in entries])
    bits = np.array([e.value if e.kind == KIND_PREAMBLE else 1.0
                     for e in entries])
    kinds = kind_codes[idx]
    inc_s = incs[idx]
    bit_s = bits[idx]
    is_sweep = kinds == K_SWEEP

    px, py = _positions_at(traj, t_abs)
    dx = px - ap.position.x
    dy = py - ap.position.y
    dist = np.hypot(dx, dy)
    if np.any(dist <= 0):
        raise GeometryError("receiver trajectory passes through the AP")
    amp = 10.0 ** ((ap.tx_power_dbm - free_space_loss_db(dist, ap.carrier_hz)) / 20.0)
    los_bearing = wrap_angle(np.arctan2(dy, dx) - ap.boresight_rad)

    two_pi_s = 2.0 * math.pi * ap.spacing_wavelengths
    m = len(paths.paths)
    components = np.zeros((m, n), dtype=complex)
    for k, path in enumerate(paths.paths):
        phi = two_pi_s * np.sin(los_bearing if k == 0 else path.bearing_rad)
        gain = np.where(is_sweep,
                        phased_sum(phi - inc_s, ap.antenna_count),
                        bit_s)
        components[k] = path.amplitude * amp * np.exp(1j * path.excess_phase_rad) * gain

    return FieldTrace(samples=components.sum(axis=0), sample_rate_hz=sample_rate_hz,
                      t0_s=t0_s, kinds=kinds.astype(np.int8), ap=ap,
                      ap_index=ap_index, paths=paths, path_components=components)


def silence_trace(duration_s: float, sample_rate_hz: float,
                  t0_s: float = 0.0) -> FieldTrace:
    n = round(duration_s * sample_rate_hz)
    return FieldTrace(samples=np.zeros(n, dtype=complex),
                      sample_rate_hz=sample_rate_hz, t0_s=t0_s,
                      kinds=np.zeros(n, dtype=np.int8))


def concat_traces(traces: Sequence[FieldTrace]) -> FieldTrace:
    """Join back-to-back slots (e.g. a TDMA round) into one buffer."""
    if not traces:
        raise ConfigError("nothing to concatenate")
    rate = traces[0].sample_rate_hz
    if any(tr.sample_rate_hz != rate for tr in traces):
        raise ConfigError("traces must share one sample rate")
    return FieldTrace(samples=np.concatenate([tr.samples for tr in traces]),
                      sample_rate_hz=rate, t0_s=traces[0].t0_s,
                      kinds=np.concatenate([tr.kinds for tr in traces]))


def add_noise(trace: FieldTrace, noise_power_dbm: float | None,
              rng: np.random.Generator) -> FieldTrace:
    """Add circular complex Gaussian noise of the given total power."""
    if noise_power_dbm is None:
        return trace
    sigma = math.sqrt(10.0 ** (noise_power_dbm / 10.0) / 2.0)
    noise = rng.normal(0.0, sigma, len(trace.samples)) \
        + 1j * rng.normal(0.0, sigma, len(trace.samples))
    return replace(trace, samples=trace.samples + noise)


def apply_doppler(trace: FieldTrace, trajectory: Trajectory) -> FieldTrace:
    """Rotate each path's phase by its geometric length change over time.

    The LOS length change is exact from geometry; reflected paths use the
    plane-wave approximation along their fixed arrival direction. Motion
    toward a path's source shortens it and advances its phase, so path
    phases drift relative to each other and the fade pattern moves.
    Apply before add_noise: the output is rebuilt from path components.
    """
    if trace.ap is None or trace.paths is None or trace.path_components is None:
        raise ConfigError("doppler needs a single-AP trace with path data")
    lam = SPEED_OF_LIGHT / trace.ap.carrier_hz
    t = trace.times()
    px, py = _positions_at(trajectory, t)
    ap = trace.ap
    dist = np.hypot(px - ap.position.x, py - ap.position.y)
    if np.any(dist <= 0):
        raise GeometryError("receiver trajectory passes through the AP")
    dpx = px - px[0]
    dpy = py - py[0]
    components = np.empty_like(trace.path_components)
    for k, path in enumerate(trace.paths.paths):
        if k == 0:
            delta_len = dist - dist[0]
        else:
            alpha = ap.boresight_rad + path.bearing_rad  # toward the source
            delta_len = -(np.cos(alpha) * dpx + np.sin(alpha) * dpy)
        components[k] = trace.path_components[k] * np.exp(-2j * math.pi * delta_len / lam)
    return replace(trace, samples=components.sum(axis=0),
                   path_components=components)
