"""End-to-end glue: schedules through channel to envelope buffers and fixes.

One TDMA round is every AP's sweep period back to back. A capture of two
rounds guarantees the scan logic finds a full period from each AP whatever
the buffer's phase relative to the schedule.
"""

from __future__ import annotations

import math

import numpy as np

from .channel import (FieldTrace, PathSet, add_noise, apply_doppler,
                      concat_traces, draw_multipath, phased_sum, propagate)
from .receiver import (EnvelopeTrace, LocalizationResult, LookupTable,
                       Receiver, envelope_detect, step_estimate_angles)
from .scenario import ApConfig, Position, Scenario, Trajectory, true_bearing
from .transmitter import build_sweep_schedule, step_increments


def synthesize_rounds(scn: Scenario, pathsets: list[PathSet],
                      where: Position | Trajectory, rounds: int = 2,
                      t0_s: float = 0.0, oversample: int = 1,
                      noise_rng: np.random.Generator | None = None) -> FieldTrace:
    """Received field for whole TDMA rounds: one slot per AP per round."""
    rate = scn.detector.sample_rate_hz * oversample
    schedules = [build_sweep_schedule(ap, scn.sweep_mode) for ap in scn.aps]
    period = scn.aps[0].sweep_period_s
    moving = isinstance(where, Trajectory) and len(where.waypoints) > 1
    traces = []
    for r in range(rounds):
        for k, (ap, sched) in enumerate(zip(scn.aps, schedules)):
            slot_t0 = t0_s + (r * len(scn.aps) + k) * period
            tr = propagate(sched, pathsets[k], where, rate, t0_s=slot_t0,
                           ap_index=k)
            if scn.channel.doppler_enabled and moving:
                tr = apply_doppler(tr, where)
            traces.append(tr)
    combined = concat_traces(traces)
    if noise_rng is not None and scn.channel.noise_power_dbm is not None:
        combined = add_noise(combined, scn.channel.noise_power_dbm, noise_rng)
    return combined


def capture_envelope(scn: Scenario, pathsets: list[PathSet],
                     where: Position | Trajectory, rounds: int = 2,
                     t0_s: float = 0.0, oversample: int = 1,
                     noise_rng: np.random.Generator | None = None,
                     detector_rng: np.random.Generator | None = None
                     ) -> EnvelopeTrace:
    field = synthesize_rounds(scn, pathsets, where, rounds, t0_s, oversample,
                              noise_rng)
    return envelope_detect(field, scn.detector, detector_rng)


def draw_pathsets(scn: Scenario, where: Position | Trajectory,
                  rng: np.random.Generator, t0_s: float = 0.0) -> list[PathSet]:
    """One independent multipath draw per AP, seeded with the true bearing."""
    pos = where if isinstance(where, Position) else where.position_at(t0_s)
    return [draw_multipath(scn.channel, rng, true_bearing(ap, pos))
            for ap in scn.aps]


def fast_estimate_bearings(ap: ApConfig, mode: str, sample_rate_hz: float,
                           pathsets: list[PathSet],
                           los_bearings: np.ndarray) -> np.ndarray:
    """Vectorized bearing estimates for static noiseless trials.

    Evaluates the array response once per sweep step instead of once per
    output sample, then maps the winning step through the same
    time-to-angle inversion the sample-domain receiver applies. The drive
    increments are wrapped exactly as the schedule builder wraps them, so
    for a static receiver above the detector floor this picks the same
    step, and therefore the same bearing, as the full synthesis pipeline.
    """
    inc = np.mod(step_increments(ap, mode), 2.0 * math.pi)
    estimates = step_estimate_angles(ap, mode, sample_rate_hz)
    los = np.asarray(los_bearings, dtype=float)
    two_pi_s = 2.0 * math.pi * ap.spacing_wavelengths
    response = phased_sum(two_pi_s * np.sin(los)[:, None] - inc[None, :],
                          ap.antenna_count).astype(complex)
    max_nlos = max((len(ps.nlos) for ps in pathsets), default=0)
    if max_nlos:
        n = len(pathsets)
        amps = np.zeros((n, max_nlos))
        bearings = np.zeros((n, max_nlos))
        phases = np.zeros((n, max_nlos))
        for i, ps in enumerate(pathsets):
            for k, path in enumerate(ps.nlos):
                amps[i, k] = path.amplitude
                bearings[i, k] = path.bearing_rad
                phases[i, k] = path.excess_phase_rad
        for k in range(max_nlos):
            phi = two_pi_s * np.sin(bearings[:, k])
            response += (amps[:, k] * np.exp(1j * phases[:, k]))[:, None] \
                * phased_sum(phi[:, None] - inc[None, :], ap.antenna_count)
    winners = np.argmax(np.abs(response), axis=1)
    return estimates[winners]


def localize_once(scn: Scenario, where: Position | Trajectory,
                  rng: np.random.Generator, table: LookupTable,
                  receiver: Receiver | None = None, rounds: int = 2,
                  with_noise: bool = True) -> LocalizationResult:
    """Draw a channel, synthesize a capture, and run the receiver over it."""
    pathsets = draw_pathsets(scn, where, rng)
    noise_rng = rng if with_noise else None
    det_rng = rng if with_noise else None
    env = capture_envelope(scn, pathsets, where, rounds=rounds,
                           noise_rng=noise_rng, detector_rng=det_rng)
    if receiver is None:
        receiver = Receiver(scn.aps[:2], scn.sweep_mode, scn.smoothing,
                            table=table)
    return receiver.process_buffer(env)
