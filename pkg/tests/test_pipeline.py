"""End-to-end synthesis helpers and the vectorized estimation shortcut."""

import math

import numpy as np
import pytest

from sweeploc.channel import draw_multipath
from sweeploc.pipeline import (
    capture_envelope,
    draw_pathsets,
    fast_estimate_bearings,
    localize_once,
    synthesize_rounds,
)
from sweeploc.receiver import LookupTable, Receiver, envelope_detect, estimate_angle
from sweeploc.scenario import Position, Trajectory, trial_rng, true_bearing
from sweeploc.scenarios import bench_scenario, farm_scenario


def test_synthesize_rounds_buffer_length():
    scn = bench_scenario(seed=0)
    rng = trial_rng(0, "synth")
    where = Position(40.0, 10.0)
    pathsets = draw_pathsets(scn, where, rng)
    trace = synthesize_rounds(scn, pathsets, where, rounds=2)
    # two rounds x two APs x 50 ms at 4 kHz
    assert len(trace.samples) == 2 * 2 * 200
    env = capture_envelope(scn, pathsets, where, rounds=1)
    assert len(env.volts) == 400


def test_localize_once_noiseless_near_truth():
    scn = bench_scenario(seed=3)
    table = LookupTable(scn.aps[0], scn.aps[1])
    where = Position(45.0, 25.0)
    rng = trial_rng(3, "fix")
    result = localize_once(scn, where, rng, table, with_noise=False)
    assert result.ok
    err = math.hypot(result.fix.position.x - 45.0,
                     result.fix.position.y - 25.0)
    assert err < 3.0


def test_localize_once_keeps_receiver_state():
    scn = bench_scenario(seed=4)
    table = LookupTable(scn.aps[0], scn.aps[1])
    rx = Receiver(scn.aps, scn.sweep_mode, scn.smoothing, table=table)
    where = Position(45.0, 25.0)
    first = localize_once(scn, where, trial_rng(4, "a"), table, receiver=rx,
                          with_noise=False)
    second = localize_once(scn, where, trial_rng(4, "b"), table, receiver=rx,
                           with_noise=False)
    assert first.ok and second.ok
    # smoothing has converged toward the constant truth
    b1 = true_bearing(scn.aps[0], where)
    assert abs(rx.smoothed[0] - b1) < math.radians(2.0)


@pytest.mark.parametrize("mode", ["alg1", "uniform-theta"])
def test_fast_estimates_match_sample_domain_receiver(mode):
    """The per-step argmax shortcut must reproduce the full time-domain
    pipeline exactly for static noiseless captures."""
    scn = bench_scenario(seed=7)
    ap = scn.aps[0]
    fs = scn.detector.sample_rate_hz
    import dataclasses
    channel = dataclasses.replace(scn.channel, multipath_ratio=0.6)
    mismatches = 0
    los, sets = [], []
    rng = trial_rng(7, "parity", mode)
    for _ in range(100):
        bearing = rng.uniform(-math.pi / 3, math.pi / 3)
        los.append(bearing)
        sets.append(draw_multipath(channel, rng, bearing))
    fast = fast_estimate_bearings(ap, mode, fs, sets, np.array(los))

    from sweeploc.channel import propagate
    from sweeploc.transmitter import build_sweep_schedule
    sched = build_sweep_schedule(ap, mode)
    for k, (bearing, ps) in enumerate(zip(los, sets)):
        pos = Position(ap.position.x + 10.0 * math.cos(bearing),
                       ap.position.y + 10.0 * math.sin(bearing))
        env = envelope_detect(propagate(sched, ps, pos, fs), scn.detector)
        est = estimate_angle(env, 0, ap, mode)
        if not math.isclose(est.raw_rad, fast[k], rel_tol=0, abs_tol=1e-12):
            mismatches += 1
    assert mismatches == 0


def test_speed_affects_doppler_only_when_enabled():
    import dataclasses
    scn = farm_scenario(seed=9)
    rng = trial_rng(9, "dop")
    traj = Trajectory.line(Position(40.0, 40.0), heading_rad=0.3,
                           speed_mps=5.0, duration_s=1.0)
    pathsets = draw_pathsets(scn, traj, rng)
    still = synthesize_rounds(scn, pathsets, traj, rounds=1)
    moving_scn = dataclasses.replace(
        scn, channel=dataclasses.replace(scn.channel, doppler_enabled=True))
    moving = synthesize_rounds(moving_scn, pathsets, traj, rounds=1)
    assert not np.allclose(still.samples, moving.samples)
    # magnitudes shift only subtly; the phase carries the motion
    assert np.allclose(np.abs(still.samples), np.abs(moving.samples),
                       rtol=0.3, atol=1e-9)
