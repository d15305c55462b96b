"""Array response, multipath draws, field synthesis, noise, motion."""

import math

import numpy as np
import pytest

from sweeploc.channel import (
    K_PREAMBLE,
    K_SWEEP,
    Path,
    PathSet,
    add_noise,
    apply_doppler,
    array_factor_mag,
    concat_traces,
    draw_multipath,
    phased_sum,
    propagate,
    silence_trace,
)
from sweeploc.scenario import (
    ApConfig,
    ChannelConfig,
    GeometryError,
    Position,
    Trajectory,
    trial_rng,
)
from sweeploc.transmitter import build_sweep_schedule

AP = ApConfig(position=Position(0.0, 0.0), boresight_rad=0.0)


def brute_sum(x, n):
    return sum(np.exp(1j * i * np.asarray(x)) for i in range(n))


def test_phased_sum_two_element_closed_form():
    xs = np.linspace(-2 * math.pi, 2 * math.pi, 10001)
    mags = np.abs(phased_sum(xs, 2))
    expect = np.sqrt(np.maximum(2 + 2 * np.cos(xs), 0.0))
    assert np.max(np.abs(mags - expect)) < 1e-12


def test_phased_sum_matches_brute_force_sum():
    rng = trial_rng(0, "phased-sum")
    xs = rng.uniform(-3 * math.pi, 3 * math.pi, 4096)
    for n in range(2, 9):
        diff = np.abs(phased_sum(xs, n) - brute_sum(xs, n))
        assert np.max(diff) < 1e-9


def test_phased_sum_peak_and_wraparound():
    for n in (2, 3, 4, 5):
        assert abs(phased_sum(0.0, n)) == pytest.approx(n)
        assert abs(phased_sum(2 * math.pi, n)) == pytest.approx(n)
        assert abs(phased_sum(1e-14, n)) == pytest.approx(n)
    assert array_factor_mag(0.0, 4) == pytest.approx(4.0)


def test_draw_multipath_invariants():
    cfg = ChannelConfig(nlos_path_count=3, multipath_ratio=0.6)
    rng = trial_rng(1, "draw")
    for _ in range(200):
        ps = draw_multipath(cfg, rng, los_bearing_rad=0.3)
        assert ps.los.amplitude == 1.0
        assert ps.los.bearing_rad == pytest.approx(0.3)
        assert len(ps.nlos) == 3
        assert ps.ratio == pytest.approx(0.6)
        for p in ps.nlos:
            assert p.amplitude > 0
            assert -math.pi / 2 <= p.bearing_rad <= math.pi / 2
            assert 0.0 <= p.excess_phase_rad < 2 * math.pi


def test_draw_multipath_los_only():
    ps = draw_multipath(ChannelConfig(multipath_ratio=0.0), trial_rng(2), 0.1)
    assert len(ps.paths) == 1
    assert ps.ratio == 0.0


def test_propagate_preamble_and_sweep_kinds():
    sched = build_sweep_schedule(AP)
    trace = propagate(sched, PathSet((Path(1.0, 0.0, 0.0),)),
                      Position(10.0, 0.0), 4000.0)
    assert len(trace.samples) == 200
    assert np.all(trace.kinds[:32] == K_PREAMBLE)
    assert np.all(trace.kinds[32:] == K_SWEEP)
    # one-bits radiate from one antenna, zero-bits are silent
    bit_pattern = np.repeat([1, 0, 1, 0, 1, 0, 1, 0], 4).astype(bool)
    amp = 10 ** ((AP.tx_power_dbm
                  - 20 * math.log10(4 * math.pi * 10.0 * 915e6 / 299792458.0)) / 20)
    mags = np.abs(trace.samples[:32])
    assert mags[bit_pattern] == pytest.approx(amp)
    assert np.all(mags[~bit_pattern] == 0.0)


def test_propagate_sweep_peaks_near_true_bearing():
    sched = build_sweep_schedule(AP)
    phi = math.radians(25.0)
    pos = Position(10.0 * math.cos(phi), 10.0 * math.sin(phi))
    trace = propagate(sched, PathSet((Path(1.0, phi, 0.0),)), pos, 4000.0)
    sweep = np.abs(trace.samples[32:])
    peak_sample = 32 + int(np.argmax(sweep))
    t = peak_sample / 4000.0
    frac = (t - AP.preamble_duration_s) / (AP.sweep_period_s - AP.preamble_duration_s)
    est = frac * math.pi - math.pi / 2
    assert abs(est - phi) < math.radians(2.0)


def test_propagate_rejects_receiver_on_the_ap():
    sched = build_sweep_schedule(AP)
    with pytest.raises(GeometryError):
        propagate(sched, PathSet((Path(1.0, 0.0, 0.0),)), Position(0.0, 0.0),
                  4000.0)


def test_concat_traces_preserves_samples():
    a = silence_trace(0.05, 4000.0)
    sched = build_sweep_schedule(AP)
    b = propagate(sched, PathSet((Path(1.0, 0.0, 0.0),)), Position(10.0, 0.0),
                  4000.0, t0_s=0.05)
    joined = concat_traces([a, b])
    assert len(joined.samples) == 400
    assert np.array_equal(joined.samples[200:], b.samples)
    assert np.all(joined.samples[:200] == 0)


def test_add_noise_power_statistics():
    trace = silence_trace(25.0, 4000.0)  # 100k samples
    noisy = add_noise(trace, -30.0, trial_rng(3, "noise"))
    measured_mw = np.mean(np.abs(noisy.samples) ** 2)
    assert measured_mw == pytest.approx(1e-3, rel=0.02)
    assert add_noise(trace, None, trial_rng(3)) is trace


def test_apply_doppler_stationary_is_identity():
    sched = build_sweep_schedule(AP)
    ps = PathSet((Path(1.0, 0.0, 0.0), Path(0.3, 0.4, 1.0)))
    trace = propagate(sched, ps, Position(10.0, 0.0), 4000.0)
    still = apply_doppler(trace, Trajectory.stationary(Position(10.0, 0.0)))
    assert np.allclose(still.samples, trace.samples, rtol=0, atol=1e-15)


def test_apply_doppler_radial_motion_rotates_los_phase():
    sched = build_sweep_schedule(AP)
    ps = PathSet((Path(1.0, 0.0, 0.0),))
    traj = Trajectory.line(Position(10.0, 0.0), heading_rad=0.0,
                           speed_mps=5.0, duration_s=1.0)
    static = propagate(sched, ps, Position(10.0, 0.0), 4000.0)
    moved = apply_doppler(
        propagate(sched, ps, Position(10.0, 0.0), 4000.0), traj)
    lam = AP.wavelength_m
    t = np.arange(200) / 4000.0
    expect = static.samples * np.exp(-2j * math.pi * (5.0 * t) / lam)
    # compare only where the transmitter radiates
    on = np.abs(static.samples) > 0
    assert np.allclose(moved.samples[on], expect[on], rtol=1e-9, atol=0)
